"""
Minibatch Adam training, validation tracking and the global-feature / batch-size grid.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from utils.exceptions import ConfigError, DataError, DivergenceError, NumericalError, ShapeError

from . import network
from . import tensor_core as tc
from .checkpoint import save_checkpoint

logger = logging.getLogger(__name__)

LOSS_COLUMNS = ["epoch", "train_loss", "val_loss", "seconds"]
GRID_COLUMNS = [
    "global_feature", "batch_size", "tail_mlp", "parameters",
    "train_loss", "val_loss", "test_loss", "seconds", "feasible",
]
INFEASIBLE = "×"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-6
    batch_size: int = 8
    epochs: int = 200
    seed: int = 0
    precision: str = "f64"
    log_every: int = 10
    blas_threads: int = 1

    def validate(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {value}")
        if not self.epsilon > 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for batch normalization, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        tc.dtype_for(self.precision)
        return self

    @property
    def dtype(self):
        return tc.dtype_for(self.precision)


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def create(cls, params):
        m = {key: np.zeros_like(t.data) for key, t in params.trainable()}
        v = {key: np.zeros_like(t.data) for key, t in params.trainable()}
        return cls(m, v, 0)


def mse_loss(pred, target):
    """
    Mean squared error over points and channels; for a batch, the mean of the per-sample losses.

    ``pred`` may be a Tensor (differentiable) or an array; the result has the same kind.
    """
    if not isinstance(pred, tc.Tensor):
        pred = np.asarray(pred, dtype=np.float64)
        target = np.asarray(target, dtype=np.float64)
        if pred.shape != target.shape:
            raise ShapeError(f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
        return float(np.mean((pred - target) ** 2))
    target = target if isinstance(target, tc.Tensor) else tc.Tensor(target, dtype=pred.dtype)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} and target {target.shape} differ")
    return tc.mean_all(tc.square(tc.sub(pred, target)))


def adam_step(params, grads, state, config):
    """
    One bias-corrected Adam update in place.

    ``grads`` maps registry keys to arrays; keys without a gradient count as zero. The step is
    ``lr * m_hat / (sqrt(v_hat) + eps)``, so a zero gradient is a no-op only while the moments
    are still zero.

    Raises:
        NumericalError: a gradient is NaN or infinite (names the layer; nothing is updated).
    """
    for key, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            layer = key.rsplit("/", 1)[0]
            logger.error(f"Non-finite gradient in layer {layer} ({key}) at step {state.t + 1}")
            raise NumericalError(f"Non-finite gradient in layer {layer} ({key})")

    state.t += 1
    correction1 = 1 - config.beta1 ** state.t
    correction2 = 1 - config.beta2 ** state.t
    for key, tensor in params.trainable():
        grad = grads.get(key)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        m = state.m[key] = config.beta1 * state.m[key] + (1 - config.beta1) * grad
        v = state.v[key] = config.beta2 * state.v[key] + (1 - config.beta2) * grad * grad
        m_hat = m / correction1
        v_hat = v / correction2
        tensor.data = tensor.data - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return params, state


def train_step(params, state, coords, targets, config):
    """Forward in train mode, backpropagate the batch loss and apply one Adam update."""
    X = tc.Tensor(network.prepare_batch(coords, params.config), dtype=params.dtype)
    with tc.Tape() as tape:
        predictions, _ = network.evaluate(params, X, tc.TRAIN)
        loss = mse_loss(predictions, targets)
        leaf_grads = tape.backward(loss)
    grads = {key: leaf_grads[t] for key, t in params.trainable() if t in leaf_grads}
    value = float(loss.data)
    if not np.isfinite(value):
        return value
    adam_step(params, grads, state, config)
    return value


def evaluate_loss(params, coords, targets, batch_size=32):
    """Mean per-sample loss in infer mode."""
    if len(coords) == 0:
        return float("nan")
    total = 0.0
    for start in range(0, len(coords), batch_size):
        X = tc.Tensor(network.prepare_batch(coords[start:start + batch_size], params.config), dtype=params.dtype)
        predictions, _ = network.evaluate(params, X, tc.INFER)
        total += mse_loss(predictions.data, targets[start:start + batch_size]) * len(X.data)
    return total / len(coords)


@dataclass
class TrainingReport:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    wall_time: float = 0.0
    checkpoint: str = None
    parameters: int = 0

    def to_frame(self):
        return pd.DataFrame(self.history, columns=LOSS_COLUMNS)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.to_frame().to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
        return path

    @property
    def final(self):
        return self.history[-1] if self.history else {}


def minibatches(n_samples, batch_size, rng):
    """Shuffled index batches; a last batch smaller than 2 is dropped."""
    order = rng.permutation(n_samples)
    batches = [order[i:i + batch_size] for i in range(0, n_samples, batch_size)]
    if batches and len(batches[-1]) < 2:
        batches.pop()
    return batches


def fit(params, train, val, config, checkpoint_path=None, metadata=None):
    """
    Train ``params`` in place with Adam.

    Args:
        params (ModelParams): initialized network.
        train (tuple): (B x N x d coordinates, B x N x C targets in [0, 1]).
        val (tuple): validation arrays of the same layout, or None.
        config (TrainConfig)
        checkpoint_path (Path): where the best-validation checkpoint is written.
        metadata (dict): stored in the checkpoint next to the parameters.

    Returns:
        tuple: (best-validation ModelParams, TrainingReport). Row 0 of the history holds the
        untrained losses.

    Raises:
        DataError: the training split is smaller than one batch.
        DivergenceError: the loss becomes NaN or infinite.
    """
    config.validate()
    train_coords, train_targets = train
    if config.batch_size > len(train_coords):
        raise DataError(f"batch_size {config.batch_size} exceeds the {len(train_coords)} training samples")
    val_coords, val_targets = val if val is not None else (train_coords[:0], train_targets[:0])

    rng = np.random.default_rng(config.seed)
    state = AdamState.create(params)
    report = TrainingReport(parameters=params.count())
    best = params.copy()
    started = time.perf_counter()

    with threadpool_limits(limits=config.blas_threads):
        initial_train = evaluate_loss(params, train_coords, train_targets)
        initial_val = evaluate_loss(params, val_coords, val_targets)
        report.history.append({"epoch": 0, "train_loss": initial_train, "val_loss": initial_val, "seconds": 0.0})
        report.best_val_loss = initial_val if len(val_coords) else initial_train

        for epoch in range(1, config.epochs + 1):
            epoch_start = time.perf_counter()
            losses = []
            for batch in minibatches(len(train_coords), config.batch_size, rng):
                loss = train_step(params, state, train_coords[batch], train_targets[batch], config)
                if not np.isfinite(loss):
                    last_good = epoch - 1
                    logger.error(f"Loss diverged at epoch {epoch}; last good epoch {last_good}")
                    raise DivergenceError(f"Training loss became {loss} at epoch {epoch}", last_good_epoch=last_good)
                losses.append(loss)
            train_loss = float(np.mean(losses))
            val_loss = evaluate_loss(params, val_coords, val_targets)
            seconds = time.perf_counter() - epoch_start
            report.history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss, "seconds": seconds})

            score = val_loss if len(val_coords) else train_loss
            if score < report.best_val_loss:
                report.best_val_loss = score
                report.best_epoch = epoch
                best = params.copy()
            if epoch % config.log_every == 0 or epoch == config.epochs:
                logger.info(f"Epoch {epoch}/{config.epochs}: train {train_loss:.6e}, val {val_loss:.6e} ({seconds:.2f} s)")

    report.wall_time = time.perf_counter() - started
    logger.info(
        f"Training finished in {report.wall_time:.1f} s; best validation loss {report.best_val_loss:.6e} "
        f"at epoch {report.best_epoch}."
    )
    if checkpoint_path is not None:
        extra = dict(metadata or {}, epoch=report.best_epoch, val_loss=report.best_val_loss, seed=config.seed)
        report.checkpoint = str(save_checkpoint(checkpoint_path, best, extra))
    return best, report


# Grid search

def activation_bytes(config, batch_size, dtype=np.float64):
    """Rough training-time footprint: three stored arrays per per-point layer output."""
    rows = batch_size * config.n_points
    per_point = [
        layer for layer in network.layer_table(config)
        if "tnet/fc" not in layer.name and not layer.name.endswith("/transform")
    ]
    widths = sum(layer.fan_out for layer in per_point)
    return 3 * rows * widths * np.dtype(dtype).itemsize


def _cell_key(global_feature, batch_size):
    return int(global_feature), int(batch_size)


def _load_grid(path):
    if not Path(path).exists():
        return pd.DataFrame(columns=GRID_COLUMNS)
    return pd.read_csv(path, dtype={"feasible": str}, keep_default_na=False)


def grid_search(
    data, model_config, train_config, g_values, batch_values, out_dir,
    memory_limit_mb=2048, resume=True, metadata=None, checkpoint_dir=None,
):
    """
    Train one model per (G, batch) cell and tabulate losses and wall time.

    The tail MLP follows the pairing for each G. Cells whose estimated activation memory exceeds
    ``memory_limit_mb`` (or that run out of memory) are marked infeasible with ``×`` in every
    metric column. Finished cells already present in ``grid.csv`` are skipped when resuming.

    Args:
        data (dict): split name -> (coords, targets) for "train", "val" and "test".

    Returns:
        pd.DataFrame with ``GRID_COLUMNS``.
    """
    if not g_values or not batch_values:
        raise ConfigError("Grid search needs at least one global feature size and one batch size")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_path = out_dir / "grid.csv"
    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else out_dir
    checkpoint_dir.mkdir(parents=True, exist_ok=True)
    table = _load_grid(grid_path) if resume else pd.DataFrame(columns=GRID_COLUMNS)
    done = {_cell_key(r["global_feature"], r["batch_size"]) for _, r in table.iterrows()}

    for g in g_values:
        cell_model = network.ModelConfig(**dict(model_config.to_dict(), global_feature_size=int(g), tail_mlp=None))
        cell_model.validate()
        for batch in batch_values:
            if _cell_key(g, batch) in done:
                logger.info(f"Grid cell G={g}, batch={batch} already finished; skipping.")
                continue
            row = {
                "global_feature": int(g),
                "batch_size": int(batch),
                "tail_mlp": ",".join(str(w) for w in cell_model.tail_mlp),
                "parameters": network.parameter_count(cell_model),
            }
            needed = activation_bytes(cell_model, batch, train_config.dtype) / 2 ** 20
            feasible = needed <= memory_limit_mb and batch <= len(data["train"][0])
            if feasible:
                cell_config = TrainConfig(**dict(asdict(train_config), batch_size=int(batch)))
                try:
                    params = network.build(cell_model, seed=cell_config.seed, dtype=cell_config.dtype)
                    best, report = fit(
                        params, data["train"], data["val"], cell_config,
                        checkpoint_path=checkpoint_dir / f"G{g}_B{batch}.pcfn", metadata=metadata,
                    )
                    with threadpool_limits(limits=cell_config.blas_threads):
                        row.update(
                            train_loss=evaluate_loss(best, *data["train"]),
                            val_loss=evaluate_loss(best, *data["val"]),
                            test_loss=evaluate_loss(best, *data["test"]),
                        )
                    row.update(seconds=report.wall_time, feasible="yes")
                except MemoryError:
                    logger.warning(f"Grid cell G={g}, batch={batch} ran out of memory.")
                    feasible = False
            else:
                logger.warning(f"Grid cell G={g}, batch={batch} needs ~{needed:.0f} MiB; marked infeasible.")
            if not feasible:
                row.update({c: INFEASIBLE for c in ("train_loss", "val_loss", "test_loss", "seconds")}, feasible="no")
            table = pd.concat([table, pd.DataFrame([row], columns=GRID_COLUMNS)], ignore_index=True)
            table.to_csv(grid_path, index=False, lineterminator="\n")
    return table
