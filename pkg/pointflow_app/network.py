"""
Point-cloud segmentation regressor.

Input and feature T-Nets, shared MLPs, a max-pooled global feature concatenated back onto the
64-d local features, and a sigmoid-bounded per-point regression head.
"""
import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from utils.exceptions import ConfigError, DataError, ShapeError

from . import tensor_core as tc

logger = logging.getLogger(__name__)

SUPPORTED_GLOBAL_FEATURES = (16, 32, 64, 128, 256, 512, 1024, 2048)
LOCAL_WIDTH = 64

# MLP right after the global feature, paired with the global feature size.
TAIL_PAIRING = {
    16: (256, 256, 128),
    32: (256, 256, 128),
    64: (256, 256, 128),
    128: (256, 256, 128),
    256: (256, 256, 128),
    512: (256, 256, 128),
    1024: (512, 256, 128),
    2048: (512, 256, 128),
}


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 1024
    input_dim: int = 3
    n_cfd: int = 3
    global_feature_size: int = 1024
    tail_mlp: tuple = None
    local_mlp: tuple = (64, 64)
    shared_mlp: tuple = (64, 128)
    tnet_fc: tuple = (512, 256)
    head_width: int = 128
    input_transform: bool = True
    feature_transform: bool = True

    def __post_init__(self):
        if self.tail_mlp is None and self.global_feature_size in TAIL_PAIRING:
            object.__setattr__(self, "tail_mlp", TAIL_PAIRING[self.global_feature_size])
        for name in ("tail_mlp", "local_mlp", "shared_mlp", "tnet_fc"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(int(v) for v in value))

    def validate(self):
        if self.n_points < 1:
            raise ConfigError(f"n_points must be >= 1, got {self.n_points}")
        if self.input_dim not in (2, 3):
            raise ConfigError(f"input_dim must be 2 or 3, got {self.input_dim}")
        if self.n_cfd < 1:
            raise ConfigError(f"n_cfd must be >= 1, got {self.n_cfd}")
        if self.global_feature_size not in SUPPORTED_GLOBAL_FEATURES:
            raise ConfigError(
                f"Unsupported global feature size {self.global_feature_size}; "
                f"expected one of {SUPPORTED_GLOBAL_FEATURES}"
            )
        if self.local_mlp[-1] != LOCAL_WIDTH:
            raise ConfigError(f"The local feature width must be {LOCAL_WIDTH}, got {self.local_mlp[-1]}")
        if not self.tail_mlp or min(self.tail_mlp) < 1:
            raise ConfigError(f"Invalid tail MLP {self.tail_mlp}")
        return self

    @property
    def concat_width(self):
        return LOCAL_WIDTH + self.global_feature_size

    def to_dict(self):
        data = asdict(self)
        for key, value in data.items():
            if isinstance(value, tuple):
                data[key] = list(value)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"Unknown model configuration keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    fan_in: int
    fan_out: int
    batch_norm: bool
    identity_init: int = 0

    @property
    def count(self):
        extra = 2 * self.fan_out if self.batch_norm else 0
        return self.fan_in * self.fan_out + self.fan_out + extra


def _tnet_layers(prefix, k, config):
    layers = []
    width = k
    for i, out in enumerate(config.shared_mlp + (config.global_feature_size,), start=1):
        layers.append(LayerSpec(f"{prefix}/conv{i}", width, out, True))
        width = out
    for i, out in enumerate(config.tnet_fc, start=1):
        layers.append(LayerSpec(f"{prefix}/fc{i}", width, out, True))
        width = out
    layers.append(LayerSpec(f"{prefix}/transform", width, k * k, False, identity_init=k))
    return layers


def layer_table(config):
    """Every affine layer in registry order, with its batch-norm flag."""
    layers = []
    if config.input_transform:
        layers += _tnet_layers("input_tnet", config.input_dim, config)
    width = config.input_dim
    for i, out in enumerate(config.local_mlp, start=1):
        layers.append(LayerSpec(f"local/conv{i}", width, out, True))
        width = out
    if config.feature_transform:
        layers += _tnet_layers("feature_tnet", LOCAL_WIDTH, config)
    for i, out in enumerate(config.shared_mlp + (config.global_feature_size,), start=1):
        layers.append(LayerSpec(f"global/conv{i}", width, out, True))
        width = out
    width = config.concat_width
    for i, out in enumerate(config.tail_mlp, start=1):
        layers.append(LayerSpec(f"tail/fc{i}", width, out, True))
        width = out
    layers.append(LayerSpec("head/hidden", width, config.head_width, False))
    layers.append(LayerSpec("head/output", config.head_width, config.n_cfd, False))
    return layers


def parameter_breakdown(config):
    """Per-layer parameter table (weights, biases, batch-norm scale+shift)."""
    rows = []
    for layer in layer_table(config):
        rows.append({
            "layer": layer.name,
            "shape": f"{layer.fan_in}x{layer.fan_out}",
            "weights": layer.fan_in * layer.fan_out,
            "biases": layer.fan_out,
            "batch_norm": 2 * layer.fan_out if layer.batch_norm else 0,
            "total": layer.count,
        })
    return pd.DataFrame(rows)


def parameter_count(config):
    """Trainable scalars: weights, biases and batch-norm scale/shift (running statistics excluded)."""
    return int(sum(layer.count for layer in layer_table(config)))


class ModelParams:
    """
    Ordered flat registry of every network tensor keyed by layer path.

    Keys look like ``global/conv3/W``, ``global/conv3/b`` and, for normalized layers,
    ``global/conv3/bn_gamma``, ``bn_beta``, ``bn_mean``, ``bn_var``. Only the first four kinds are
    trainable.
    """

    def __init__(self, config, dtype=np.float64):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.layers = OrderedDict()
        self.norms = OrderedDict()

    def register(self, layer, W, b, bn_state=None):
        self.layers[layer.name] = (layer, tc.Tensor(W, requires_grad=True), tc.Tensor(b, requires_grad=True))
        if bn_state is not None:
            self.norms[layer.name] = bn_state

    def weight(self, name):
        return self.layers[name][1]

    def bias(self, name):
        return self.layers[name][2]

    def norm(self, name):
        return self.norms.get(name)

    def items(self):
        """(key, array) pairs for every stored tensor in registry order."""
        for name, (_, W, b) in self.layers.items():
            yield f"{name}/W", W.data
            yield f"{name}/b", b.data
            state = self.norms.get(name)
            if state is not None:
                yield f"{name}/bn_gamma", state.gamma.data
                yield f"{name}/bn_beta", state.beta.data
                yield f"{name}/bn_mean", state.running_mean
                yield f"{name}/bn_var", state.running_var

    def trainable(self):
        """(key, Tensor) pairs the optimizer updates, in registry order."""
        for name, (_, W, b) in self.layers.items():
            yield f"{name}/W", W
            yield f"{name}/b", b
            state = self.norms.get(name)
            if state is not None:
                yield f"{name}/bn_gamma", state.gamma
                yield f"{name}/bn_beta", state.beta

    def count(self):
        return int(sum(t.size for _, t in self.trainable()))

    def assign(self, key, array):
        name, suffix = key.rsplit("/", 1)
        if name not in self.layers:
            raise DataError(f"Unknown parameter '{key}'")
        _, W, b = self.layers[name]
        state = self.norms.get(name)
        targets = {"W": W, "b": b}
        if state is not None:
            targets.update({"bn_gamma": state.gamma, "bn_beta": state.beta})
        if suffix in targets:
            target = targets[suffix]
            if target.shape != array.shape:
                raise ShapeError(f"{key}: expected shape {target.shape}, got {array.shape}")
            target.data = np.array(array, dtype=self.dtype)
        elif state is not None and suffix == "bn_mean":
            state.running_mean = np.array(array, dtype=self.dtype)
        elif state is not None and suffix == "bn_var":
            state.running_var = np.array(array, dtype=self.dtype)
        else:
            raise DataError(f"Unknown parameter '{key}'")

    def check_finite(self):
        for key, array in self.items():
            if not np.all(np.isfinite(array)):
                raise DataError(f"Parameter '{key}' contains non-finite values")
        return self

    def copy(self):
        clone = ModelParams(self.config, self.dtype)
        for name, (layer, W, b) in self.layers.items():
            state = self.norms.get(name)
            clone_state = None
            if state is not None:
                clone_state = tc.BNState(
                    gamma=tc.Tensor(state.gamma.data.copy(), requires_grad=True),
                    beta=tc.Tensor(state.beta.data.copy(), requires_grad=True),
                    running_mean=state.running_mean.copy(),
                    running_var=state.running_var.copy(),
                    momentum=state.momentum,
                    eps=state.eps,
                )
            clone.register(layer, W.data.copy(), b.data.copy(), clone_state)
        return clone


def build(config, seed=0, dtype=np.float64):
    """
    Allocate and initialize every layer.

    Weights are uniform Glorot (limit sqrt(6 / (fan_in + fan_out))), biases zero. T-Net
    transform layers start with zero weights and an identity bias so they return the identity
    matrix. The same seed gives bit-identical parameters.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    params = ModelParams(config, dtype)
    for layer in layer_table(config):
        if layer.identity_init:
            W = np.zeros((layer.fan_out, layer.fan_in), dtype=dtype)
            b = np.eye(layer.identity_init, dtype=dtype).reshape(-1)
        else:
            limit = np.sqrt(6.0 / (layer.fan_in + layer.fan_out))
            W = rng.uniform(-limit, limit, size=(layer.fan_out, layer.fan_in)).astype(dtype)
            b = np.zeros(layer.fan_out, dtype=dtype)
        state = tc.BNState.create(layer.fan_out, dtype) if layer.batch_norm else None
        params.register(layer, W, b, state)
    logger.info(f"Built network with {params.count()} trainable parameters (G={config.global_feature_size}).")
    return params


# Forward pass

def _dense(params, name, rows, mode, activation=tc.relu):
    out = tc.affine(rows, params.weight(name), params.bias(name))
    state = params.norm(name)
    if state is not None:
        # A single pooled row has no batch statistics; normalize it with the running ones.
        if mode == tc.TRAIN and rows.shape[0] < 2:
            mode = tc.INFER
        out = tc.batch_norm(out, state, mode)
    return activation(out) if activation is not None else out


def tnet_forward(params, prefix, x, mode):
    """
    Predict a K x K transform per sample from a B x N x K tensor.

    Shared MLP, max pool over points, two fully connected layers and a K*K affine reshaped to
    K x K. Returns the transform and the pooling argmax indices (B x G).
    """
    batch, n_points, k = x.shape
    config = params.config
    rows = tc.reshape(x, (batch * n_points, k))
    for i in range(1, len(config.shared_mlp) + 2):
        rows = _dense(params, f"{prefix}/conv{i}", rows, mode)
    pooled, indices = tc.max_pool_points(tc.reshape(rows, (batch, n_points, config.global_feature_size)))
    for i in range(1, len(config.tnet_fc) + 1):
        pooled = _dense(params, f"{prefix}/fc{i}", pooled, mode)
    flat = _dense(params, f"{prefix}/transform", pooled, mode, activation=None)
    return tc.reshape(flat, (batch, k, k)), indices


@dataclass
class LatentRecord:
    local_features: np.ndarray
    global_feature: np.ndarray
    argmax_indices: np.ndarray
    critical_set: np.ndarray
    transform_indices: dict = field(default_factory=dict)

    @classmethod
    def from_batch(cls, latent, index):
        argmax = latent["argmax"][index]
        transforms = {name: idx[index] for name, idx in latent["transform_argmax"].items()}
        return cls(
            local_features=latent["local"][index],
            global_feature=latent["global"][index],
            argmax_indices=argmax,
            critical_set=np.unique(argmax),
            transform_indices=transforms,
        )

    @property
    def sufficient_set(self):
        """Main critical points plus the T-Net critical points."""
        parts = [self.critical_set] + [np.unique(idx) for idx in self.transform_indices.values()]
        return np.unique(np.concatenate(parts))


def prepare_inputs(coords, config, strict=True):
    """Zero-pad 2-D coordinates when the network is 3-D and check the cloud shape."""
    coords = np.asarray(coords)
    if coords.ndim != 2:
        raise ShapeError(f"Expected N x d coordinates, got shape {coords.shape}")
    n_points, dim = coords.shape
    if strict and n_points != config.n_points:
        raise ShapeError(f"Cloud has {n_points} points, network expects {config.n_points}")
    if dim == config.input_dim:
        return coords
    if dim == 2 and config.input_dim == 3:
        return np.concatenate([coords, np.zeros((n_points, 1), dtype=coords.dtype)], axis=1)
    raise ShapeError(f"Cloud dimension {dim} does not match network input dimension {config.input_dim}")


def prepare_batch(coords, config):
    """B x N x d coordinates, zero-padded to the network input dimension when d is 2."""
    coords = np.asarray(coords)
    if coords.ndim != 3:
        raise ShapeError(f"Expected B x N x d coordinates, got shape {coords.shape}")
    if coords.shape[2] == 2 and config.input_dim == 3:
        return np.concatenate([coords, np.zeros(coords.shape[:2] + (1,), dtype=coords.dtype)], axis=2)
    return coords


def evaluate(params, X, mode):
    """
    Batched forward pass.

    Args:
        params (ModelParams)
        X (Tensor): B x N x d coordinates with d == config.input_dim.
        mode (str): "train" or "infer".

    Returns:
        tuple: (B x N x n_cfd Tensor in (0, 1), dict of batched latent arrays)
    """
    config = params.config
    if X.ndim != 3 or X.shape[2] != config.input_dim:
        raise ShapeError(f"Expected B x N x {config.input_dim} input, got {X.shape}")
    batch, n_points, _ = X.shape
    transform_argmax = {}

    x = X
    if config.input_transform:
        transform, transform_argmax["input"] = tnet_forward(params, "input_tnet", x, mode)
        x = tc.bmm(x, transform)
    rows = tc.reshape(x, (batch * n_points, config.input_dim))
    for i in range(1, len(config.local_mlp) + 1):
        rows = _dense(params, f"local/conv{i}", rows, mode)
    local = tc.reshape(rows, (batch, n_points, LOCAL_WIDTH))
    if config.feature_transform:
        transform, transform_argmax["feature"] = tnet_forward(params, "feature_tnet", local, mode)
        local = tc.bmm(local, transform)

    rows = tc.reshape(local, (batch * n_points, LOCAL_WIDTH))
    for i in range(1, len(config.shared_mlp) + 2):
        rows = _dense(params, f"global/conv{i}", rows, mode)
    global_feature, argmax = tc.max_pool_points(tc.reshape(rows, (batch, n_points, config.global_feature_size)))

    features = tc.concat_last(local, tc.tile_points(global_feature, n_points))
    rows = tc.reshape(features, (batch * n_points, config.concat_width))
    for i in range(1, len(config.tail_mlp) + 1):
        rows = _dense(params, f"tail/fc{i}", rows, mode)
    rows = _dense(params, "head/hidden", rows, mode)
    rows = _dense(params, "head/output", rows, mode, activation=tc.sigmoid)
    predictions = tc.reshape(rows, (batch, n_points, config.n_cfd))

    latent = {
        "local": local.data,
        "global": global_feature.data,
        "argmax": argmax,
        "transform_argmax": transform_argmax,
    }
    return predictions, latent


def forward(params, cloud, mode=tc.INFER, strict=True):
    """
    Predict normalized fields for one cloud.

    Returns:
        tuple: (N x n_cfd predictions in (0, 1), LatentRecord)
    """
    coords = prepare_inputs(getattr(cloud, "coords", cloud), params.config, strict=strict)
    X = tc.Tensor(coords[None], dtype=params.dtype)
    predictions, latent = evaluate(params, X, mode)
    return predictions.data[0], LatentRecord.from_batch(latent, 0)


def forward_batch(params, clouds, mode=tc.INFER):
    """Predictions and latent records for several clouds evaluated as one batch."""
    coords = np.stack([prepare_inputs(getattr(c, "coords", c), params.config) for c in clouds])
    predictions, latent = evaluate(params, tc.Tensor(coords.astype(params.dtype)), mode)
    records = [LatentRecord.from_batch(latent, i) for i in range(len(clouds))]
    return predictions.data, records


class Evaluator:
    """
    Callable view of the network for input-coordinate derivatives.

    Takes a B x N x 2 (or 3) Tensor of raw coordinates and pads in-graph when the network is 3-D,
    so gradients flow back to the coordinates actually supplied.
    """

    def __init__(self, params, mode=tc.INFER):
        self.params = params
        self.mode = mode

    def __call__(self, X):
        config = self.params.config
        if X.shape[2] == 2 and config.input_dim == 3:
            zeros = tc.Tensor(np.zeros(X.shape[:2] + (1,), dtype=X.dtype))
            X = tc.concat_last(X, zeros)
        predictions, _ = evaluate(self.params, X, self.mode)
        return predictions
