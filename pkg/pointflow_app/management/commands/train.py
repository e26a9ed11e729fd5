from pathlib import Path

from threadpoolctl import threadpool_limits

from utils.exceptions import ConfigError

from ... import network
from ...dataset import Dataset
from ...plots import plot_loss
from ...reporting import training_report
from ...training import evaluate_loss, fit
from ..base import PointflowCommand, model_config, train_config

CHECKPOINT_NAME = "model.pcfn"


class Command(PointflowCommand):
    help = "Train the point-cloud network on a dataset and keep the best-validation checkpoint."
    name = "train"
    required_paths = ("data",)

    def run(self, config, run_dir):
        model = model_config(config)
        training = train_config(config)
        dataset = Dataset(config["paths"]["data"])
        train = dataset.arrays("train", training.dtype)
        val = dataset.arrays("val", training.dtype)
        if train[0].shape[1] != model.n_points:
            raise ConfigError(
                f"Dataset clouds have {train[0].shape[1]} points but the model expects {model.n_points}; "
                f"pass --points {train[0].shape[1]}"
            )

        params = network.build(model, seed=training.seed, dtype=training.dtype)
        self.report(f"Training {params.count()} parameters")
        metadata = {"norm_stats": dataset.stats.to_dict(), "dataset": str(Path(config["paths"]["data"]).resolve())}
        best, report = fit(
            params, train, val, training,
            checkpoint_path=run_dir / "checkpoints" / CHECKPOINT_NAME,
            metadata=metadata,
        )
        report.write_csv(run_dir / "reports" / "loss.csv")

        test_loss = None
        if dataset.manifest.files("test"):
            with threadpool_limits(limits=training.blas_threads):
                test_loss = evaluate_loss(best, *dataset.arrays("test", training.dtype))
        training_report(run_dir / "reports" / "training.txt", report, model, training, test_loss)
        if config["runtime"]["plots"]:
            plot_loss(report.to_frame(), run_dir / "reports" / "loss.png")
        self.report(
            f"Best validation loss {report.best_val_loss:.6e} at epoch {report.best_epoch}; "
            f"checkpoint {report.checkpoint}"
        )
