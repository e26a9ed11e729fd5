from ...dataset import SPLITS, Dataset
from ...reporting import grid_report
from ...training import grid_search
from ..base import PointflowCommand, model_config, train_config


class Command(PointflowCommand):
    help = (
        "Train one model per (global feature size, batch size) cell and tabulate train/val/test "
        "loss and wall time. Finished cells in the run directory are skipped."
    )
    name = "grid_search"
    required_paths = ("data",)

    def add_command_arguments(self, parser):
        parser.add_argument("--grid-g", type=int, nargs="+", dest="grid_g", help="Global feature sizes")
        parser.add_argument("--grid-batch", type=int, nargs="+", dest="grid_batch", help="Batch sizes")

    def run(self, config, run_dir):
        model = model_config(config)
        training = train_config(config)
        dataset = Dataset(config["paths"]["data"])
        data = {split: dataset.arrays(split, training.dtype) for split in SPLITS}
        grid = config["grid"]
        table = grid_search(
            data, model, training,
            g_values=grid["global_features"],
            batch_values=grid["batch_sizes"],
            out_dir=run_dir / "reports",
            memory_limit_mb=grid["memory_limit_mb"],
            resume=True,
            metadata={"norm_stats": dataset.stats.to_dict()},
            checkpoint_dir=run_dir / "checkpoints",
        )
        grid_report(run_dir / "reports" / "grid.txt", table)
        feasible = int((table["feasible"] == "yes").sum())
        self.report(f"Grid finished: {feasible} of {len(table)} cells feasible.")
