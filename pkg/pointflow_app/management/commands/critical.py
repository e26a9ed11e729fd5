from pathlib import Path

from utils.exceptions import ConfigError

from ... import tensor_core as tc
from ...checkpoint import load_checkpoint
from ...critical_points import REFERENCE_RANGE, analyze, critical_frame
from ...csv_read import read_sample
from ...dataset import Dataset
from ...plots import plot_critical
from ...reporting import critical_report, write_frame
from ..base import PointflowCommand, input_files


class Command(PointflowCommand):
    help = "Critical points of the global max pool per cloud, with boundary coverage."
    name = "critical"
    required_paths = ("checkpoint",)

    def add_command_arguments(self, parser):
        parser.add_argument("--input", help="Sample CSV or directory of them (default: the dataset's test split)")

    def clouds(self, config):
        paths = config["paths"]
        if paths.get("input"):
            files = input_files(paths["input"])
            return [path.name for path in files], [read_sample(path) for path in files]
        if not paths.get("data"):
            raise ConfigError("critical needs --data or --input")
        dataset = Dataset(paths["data"])
        return dataset.manifest.files("test"), dataset.split("test")

    def run(self, config, run_dir):
        params, _ = load_checkpoint(config["paths"]["checkpoint"], dtype=tc.dtype_for(config["runtime"]["precision"]))
        names, clouds = self.clouds(config)
        rows = []
        for name, cloud in zip(names, clouds):
            report, _ = analyze(params, cloud)
            rows.append({
                "sample": name,
                "count": report.count,
                "n_points": report.n_points,
                "global_feature_size": report.global_feature_size,
                "surface_critical": report.surface_critical,
                "surface_points": report.surface_points,
                "covered": "n/a" if report.boundary_covered is None else str(report.boundary_covered).lower(),
            })
            write_frame(critical_frame(cloud, report.indices), run_dir / "reports" / "critical" / name)
            if config["runtime"]["plots"]:
                stem = Path(name).stem
                plot_critical(cloud.coords, report.indices, run_dir / "plots" / f"{stem}_critical.png", f"{stem}: {report.count} critical points")
        critical_report(run_dir / "reports" / "critical.txt", rows, REFERENCE_RANGE)
        counts = [row["count"] for row in rows]
        self.report(f"Critical points of {len(rows)} clouds: between {min(counts)} and {max(counts)}.")
