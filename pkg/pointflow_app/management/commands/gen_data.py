from pathlib import Path

from ...dataset import generate_dataset, ingest_dataset
from ..base import PointflowCommand, flow_params, grading, input_files, radii


class Command(PointflowCommand):
    help = (
        "Generate potential-flow samples around cylinders (or ingest sample CSVs with --input), "
        "split them 80/10/10 and freeze the scaling statistics in manifest.yaml."
    )
    name = "gen_data"

    def add_command_arguments(self, parser):
        parser.add_argument("--samples", type=int, help="Number of samples to generate")
        parser.add_argument("--input", help="Directory of sample CSVs to ingest instead of generating")

    def run(self, config, run_dir):
        paths = config["paths"]
        runtime = config["runtime"]
        directory = Path(paths["data"]) if paths.get("data") else run_dir / "dataset"
        if paths.get("input"):
            manifest = ingest_dataset(directory, input_files(paths["input"]), runtime["seed"], flow_params(config))
        else:
            manifest = generate_dataset(
                directory,
                n_samples=config["data"]["samples"],
                radii=radii(config),
                n_points=config["model"]["n_points"],
                seed=runtime["seed"],
                flow=flow_params(config),
                grading=grading(config),
                n_jobs=runtime["n_jobs"],
            )
        counts = manifest.counts()
        self.report(
            f"Dataset written to {directory}: {counts['train']} train, {counts['val']} val, {counts['test']} test."
        )
