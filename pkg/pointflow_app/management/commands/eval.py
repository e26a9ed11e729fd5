import numpy as np
import pandas as pd

from ... import tensor_core as tc
from ...dataset import Dataset
from ...integrateModel import Predictor
from ...metrics import HEADLINE, VARIANTS, error_frame, pointwise_errors, summarize_errors
from ...plots import plot_fields
from ...reporting import error_report, write_frame
from ..base import PointflowCommand


def point_error_frame(cloud, report, critical):
    flags = np.zeros(len(cloud), dtype=int)
    flags[critical] = 1
    errors = report.abs_errors
    return pd.DataFrame({
        "x": cloud.coords[:, 0], "y": cloud.coords[:, 1],
        "err_u": errors[:, 0], "err_v": errors[:, 1], "err_p": errors[:, 2],
        "is_critical": flags,
    })


class Command(PointflowCommand):
    help = "Pointwise errors of a checkpoint on the test split: per-sample norms, summary table, per-point CSVs."
    name = "eval"
    required_paths = ("checkpoint", "data")

    def run(self, config, run_dir):
        predictor = Predictor(config["paths"]["checkpoint"], dtype=tc.dtype_for(config["runtime"]["precision"]))
        dataset = Dataset(config["paths"]["data"])
        names = dataset.manifest.files("test")
        clouds = dataset.split("test")
        predictions = predictor.predict_many(clouds)

        reports = []
        for name, cloud, prediction in zip(names, clouds, predictions):
            report = pointwise_errors(cloud, prediction.fields)
            reports.append(report)
            write_frame(
                point_error_frame(cloud, report, prediction.latent.critical_set),
                run_dir / "reports" / "errors" / name,
            )
            if config["runtime"]["plots"]:
                plot_fields(cloud.coords, cloud.fields, prediction.fields, run_dir / "plots", name.rsplit(".", 1)[0])

        frame = error_frame(reports, names)
        write_frame(frame, run_dir / "reports" / "errors.csv")
        summaries = {variant: summarize_errors(frame, variant)[0] for variant in VARIANTS}
        _, extremes = summarize_errors(frame, HEADLINE)
        seconds = float(np.mean([p.seconds for p in predictions])) if predictions else None
        error_report(run_dir / "reports" / "errors.txt", summaries, extremes, len(reports), seconds)
        self.report(f"Evaluated {len(reports)} test samples; summary in {run_dir / 'reports' / 'errors.txt'}")

