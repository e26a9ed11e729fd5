import pandas as pd

from ... import tensor_core as tc
from ...dataset import Dataset
from ...integrateModel import Predictor
from ...reporting import gradient_residual_report, residual_report, write_frame
from ...residuals import (
    conservation_residuals,
    gradient_rows,
    interior_indices,
    network_gradient_residuals,
    summarize_residuals,
)
from ...stencils import build_stencils
from ..base import PointflowCommand, flow_params

SETS = ("critical", "non_critical")


def dataset_flow(dataset, config):
    """Flow constants the dataset was generated with, falling back to the run config."""
    flow = flow_params(config)
    flow.update(dataset.manifest.generator.get("flow") or {})
    return flow


class Command(PointflowCommand):
    help = (
        "Integrated conservation residuals of the reference fields and, with --checkpoint, of the "
        "predicted fields plus network-gradient residuals over critical and non-critical points."
    )
    name = "residuals"
    required_paths = ("data",)

    def run(self, config, run_dir):
        dataset = Dataset(config["paths"]["data"])
        flow = dataset_flow(dataset, config)
        k = config["eval"]["stencil_k"]
        names = dataset.manifest.files("test")
        clouds = dataset.split("test")
        predictor = None
        if config["paths"].get("checkpoint"):
            predictor = Predictor(config["paths"]["checkpoint"], dtype=tc.dtype_for(config["runtime"]["precision"]))

        reference_rows, predicted_rows, gradient_table = [], [], []
        for name, cloud in zip(names, clouds):
            stencils = build_stencils(cloud, k=k, centers=interior_indices(cloud))
            reference = conservation_residuals(cloud, flow["rho"], flow["mu"], k=k, stencils=stencils)
            reference_rows.append(dict(sample=name, **reference.as_row()))
            if predictor is None:
                continue
            prediction = predictor.predict(cloud)
            predicted = conservation_residuals(
                cloud, flow["rho"], flow["mu"], k=k, fields=prediction.fields, stencils=stencils,
            )
            predicted_rows.append(dict(sample=name, **predicted.as_row()))
            result = network_gradient_residuals(
                predictor.params, cloud, predictor.stats, flow["mu"], config["eval"]["relative_step"],
            )
            gradient_table.extend(gradient_rows(name, result))

        reports = run_dir / "reports"
        write_frame(pd.DataFrame(reference_rows), reports / "residuals_reference.csv")
        summary, extremes = summarize_residuals(reference_rows)
        residual_report(reports / "residuals_reference.txt", summary, extremes, len(reference_rows), k, label="reference fields")
        if predictor is not None:
            write_frame(pd.DataFrame(predicted_rows), reports / "residuals.csv")
            summary, extremes = summarize_residuals(predicted_rows)
            residual_report(reports / "residuals.txt", summary, extremes, len(predicted_rows), k)

            table = pd.DataFrame(gradient_table)
            write_frame(table, reports / "gradient_residuals.csv")
            summaries, counts = {}, {}
            for label in SETS:
                part = table[table["set"] == label]
                counts[label] = int(part["count"].sum())
                summaries[label], _ = summarize_residuals(part.drop(columns=["set", "count"]).to_dict("records"))
            gradient_residual_report(reports / "gradient_residuals.txt", summaries, counts, len(names))
        self.report(f"Residuals of {len(names)} test samples written to {reports}")
