import numpy as np
import pandas as pd

from ... import tensor_core as tc
from ...csv_read import read_sample
from ...integrateModel import Predictor
from ...plots import plot_fields
from ...reporting import write_frame
from ..base import PointflowCommand, input_files


def prediction_frame(prediction):
    coords = prediction.cloud.coords
    fields = prediction.fields
    return pd.DataFrame({
        "x": coords[:, 0], "y": coords[:, 1],
        "u": fields[:, 0], "v": fields[:, 1], "p": fields[:, 2],
    })


class Command(PointflowCommand):
    help = "Predict physical (u, v, p) for coordinate CSVs with a trained checkpoint."
    name = "predict"
    required_paths = ("checkpoint", "input")

    def add_command_arguments(self, parser):
        parser.add_argument("--input", help="Coordinates CSV (x,y) or a directory of them")

    def run(self, config, run_dir):
        predictor = Predictor(config["paths"]["checkpoint"], dtype=tc.dtype_for(config["runtime"]["precision"]))
        files = input_files(config["paths"]["input"])
        predictions = predictor.predict_many([read_sample(path) for path in files])
        directory = run_dir / "predictions"
        for path, prediction in zip(files, predictions):
            write_frame(prediction_frame(prediction), directory / f"{path.stem}.csv")
            if config["runtime"]["plots"]:
                plot_fields(prediction.cloud.coords, prediction.cloud.fields, prediction.fields, run_dir / "plots", path.stem)
        seconds = np.mean([p.seconds for p in predictions])
        self.report(f"Predicted {len(predictions)} clouds into {directory} ({seconds * 1e3:.2f} ms per cloud).")
