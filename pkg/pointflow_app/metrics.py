import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from utils.exceptions import DataError, ShapeError

from .normalization import FIELD_NAMES

logger = logging.getLogger(__name__)

VARIANTS = ("euclidean", "rms", "relative")
HEADLINE = "euclidean"


@dataclass
class ErrorReport:
    """
    Per-field error norms in three variants plus the per-point absolute errors.

    ``relative[f]`` is None (and ``undefined`` lists ``f``) when the truth norm of field ``f`` is 0.
    """

    euclidean: dict
    rms: dict
    relative: dict
    abs_errors: np.ndarray
    undefined: list = field(default_factory=list)

    def headline(self):
        return dict(self.euclidean)

    def as_row(self):
        row = {}
        for variant in VARIANTS:
            for name in FIELD_NAMES:
                row[f"{variant}_{name}"] = getattr(self, variant)[name]
        return row


def pointwise_errors(truth, pred):
    """
    Compare predicted (u, v, p) with the truth, both in physical units.

    Args:
        truth: PointCloud with fields, or an N x 3 array.
        pred (array): N x 3 predictions.

    Raises:
        ShapeError: shapes differ.
        DataError: the truth has no fields.
    """
    fields = getattr(truth, "fields", truth)
    if fields is None:
        raise DataError("Error metrics need a cloud with (u, v, p) fields")
    fields = np.asarray(fields, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if fields.shape != pred.shape or fields.ndim != 2 or fields.shape[1] != len(FIELD_NAMES):
        raise ShapeError(f"Truth {fields.shape} and prediction {pred.shape} must both be N x 3")

    diff = pred - fields
    euclidean, rms, relative, undefined = {}, {}, {}, []
    for i, name in enumerate(FIELD_NAMES):
        norm = float(np.sqrt(np.sum(diff[:, i] ** 2)))
        euclidean[name] = norm
        rms[name] = norm / np.sqrt(len(diff))
        truth_norm = float(np.sqrt(np.sum(fields[:, i] ** 2)))
        if truth_norm == 0.0:
            relative[name] = None
            undefined.append(name)
        else:
            relative[name] = norm / truth_norm
    if undefined:
        logger.debug(f"Relative error undefined for {undefined}: zero truth norm.")
    return ErrorReport(euclidean, rms, relative, np.abs(diff), undefined)


def error_frame(reports, names):
    """One row per sample with every variant and field."""
    rows = []
    for name, report in zip(names, reports):
        rows.append(dict(sample=name, **report.as_row()))
    return pd.DataFrame(rows)


def summarize_errors(frame, variant=HEADLINE):
    """
    Average, Maximum and Minimum over samples of one norm variant, plus the samples attaining
    the extremes.
    """
    columns = [f"{variant}_{name}" for name in FIELD_NAMES]
    values = frame[columns].apply(pd.to_numeric, errors="coerce")
    summary = pd.DataFrame(
        [values.mean(), values.max(), values.min()],
        index=["Average", "Maximum", "Minimum"],
    )
    summary.columns = list(FIELD_NAMES)
    extremes = {}
    for column, name in zip(columns, FIELD_NAMES):
        if values[column].notna().any():
            extremes[name] = {
                "max": frame.loc[values[column].idxmax(), "sample"],
                "min": frame.loc[values[column].idxmin(), "sample"],
            }
    return summary, extremes
