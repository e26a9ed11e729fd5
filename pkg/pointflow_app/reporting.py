"""
Text summaries rendered from the templates under ``templates/reports`` plus CSV writers.
"""
import logging
from pathlib import Path

import numpy as np
from django.template.loader import render_to_string

from .normalization import FIELD_NAMES
from .residuals import RESIDUALS
from .training import INFEASIBLE

logger = logging.getLogger(__name__)

SUMMARY_ROWS = ("Average", "Maximum", "Minimum")


def fmt(value):
    if value is None:
        return "n/a"
    if isinstance(value, str) and value == INFEASIBLE:
        return INFEASIBLE
    try:
        value = float(value)
    except (TypeError, ValueError):
        return str(value)
    if np.isnan(value):
        return "n/a"
    return f"{value:.4e}"


def _summary_rows(summary, columns):
    return [
        {"label": label, "values": [fmt(summary.loc[label, c]) for c in columns]}
        for label in SUMMARY_ROWS
    ]


def write_report(path, template, context):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = render_to_string(template, context)
    path.write_text(text, encoding="utf-8")
    logger.info(f"Report written to {path}.")
    return path


def error_report(path, summaries, extremes, n_samples, seconds_per_cloud=None):
    """
    Pointwise error table: Average/Maximum/Minimum over samples for every norm variant.

    Args:
        summaries (dict): variant -> DataFrame indexed by SUMMARY_ROWS with columns u, v, p.
        extremes (dict): field -> {"max": sample, "min": sample} for the headline variant.
    """
    context = {
        "fields": FIELD_NAMES,
        "variants": [
            {"name": name, "rows": _summary_rows(summary, FIELD_NAMES)}
            for name, summary in summaries.items()
        ],
        "extremes": [{"field": f, "max": e["max"], "min": e["min"]} for f, e in extremes.items()],
        "n_samples": n_samples,
        "seconds_per_cloud": fmt(seconds_per_cloud) if seconds_per_cloud is not None else None,
    }
    return write_report(path, "reports/errors.txt", context)


def residual_report(path, summary, extremes, n_samples, k, label="predicted fields"):
    context = {
        "label": label,
        "columns": RESIDUALS,
        "rows": _summary_rows(summary, RESIDUALS),
        "extremes": [{"column": c, "max": e["max"], "min": e["min"]} for c, e in extremes.items()],
        "n_samples": n_samples,
        "k": k,
    }
    return write_report(path, "reports/residuals.txt", context)


def gradient_residual_report(path, summaries, counts, n_samples):
    """
    Network-gradient residuals for critical and non-critical interior points.

    Args:
        summaries (dict): "critical"/"non_critical" -> DataFrame indexed by SUMMARY_ROWS.
        counts (dict): set -> total interior points in that set over all samples.
    """
    sets = []
    for label, summary in summaries.items():
        sets.append({
            "name": label.replace("_", "-"),
            "count": counts.get(label, 0),
            "rows": _summary_rows(summary, RESIDUALS),
        })
    context = {"columns": RESIDUALS, "sets": sets, "n_samples": n_samples}
    return write_report(path, "reports/gradient_residuals.txt", context)


def grid_report(path, table):
    rows = []
    for _, row in table.iterrows():
        rows.append({
            "global_feature": int(row["global_feature"]),
            "batch_size": int(row["batch_size"]),
            "tail_mlp": row["tail_mlp"],
            "parameters": int(row["parameters"]),
            "train_loss": fmt(row["train_loss"]),
            "val_loss": fmt(row["val_loss"]),
            "test_loss": fmt(row["test_loss"]),
            "seconds": fmt(row["seconds"]),
        })
    return write_report(path, "reports/grid.txt", {"rows": rows})


def critical_report(path, rows, reference):
    """
    Args:
        rows (list): dicts with sample, count, n_points, global_feature_size, surface_critical,
            surface_points, covered.
    """
    rows = [dict(r, surface=f"{r['surface_critical']}/{r['surface_points']}") for r in rows]
    counts = [r["count"] for r in rows]
    context = {
        "rows": rows,
        "reference": reference,
        "minimum": min(counts) if counts else 0,
        "maximum": max(counts) if counts else 0,
        "average": fmt(np.mean(counts)) if counts else "n/a",
    }
    return write_report(path, "reports/critical.txt", context)


def training_report(path, report, model_config, train_config, test_loss=None):
    context = {
        "parameters": report.parameters,
        "global_feature": model_config.global_feature_size,
        "tail_mlp": ",".join(str(w) for w in model_config.tail_mlp),
        "epochs": train_config.epochs,
        "batch_size": train_config.batch_size,
        "learning_rate": train_config.learning_rate,
        "best_epoch": report.best_epoch,
        "best_val_loss": fmt(report.best_val_loss),
        "final_train_loss": fmt(report.final.get("train_loss")),
        "final_val_loss": fmt(report.final.get("val_loss")),
        "test_loss": fmt(test_loss) if test_loss is not None else None,
        "wall_time": f"{report.wall_time:.1f}",
        "checkpoint": report.checkpoint,
    }
    return write_report(path, "reports/training.txt", context)


def write_frame(frame, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path
