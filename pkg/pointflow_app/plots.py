import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .normalization import FIELD_NAMES  # noqa: E402

logger = logging.getLogger(__name__)

FIELD_LABELS = {"u": "u (m/s)", "v": "v (m/s)", "p": "p (Pa)"}


def plot_field(coords, values, path, title, label="", marker_size=4.0):
    """Scatter map of one nodal quantity over the cloud."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5))
    points = ax.scatter(coords[:, 0], coords[:, 1], marker_size, values, cmap="jet")
    fig.colorbar(points, ax=ax, label=label)
    ax.locator_params(axis="x", nbins=6)
    ax.locator_params(axis="y", nbins=6)
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="box")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_fields(coords, truth, prediction, directory, name):
    """Ground truth, prediction and absolute error for u, v and p."""
    paths = []
    for i, field in enumerate(FIELD_NAMES):
        label = FIELD_LABELS[field]
        if truth is not None:
            paths.append(plot_field(coords, truth[:, i], Path(directory) / f"{name}_{field}_truth.png", f"{field} ground truth", label))
            paths.append(plot_field(
                coords, abs(prediction[:, i] - truth[:, i]), Path(directory) / f"{name}_{field}_error.png",
                f"|{field} error|", label,
            ))
        paths.append(plot_field(coords, prediction[:, i], Path(directory) / f"{name}_{field}_prediction.png", f"{field} prediction", label))
    logger.debug(f"Wrote {len(paths)} field plots for {name}.")
    return paths


def plot_critical(coords, indices, path, title):
    """All points in grey with the critical points highlighted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.scatter(coords[:, 0], coords[:, 1], 2.0, color="0.7")
    ax.scatter(coords[indices, 0], coords[indices, 1], 6.0, color="tab:red", label="critical")
    ax.set_xlabel("x (m)")
    ax.set_ylabel("y (m)")
    ax.set_title(title)
    ax.set_aspect("equal", adjustable="box")
    ax.legend(loc="upper right")
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_loss(frame, path):
    """Training and validation loss per epoch on a log scale."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(frame["epoch"], frame["train_loss"], label="training")
    ax.plot(frame["epoch"], frame["val_loss"], label="validation")
    ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path
