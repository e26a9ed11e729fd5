import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import network
from . import tensor_core as tc

logger = logging.getLogger(__name__)

# Range of critical-point counts seen on a full-scale test set (N=1024), shown for context only.
REFERENCE_RANGE = "varies between 376 and 526"


@dataclass
class CriticalReport:
    indices: np.ndarray
    boundary_covered: bool
    n_points: int
    global_feature_size: int
    surface_points: int
    surface_critical: int

    @property
    def count(self):
        return len(self.indices)


def critical_points(latent, cloud):
    """
    Deduplicated argmax indices of the global max pool and the boundary-coverage flag.

    The flag is True iff every object-surface point is critical; it is None when the cloud has no
    known surface points.

    Returns:
        tuple: (sorted critical indices, flag)
    """
    indices = np.unique(latent.argmax_indices)
    surface = np.flatnonzero(cloud.boundary_mask()) if hasattr(cloud, "boundary_mask") else np.empty(0, dtype=int)
    if len(surface) == 0:
        return indices, None
    return indices, bool(np.isin(surface, indices).all())


def analyze(params, cloud):
    """Forward pass plus critical-point summary for one cloud."""
    _, latent = network.forward(params, cloud, mode=tc.INFER)
    indices, covered = critical_points(latent, cloud)
    surface = np.flatnonzero(cloud.boundary_mask())
    report = CriticalReport(
        indices=indices,
        boundary_covered=covered,
        n_points=len(cloud),
        global_feature_size=params.config.global_feature_size,
        surface_points=len(surface),
        surface_critical=int(np.isin(surface, indices).sum()),
    )
    logger.debug(f"{report.count} critical points of {report.n_points}; surface {report.surface_critical}/{report.surface_points}.")
    return report, latent


def critical_frame(cloud, indices):
    """Per-point table ``x,y,is_critical``."""
    flags = np.zeros(len(cloud), dtype=int)
    flags[indices] = 1
    return pd.DataFrame({"x": cloud.coords[:, 0], "y": cloud.coords[:, 1], "is_critical": flags})
