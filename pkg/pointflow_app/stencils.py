"""
Connectivity-free derivative reconstruction on scattered points.

Each center gets its k nearest neighbours and a weighted least-squares fit of the local Taylor
expansion up to second order:

    f(x_j) - f(x_i) ~ f_x dx + f_y dy + f_xx dx^2 / 2 + f_xy dx dy + f_yy dy^2 / 2

so the reconstruction is exact for every polynomial of total degree <= 2. Each center also gets
an area weight dV for the volume integrals of the conservation residuals.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import svd
from scipy.spatial import ConvexHull, cKDTree

from utils.exceptions import ConfigError, NumericalError

logger = logging.getLogger(__name__)

MIN_K = 6
DERIVATIVES = ("x", "y", "xx", "xy", "yy")
# Singular values below this fraction of the largest count as rank loss.
RANK_TOLERANCE = 1e-10
# Neighbours used for the local spacing behind dV.
AREA_NEIGHBOURS = 6


@dataclass
class StencilSet:
    centers: np.ndarray
    neighbors: list
    coefficients: list
    dV: np.ndarray
    k: int
    repaired: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.centers)

    def derivatives(self, values):
        """
        Reconstruct first and second derivatives of a nodal field at every center.

        Returns:
            dict: "x", "y", "xx", "xy", "yy" -> arrays aligned with ``centers``.
        """
        values = np.asarray(values, dtype=np.float64)
        out = np.empty((len(self.centers), len(DERIVATIVES)))
        for row, (center, neighbors, coefficients) in enumerate(zip(self.centers, self.neighbors, self.coefficients)):
            out[row] = coefficients @ (values[neighbors] - values[center])
        return {name: out[:, i] for i, name in enumerate(DERIVATIVES)}


def _taylor_matrix(offsets):
    dx, dy = offsets[:, 0], offsets[:, 1]
    return np.stack([dx, dy, 0.5 * dx * dx, dx * dy, 0.5 * dy * dy], axis=1)


def _fit(coords, center, neighbors):
    """Coefficient matrix mapping neighbour differences to derivatives, or None if rank deficient."""
    offsets = coords[neighbors] - coords[center]
    distances = np.linalg.norm(offsets, axis=1)
    h = distances.max()
    if h == 0:
        return None
    # Scaled basis keeps first- and second-order columns comparable.
    A = _taylor_matrix(offsets / h)
    # Square roots of inverse-square-distance weights.
    weights = h / np.maximum(distances, 1e-12 * h)
    WA = A * weights[:, None]
    U, S, Vt = svd(WA, full_matrices=False)
    if S[-1] < RANK_TOLERANCE * S[0]:
        return None
    pseudo_inverse = (Vt.T / S) @ U.T
    coefficients = pseudo_inverse * weights[None, :]
    unscale = np.array([h, h, h * h, h * h, h * h])
    return coefficients / unscale[:, None]


def domain_area(coords, geometry=None):
    """Convex-hull area of the cloud minus the area of every object inside it."""
    area = ConvexHull(coords).volume
    if geometry is not None:
        area -= sum(np.pi * o.a * o.b for o in geometry.objects)
    return area


def area_weights(coords, geometry=None):
    """
    dV = pi * (median neighbour distance / 2)^2 for every point, rescaled (by at most a factor of
    two either way) so that the weights of all points add up to the domain area.
    """
    tree = cKDTree(coords)
    count = min(AREA_NEIGHBOURS + 1, len(coords))
    distances, _ = tree.query(coords, k=count)
    spacing = np.median(distances[:, 1:], axis=1)
    raw = np.pi * (spacing / 2) ** 2
    factor = np.clip(domain_area(coords, geometry) / raw.sum(), 0.5, 2.0)
    return raw * factor


def build_stencils(cloud, k=12, centers=None):
    """
    Build WLS stencils for ``centers`` (default: every point).

    A rank-deficient neighbourhood (e.g. collinear neighbours) is retried with two more
    neighbours at a time, up to ``2 * k``; the grown size is recorded in ``repaired``.

    Raises:
        ConfigError: k < 6.
        NumericalError: a neighbourhood is still rank deficient at 2 * k.
    """
    if k < MIN_K:
        raise ConfigError(f"Stencils need k >= {MIN_K}, got {k}")
    coords = np.asarray(getattr(cloud, "coords", cloud), dtype=np.float64)
    geometry = getattr(cloud, "geometry", None)
    centers = np.arange(len(coords)) if centers is None else np.asarray(centers, dtype=int)
    limit = min(2 * k, len(coords) - 1)
    if limit < MIN_K - 1:
        raise NumericalError(f"Cloud of {len(coords)} points is too small for stencils")
    tree = cKDTree(coords)
    _, candidates = tree.query(coords[centers], k=limit + 1)

    neighbors, coefficients, repaired = [], [], {}
    for row, center in enumerate(centers):
        # The center itself comes first among its own neighbours; drop it wherever it sits.
        ordered = candidates[row][candidates[row] != center]
        size = min(k, limit)
        fit = _fit(coords, center, ordered[:size])
        while fit is None and size < limit:
            size = min(size + 2, limit)
            fit = _fit(coords, center, ordered[:size])
        if fit is None:
            logger.error(f"Stencil at point {center} is rank deficient even with {size} neighbours")
            raise NumericalError(f"Rank-deficient stencil at point {center} with {size} neighbours")
        if size != min(k, limit):
            repaired[int(center)] = size
        neighbors.append(ordered[:size])
        coefficients.append(fit)

    if repaired:
        logger.info(f"Rank repair grew {len(repaired)} stencils beyond k={k}.")
    dV = area_weights(coords, geometry)[centers]
    return StencilSet(centers, neighbors, coefficients, dV, k, repaired)
