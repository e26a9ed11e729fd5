"""
Conservation residuals of predicted fields.

Two families:

* integrated residuals of the steady incompressible Navier-Stokes and continuity equations,
  with derivatives reconstructed from WLS stencils and dV-weighted sums over interior points;
* network-gradient residuals, with derivatives of the network outputs taken with respect to
  its input coordinates and averaged separately over critical and non-critical interior points.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.spatial import ConvexHull

from utils.exceptions import DataError

from . import network
from . import tensor_core as tc
from .normalization import from_targets
from .stencils import build_stencils

logger = logging.getLogger(__name__)

RESIDUALS = ("momentum_x", "momentum_y", "continuity")
RIM_TOLERANCE = 1e-9


def boundary_mask(cloud):
    """
    Points on an object surface or on the convex-hull rim of the cloud.

    The rim test uses a distance tolerance of 1e-9 times the bounding-box diagonal.
    """
    coords = np.asarray(cloud.coords, dtype=np.float64)
    mask = cloud.boundary_mask().copy()
    if len(coords) < 3:
        mask[:] = True
        return mask
    diagonal = np.linalg.norm(coords.max(axis=0) - coords.min(axis=0))
    hull = ConvexHull(coords)
    # equations: unit outward normal n and offset c with n.x + c <= 0 inside.
    distance = -(coords @ hull.equations[:, :2].T + hull.equations[:, 2])
    mask |= distance.min(axis=1) <= RIM_TOLERANCE * diagonal
    return mask


def interior_indices(cloud):
    return np.flatnonzero(~boundary_mask(cloud))


def pointwise_equations(values, d, rho, mu):
    """
    Pointwise residuals of x-momentum, y-momentum and continuity.

    Args:
        values (array): M x 3 (u, v, p).
        d (dict): field name -> dict of derivative name ("x", "y", "xx", "yy") -> M array.
    """
    u, v = values[:, 0], values[:, 1]
    du, dv, dp = d["u"], d["v"], d["p"]
    momentum_x = rho * (u * du["x"] + v * du["y"]) + dp["x"] - mu * (du["xx"] + du["yy"])
    momentum_y = rho * (u * dv["x"] + v * dv["y"]) + dp["y"] - mu * (dv["xx"] + dv["yy"])
    continuity = du["x"] + dv["y"]
    return np.stack([momentum_x, momentum_y, continuity], axis=1)


@dataclass
class ConservationResiduals:
    momentum_x: float
    momentum_y: float
    continuity: float
    n_interior: int
    repaired: int = 0

    def as_row(self):
        return {name: getattr(self, name) for name in RESIDUALS}


def conservation_residuals(cloud, rho, mu, k=12, fields=None, stencils=None):
    """
    |sum_i dV_i R_i| for each equation over the interior points.

    Args:
        cloud (PointCloud): coordinates (and fields unless ``fields`` is given), physical units.
        rho, mu (float): density and dynamic viscosity.
        k (int): stencil size.
        fields (array): N x 3 fields overriding ``cloud.fields`` (e.g. predictions).
        stencils (StencilSet): reuse stencils built for the same interior points.

    Raises:
        DataError: no fields.
    """
    fields = cloud.fields if fields is None else np.asarray(fields, dtype=np.float64)
    if fields is None:
        raise DataError("Conservation residuals need (u, v, p) fields")
    if stencils is None:
        stencils = build_stencils(cloud, k=k, centers=interior_indices(cloud))
    centers = stencils.centers
    d = {name: stencils.derivatives(fields[:, i]) for i, name in enumerate(("u", "v", "p"))}
    pointwise = pointwise_equations(fields[centers], d, rho, mu)
    integrated = np.abs(stencils.dV @ pointwise)
    return ConservationResiduals(
        momentum_x=float(integrated[0]),
        momentum_y=float(integrated[1]),
        continuity=float(integrated[2]),
        n_interior=len(centers),
        repaired=len(stencils.repaired),
    )


# Network-gradient residuals

def _channel_scales(stats):
    """d(physical field)/d(network output) per channel."""
    span = np.asarray(stats.maximum) - np.asarray(stats.minimum)
    return span * np.array([stats.u_inf, stats.u_inf, stats.rho * stats.u_inf ** 2])


@dataclass
class SetResiduals:
    """Averaged residuals over one point set; empty sets carry None."""

    count: int
    averaged: dict
    magnitudes: dict = field(default_factory=dict)

    @property
    def empty(self):
        return self.count == 0


@dataclass
class GradientResiduals:
    critical: SetResiduals
    non_critical: SetResiduals
    interior: np.ndarray
    critical_interior: np.ndarray
    non_critical_interior: np.ndarray
    pointwise: np.ndarray


def _set_residuals(pointwise, indices):
    if len(indices) == 0:
        return SetResiduals(0, {name: None for name in RESIDUALS})
    block = pointwise[indices]
    averaged = {name: float(abs(block[:, i].mean())) for i, name in enumerate(RESIDUALS)}
    magnitudes = {
        name: {"mean": float(np.abs(block[:, i]).mean()), "max": float(np.abs(block[:, i]).max()),
               "min": float(np.abs(block[:, i]).min())}
        for i, name in enumerate(RESIDUALS)
    }
    return SetResiduals(len(indices), averaged, magnitudes)


def gradient_residuals(model_eval, cloud, critical, stats, mu, relative_step=1e-4):
    """
    Residuals from derivatives of the model outputs with respect to the input coordinates.

    Values and derivatives are mapped to physical units with ``stats``; the pointwise residuals
    are averaged over the critical interior points and the non-critical interior points
    separately and the absolute value is taken after averaging.

    Args:
        model_eval (callable): infer-mode evaluation (B x N x d Tensor -> B x N x 3 Tensor).
        cloud (PointCloud)
        critical (array): critical point indices of this cloud.
        stats (NormStats)
        mu (float): dynamic viscosity.
    """
    derivatives = tc.input_derivatives(model_eval, cloud.coords, order=2, relative_step=relative_step)
    scales = _channel_scales(stats)
    values = from_targets(derivatives.values, stats)
    d = {}
    for c, name in enumerate(("u", "v", "p")):
        first = derivatives.first[c] * scales[c]
        second = derivatives.second[c] * scales[c]
        d[name] = {"x": first[:, 0], "y": first[:, 1], "xx": second[:, 0], "yy": second[:, 1]}
    pointwise = pointwise_equations(values, d, stats.rho, mu)

    interior = interior_indices(cloud)
    critical_mask = np.zeros(len(cloud), dtype=bool)
    critical_mask[np.asarray(critical, dtype=int)] = True
    critical_interior = interior[critical_mask[interior]]
    non_critical_interior = interior[~critical_mask[interior]]
    result = GradientResiduals(
        critical=_set_residuals(pointwise, critical_interior),
        non_critical=_set_residuals(pointwise, non_critical_interior),
        interior=interior,
        critical_interior=critical_interior,
        non_critical_interior=non_critical_interior,
        pointwise=pointwise,
    )
    for label, part in (("critical", result.critical), ("non-critical", result.non_critical)):
        if part.empty:
            logger.warning(f"No {label} interior points; {label} residuals left empty.")
    return result


def network_gradient_residuals(params, cloud, stats, mu, relative_step=1e-4):
    """Forward pass for the critical set, then ``gradient_residuals`` on the infer-mode network."""
    _, latent = network.forward(params, cloud, mode=tc.INFER)
    evaluator = network.Evaluator(params, tc.INFER)
    return gradient_residuals(evaluator, cloud, latent.critical_set, stats, mu, relative_step)


# Summaries over samples

def summarize_residuals(rows):
    """Average, Maximum and Minimum over samples for each residual column."""
    frame = pd.DataFrame(rows)
    columns = [c for c in frame.columns if c != "sample"]
    values = frame[columns].apply(pd.to_numeric, errors="coerce")
    summary = pd.DataFrame([values.mean(), values.max(), values.min()], index=["Average", "Maximum", "Minimum"])
    extremes = {}
    for column in columns:
        if "sample" in frame and values[column].notna().any():
            extremes[column] = {
                "max": frame.loc[values[column].idxmax(), "sample"],
                "min": frame.loc[values[column].idxmin(), "sample"],
            }
    return summary, extremes


def gradient_rows(name, result):
    """Flat per-sample rows (one for each set) of averaged network-gradient residuals."""
    rows = []
    for label, part in (("critical", result.critical), ("non_critical", result.non_critical)):
        row = {"sample": name, "set": label, "count": part.count}
        row.update({key: (np.nan if value is None else value) for key, value in part.averaged.items()})
        rows.append(row)
    return rows
