"""
Target scaling: non-dimensional fields, then min-max scaling to [0, 1].

Coordinates are never scaled; only the (u, v, p) targets go through this pipeline.
"""
import logging
from dataclasses import dataclass

import numpy as np

from utils.exceptions import DataError, DomainError

logger = logging.getLogger(__name__)

FIELD_NAMES = ("u", "v", "p")


@dataclass(frozen=True)
class NormStats:
    """Free-stream scales plus per-variable min/max of (u*, v*, p*) over the training split."""

    rho: float
    u_inf: float
    p0: float
    minimum: tuple
    maximum: tuple

    def __post_init__(self):
        object.__setattr__(self, "minimum", tuple(float(v) for v in self.minimum))
        object.__setattr__(self, "maximum", tuple(float(v) for v in self.maximum))

    def validate(self):
        if not (self.rho > 0 and self.u_inf > 0):
            raise DomainError(f"rho and u_inf must be positive, got rho={self.rho}, u_inf={self.u_inf}")
        if len(self.minimum) != len(FIELD_NAMES) or len(self.maximum) != len(FIELD_NAMES):
            raise DataError("NormStats needs one min/max per field (u, v, p)")
        for name, low, high in zip(FIELD_NAMES, self.minimum, self.maximum):
            if not high > low:
                raise DataError(f"Degenerate scaling for {name}: max {high} is not above min {low}")
        return self

    @classmethod
    def from_training(cls, fields_list, rho, u_inf, p0):
        """Global per-variable extrema of the non-dimensional training targets."""
        if not fields_list:
            raise DataError("Cannot compute scaling statistics from an empty training split")
        stacked = np.concatenate([nondimensionalize(f, rho, u_inf, p0) for f in fields_list])
        stats = cls(rho, u_inf, p0, tuple(stacked.min(axis=0)), tuple(stacked.max(axis=0)))
        logger.info(f"Scaling statistics over {len(fields_list)} samples: min {stats.minimum}, max {stats.maximum}.")
        return stats.validate()

    def to_dict(self):
        return {
            "rho": self.rho,
            "u_inf": self.u_inf,
            "p0": self.p0,
            "minimum": list(self.minimum),
            "maximum": list(self.maximum),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(**data).validate()


def nondimensionalize(fields, rho, u_inf, p0):
    """u* = u/u_inf, v* = v/u_inf, p* = (p - p0)/(rho u_inf^2)."""
    if not (rho > 0 and u_inf > 0):
        raise DomainError(f"rho and u_inf must be positive, got rho={rho}, u_inf={u_inf}")
    fields = np.asarray(fields, dtype=np.float64)
    out = np.empty_like(fields)
    out[:, 0] = fields[:, 0] / u_inf
    out[:, 1] = fields[:, 1] / u_inf
    out[:, 2] = (fields[:, 2] - p0) / (rho * u_inf ** 2)
    return out


def dimensionalize(values, rho, u_inf, p0):
    values = np.asarray(values, dtype=np.float64)
    out = np.empty_like(values)
    out[:, 0] = values[:, 0] * u_inf
    out[:, 1] = values[:, 1] * u_inf
    out[:, 2] = values[:, 2] * (rho * u_inf ** 2) + p0
    return out


def minmax_scale(values, stats):
    stats.validate()
    low = np.asarray(stats.minimum)
    return (np.asarray(values, dtype=np.float64) - low) / (np.asarray(stats.maximum) - low)


def minmax_unscale(values, stats):
    """Exact inverse of ``minmax_scale``; values outside [0, 1] are not clamped."""
    stats.validate()
    low = np.asarray(stats.minimum)
    return np.asarray(values, dtype=np.float64) * (np.asarray(stats.maximum) - low) + low


def to_targets(fields, stats):
    """Physical (u, v, p) to network targets in [0, 1]."""
    return minmax_scale(nondimensionalize(fields, stats.rho, stats.u_inf, stats.p0), stats)


def from_targets(values, stats):
    """Network outputs back to physical (u, v, p)."""
    return dimensionalize(minmax_unscale(values, stats), stats.rho, stats.u_inf, stats.p0)
