"""
Point clouds and the graded ring sampler.

Points are laid on rings around each object: the surface itself, then offset curves whose
spacing grows geometrically away from the surface up to a fixed outer extent, the way an
unstructured mesh is fine near a body and coarse in the far field. More points refine the
rings; they never push the far field outwards. The cloud is the surface points plus the ring
points nearest the centroid of all surface points.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from utils.exceptions import DomainError, ShapeError

from .flow_oracle import Geometry

logger = logging.getLogger(__name__)

# Default outer ring offset, in units of the largest object semi-axis.
EXTENT_RATIO = 4.0


@dataclass
class PointCloud:
    """
    Coordinates (N x 2, metres) with optional (u, v, p) fields (N x 3, physical units).

    ``surface_mask`` marks points placed exactly on an object surface; when it is missing it is
    recovered from the geometry.
    """

    coords: np.ndarray
    fields: np.ndarray = None
    geometry: Geometry = None
    surface_mask: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ShapeError(f"Point coordinates must be N x 2, got {self.coords.shape}")
        if not np.all(np.isfinite(self.coords)):
            raise DomainError("Point coordinates must be finite")
        if self.fields is not None:
            self.fields = np.asarray(self.fields, dtype=np.float64)
            if self.fields.shape != (len(self.coords), 3):
                raise ShapeError(f"Fields must be N x 3 for N={len(self.coords)}, got {self.fields.shape}")

    def __len__(self):
        return len(self.coords)

    @property
    def n_points(self):
        return len(self.coords)

    @property
    def has_fields(self):
        return self.fields is not None

    def boundary_mask(self):
        if self.surface_mask is not None:
            return np.asarray(self.surface_mask, dtype=bool)
        if self.geometry is not None:
            return self.geometry.on_surface(self.coords)
        return np.zeros(len(self.coords), dtype=bool)

    def interior_violations(self):
        """Indices of points strictly inside an object (must be empty)."""
        if self.geometry is None:
            return np.empty(0, dtype=int)
        return np.flatnonzero(self.geometry.inside(self.coords))


@dataclass(frozen=True)
class Grading:
    """
    Ring layout inside a fixed outer extent.

    Attributes:
        n_surface (int): points placed exactly on each object surface; ``None`` matches the
            surface spacing to the first ring gap, so the surface refines with N as well.
        stretch (float): ratio of the outermost ring gap to the first one (>= 1).
        extent (float): offset of the outermost ring from each surface (m); defaults to
            ``EXTENT_RATIO`` times the largest object semi-axis.
        jitter (float): radial and angular jitter as a fraction of the local gap, in [0, 0.5).
        max_rings (int): give up when this many rings do not yield N points.
    """

    n_surface: int = None
    stretch: float = 8.0
    extent: float = None
    jitter: float = 0.25
    max_rings: int = 200

    def validate(self):
        if self.n_surface is not None and self.n_surface < 8:
            raise DomainError(f"Grading needs at least 8 surface points per object, got {self.n_surface}")
        if self.stretch < 1.0:
            raise DomainError(f"Ring stretch must be >= 1, got {self.stretch}")
        if not 0.0 <= self.jitter < 0.5:
            raise DomainError(f"Ring jitter must lie in [0, 0.5), got {self.jitter}")
        if self.extent is not None and not self.extent > 0:
            raise DomainError(f"Grading extent must be positive, got {self.extent}")
        if self.max_rings < 1:
            raise DomainError(f"Grading needs at least one ring, got {self.max_rings}")
        return self

    def outer_extent(self, geometry):
        if self.extent is not None:
            return float(self.extent)
        return EXTENT_RATIO * max(max(o.a, o.b) for o in geometry.objects)

    def offsets(self, n_rings, extent):
        """
        Ring offsets from the surface for ``n_rings`` rings ending at ``extent``.

        Gaps grow geometrically by ``stretch ** (1 / (n_rings - 1))`` so the last gap is
        ``stretch`` times the first. Returns (offsets, gaps).
        """
        if n_rings == 1 or self.stretch == 1.0:
            gaps = np.full(n_rings, extent / n_rings)
        else:
            ratio = self.stretch ** (1.0 / (n_rings - 1))
            gaps = extent * (ratio - 1) / (ratio ** n_rings - 1) * ratio ** np.arange(n_rings)
        return np.cumsum(gaps), gaps

    def surface_count(self, obstacle, first_gap):
        if self.n_surface is not None:
            return self.n_surface
        return max(8, int(np.ceil(obstacle.perimeter / first_gap)))


def surface_points(geometry, counts):
    if np.isscalar(counts):
        counts = [counts] * len(geometry.objects)
    return np.concatenate([o.offset_curve(int(n)) for o, n in zip(geometry.objects, counts)])


def _ring_counts(geometry, offsets, gaps):
    return [
        [max(8, int(np.ceil((o.perimeter + 2 * np.pi * offset) / gap))) for o in geometry.objects]
        for offset, gap in zip(offsets, gaps)
    ]


def sample_cloud(geometry, n_points, grading=None, seed=0):
    """
    Build a PointCloud of exactly ``n_points`` points around ``geometry``.

    The outermost ring sits at the grading extent whatever N is; the ring count is the smallest
    that holds enough points, so a larger N gives a finer cloud over the same region. Surface
    points are deterministic; ring phases and per-point jitter come from ``seed``. All surface
    points are kept, the rest are the ring points nearest the centroid of the surface points.
    Points strictly inside an object are discarded before selection.

    Raises:
        DomainError: infeasible grading, or ``n_points`` smaller than the surface point count.
    """
    grading = (grading or Grading()).validate()
    extent = grading.outer_extent(geometry)
    if grading.n_surface is not None and n_points < grading.n_surface * len(geometry.objects):
        raise DomainError(f"N={n_points} is smaller than the {grading.n_surface * len(geometry.objects)} surface points")

    selected = None
    for n_rings in range(1, grading.max_rings + 1):
        offsets, gaps = grading.offsets(n_rings, extent)
        counts = [grading.surface_count(o, gaps[0]) for o in geometry.objects]
        need = n_points - sum(counts)
        if need < 0:
            break
        ring_counts = _ring_counts(geometry, offsets, gaps)
        if sum(map(sum, ring_counts)) < need:
            continue

        rng = np.random.default_rng(seed)
        rings = []
        for offset, gap, row in zip(offsets, gaps, ring_counts):
            for obstacle, count in zip(geometry.objects, row):
                radial = offset + grading.jitter * gap * rng.uniform(-1.0, 1.0, size=count)
                phase = rng.uniform() + grading.jitter * rng.uniform(-1.0, 1.0, size=count)
                points = obstacle.offset_curve(count, radial, phase)
                rings.append(points[~geometry.inside(points)])
        candidates = np.concatenate(rings)
        if len(candidates) < need:
            continue
        surface = surface_points(geometry, counts)
        centroid = surface.mean(axis=0)
        order = np.argsort(np.linalg.norm(candidates - centroid, axis=1), kind="stable")[:need]
        selected = candidates[order]
        break
    if selected is None:
        logger.error(f"Grading {grading} did not reach {n_points} points within {grading.max_rings} rings")
        raise DomainError(f"Infeasible grading: {grading.max_rings} rings do not hold {n_points} points")

    coords = np.concatenate([surface, selected])
    mask = np.zeros(n_points, dtype=bool)
    mask[:len(surface)] = True
    logger.debug(
        f"Sampled {n_points} points ({len(surface)} on surfaces) in {n_rings} rings "
        f"over extent {extent:.3g} m, seed {seed}."
    )
    return PointCloud(coords=coords, geometry=geometry, surface_mask=mask, meta={"seed": int(seed)})


def radius_grid(start, stop, step):
    """Inclusive arithmetic grid, robust to floating-point step accumulation."""
    count = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 10) for i in range(count)]
