"""
Object geometry and the analytical potential-flow oracle.

Objects are circles or rotated ellipses. Their surfaces are what the sampler places exact
boundary points on; their interiors are the region the null-space rule keeps empty.
"""
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from utils.exceptions import DomainError

logger = logging.getLogger(__name__)

OBJECT_KINDS = ("circle", "ellipse", "rectangle", "square", "triangle", "pentagon", "hexagon")
# Regular polygons: side count; ``a`` is the circumradius and one vertex points along local +y.
POLYGON_SIDES = {"triangle": 3, "pentagon": 5, "hexagon": 6}
# Relative tolerance on the implicit level used for "inside" and "on the surface" tests.
SURFACE_TOLERANCE = 1e-9


def reynolds(rho, u_inf, mu, length):
    """Re = rho * L * u_inf / mu."""
    for name, value in (("rho", rho), ("u_inf", u_inf), ("mu", mu), ("L", length)):
        if not value > 0:
            logger.error(f"Reynolds number needs positive {name}, got {value}")
            raise DomainError(f"Reynolds number needs positive {name}, got {value}")
    return rho * length * u_inf / mu


@dataclass(frozen=True)
class Obstacle:
    """
    One cross section, rotated counter-clockwise by ``angle`` radians about ``center``.

    Circles and ellipses: ``a`` and ``b`` are the semi-axes along the local x and y directions
    (``a == b`` for a circle). Rectangles and squares: ``a`` and ``b`` are the half widths.
    Triangles, pentagons and hexagons are regular with circumradius ``a``.
    """

    kind: str = "circle"
    center: tuple = (0.0, 0.0)
    a: float = 1.0
    b: float = None
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in OBJECT_KINDS:
            raise DomainError(f"Unknown object kind '{self.kind}', expected one of {OBJECT_KINDS}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if self.b is None or self.kind in ("circle", "square") or self.kind in POLYGON_SIDES:
            object.__setattr__(self, "b", float(self.a))
        if not (self.a > 0 and self.b > 0):
            raise DomainError(f"Object axes must be positive, got a={self.a}, b={self.b}")

    @property
    def radius(self):
        return self.a

    @property
    def is_polygon(self):
        return self.kind not in ("circle", "ellipse")

    @property
    def length_scale(self):
        """Reynolds length: ``b`` for ellipses and rectangles, ``a`` otherwise."""
        return self.b if self.kind in ("ellipse", "rectangle") else self.a

    def vertices(self):
        """Polygon corners in local coordinates, counter-clockwise."""
        if self.kind in ("rectangle", "square"):
            a, b = self.a, self.b
            return np.array([[a, -b], [a, b], [-a, b], [-a, -b]])
        n = POLYGON_SIDES[self.kind]
        t = np.pi / 2 + 2 * np.pi * np.arange(n) / n
        return self.a * np.stack([np.cos(t), np.sin(t)], axis=1)

    def _edges(self):
        """Edge start points, unit directions, lengths and unit outward normals."""
        start = self.vertices()
        delta = np.roll(start, -1, axis=0) - start
        length = np.linalg.norm(delta, axis=1)
        direction = delta / length[:, None]
        normal = np.stack([direction[:, 1], -direction[:, 0]], axis=1)
        return start, direction, length, normal

    @property
    def perimeter(self):
        if self.is_polygon:
            return float(self._edges()[2].sum())
        # Ramanujan's approximation, exact for circles.
        a, b = self.a, self.b
        h = ((a - b) / (a + b)) ** 2
        return np.pi * (a + b) * (1 + 3 * h / (10 + np.sqrt(4 - 3 * h)))

    def _to_local(self, points):
        points = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        c, s = np.cos(self.angle), np.sin(self.angle)
        return np.stack([c * points[:, 0] + s * points[:, 1], -s * points[:, 0] + c * points[:, 1]], axis=1)

    def _to_global(self, local):
        c, s = np.cos(self.angle), np.sin(self.angle)
        rotated = np.stack([c * local[:, 0] - s * local[:, 1], s * local[:, 0] + c * local[:, 1]], axis=1)
        return rotated + np.asarray(self.center)

    def level(self, points):
        """
        Implicit function, negative inside and zero on the surface.

        Ellipses: (x/a)^2 + (y/b)^2 - 1 in local coordinates. Polygons: the largest signed
        distance to an edge line, divided by ``a``.
        """
        local = self._to_local(points)
        if self.is_polygon:
            start, _, _, normal = self._edges()
            support = np.sum(start * normal, axis=1)
            return np.max(local @ normal.T - support, axis=1) / self.a
        return (local[:, 0] / self.a) ** 2 + (local[:, 1] / self.b) ** 2 - 1.0

    def inside(self, points, tol=SURFACE_TOLERANCE):
        return self.level(points) < -tol

    def on_surface(self, points, tol=SURFACE_TOLERANCE):
        return np.abs(self.level(points)) <= tol

    def offset_curve(self, n, offset=0.0, phase=0.0):
        """
        ``n`` points on the curve lying ``offset`` along the outward normal from the surface.

        ``phase`` shifts the parametric angle (or the arc length, for polygons) by a fraction of
        the point spacing.
        """
        offset = np.broadcast_to(np.asarray(offset, dtype=np.float64), (n,))
        if self.is_polygon:
            foot, normal = self._polygon_offset_frame(n, float(offset.mean()), phase)
            return self._to_global(foot + offset[:, None] * normal)
        t = 2 * np.pi * (np.arange(n) + phase) / n
        local = np.stack([self.a * np.cos(t), self.b * np.sin(t)], axis=1)
        if np.any(offset):
            normal = np.stack([self.b * np.cos(t), self.a * np.sin(t)], axis=1)
            normal /= np.linalg.norm(normal, axis=1, keepdims=True)
            local = local + offset[:, None] * normal
        return self._to_global(local)

    def _polygon_offset_frame(self, n, offset, phase):
        """
        Surface foot points and outward normals, spaced evenly along the rounded offset curve.

        The curve at distance ``offset`` is each edge pushed out along its normal, joined by
        circular arcs around the corners; arc points share their corner as foot point.
        """
        start, direction, length, normal = self._edges()
        turn = np.arctan2(np.roll(normal, -1, axis=0)[:, 1], np.roll(normal, -1, axis=0)[:, 0])
        turn = np.mod(turn - np.arctan2(normal[:, 1], normal[:, 0]), 2 * np.pi)
        # Alternating pieces: edge k, then the arc at the corner ending edge k.
        pieces = np.stack([length, offset * turn], axis=1).reshape(-1)
        bounds = np.concatenate([[0.0], np.cumsum(pieces)])
        s = np.mod((np.arange(n) + phase) / n, 1.0) * bounds[-1]
        piece = np.clip(np.searchsorted(bounds, s, side="right") - 1, 0, len(pieces) - 1)
        along = s - bounds[piece]
        edge = piece // 2
        on_edge = piece % 2 == 0

        foot = np.where(on_edge[:, None], start[edge] + along[:, None] * direction[edge], np.roll(start, -1, axis=0)[edge])
        fraction = np.where(on_edge, 0.0, along / np.maximum(pieces[piece], np.finfo(float).tiny))
        heading = np.arctan2(normal[edge, 1], normal[edge, 0]) + fraction * turn[edge]
        frame = np.stack([np.cos(heading), np.sin(heading)], axis=1)
        return foot, np.where(on_edge[:, None], normal[edge], frame)

    def to_dict(self):
        data = asdict(self)
        data["center"] = list(self.center)
        return data


@dataclass(frozen=True)
class Geometry:
    """One or more non-overlapping objects in the plane."""

    objects: tuple = field(default_factory=lambda: (Obstacle(),))

    def __post_init__(self):
        objects = tuple(o if isinstance(o, Obstacle) else Obstacle(**o) for o in self.objects)
        if not objects:
            raise DomainError("Geometry needs at least one object")
        object.__setattr__(self, "objects", objects)

    @classmethod
    def circle(cls, radius, center=(0.0, 0.0)):
        return cls((Obstacle("circle", center, radius),))

    @property
    def length_scale(self):
        return max(o.length_scale for o in self.objects)

    def inside(self, points, tol=SURFACE_TOLERANCE):
        mask = np.zeros(len(points), dtype=bool)
        for obstacle in self.objects:
            mask |= obstacle.inside(points, tol)
        return mask

    def on_surface(self, points, tol=SURFACE_TOLERANCE):
        mask = np.zeros(len(points), dtype=bool)
        for obstacle in self.objects:
            mask |= obstacle.on_surface(points, tol)
        return mask

    def to_dict(self):
        return {"objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, data):
        return cls(tuple(Obstacle(**o) for o in data["objects"]))


def potential_flow_cylinder(center, radius, u_inf, rho, p0, points):
    """
    Inviscid flow past a circular cylinder: uniform stream plus a doublet.

    With z the position relative to the center, the complex velocity is
    u - i v = u_inf * (1 - R^2 / z^2); pressure follows Bernoulli,
    p = p0 + rho * (u_inf^2 - |u|^2) / 2.

    Args:
        center (tuple): cylinder center (m).
        radius (float): R (m).
        u_inf (float): free-stream speed along +x (m/s).
        rho (float): density (kg/m^3).
        p0 (float): free-stream pressure (Pa).
        points (array): N x 2 query points.

    Returns:
        np.ndarray: N x 3 array of (u, v, p).

    Raises:
        DomainError: a query point lies strictly inside the cylinder, or R, u_inf, rho is not positive.
    """
    for name, value in (("radius", radius), ("u_inf", u_inf), ("rho", rho)):
        if not value > 0:
            raise DomainError(f"Potential flow needs positive {name}, got {value}")
    points = np.asarray(points, dtype=np.float64)
    z = (points[:, 0] - center[0]) + 1j * (points[:, 1] - center[1])
    r2 = np.abs(z) ** 2
    inside = r2 < radius ** 2 * (1 - SURFACE_TOLERANCE)
    if np.any(inside):
        first = int(np.flatnonzero(inside)[0])
        logger.error(f"Point {first} at {points[first].tolist()} lies inside the cylinder")
        raise DomainError(f"{int(inside.sum())} query points lie inside the cylinder (first index {first})")

    conjugate_velocity = u_inf * (1 - radius ** 2 / z ** 2)
    u = conjugate_velocity.real
    v = -conjugate_velocity.imag
    p = p0 + 0.5 * rho * (u_inf ** 2 - (u ** 2 + v ** 2))
    return np.stack([u, v, p], axis=1)


def oracle_fields(geometry, points, u_inf, rho, p0):
    """Potential-flow fields for a single-circle geometry; other geometries need ingested data."""
    if len(geometry.objects) != 1 or geometry.objects[0].kind != "circle":
        raise DomainError("The analytical oracle covers a single circular object only")
    obstacle = geometry.objects[0]
    return potential_flow_cylinder(obstacle.center, obstacle.radius, u_inf, rho, p0, points)
