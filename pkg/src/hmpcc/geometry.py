"""Polygonal workspace and limited-range Voronoi tessellation.

Cells are built by intersecting the workspace polygon with perpendicular-
bisector half-planes and an inscribed regular K-gon approximating the sensing
disc (inscribed, so a cell never exceeds the true sensing radius).

All density quadratures use midpoint sampling on a grid anchored at the world
origin: a sample sits at ((i+0.5)*res, (j+0.5)*res).  Anchoring globally makes
every module integrate over exactly the same points, so e.g. the centroid a
controller computes is bit-consistent with the mass the evaluation metrics
assign to the same region.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Point, Polygon

log = logging.getLogger(__name__)

COINCIDENT_EPS = 1e-12
TIE_BREAK_EPS = 1e-6
MASS_EPSILON = 1e-9


@dataclass
class Obstacle:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float).reshape(2)
        if self.radius < 0:
            raise ValueError(f"obstacle radius must be >= 0, got {self.radius}")


class Environment:
    """Simple-polygon workspace with disc obstacles."""

    def __init__(self, boundary, obstacles=()):
        boundary = np.asarray(boundary, dtype=float)
        if boundary.ndim != 2 or boundary.shape[1] != 2 or len(boundary) < 3:
            raise ValueError("boundary must be an (n>=3, 2) vertex array")
        poly = Polygon(boundary)
        if not poly.is_valid or poly.area <= 0:
            raise ValueError("boundary polygon must be simple with positive area")
        poly = shapely.geometry.polygon.orient(poly, sign=1.0)  # enforce CCW
        self.boundary = np.asarray(poly.exterior.coords[:-1], dtype=float)
        self.polygon = poly
        self.obstacles = tuple(o if isinstance(o, Obstacle) else Obstacle(*o)
                               for o in obstacles)
        for ob in self.obstacles:
            if not poly.covers(Point(ob.center)):
                raise ValueError(f"obstacle center {ob.center} lies outside the boundary")

    @classmethod
    def rectangle(cls, xmin, xmax, ymin, ymax, obstacles=()):
        return cls([(xmin, ymin), (xmax, ymin), (xmax, ymax), (xmin, ymax)], obstacles)

    @property
    def bbox(self):
        xmin, ymin, xmax, ymax = self.polygon.bounds
        return (xmin, xmax, ymin, ymax)

    @property
    def area(self):
        return self.polygon.area

    def contains(self, points):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        res = shapely.contains_xy(self.polygon, pts[:, 0], pts[:, 1])
        return bool(res[0]) if np.asarray(points).ndim == 1 else res


@dataclass
class VoronoiCell:
    site: np.ndarray
    vertices: np.ndarray        # (V, 2) CCW; empty cell has shape (0, 2)
    range_r: float
    polygon: Polygon = field(repr=False, default=None)

    def __post_init__(self):
        self.site = np.asarray(self.site, dtype=float).reshape(2)
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if self.polygon is None:
            self.polygon = Polygon(self.vertices) if len(self.vertices) >= 3 else Polygon()

    @property
    def is_empty(self):
        return len(self.vertices) < 3 or self.polygon.is_empty

    @property
    def area(self):
        return 0.0 if self.is_empty else self.polygon.area


@dataclass
class CellMoments:
    mass: float            # integral of the density over the cell
    first_moment: np.ndarray
    centroid: np.ndarray
    second_moment: float   # integral of |q|^2 * density over the cell
    empty: bool


def ball_polygon_error(k: int) -> float:
    """Worst-case relative radius deficit of the inscribed regular K-gon."""
    return 1.0 - np.cos(np.pi / k)


def ball_polygon(center, r: float, k: int = 32) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    angles = 2.0 * np.pi * np.arange(k) / k
    return center + r * np.column_stack([np.cos(angles), np.sin(angles)])


def _halfplane_patch(point_on_line, inward, extent):
    """Rectangle covering {x : inward . (x - point_on_line) >= 0} out to extent."""
    n = inward / np.linalg.norm(inward)
    t = np.array([-n[1], n[0]])
    p = np.asarray(point_on_line, dtype=float)
    return Polygon([p + extent * t, p - extent * t,
                    p - extent * t + extent * n, p + extent * t + extent * n])


def _pick_component(geom, site):
    """Reduce an intersection result to the polygon containing (or nearest) the site."""
    if geom.is_empty:
        return Polygon()
    if geom.geom_type == "Polygon":
        return geom
    polys = [g for g in getattr(geom, "geoms", []) if g.geom_type == "Polygon"]
    if not polys:
        return Polygon()
    pt = Point(site)
    for g in polys:
        if g.covers(pt):
            return g
    return min(polys, key=lambda g: g.distance(pt))


def _cell_from_polygon(site, poly, r):
    if poly.is_empty or poly.area <= 0:
        return VoronoiCell(site, np.empty((0, 2)), r, Polygon())
    poly = shapely.geometry.polygon.orient(poly, sign=1.0)
    verts = np.asarray(poly.exterior.coords[:-1], dtype=float)
    return VoronoiCell(site, verts, r, poly)


def limited_voronoi_cell(site, neighbors, env: Environment, r: float,
                         ball_vertices: int = 32) -> VoronoiCell:
    """Sensing-limited Voronoi cell: boundary ∩ bisector half-planes ∩ K-gon disc."""
    site = np.asarray(site, dtype=float).reshape(2)
    geom = env.polygon.intersection(Polygon(ball_polygon(site, r, ball_vertices)))
    xmin, xmax, ymin, ymax = env.bbox
    extent = 2.0 * (max(xmax - xmin, ymax - ymin) + r)
    for nb in np.atleast_2d(np.asarray(neighbors, dtype=float)) if len(neighbors) else []:
        d = nb - site
        if float(d @ d) < COINCIDENT_EPS ** 2:
            log.warning("neighbor coincident with site %s; ignoring its bisector", site)
            continue
        mid = 0.5 * (site + nb)
        geom = geom.intersection(_halfplane_patch(mid, -d, extent))
        if geom.is_empty:
            break
        geom = _pick_component(geom, site)
    return _cell_from_polygon(site, _pick_component(geom, site), r)


def unlimited_voronoi_partition(positions, env: Environment, seed: int = 0):
    """Bounded Voronoi partition of the workspace (no sensing limit).

    Coincident sites are separated by a deterministic seeded perturbation of
    ``TIE_BREAK_EPS`` meters so the partition stays well defined.
    """
    pts = np.atleast_2d(np.asarray(positions, dtype=float)).copy()
    if len(pts) < 1:
        raise ValueError("need at least one position")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(97,)))
    for i in range(len(pts)):
        while any(np.linalg.norm(pts[i] - pts[j]) < COINCIDENT_EPS for j in range(i)):
            ang = rng.uniform(0.0, 2.0 * np.pi)
            pts[i] = pts[i] + TIE_BREAK_EPS * np.array([np.cos(ang), np.sin(ang)])
    xmin, xmax, ymin, ymax = env.bbox
    extent = 2.0 * max(xmax - xmin, ymax - ymin)
    cells = []
    for i, p in enumerate(pts):
        geom = env.polygon
        for j, q in enumerate(pts):
            if i == j:
                continue
            d = q - p
            geom = geom.intersection(_halfplane_patch(0.5 * (p + q), -d, extent))
            if geom.is_empty:
                break
            geom = _pick_component(geom, p)
        cells.append(_cell_from_polygon(p, _pick_component(geom, p), np.inf))
    return cells


def grid_points(bounds, res: float) -> np.ndarray:
    """World-anchored midpoint grid covering ``bounds = (xmin, xmax, ymin, ymax)``."""
    xmin, xmax, ymin, ymax = bounds
    ix = np.arange(np.ceil(xmin / res - 0.5), np.floor(xmax / res - 0.5) + 1)
    iy = np.arange(np.ceil(ymin / res - 0.5), np.floor(ymax / res - 0.5) + 1)
    xs = (ix + 0.5) * res
    ys = (iy + 0.5) * res
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def polygon_grid_points(poly: Polygon, res: float) -> np.ndarray:
    """Grid points (world-anchored) strictly inside the polygon."""
    if poly.is_empty:
        return np.empty((0, 2))
    xmin, ymin, xmax, ymax = poly.bounds
    pts = grid_points((xmin, xmax, ymin, ymax), res)
    if len(pts) == 0:
        return pts
    mask = shapely.contains_xy(poly, pts[:, 0], pts[:, 1])
    return pts[mask]


def cell_moments(cell: VoronoiCell, density, grid_res: float,
                 mass_epsilon: float = MASS_EPSILON) -> CellMoments:
    """Midpoint-quadrature mass, first moment and centroid of a cell.

    ``density`` is any callable mapping (N, 2) points to non-negative values.
    A cell whose mass falls below ``mass_epsilon`` is flagged empty and its
    centroid defaults to the site.
    """
    if grid_res <= 0:
        raise ValueError("grid_res must be positive")
    pts = np.empty((0, 2)) if cell.is_empty else polygon_grid_points(cell.polygon, grid_res)
    if len(pts) == 0:
        return CellMoments(0.0, np.zeros(2), cell.site.copy(), 0.0, True)
    w = grid_res * grid_res
    phi = np.asarray(density(pts), dtype=float)
    mass = w * float(np.sum(phi))
    first = w * phi @ pts
    second = w * float(phi @ np.einsum("ij,ij->i", pts, pts))
    if mass <= mass_epsilon:
        return CellMoments(mass, first, cell.site.copy(), second, True)
    return CellMoments(mass, first, first / mass, second, False)
