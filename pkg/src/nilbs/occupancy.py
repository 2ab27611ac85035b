"""Point-in-polygon occupancy and the baked rest-pose occupancy grid."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidResolution, IoFailure


def winding_numbers(polygon: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Winding number of a closed polygon around each query point.

    Uses the half-open upward/downward crossing rule: an edge counts when it
    crosses the horizontal line through the point with one endpoint at or
    below it and the other strictly above, and the point lies strictly to
    its left (upward) or right (downward). Points exactly on an edge thus
    resolve deterministically.

    Args:
      polygon: (M, 2) vertices, implicitly closed (last connects to first).
      points: (N, 2) queries.

    Returns:
      (N,) integer winding numbers.
    """
    poly = np.asarray(polygon, dtype=np.float64)[:, :2]
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :2]
    a = poly
    b = np.roll(poly, -1, axis=0)
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    ax, ay = a[None, :, 0], a[None, :, 1]
    bx, by = b[None, :, 0], b[None, :, 1]
    left = (bx - ax) * (py - ay) - (px - ax) * (by - ay)
    up = (ay <= py) & (by > py) & (left > 0)
    down = (ay > py) & (by <= py) & (left < 0)
    return up.sum(axis=1) - down.sum(axis=1)


def points_in_polygon(polygon: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Nonzero-winding occupancy in {0, 1} for ``(N, 2)`` points."""
    return (winding_numbers(polygon, points) != 0).astype(np.int64)


def point_in_polygon(polygon: np.ndarray, x: np.ndarray) -> int:
    if len(polygon) < 3:
        raise ValueError("polygon needs at least 3 vertices")
    return int(points_in_polygon(polygon, np.asarray(x, dtype=np.float64)[None, :2])[0])


def polygon_area(polygon: np.ndarray) -> float:
    """Signed shoelace area; positive for counterclockwise polygons."""
    p = np.asarray(polygon, dtype=np.float64)[:, :2]
    q = np.roll(p, -1, axis=0)
    return 0.5 * float(np.sum(p[:, 0] * q[:, 1] - q[:, 0] * p[:, 1]))


def _segments_cross(p1, p2, p3, p4) -> bool:
    def orient(a, b, c):
        return np.sign((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))

    d1, d2 = orient(p3, p4, p1), orient(p3, p4, p2)
    d3, d4 = orient(p1, p2, p3), orient(p1, p2, p4)
    if d1 * d2 < 0 and d3 * d4 < 0:
        return True

    def on_segment(a, b, c):
        return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])

    return (
        (d1 == 0 and on_segment(p3, p4, p1))
        or (d2 == 0 and on_segment(p3, p4, p2))
        or (d3 == 0 and on_segment(p1, p2, p3))
        or (d4 == 0 and on_segment(p1, p2, p4))
    )


def is_simple_polygon(polygon: np.ndarray) -> bool:
    """True when no two non-adjacent edges touch. O(M^2)."""
    p = np.asarray(polygon, dtype=np.float64)[:, :2]
    m = len(p)
    if m < 3:
        return False
    for i in range(m):
        for j in range(i + 1, m):
            if j == i + 1 or (i == 0 and j == m - 1):
                continue
            if _segments_cross(p[i], p[(i + 1) % m], p[j], p[(j + 1) % m]):
                return False
    return True


@dataclass(frozen=True)
class OccupancyGrid:
    """Occupancy sampled at the nodes of a regular grid spanning a box.

    ``values[i, j]`` is the occupancy at
    ``(bbox_min[0] + i * dx, bbox_min[1] + j * dy)``; nodes include both box
    edges, so ``dx = (bbox_max[0] - bbox_min[0]) / (nx - 1)``.
    """

    bbox_min: np.ndarray
    bbox_max: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lo = np.array(self.bbox_min, dtype=np.float64).reshape(2)
        hi = np.array(self.bbox_max, dtype=np.float64).reshape(2)
        v = np.array(self.values, dtype=np.float64)
        if not np.all(hi > lo):
            raise ValueError("bbox_max must exceed bbox_min componentwise")
        if v.ndim != 2 or min(v.shape) < 2:
            raise InvalidResolution(f"grid needs at least 2 nodes per axis, got {v.shape}")
        if np.any(v < 0) or np.any(v > 1) or not np.all(np.isfinite(v)):
            raise ValueError("grid values must lie in [0, 1]")
        for a in (lo, hi, v):
            a.flags.writeable = False
        object.__setattr__(self, "bbox_min", lo)
        object.__setattr__(self, "bbox_max", hi)
        object.__setattr__(self, "values", v)

    @property
    def resolution(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return (self.bbox_max - self.bbox_min) / (np.array(self.values.shape) - 1)

    def to_dict(self) -> dict:
        return {
            "bbox_min": self.bbox_min.tolist(),
            "bbox_max": self.bbox_max.tolist(),
            "resolution": list(self.resolution),
            "values": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> OccupancyGrid:
        try:
            nx, ny = (int(r) for r in d["resolution"])
            values = np.array(d["values"], dtype=np.float64).reshape(nx, ny)
            return cls(d["bbox_min"], d["bbox_max"], values)
        except InvalidResolution:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid grid: {exc}") from exc


def grid_nodes(bbox_min, bbox_max, resolution) -> np.ndarray:
    """Node positions of an ``(nx, ny)`` grid, shape ``(nx, ny, 2)``."""
    nx, ny = resolution
    if nx < 2 or ny < 2:
        raise InvalidResolution(f"resolution must be at least 2 per axis, got {resolution}")
    xs = np.linspace(bbox_min[0], bbox_max[0], nx)
    ys = np.linspace(bbox_min[1], bbox_max[1], ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx, gy], axis=-1)


def bake_grid(polygon: np.ndarray, bbox_min, bbox_max, resolution) -> OccupancyGrid:
    nodes = grid_nodes(bbox_min, bbox_max, resolution)
    inside = points_in_polygon(polygon, nodes.reshape(-1, 2)).reshape(nodes.shape[:2])
    return OccupancyGrid(bbox_min, bbox_max, inside.astype(np.float64))


def query_grid_batch(grid: OccupancyGrid, points: np.ndarray, with_grad: bool = False):
    """Bilinear lookup at ``(N, 2)`` points; zero outside the box.

    With ``with_grad`` also returns the ``(N, 2)`` spatial gradient of the
    interpolant (zero outside the box, one-sided at cell edges).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :2]
    nx, ny = grid.resolution
    h = grid.spacing
    u = (pts - grid.bbox_min) / h
    inside = np.all((pts >= grid.bbox_min) & (pts <= grid.bbox_max), axis=1)
    u = np.where(inside[:, None], u, 0.0)
    i = np.clip(np.floor(u[:, 0]).astype(np.int64), 0, nx - 2)
    j = np.clip(np.floor(u[:, 1]).astype(np.int64), 0, ny - 2)
    fx = u[:, 0] - i
    fy = u[:, 1] - j
    v = grid.values
    v00, v10, v01, v11 = v[i, j], v[i + 1, j], v[i, j + 1], v[i + 1, j + 1]
    # lerp form keeps constant cells exact
    lo_row = v00 + fx * (v10 - v00)
    hi_row = v01 + fx * (v11 - v01)
    val = np.clip(lo_row + fy * (hi_row - lo_row), 0.0, 1.0)
    val = np.where(inside, val, 0.0)
    if not with_grad:
        return val
    gx = ((1 - fy) * (v10 - v00) + fy * (v11 - v01)) / h[0]
    gy = ((1 - fx) * (v01 - v00) + fx * (v11 - v10)) / h[1]
    grad = np.where(inside[:, None], np.stack([gx, gy], axis=1), 0.0)
    return val, grad


def query_grid(grid: OccupancyGrid, x) -> float:
    return float(query_grid_batch(grid, np.asarray(x, dtype=np.float64)[None, :2])[0])


def pgm_text(values: np.ndarray) -> str:
    """ASCII PGM (P2) of an ``(nx, ny)`` node array with 0 -> black, 1 -> white.

    Image rows run from the top of the box (largest y) downward.
    """
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    nx, ny = v.shape
    pix = np.rint(v * 255).astype(np.int64).T[::-1]
    lines = [f"P2\n{nx} {ny}\n255"]
    lines.extend(" ".join(map(str, row)) for row in pix)
    return "\n".join(lines) + "\n"


def write_pgm(values: np.ndarray, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(pgm_text(values))
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def read_pgm(path: str | Path) -> np.ndarray:
    """Inverse of :func:`write_pgm`, returning integer pixel levels as ``(nx, ny)``."""
    try:
        tokens = Path(path).read_text().split()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc
    if not tokens or tokens[0] != "P2":
        raise ConfigError(f"{path} is not an ASCII PGM")
    nx, ny = int(tokens[1]), int(tokens[2])
    pix = np.array(tokens[4:], dtype=np.int64).reshape(ny, nx)
    return pix[::-1].T
