"""Neural forward/inverse skinning maps and the ghost-bone occupancy query.

A posed query ``x~`` is pulled back to rest space with

    x- = [ sum_c W_c(x~ | theta) B_c ]^-1 x~

where the weights come from the pose-conditioned MLP and ``B_c`` runs over
the ``B`` bones plus a ghost bone cloned from the root. The rest-pose
occupancy cache is then read at ``x-`` and scaled by ``1 - W_ghost``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import geometry as geo
from .errors import SingularBlend
from .lbs import bone_transforms
from .occupancy import OccupancyGrid, query_grid_batch
from .weightnet import WeightNetParams, mlp_backward, softmax_backward, weights_at_points

SINGULAR_DET = 1e-12


class BlendCounter:
    """Thread-safe tally of queries that hit a singular blended matrix."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self._count += n

    @property
    def count(self) -> int:
        return self._count

    def reset(self) -> None:
        with self._lock:
            self._count = 0


singular_blends = BlendCounter()


@dataclass(frozen=True)
class GhostedFrames:
    """Rest and posed frames of ``B`` bones plus the ghost copy of the root at index ``B``."""

    rest: np.ndarray
    posed: np.ndarray

    @property
    def bone_count(self) -> int:
        return self.rest.shape[0] - 1

    @cached_property
    def transforms(self) -> np.ndarray:
        """``B_c = B~_c B-_c^-1`` for all ``B + 1`` channels."""
        return bone_transforms(self.rest, self.posed)

    @cached_property
    def posed_inverse(self) -> np.ndarray:
        """Inverse posed frames of the real bones, used to encode queries."""
        return geo.invert_all(self.posed[:-1])


def augment_ghost(rest_frames: np.ndarray, posed_frames: np.ndarray) -> GhostedFrames:
    rest = np.asarray(rest_frames, dtype=np.float64)
    posed = np.asarray(posed_frames, dtype=np.float64)
    if rest.shape != posed.shape or rest.ndim != 3 or rest.shape[0] == 0:
        raise ValueError("rest and posed frames must be equal-length nonempty (B, 4, 4) stacks")
    return GhostedFrames(np.concatenate([rest, rest[:1]]), np.concatenate([posed, posed[:1]]))


def _check_blend(m: np.ndarray) -> None:
    det = np.linalg.det(m)
    if not np.isfinite(det) or abs(det) < SINGULAR_DET:
        raise SingularBlend(f"blended skinning matrix is singular (det={det:.3e})")


def forward_map(params: WeightNetParams, rest_frames, posed_frames, x_rest) -> np.ndarray:
    """Deform a rest-space point with weights predicted from its rest encoding."""
    g = augment_ghost(rest_frames, posed_frames)
    w, _ = weights_at_points(params, geo.invert_all(g.rest[:-1]), np.asarray(x_rest, dtype=np.float64)[None, :2])
    m = np.tensordot(w[0], g.transforms, axes=(0, 0))
    return (m @ geo.homogeneous(np.asarray(x_rest, dtype=np.float64)[:2]))[:2]


def blended_inverse(ghosted: GhostedFrames, weights: np.ndarray, x_posed: np.ndarray) -> np.ndarray:
    """``[w B]^-1 x~`` for one point given its ``B + 1`` weights."""
    m = np.tensordot(np.asarray(weights, dtype=np.float64), ghosted.transforms, axes=(0, 0))
    _check_blend(m)
    return np.linalg.solve(m, geo.homogeneous(np.asarray(x_posed, dtype=np.float64)[:2]))[:2]


def inverse_map(params: WeightNetParams, ghosted: GhostedFrames, x_posed) -> np.ndarray:
    """Pull a posed point back to rest space. Raises SingularBlend on a degenerate blend."""
    x = np.asarray(x_posed, dtype=np.float64)[None, :2]
    w, _ = weights_at_points(params, ghosted.posed_inverse, x)
    return blended_inverse(ghosted, w[0], x[0])


def corrected_occupancy(params: WeightNetParams, ghosted: GhostedFrames, grid: OccupancyGrid, x_posed,
                        counter: BlendCounter | None = None) -> float:
    """``(1 - W_ghost) * O_rest(R(x~))``; 0 (and a counted event) on a singular blend."""
    q = query(params, ghosted, grid, np.asarray(x_posed, dtype=np.float64)[None, :2], counter=counter)
    return float(q.occupancy[0])


@dataclass
class QueryResult:
    """Batched query outputs plus what the backward pass needs."""

    occupancy: np.ndarray
    weights: np.ndarray
    rest_points: np.ndarray
    singular: np.ndarray
    cache_value: np.ndarray
    cache_grad: np.ndarray
    blended: np.ndarray
    tape: object
    points: np.ndarray


def query(params: WeightNetParams, ghosted: GhostedFrames, grid: OccupancyGrid, points: np.ndarray,
          counter: BlendCounter | None = None) -> QueryResult:
    """Corrected occupancy at ``(N, 2)`` posed points.

    Weights are evaluated once per point and reused for both the ghost
    factor and the blended inverse. Singular blends give occupancy 0, are
    flagged in ``singular`` and added to ``counter`` (the module-level
    ``singular_blends`` by default).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))[:, :2]
    w, tape = weights_at_points(params, ghosted.posed_inverse, pts)
    return pull_back(ghosted, grid, pts, w, tape, counter)


def pull_back(ghosted: GhostedFrames, grid: OccupancyGrid, points: np.ndarray, weights: np.ndarray,
              tape=None, counter: BlendCounter | None = None) -> QueryResult:
    """Blend, invert and look up the cache for points whose weights are already known."""
    pts, w = points, weights
    m = np.einsum("nc,cij->nij", w, ghosted.transforms)
    det = np.linalg.det(m)
    singular = ~np.isfinite(det) | (np.abs(det) < SINGULAR_DET)
    ok = ~singular
    rest = np.full((len(pts), 4), np.nan)
    if np.any(ok):
        rest[ok] = np.linalg.solve(m[ok], geo.homogeneous(pts[ok])[..., None])[..., 0]
    val = np.zeros(len(pts))
    grad = np.zeros((len(pts), 2))
    if np.any(ok):
        val[ok], grad[ok] = query_grid_batch(grid, rest[ok, :2], with_grad=True)
    occ = np.where(ok, (1.0 - w[:, -1]) * val, 0.0)
    n_sing = int(singular.sum())
    if n_sing:
        (counter if counter is not None else singular_blends).add(n_sing)
    return QueryResult(occ, w, rest, singular, val, grad, m, tape, pts)


def logit_gradient(ghosted: GhostedFrames, result: QueryResult, grad_occupancy: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the network logits of ``sum(grad_occupancy * occupancy)``.

    Flows through the ghost factor, the bilinear cache lookup, the blended
    matrix inverse (``d(M^-1) = -M^-1 dM M^-1``) and the softmax. Singular
    samples contribute nothing.
    """
    ok = ~result.singular
    g_occ = np.where(ok, np.asarray(grad_occupancy, dtype=np.float64), 0.0)
    w = result.weights
    n = len(g_occ)
    g_w = np.zeros_like(w)
    g_w[:, -1] = -g_occ * result.cache_value
    g_val = g_occ * (1.0 - w[:, -1])
    g_rest = np.zeros((n, 4))
    g_rest[:, :2] = g_val[:, None] * result.cache_grad
    if np.any(ok):
        # dL/dM = -(M^-T g) x-^T
        mt_inv_g = np.linalg.solve(np.swapaxes(result.blended[ok], 1, 2), g_rest[ok][..., None])[..., 0]
        g_m = -np.einsum("ni,nj->nij", mt_inv_g, result.rest_points[ok])
        g_w[ok] += np.einsum("nij,cij->nc", g_m, ghosted.transforms)
    return softmax_backward(w, g_w)


def query_backward(params: WeightNetParams, ghosted: GhostedFrames, result: QueryResult,
                   grad_occupancy: np.ndarray):
    """Parameter gradients of ``sum(grad_occupancy * occupancy)``."""
    grads, _ = mlp_backward(params, result.tape, logit_gradient(ghosted, result, grad_occupancy))
    return grads
