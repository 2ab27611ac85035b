"""Classical linear blend skinning of a closed 2D polygon."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import ConfigError

RENORM_TOL = 1e-6


def validate_weights(weights: np.ndarray) -> np.ndarray:
    """Check rows lie on the simplex, renormalizing small rounding drift.

    Rows whose sum is off by more than 1e-6, or with negative entries, are
    rejected with ValueError.
    """
    w = np.array(weights, dtype=np.float64)
    if w.ndim != 2:
        raise ValueError("weights must be a 2D array")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("weights must be finite and non-negative")
    sums = w.sum(axis=1)
    bad = np.abs(sums - 1.0) > RENORM_TOL
    if np.any(bad):
        n = int(np.flatnonzero(bad)[0])
        raise ValueError(f"weight row {n} sums to {sums[n]!r}, not 1")
    return w / sums[:, None]


@dataclass(frozen=True)
class SkinnedMesh:
    """Closed CCW polygon (homogeneous vertices) with per-vertex bone weights."""

    vertices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] not in (2, 4):
            raise ValueError("vertices must have shape (N, 2) or (N, 4)")
        if v.shape[1] == 2:
            v = geo.homogeneous(v)
        w = validate_weights(self.weights)
        if w.shape[0] != v.shape[0]:
            raise ValueError(f"{v.shape[0]} vertices but {w.shape[0]} weight rows")
        if v.shape[0] < 3:
            raise ValueError("polygon needs at least 3 vertices")
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "weights", w)

    @property
    def xy(self) -> np.ndarray:
        return self.vertices[:, :2]

    @property
    def bone_count(self) -> int:
        return self.weights.shape[1]

    def to_dict(self) -> dict:
        return {"vertices": self.xy.tolist(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> SkinnedMesh:
        try:
            return cls(np.array(d["vertices"], dtype=np.float64), np.array(d["weights"], dtype=np.float64))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid mesh: {exc}") from exc


def bone_transforms(rest_frames: np.ndarray, posed_frames: np.ndarray) -> np.ndarray:
    """``B_b = B~_b B-_b^-1`` for every bone, shape ``(B, 4, 4)``."""
    return np.asarray(posed_frames, dtype=np.float64) @ geo.invert_all(rest_frames)


def blend_matrices(weight_row: np.ndarray, frames: np.ndarray) -> np.ndarray:
    """Convex combination ``sum_b w_b frames[b]``.

    Accepts a single row ``(B,)`` or a batch ``(N, B)``.
    """
    return np.tensordot(np.asarray(weight_row, dtype=np.float64), np.asarray(frames, dtype=np.float64), axes=(-1, 0))


def skin_vertex(v: np.ndarray, weight_row: np.ndarray, rest_frames: np.ndarray, posed_frames: np.ndarray) -> np.ndarray:
    return blend_matrices(weight_row, bone_transforms(rest_frames, posed_frames)) @ np.asarray(v, dtype=np.float64)


def skin_points_blended(points: np.ndarray, weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Skin ``(N, 4)`` points by first blending one 4x4 matrix per point."""
    m = blend_matrices(weights, transforms)
    return np.einsum("nij,nj->ni", m, points)


def skin_points_summed(points: np.ndarray, weights: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Skin ``(N, 4)`` points by transforming with every bone, then blending results."""
    per_bone = np.einsum("bij,nj->nbi", transforms, points)
    return np.einsum("nb,nbi->ni", weights, per_bone)


def skin_mesh(mesh: SkinnedMesh, rig: geo.Rig, pose: geo.Pose, summed: bool = False) -> np.ndarray:
    """Deformed homogeneous vertices, shape ``(N, 4)``."""
    if mesh.bone_count != rig.bone_count:
        raise ValueError(f"mesh weights have {mesh.bone_count} columns, rig has {rig.bone_count} bones")
    transforms = bone_transforms(rig.rest_frames, geo.pose_fn(rig, pose))
    skin = skin_points_summed if summed else skin_points_blended
    return skin(mesh.vertices, mesh.weights, transforms)
