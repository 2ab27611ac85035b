"""Homogeneous 4x4 transforms, rigs and forward kinematics.

Transforms are plain ``(4, 4)`` float64 arrays acting on column vectors
``(x, y, z, 1)``. Characters live in the z=0 plane and every joint rotates
about z, so 2D articulation reuses the 3D homogeneous machinery unchanged.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, IoFailure, SingularTransform

SINGULAR_DET = 1e-12


def identity() -> np.ndarray:
    return np.eye(4)


def translate(x: float, y: float, z: float = 0.0) -> np.ndarray:
    m = np.eye(4)
    m[:3, 3] = (x, y, z)
    return m


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    m = np.eye(4)
    m[0, 0], m[0, 1] = c, -s
    m[1, 0], m[1, 1] = s, c
    return m


def frame(x: float, y: float, angle: float = 0.0) -> np.ndarray:
    """Planar frame with origin ``(x, y)`` and x-axis rotated by ``angle``."""
    m = rot_z(angle)
    m[0, 3], m[1, 3] = x, y
    return m


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``a @ b``: apply ``b`` first, then ``a``."""
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def invert(t: np.ndarray) -> np.ndarray:
    """Inverse of a 4x4 transform.

    Raises SingularTransform when ``|det(t)| < 1e-12``.
    """
    t = np.asarray(t, dtype=np.float64)
    det = np.linalg.det(t)
    if not np.isfinite(det) or abs(det) < SINGULAR_DET:
        raise SingularTransform(f"transform is singular (det={det:.3e})")
    return np.linalg.inv(t)


def invert_all(frames: np.ndarray) -> np.ndarray:
    """Invert a stack of transforms, shape ``(K, 4, 4)``."""
    frames = np.asarray(frames, dtype=np.float64)
    det = np.linalg.det(frames)
    bad = ~np.isfinite(det) | (np.abs(det) < SINGULAR_DET)
    if np.any(bad):
        k = int(np.flatnonzero(bad)[0])
        raise SingularTransform(f"transform {k} is singular (det={det[k]:.3e})")
    return np.linalg.inv(frames)


def apply(t: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply ``t`` to homogeneous points of shape ``(4,)`` or ``(N, 4)``."""
    points = np.asarray(points, dtype=np.float64)
    return points @ np.asarray(t).T


def homogeneous(xy: np.ndarray) -> np.ndarray:
    """Lift 2D points ``(..., 2)`` to homogeneous ``(..., 4)`` with z=0, w=1."""
    xy = np.asarray(xy, dtype=np.float64)
    out = np.zeros(xy.shape[:-1] + (4,))
    out[..., :2] = xy
    out[..., 3] = 1.0
    return out


def is_affine(t: np.ndarray) -> bool:
    return bool(np.array_equal(np.asarray(t)[3], [0.0, 0.0, 0.0, 1.0]))


def about_pivot(angle: float, pivot: np.ndarray) -> np.ndarray:
    """Rotation by ``angle`` about z through the planar point ``pivot``."""
    px, py = float(pivot[0]), float(pivot[1])
    return translate(px, py) @ rot_z(angle) @ translate(-px, -py)


@dataclass(frozen=True)
class Rig:
    """Bone hierarchy with world-space rest frames and per-bone joint pivots.

    Bone 0 is the root; ``parent[0] == -1``.
    """

    parent: tuple[int, ...]
    rest_frames: np.ndarray
    pivots: np.ndarray
    order: tuple[int, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        rest = np.array(self.rest_frames, dtype=np.float64)
        piv = np.array(self.pivots, dtype=np.float64)
        parent = tuple(int(p) for p in self.parent)
        n = len(parent)
        if n == 0:
            raise ValueError("rig needs at least one bone")
        if rest.shape != (n, 4, 4):
            raise ValueError(f"rest_frames must have shape ({n}, 4, 4), got {rest.shape}")
        if piv.shape != (n, 2):
            raise ValueError(f"pivots must have shape ({n}, 2), got {piv.shape}")
        if parent[0] != -1:
            raise ValueError("bone 0 must be the root (parent -1)")
        for b, p in enumerate(parent[1:], start=1):
            if not 0 <= p < n or p == b:
                raise ValueError(f"bone {b} has invalid parent {p}")
        invert_all(rest)
        rest.flags.writeable = False
        piv.flags.writeable = False
        object.__setattr__(self, "rest_frames", rest)
        object.__setattr__(self, "pivots", piv)
        object.__setattr__(self, "parent", parent)
        object.__setattr__(self, "order", _topological_order(parent))

    @property
    def bone_count(self) -> int:
        return len(self.parent)

    def to_dict(self) -> dict:
        return {
            "bones": [
                {
                    "parent": p,
                    "rest_frame": self.rest_frames[b].ravel().tolist(),
                    "pivot": self.pivots[b].tolist(),
                }
                for b, p in enumerate(self.parent)
            ]
        }

    @classmethod
    def from_dict(cls, d: dict) -> Rig:
        try:
            bones = d["bones"]
            return cls(
                parent=tuple(int(b["parent"]) for b in bones),
                rest_frames=np.array([b["rest_frame"] for b in bones], dtype=np.float64).reshape(-1, 4, 4),
                pivots=np.array([b["pivot"] for b in bones], dtype=np.float64).reshape(-1, 2),
            )
        except (KeyError, TypeError, ValueError, SingularTransform) as exc:
            raise ConfigError(f"invalid rig: {exc}") from exc


def _topological_order(parent: tuple[int, ...]) -> tuple[int, ...]:
    children: dict[int, list[int]] = {}
    for b, p in enumerate(parent):
        children.setdefault(p, []).append(b)
    order = []
    stack = [0]
    while stack:
        b = stack.pop()
        order.append(b)
        stack.extend(reversed(children.get(b, [])))
    if len(order) != len(parent):
        raise ValueError("parent indices do not form a tree rooted at bone 0")
    return tuple(order)


@dataclass(frozen=True)
class Pose:
    """Per-bone rotation angles (radians, about z) plus a root translation."""

    theta: np.ndarray
    root_translation: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64).reshape(-1)
        rt = np.array(self.root_translation, dtype=np.float64).reshape(2)
        theta.flags.writeable = False
        rt.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "root_translation", rt)

    @classmethod
    def rest(cls, bone_count: int) -> Pose:
        return cls(np.zeros(bone_count), np.zeros(2))

    def to_dict(self) -> dict:
        return {"theta": self.theta.tolist(), "root_translation": self.root_translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Pose:
        try:
            return cls(d["theta"], d.get("root_translation", [0.0, 0.0]))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid pose: {exc}") from exc


def deformations(rig: Rig, pose: Pose) -> np.ndarray:
    """World-space deformation ``B~_b B-_b^-1`` of every bone, shape ``(B, 4, 4)``.

    Each bone rotates by ``theta[b]`` about its pivot, on top of its parent's
    deformation; the root additionally translates. At the rest pose every
    entry is exactly the identity.
    """
    if pose.theta.shape[0] != rig.bone_count:
        raise ValueError(f"pose has {pose.theta.shape[0]} angles, rig has {rig.bone_count} bones")
    out = np.empty((rig.bone_count, 4, 4))
    for b in rig.order:
        local = about_pivot(pose.theta[b], rig.pivots[b])
        p = rig.parent[b]
        if p < 0:
            out[b] = translate(*pose.root_translation) @ local
        else:
            out[b] = out[p] @ local
    return out


def pose_fn(rig: Rig, pose: Pose) -> np.ndarray:
    """Posed bone frames ``{B~_b}``, shape ``(B, 4, 4)``."""
    return deformations(rig, pose) @ rig.rest_frames


def save_json(obj: dict, path: str | Path) -> None:
    path = Path(path)
    try:
        path.write_text(json.dumps(obj, indent=1) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def load_json(path: str | Path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
