"""Procedural "gingerbread" character, its animation and ground-truth occupancy."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import ConfigError, IoFailure
from .lbs import SkinnedMesh, skin_mesh
from .occupancy import points_in_polygon

BONE_NAMES = ("torso", "head", "left_arm", "right_arm", "left_leg", "right_leg")
MAX_AMPLITUDE = np.pi / 3
MAX_STEP = 0.15
BBOX_PADDING = 0.2
VERTEX_COUNT = 64

# joint pivot, weight-painting segment (start, end) and support radius per bone;
# segments sit slightly inside each limb so junction vertices favour one bone
_BONES = (
    ((0.0, 0.0), (0.0, -0.62), (0.0, 0.58), 0.6),
    ((0.0, 0.6), (0.0, 0.72), (0.0, 1.15), 0.35),
    ((-0.55, 0.3), (-0.65, 0.3), (-1.45, 0.3), 0.35),
    ((0.55, 0.3), (0.65, 0.3), (1.45, 0.3), 0.35),
    ((-0.3, -0.62), (-0.32, -0.75), (-0.34, -1.55), 0.4),
    ((0.3, -0.62), (0.32, -0.75), (0.34, -1.55), 0.4),
)
_WEIGHT_EPS = 1e-3

# counterclockwise outline keypoints; arcs are expanded below
_OUTLINE = [
    (0.0, -0.62),
    (0.12, -0.7), (0.12, -1.62), (0.2, -1.75), (0.52, -1.75), (0.6, -1.62), (0.55, -0.62),
    (0.55, 0.08), (1.45, 0.1), ("arc", (1.45, 0.3), 0.2, -np.pi / 2, np.pi / 2), (1.45, 0.5), (0.55, 0.52),
    (0.2, 0.58),
    ("arc", (0.0, 0.95), 0.4, -np.pi / 3, 4 * np.pi / 3),
    (-0.2, 0.58),
    (-0.55, 0.52), (-1.45, 0.5), ("arc", (-1.45, 0.3), 0.2, np.pi / 2, 3 * np.pi / 2), (-1.45, 0.1), (-0.55, 0.08),
    (-0.55, -0.62), (-0.6, -1.62), (-0.52, -1.75), (-0.2, -1.75), (-0.12, -1.62), (-0.12, -0.7),
]


def _outline_keypoints() -> np.ndarray:
    pts = []
    for item in _OUTLINE:
        if item[0] == "arc":
            _, c, r, a0, a1 = item
            for a in np.linspace(a0, a1, 7)[1:-1]:
                pts.append((c[0] + r * np.cos(a), c[1] + r * np.sin(a)))
        else:
            pts.append(item)
    return np.array(pts, dtype=np.float64)


def _resample(keys: np.ndarray, total: int) -> np.ndarray:
    """Insert points along edges so the closed outline has ``total`` vertices, keeping every keypoint."""
    edges = np.roll(keys, -1, axis=0) - keys
    lengths = np.linalg.norm(edges, axis=1)
    extra = total - len(keys)
    share = lengths / lengths.sum() * extra
    counts = np.floor(share).astype(int)
    for k in np.argsort(-(share - counts))[: extra - counts.sum()]:
        counts[k] += 1
    out = []
    for p, e, c in zip(keys, edges, counts):
        out.append(p)
        for t in range(1, c + 1):
            out.append(p + e * t / (c + 1))
    return np.array(out)


def _segment_distance(points: np.ndarray, a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    ab = b - a
    t = np.clip((points - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(points - (a + t[:, None] * ab), axis=1)


def paint_weights(points: np.ndarray) -> np.ndarray:
    """Inverse-square falloff to each bone segment, tapered to zero at its support radius."""
    raw = np.zeros((len(points), len(_BONES)))
    for b, (_, a, e, radius) in enumerate(_BONES):
        d = _segment_distance(points, a, e)
        taper = np.clip(1.0 - d / radius, 0.0, None) ** 2
        raw[:, b] = taper / (d**2 + _WEIGHT_EPS)
    sums = raw.sum(axis=1)
    if np.any(sums == 0):
        raise ValueError("some points lie outside every bone's support")
    return raw / sums[:, None]


def build_gingerbread() -> tuple[geo.Rig, SkinnedMesh]:
    """Six-bone rig (torso root; head, arms and legs as its children) and a 64-vertex outline."""
    frames, pivots = [], []
    for pivot, a, e, _ in _BONES:
        angle = float(np.arctan2(e[1] - a[1], e[0] - a[0]))
        frames.append(geo.frame(pivot[0], pivot[1], angle))
        pivots.append(pivot)
    rig = geo.Rig(parent=(-1, 0, 0, 0, 0, 0), rest_frames=np.array(frames), pivots=np.array(pivots))
    verts = _resample(_outline_keypoints(), VERTEX_COUNT)
    return rig, SkinnedMesh(verts, paint_weights(verts))


def sample_animation(rig: geo.Rig, t_count: int, seed: int = 0, zero_phase: bool = False) -> list[geo.Pose]:
    """Sinusoidal joint curves ``A_b sin(2 pi f_b t / T + phi_b)`` plus an elliptical root drift.

    Amplitudes are capped at ``min(pi/3, 0.15 T / (2 pi f_b))`` so no joint
    moves more than 0.15 rad between consecutive frames.
    """
    if t_count < 1:
        raise ValueError("t_count must be positive")
    rng = np.random.default_rng(seed)
    n = rig.bone_count
    freq = rng.integers(1, 4, size=n)
    cap = np.minimum(MAX_AMPLITUDE, MAX_STEP * t_count / (2 * np.pi * freq))
    amp = cap * rng.uniform(0.6, 1.0, size=n) * rng.choice([-1.0, 1.0], size=n)
    phase = rng.uniform(0, 2 * np.pi, size=n)
    drift_phase = rng.uniform(0, 2 * np.pi)
    radius = rng.uniform(0.05, 0.15, size=2)
    if zero_phase:
        phase[:] = 0.0
        drift_phase = 0.0
    amp[0] *= 0.25  # keep the torso mostly upright
    poses = []
    for t in range(t_count):
        s = 2 * np.pi * t / t_count
        theta = amp * np.sin(freq * s + phase)
        root = radius * np.array([np.sin(s + drift_phase), 1.0 - np.cos(s + drift_phase)])
        poses.append(geo.Pose(theta, root))
    return poses


def gt_occupancy_batch(mesh: SkinnedMesh, rig: geo.Rig, pose: geo.Pose, points: np.ndarray) -> np.ndarray:
    return points_in_polygon(skin_mesh(mesh, rig, pose)[:, :2], points)


def gt_occupancy(mesh: SkinnedMesh, rig: geo.Rig, pose: geo.Pose, x) -> int:
    return int(gt_occupancy_batch(mesh, rig, pose, np.asarray(x, dtype=np.float64)[None, :2])[0])


@dataclass(frozen=True)
class AnimationSet:
    rig: geo.Rig
    mesh: SkinnedMesh
    poses: tuple[geo.Pose, ...]
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    seed: int = 0
    stride: int = 1

    @property
    def frames(self) -> int:
        return len(self.poses)

    def posed_polygon(self, t: int) -> np.ndarray:
        return skin_mesh(self.mesh, self.rig, self.poses[t])[:, :2]


def padded_bbox(polygons, padding: float = BBOX_PADDING) -> tuple[np.ndarray, np.ndarray]:
    pts = np.concatenate([np.asarray(p)[:, :2] for p in polygons])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    pad = padding * (hi - lo)
    return lo - pad, hi + pad


def make_animation(t_count: int = 100, seed: int = 0, stride: int = 1) -> AnimationSet:
    """Gingerbread dataset of ``t_count`` poses.

    With ``stride > 1`` the poses are every ``stride``-th frame of a
    ``t_count * stride`` frame animation: fewer, more varied poses drawn from
    the same smooth motion.
    """
    if stride < 1:
        raise ValueError("stride must be positive")
    rig, mesh = build_gingerbread()
    poses = tuple(sample_animation(rig, t_count * stride, seed)[::stride])
    lo, hi = padded_bbox([mesh.xy] + [skin_mesh(mesh, rig, p) for p in poses])
    return AnimationSet(rig, mesh, poses, lo, hi, seed, stride)


def save_dataset(anim: AnimationSet, out_dir: str | Path) -> None:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc.strerror or exc}") from exc
    geo.save_json(anim.rig.to_dict(), out / "rig.json")
    geo.save_json(anim.mesh.to_dict(), out / "mesh.json")
    geo.save_json([p.to_dict() for p in anim.poses], out / "poses.json")
    meta = {"bbox_min": anim.bbox_min.tolist(), "bbox_max": anim.bbox_max.tolist(), "seed": anim.seed, "T": anim.frames,
            "stride": anim.stride}
    geo.save_json(meta, out / "meta.json")


def load_dataset(data_dir: str | Path) -> AnimationSet:
    d = Path(data_dir)
    if not d.is_dir():
        raise IoFailure(f"dataset directory {d} does not exist")
    rig = geo.Rig.from_dict(geo.load_json(d / "rig.json"))
    mesh = SkinnedMesh.from_dict(geo.load_json(d / "mesh.json"))
    poses = tuple(geo.Pose.from_dict(p) for p in geo.load_json(d / "poses.json"))
    meta = geo.load_json(d / "meta.json")
    if mesh.bone_count != rig.bone_count:
        raise ConfigError(f"mesh has {mesh.bone_count} weight columns but rig has {rig.bone_count} bones")
    for t, p in enumerate(poses):
        if p.theta.shape[0] != rig.bone_count:
            raise ConfigError(f"pose {t} has {p.theta.shape[0]} angles, rig has {rig.bone_count} bones")
    try:
        return AnimationSet(rig, mesh, poses, np.array(meta["bbox_min"], float), np.array(meta["bbox_max"], float),
                            int(meta.get("seed", 0)), int(meta.get("stride", 1)))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid meta.json: {exc}") from exc
