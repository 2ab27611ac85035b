"""Joint training of the weight network on occupancy and skinning-weight losses."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import geometry as geo
from .dataset import AnimationSet
from .errors import ConfigError, DivergedTraining, IoFailure, NonFiniteActivation
from .inverse import BlendCounter, GhostedFrames, augment_ghost, logit_gradient, pull_back, query
from .occupancy import OccupancyGrid, grid_nodes, points_in_polygon
from .weightnet import (
    WeightNetParams,
    channel_weights,
    encode_points,
    init_params,
    mlp_backward,
    mlp_forward,
    save_checkpoint,
    softmax_backward,
)

log = logging.getLogger(__name__)

CE_EPS = 1e-12
BOUNDARY_SIGMA = 0.02


@dataclass
class TrainConfig:
    steps: int = 4000
    batch_poses: int = 4
    points_per_pose: int = 512
    learning_rate: float = 1e-3
    loss_balance: float = 1.0
    seed: int = 0
    grid_resolution: tuple[int, int] = (128, 128)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    ghost: bool = True
    eval_resolution: int = 128
    checkpoint_every: int = 0
    log_every: int = 500

    def __post_init__(self):
        self.grid_resolution = tuple(int(r) for r in self.grid_resolution)
        for name in ("steps", "batch_poses", "points_per_pose", "eval_resolution"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if len(self.grid_resolution) != 2 or min(self.grid_resolution) < 2:
            raise ConfigError("grid_resolution must be two integers >= 2")
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if not self.loss_balance >= 0:
            raise ConfigError("loss_balance must be non-negative")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.epsilon > 0):
            raise ConfigError("optimizer needs 0 <= beta < 1 and epsilon > 0")
        if self.checkpoint_every < 0 or self.log_every < 0:
            raise ConfigError("checkpoint_every and log_every must be non-negative")

    @classmethod
    def from_text(cls, text: str) -> TrainConfig:
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            try:
                kw[key] = _parse_value(types[key], value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        return cls(**kw)

    def to_text(self) -> str:
        out = []
        for k, v in asdict(self).items():
            if isinstance(v, (tuple, list)):
                v = ",".join(map(str, v))
            out.append(f"{k} = {v}")
        return "\n".join(out) + "\n"


def _parse_value(kind: str, value: str):
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if kind == "bool":
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(value)
    parts = value.replace("x", ",").split(",")
    return tuple(int(p) for p in parts)


def load_config(path: str | Path) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc
    return TrainConfig.from_text(text)


class Adam:
    """Adaptive-moment optimizer over a list of ``(weight, bias)`` layers."""

    def __init__(self, params: WeightNetParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [[np.zeros_like(a) for a in layer] for layer in params.layers]
        self.v = [[np.zeros_like(a) for a in layer] for layer in params.layers]
        self.t = 0

    def step(self, params: WeightNetParams, grads) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, (layer, glayer) in enumerate(zip(params.layers, grads)):
            for j, (p, g) in enumerate(zip(layer, glayer)):
                m, v = self.m[k][j], self.v[k][j]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(frozen=True)
class PoseContext:
    """Per-pose quantities reused every step."""

    ghosted: GhostedFrames
    polygon: np.ndarray


def pose_contexts(anim: AnimationSet) -> list[PoseContext]:
    out = []
    for t, pose in enumerate(anim.poses):
        posed = geo.pose_fn(anim.rig, pose)
        out.append(PoseContext(augment_ghost(anim.rig.rest_frames, posed), anim.posed_polygon(t)))
    return out


@dataclass(frozen=True)
class PoseSample:
    pose_index: int
    points: np.ndarray
    labels: np.ndarray


def sample_points(bbox_min, bbox_max, polygon: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Half uniform over the box, half jittered around the polygon boundary.

    Boundary points are drawn uniformly by arc length and offset by a normal
    with sigma = 2% of the box diagonal, truncated at 3 sigma.
    """
    if n < 1:
        raise ValueError("n must be positive")
    lo, hi = np.asarray(bbox_min, float), np.asarray(bbox_max, float)
    n_uniform = (n + 1) // 2
    uniform = lo + (hi - lo) * rng.random((n_uniform, 2))
    n_near = n - n_uniform
    poly = np.asarray(polygon, dtype=np.float64)[:, :2]
    edges = np.roll(poly, -1, axis=0) - poly
    lengths = np.linalg.norm(edges, axis=1)
    k = rng.choice(len(poly), size=n_near, p=lengths / lengths.sum())
    t = rng.random(n_near)
    sigma = BOUNDARY_SIGMA * float(np.linalg.norm(hi - lo))
    jitter = np.clip(rng.normal(0.0, sigma, size=(n_near, 2)), -3 * sigma, 3 * sigma)
    near = poly[k] + t[:, None] * edges[k] + jitter
    return np.concatenate([uniform, near])


def draw_batch(anim: AnimationSet, contexts, config: TrainConfig, rng: np.random.Generator) -> list[PoseSample]:
    count = min(config.batch_poses, anim.frames)
    idx = rng.choice(anim.frames, size=count, replace=False)
    batch = []
    for t in idx:
        poly = contexts[t].polygon
        pts = sample_points(anim.bbox_min, anim.bbox_max, poly, config.points_per_pose, rng)
        batch.append(PoseSample(int(t), pts, points_in_polygon(poly, pts).astype(np.float64)))
    return batch


def _zero_grads(params: WeightNetParams):
    return [[np.zeros_like(w), np.zeros_like(b)] for w, b in params.layers]


def _accumulate(total, grads, scale=1.0):
    for acc, (gw, gb) in zip(total, grads):
        acc[0] += scale * gw
        acc[1] += scale * gb
    return total


def occupancy_loss_grad(params: WeightNetParams, contexts, grid: OccupancyGrid, batch, need_grad: bool = True):
    """Mean |predicted - true| occupancy per pose, averaged over poses.

    Samples whose blended matrix is singular are excluded. All poses share
    one network pass. Returns ``(loss, grads or None, singular_count)``.
    """
    counter = BlendCounter()
    enc = np.concatenate([encode_points(contexts[s.pose_index].ghosted.posed_inverse, s.points) for s in batch])
    logits, tape = mlp_forward(params, enc)
    weights = channel_weights(logits, params.ghost)
    total = 0.0
    g_logits = np.zeros_like(weights)
    start = 0
    for sample in batch:
        stop = start + len(sample.points)
        ghosted = contexts[sample.pose_index].ghosted
        res = pull_back(ghosted, grid, sample.points, weights[start:stop], counter=counter)
        ok = ~res.singular
        n_ok = int(ok.sum())
        if n_ok:
            diff = res.occupancy - sample.labels
            total += float(np.abs(diff[ok]).sum()) / n_ok
            if need_grad:
                g = np.where(ok, np.sign(diff), 0.0) / (n_ok * len(batch))
                g_logits[start:stop] = logit_gradient(ghosted, res, g)
        start = stop
    grads = mlp_backward(params, tape, g_logits)[0] if need_grad else None
    return total / len(batch), grads, counter.count


def loss_occupancy(params: WeightNetParams, contexts, grid: OccupancyGrid, batch) -> float:
    return occupancy_loss_grad(params, contexts, grid, batch, need_grad=False)[0]


def rest_encoding(anim_or_rig, mesh=None) -> np.ndarray:
    """Rest-frame encoding of the mesh vertices, ``(N, 3B)``."""
    if mesh is None:
        rig, mesh = anim_or_rig.rig, anim_or_rig.mesh
    else:
        rig = anim_or_rig
    return encode_points(geo.invert_all(rig.rest_frames), mesh.xy)


def ghost_padded_targets(weights: np.ndarray) -> np.ndarray:
    return np.concatenate([weights, np.zeros((len(weights), 1))], axis=1)


def weights_loss_grad(params: WeightNetParams, encoding: np.ndarray, targets: np.ndarray, need_grad: bool = True):
    """Mean cross-entropy between predicted and painted (ghost-padded) vertex weights."""
    logits, tape = mlp_forward(params, encoding)
    w = channel_weights(logits, params.ghost)
    # log(w + eps) can exceed 0 by ~eps when w is 1; keep the loss non-negative
    loss = max(float(np.mean(-np.sum(targets * np.log(w + CE_EPS), axis=1))), 0.0)
    if not need_grad:
        return loss, None
    g_w = -targets / (w + CE_EPS) / len(targets)
    grads, _ = mlp_backward(params, tape, softmax_backward(w, g_w))
    return loss, grads


def loss_weights(params: WeightNetParams, mesh, rig) -> float:
    return weights_loss_grad(params, rest_encoding(rig, mesh), ghost_padded_targets(mesh.weights), need_grad=False)[0]


def total_loss_grad(params, contexts, grid, batch, encoding, targets, balance: float):
    l_occ, g_occ, n_sing = occupancy_loss_grad(params, contexts, grid, batch)
    l_w, g_w = weights_loss_grad(params, encoding, targets)
    grads = _accumulate(_accumulate(_zero_grads(params), g_occ), g_w, balance)
    return l_occ + balance * l_w, (l_occ, l_w, n_sing), grads


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss_occ: float
    loss_w: float
    singular_count: int


@dataclass
class TrainReport:
    records: list[StepRecord] = field(default_factory=list)
    final_iou: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["step", "loss_occ", "loss_w", "singular_count"])
        for r in self.records:
            writer.writerow([r.step, repr(r.loss_occ), repr(r.loss_w), r.singular_count])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, final_iou=()) -> TrainReport:
        rows = list(csv.DictReader(io.StringIO(text)))
        recs = [StepRecord(int(r["step"]), float(r["loss_occ"]), float(r["loss_w"]), int(r["singular_count"])) for r in rows]
        return cls(recs, list(final_iou))

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        try:
            (out / "report.csv").write_text(self.to_csv())
            (out / "iou.json").write_text(json.dumps(self.final_iou) + "\n")
        except OSError as exc:
            raise IoFailure(f"cannot write report to {out}: {exc.strerror or exc}") from exc


def train(config: TrainConfig, anim: AnimationSet, grid: OccupancyGrid, out_dir: str | Path | None = None,
          init: WeightNetParams | None = None) -> tuple[WeightNetParams, TrainReport]:
    """Overfit the weight network to every pose of ``anim``.

    Each step draws fresh poses and points, backpropagates
    ``L_occupancy + loss_balance * L_weights`` and applies one Adam update.
    Deterministic for a given config and seed.
    """
    rng = np.random.default_rng(config.seed)
    if init is None:
        params = init_params(anim.rig.bone_count, seed=config.seed, ghost=config.ghost)
    else:
        if init.bone_count != anim.rig.bone_count:
            raise ConfigError(f"checkpoint is for {init.bone_count} bones, rig has {anim.rig.bone_count}")
        params = init.copy()
        params.ghost = config.ghost
    contexts = pose_contexts(anim)
    encoding = rest_encoding(anim)
    targets = ghost_padded_targets(anim.mesh.weights)
    opt = Adam(params, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    report = TrainReport()
    if out_dir is not None:
        out_dir = Path(out_dir)
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot create {out_dir}: {exc.strerror or exc}") from exc
    for step in range(config.steps):
        batch = draw_batch(anim, contexts, config, rng)
        try:
            total, (l_occ, l_w, n_sing), grads = total_loss_grad(
                params, contexts, grid, batch, encoding, targets, config.loss_balance
            )
        except NonFiniteActivation as exc:
            raise DivergedTraining(f"step {step}: {exc}") from exc
        if not np.isfinite(total):
            raise DivergedTraining(f"step {step}: loss became {total}")
        report.records.append(StepRecord(step, l_occ, l_w, n_sing))
        opt.step(params, grads)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d  L_occ %.4f  L_w %.4f  singular %d", step, l_occ, l_w, n_sing)
        if out_dir is not None and config.checkpoint_every and (step + 1) % config.checkpoint_every == 0:
            save_checkpoint(params, out_dir / "checkpoint.json")
            report.write(out_dir)
    report.final_iou = [
        evaluate_iou(params, anim, grid, t, config.eval_resolution, contexts=contexts) for t in range(anim.frames)
    ]
    if out_dir is not None:
        save_checkpoint(params, out_dir / "checkpoint.json")
        report.write(out_dir)
    return params, report


def iou(pred: np.ndarray, truth: np.ndarray) -> float:
    pred, truth = np.asarray(pred, bool), np.asarray(truth, bool)
    union = np.count_nonzero(pred | truth)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & truth) / union


def predict_field(params, anim: AnimationSet, grid: OccupancyGrid, pose_index: int, resolution: int,
                  contexts=None, counter: BlendCounter | None = None) -> np.ndarray:
    """Corrected occupancy on an ``(n, n)`` node grid over the dataset box."""
    ctx = (contexts or pose_contexts(anim))[pose_index]
    nodes = grid_nodes(anim.bbox_min, anim.bbox_max, (resolution, resolution))
    occ = query(params, ctx.ghosted, grid, nodes.reshape(-1, 2), counter=counter).occupancy
    return occ.reshape(resolution, resolution)


def truth_field(anim: AnimationSet, pose_index: int, resolution: int) -> np.ndarray:
    nodes = grid_nodes(anim.bbox_min, anim.bbox_max, (resolution, resolution))
    inside = points_in_polygon(anim.posed_polygon(pose_index), nodes.reshape(-1, 2))
    return inside.reshape(resolution, resolution).astype(np.float64)


def evaluate_iou(params, anim: AnimationSet, grid: OccupancyGrid, pose_index: int, resolution: int,
                 contexts=None) -> float:
    """IoU of ``{corrected occupancy >= 0.5}`` against the true posed shape on node samples."""
    pred = predict_field(params, anim, grid, pose_index, resolution, contexts, counter=BlendCounter())
    return iou(pred >= 0.5, truth_field(anim, pose_index, resolution) > 0.5)


def false_positive_mass(params, anim: AnimationSet, grid: OccupancyGrid, pose_index: int, resolution: int,
                        contexts=None) -> float:
    """Summed predicted occupancy over nodes that are truly background."""
    pred = predict_field(params, anim, grid, pose_index, resolution, contexts, counter=BlendCounter())
    return float(pred[truth_field(anim, pose_index, resolution) == 0].sum())
