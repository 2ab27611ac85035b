"""Pose-conditioned skinning-weight MLP with hand-written backpropagation.

The network maps the query expressed in every bone's local frame
(``3 * B`` features) to ``B + 1`` logits: one per bone plus a trailing
"ghost" background channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import ConfigError, NonFiniteActivation

LEAKY_SLOPE = 0.1
HIDDEN = (64, 64, 64)


@dataclass
class WeightNetParams:
    """Layer ``(weight, bias)`` pairs; weights have shape ``(out, in)``."""

    layers: list[tuple[np.ndarray, np.ndarray]]
    seed: int = 0
    ghost: bool = True

    def __post_init__(self):
        sizes = [self.layers[0][0].shape[1]]
        for w, b in self.layers:
            if w.shape[1] != sizes[-1] or b.shape != (w.shape[0],):
                raise ValueError(f"layer dimensions do not chain: {w.shape}, {b.shape} after {sizes[-1]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
            sizes.append(w.shape[0])
        if sizes[0] % 3 or sizes[-1] != sizes[0] // 3 + 1:
            raise ValueError(f"expected input 3B and output B+1, got {sizes[0]} -> {sizes[-1]}")

    @property
    def layer_sizes(self) -> list[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def bone_count(self) -> int:
        return self.layer_sizes[0] // 3

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def with_flat(self, theta: np.ndarray) -> WeightNetParams:
        layers, k = [], 0
        for w, b in self.layers:
            nw = theta[k : k + w.size].reshape(w.shape)
            k += w.size
            nb = theta[k : k + b.size].copy()
            k += b.size
            layers.append((nw.copy(), nb))
        return WeightNetParams(layers, self.seed, self.ghost)

    def copy(self) -> WeightNetParams:
        return WeightNetParams([(w.copy(), b.copy()) for w, b in self.layers], self.seed, self.ghost)

    def to_dict(self) -> dict:
        return {
            "layer_sizes": self.layer_sizes,
            "layers": [{"w": w.ravel().tolist(), "b": b.tolist()} for w, b in self.layers],
            "seed": self.seed,
            "ghost": self.ghost,
        }

    @classmethod
    def from_dict(cls, d: dict) -> WeightNetParams:
        try:
            sizes = [int(s) for s in d["layer_sizes"]]
            layers = []
            for k, layer in enumerate(d["layers"]):
                w = np.array(layer["w"], dtype=np.float64).reshape(sizes[k + 1], sizes[k])
                b = np.array(layer["b"], dtype=np.float64).reshape(sizes[k + 1])
                layers.append((w, b))
            if len(layers) != len(sizes) - 1:
                raise ValueError("layer count does not match layer_sizes")
            return cls(layers, int(d.get("seed", 0)), bool(d.get("ghost", True)))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            raise ConfigError(f"invalid checkpoint: {exc}") from exc


def init_params(bone_count: int, hidden=HIDDEN, seed: int = 0, ghost: bool = True) -> WeightNetParams:
    """Fan-balanced uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [3 * bone_count, *hidden, bone_count + 1]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        layers.append((rng.uniform(-limit, limit, size=(fan_out, fan_in)), np.zeros(fan_out)))
    return WeightNetParams(layers, seed, ghost)


def encode_points(inverse_frames: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Local coordinates of ``(N, 2)`` points in each frame, flattened to ``(N, 3B)``.

    ``inverse_frames`` are the already-inverted frames ``B^-1``, ``(B, 4, 4)``.
    """
    h = geo.homogeneous(np.atleast_2d(points))
    local = np.einsum("bij,nj->nbi", inverse_frames[:, :3, :], h)
    return local.reshape(h.shape[0], -1)


def encode_query(posed_frames: np.ndarray, x) -> np.ndarray:
    """``(B~_b^-1 x)_{xyz}`` for every bone, concatenated to length ``3B``."""
    return encode_points(geo.invert_all(posed_frames), np.asarray(x, dtype=np.float64)[None, :2])[0]


@dataclass
class Tape:
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)


def _leaky(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def mlp_forward(params: WeightNetParams, enc: np.ndarray) -> tuple[np.ndarray, Tape]:
    """Logits for one encoding ``(3B,)`` or a batch ``(N, 3B)``."""
    a = np.asarray(enc, dtype=np.float64)
    if a.shape[-1] != params.layer_sizes[0]:
        raise ValueError(f"encoding has {a.shape[-1]} features, network expects {params.layer_sizes[0]}")
    tape = Tape()
    last = len(params.layers) - 1
    for k, (w, b) in enumerate(params.layers):
        tape.inputs.append(a)
        with np.errstate(over="ignore", invalid="ignore"):
            z = a @ w.T + b
        tape.pre.append(z)
        a = z if k == last else _leaky(z)
        if not np.all(np.isfinite(a)):
            raise NonFiniteActivation(f"non-finite activation in layer {k}")
    return a, tape


def mlp_backward(params: WeightNetParams, tape: Tape, upstream: np.ndarray):
    """Reverse-mode gradients of ``sum(upstream * logits)``.

    Returns ``(param_grads, input_grad)`` where ``param_grads`` mirrors
    ``params.layers``. Batched tapes sum parameter gradients over the batch.
    """
    g = np.asarray(upstream, dtype=np.float64)
    grads = [None] * len(params.layers)
    last = len(params.layers) - 1
    for k in range(last, -1, -1):
        w, _ = params.layers[k]
        if k != last:
            g = g * np.where(tape.pre[k] > 0, 1.0, LEAKY_SLOPE)
        x = tape.inputs[k]
        if g.ndim == 1:
            grads[k] = (np.outer(g, x), g.copy())
        else:
            grads[k] = (g.T @ x, g.sum(axis=0))
        g = g @ w
    return grads, g


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def channel_weights(logits: np.ndarray, ghost: bool = True) -> np.ndarray:
    """Softmax over all ``B + 1`` channels, or over the ``B`` bones with the ghost pinned to 0."""
    if ghost:
        return softmax(logits)
    w = np.zeros_like(logits, dtype=np.float64)
    w[..., :-1] = softmax(logits[..., :-1])
    return w


def softmax_backward(weights: np.ndarray, grad_weights: np.ndarray) -> np.ndarray:
    """Logit gradient given the gradient w.r.t. softmax outputs.

    Channels with zero weight (a pinned ghost) receive zero gradient.
    """
    inner = np.sum(weights * grad_weights, axis=-1, keepdims=True)
    return weights * (grad_weights - inner)


def weights_at_points(params: WeightNetParams, inverse_frames: np.ndarray, points: np.ndarray):
    """Batched ``W(x | theta)`` with its tape: ``(weights (N, B+1), tape)``."""
    logits, tape = mlp_forward(params, encode_points(inverse_frames, points))
    return channel_weights(logits, params.ghost), tape


def weights_at(params: WeightNetParams, posed_frames: np.ndarray, x) -> np.ndarray:
    return weights_at_points(params, geo.invert_all(posed_frames), np.asarray(x, dtype=np.float64)[None, :2])[0][0]


def save_checkpoint(params: WeightNetParams, path: str | Path) -> None:
    geo.save_json(params.to_dict(), path)


def load_checkpoint(path: str | Path) -> WeightNetParams:
    return WeightNetParams.from_dict(geo.load_json(path))
