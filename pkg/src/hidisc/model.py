"""Projection head, curvature-aware encoder and its SGD optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import geometry as geo
from .errors import ConfigurationError, NonFiniteGradientError, ShapeError

DEFAULT_HIDDEN = (512, 128)
EMBED_DIM = 32
INIT_CURVATURE = 0.05

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    return x * ndtr(x)


def gelu_grad(x):
    return ndtr(x) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


@dataclass
class ProjectionHead:
    """Three affine layers with GELU between them."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != 3 or len(self.biases) != 3:
            raise ConfigurationError("projection head has exactly three layers")
        for W, b in zip(self.weights, self.biases):
            if W.shape[1] != b.shape[0]:
                raise ShapeError("bias length must match layer width")
        for W0, W1 in zip(self.weights, self.weights[1:]):
            if W0.shape[1] != W1.shape[0]:
                raise ShapeError("consecutive layer widths do not chain")

    @classmethod
    def init(cls, dims, rng: np.random.Generator) -> "ProjectionHead":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases."""
        dims = tuple(int(d) for d in dims)
        if len(dims) != 4 or min(dims) < 1:
            raise ConfigurationError(f"expected four positive layer dims, got {dims}")
        Ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / math.sqrt(fan_in)
            Ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            bs.append(rng.uniform(-bound, bound, size=fan_out))
        return cls(Ws, bs)

    @classmethod
    def zeros(cls, dims) -> "ProjectionHead":
        dims = tuple(int(d) for d in dims)
        return cls(
            [np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
            [np.zeros(b) for b in dims[1:]],
        )

    @property
    def dims(self) -> tuple:
        return (self.weights[0].shape[0],) + tuple(W.shape[1] for W in self.weights)

    def parameters(self) -> list:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def forward(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dims[0]:
            raise ShapeError(f"expected input dimension {self.dims[0]}, got {x.shape[1]}")
        pre, h = [], x
        acts = [x]
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W + b
            if k < 2:
                pre.append(a)
                h = gelu(a)
                acts.append(h)
            else:
                h = a
        return h, (acts, pre)

    def backward(self, cache, gout) -> list:
        """Gradients in :meth:`parameters` order."""
        acts, pre = cache
        grads = []
        g = gout
        for k in (2, 1, 0):
            grads.append(g.sum(axis=0))
            grads.append(acts[k].T @ g)
            if k:
                g = (g @ self.weights[k].T) * gelu_grad(pre[k - 1])
        return grads[::-1]


@dataclass
class Encoder:
    """Feature vector -> embedding: MLP, tangent clip, then exp map and interior clip.

    In ``"euclidean"`` geometry the exp map and interior clip are skipped and
    the curvature is ignored.
    """

    head: ProjectionHead
    c: float = INIT_CURVATURE
    radius: float = 1.0
    geometry: str = "hyperbolic"

    def __post_init__(self):
        if self.geometry not in ("hyperbolic", "euclidean"):
            raise ConfigurationError(f"unknown geometry {self.geometry!r}")

    @property
    def hyperbolic(self) -> bool:
        return self.geometry == "hyperbolic"

    def forward(self, x):
        h, head_cache = self.head.forward(x)
        t = geo.clip_to_radius(h, self.radius)
        if not self.hyperbolic:
            return t, (head_cache, h, t, None)
        y = geo.exp_map0(t, self.c)
        return geo.clip_to_interior(y, self.c), (head_cache, h, t, y)

    def embed(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def tangent(self, x) -> np.ndarray:
        """Embeddings pulled back to the tangent space at the origin (what clustering sees)."""
        z = self.embed(x)
        return geo.log_map0(z, self.c) if self.hyperbolic else z

    def backward(self, cache, gz):
        """Returns ``(head_grads, grad_c)``."""
        head_cache, h, t, y = cache
        gc = 0.0
        if self.hyperbolic:
            gy, gc1 = geo.clip_to_interior_vjp(y, self.c, gz)
            gz, gc2 = geo.exp_map0_vjp(t, self.c, gy)
            gc = gc1 + gc2
        gh, _ = geo.clip_to_radius_vjp(h, self.radius, gz)
        return self.head.backward(head_cache, gh), gc


def forward(head: ProjectionHead, x, r: float, c: float) -> np.ndarray:
    """Ball embedding of ``x``: ``exp0(clip(head(x), r))`` kept inside both balls."""
    return Encoder(head, c=c, radius=r).embed(x)


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    if total_epochs <= 0:
        return lr0
    return 0.5 * lr0 * (1.0 + math.cos(math.pi * epoch / total_epochs))


@dataclass
class SGD:
    """SGD with momentum and weight decay, cosine-annealed per epoch.

    Weight decay touches the head only. The curvature gets momentum but no
    decay, and is clamped to ``[C_MIN, C_MAX]`` after every step.
    """

    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-5
    total_epochs: int = 50
    learn_curvature: bool = True
    buffers: list | None = None
    c_buffer: float = 0.0

    def lr(self, epoch: int) -> float:
        return cosine_lr(self.lr0, epoch, self.total_epochs)

    def step(self, encoder: Encoder, head_grads: list, grad_c: float, epoch: int) -> None:
        if not all(np.all(np.isfinite(g)) for g in head_grads) or not np.isfinite(grad_c):
            bad = [i for i, g in enumerate(head_grads) if not np.all(np.isfinite(g))]
            raise NonFiniteGradientError(
                f"non-finite gradient (head tensors {bad}, curvature grad {grad_c!r})"
            )
        lr = self.lr(epoch)
        params = encoder.head.parameters()
        if self.buffers is None:
            self.buffers = [np.zeros_like(p) for p in params]
        for p, g, buf in zip(params, head_grads, self.buffers):
            d = g + self.weight_decay * p if self.weight_decay else g
            buf *= self.momentum
            buf += d
            p -= lr * buf
        if self.learn_curvature and encoder.hyperbolic:
            self.c_buffer = self.momentum * self.c_buffer + grad_c
            encoder.c = geo.clamp_curvature(encoder.c - lr * self.c_buffer)


def make_views(x, strength: float, rng: np.random.Generator, mask_prob: float = 0.1):
    """Two noisy copies of ``x``: Gaussian jitter of scale ``strength`` plus random zero-masking."""
    if strength < 0:
        raise ConfigurationError("view strength must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    noise = rng.normal(0.0, 1.0, size=(2,) + x.shape) * strength
    mask = rng.random((2,) + x.shape) < mask_prob
    views = np.where(mask, 0.0, x + noise)
    return views[0], views[1]
