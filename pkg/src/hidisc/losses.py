"""Training losses: penalized Busemann alignment, hybrid contrastive, adaptive outlier.

Every loss takes ``grad=False``. With ``grad=True`` it returns ``(value, *grads)``
where the gradients cover each embedding argument and, for the hyperbolic
losses, the curvature (a float). Batch reductions are arithmetic means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from . import geometry as geo
from .errors import ConfigurationError, DomainError, InsufficientBatchError
from .prototypes import PrototypeSet


@dataclass(frozen=True)
class LossWeights:
    """Convex weights of the three loss terms."""

    lambda1: float = 0.60
    lambda2: float = 0.25
    lambda3: float = 0.15

    def __post_init__(self):
        w = (self.lambda1, self.lambda2, self.lambda3)
        if min(w) < 0:
            raise ConfigurationError(f"loss weights must be nonnegative, got {w}")
        if abs(sum(w) - 1.0) > 1e-9:
            raise ConfigurationError(f"loss weights must sum to 1, got {sum(w)!r}")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda1, self.lambda2, self.lambda3)

    def without(self, *terms: int) -> "LossWeights":
        """Drop terms (1-based) and rescale the rest to sum to one."""
        w = [0.0 if i + 1 in terms else v for i, v in enumerate(self.as_tuple())]
        s = sum(w)
        if s <= 0:
            raise ConfigurationError("cannot drop every loss term")
        return LossWeights(*(v / s for v in w))


@dataclass(frozen=True)
class ContrastiveConfig:
    temperature: float = 0.1
    alpha_max: float = 1.0
    total_epochs: int = 50

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError("temperature must be positive")
        if not 0.0 <= self.alpha_max <= 1.0:
            raise ConfigurationError("alpha_max must lie in [0, 1]")
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be positive")

    def alpha(self, epoch: int) -> float:
        """Distance weight of the hybrid similarity, rising linearly with the epoch."""
        return epoch * self.alpha_max / self.total_epochs


@dataclass(frozen=True)
class OutlierMargin:
    gamma: float
    quantile: float = 0.8
    frozen: bool = True


# --- penalized Busemann -------------------------------------------------------


def busemann_loss(z, p, c: float, phi: float, grad: bool = False):
    """Mean of ``log(||z - p||^2 / (1 - c||z||^2)) + phi * log(1 - ||z||^2)``.

    ``p`` holds the (unit-norm) prototype of each row of ``z``.
    """
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    p = np.broadcast_to(np.asarray(p, dtype=np.float64), z.shape)
    diff = z - p
    dd = np.sum(diff * diff, axis=1)
    zz = np.sum(z * z, axis=1)
    inner_c = 1.0 - c * zz
    inner_1 = 1.0 - zz
    if np.any(dd <= 0) or np.any(inner_c <= 0) or np.any(inner_1 <= 0):
        raise DomainError("Busemann loss needs points strictly inside the unit and c-balls, off the prototype")
    n = len(z)
    value = float(np.mean(np.log(dd) - np.log(inner_c) + phi * np.log(inner_1)))
    if not grad:
        return value
    gz = (
        2.0 * diff / dd[:, None]
        + 2.0 * c * z / inner_c[:, None]
        - 2.0 * phi * z / inner_1[:, None]
    ) / n
    gc = float(np.sum(zz / inner_c)) / n
    return value, gz, gc


# --- hybrid similarity --------------------------------------------------------


def hybrid_similarity(z1, z2, c: float, alpha_d: float):
    """``alpha_d * (-distance) + (1 - alpha_d) * cos`` with the cosine taken between log maps."""
    dist = geo.distance(z1, z2, c)
    cos = geo.cosine_similarity(geo.log_map0(z1, c), geo.log_map0(z2, c))
    return alpha_d * (-dist) + (1.0 - alpha_d) * cos


def hybrid_similarity_vjp(z1, z2, c: float, alpha_d: float, g):
    z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64))
    g = np.asarray(g, dtype=np.float64)
    g1, g2, gc = geo.distance_vjp(z1, z2, c, -alpha_d * g)
    v1, v2 = geo.log_map0(z1, c), geo.log_map0(z2, c)
    gv1, gv2 = geo.cosine_similarity_vjp(v1, v2, (1.0 - alpha_d) * g)
    h1, gc1 = geo.log_map0_vjp(z1, c, gv1)
    h2, gc2 = geo.log_map0_vjp(z2, c, gv2)
    return g1 + h1, g2 + h2, gc + gc1 + gc2


# --- two-view InfoNCE ---------------------------------------------------------


def _info_nce(sim, sim_vjp, z1, z2, tau, grad):
    """Shared softmax core of both contrastive losses.

    Anchor ``z1[i]``; positive ``z2[i]``; negatives are ``z1[j]`` for ``j != i``.
    The positive also sits in the denominator, so the loss is nonnegative.
    """
    z1 = np.asarray(z1, dtype=np.float64)
    z2 = np.asarray(z2, dtype=np.float64)
    B = len(z1)
    if B < 2:
        raise InsufficientBatchError("contrastive loss needs at least two samples per batch")
    if z2.shape != z1.shape:
        raise ConfigurationError("both views must have the same shape")
    a = np.broadcast_to(z1[:, None, :], (B, B, z1.shape[1]))
    b = np.broadcast_to(z1[None, :, :], (B, B, z1.shape[1]))
    S = sim(a, b)
    pos = sim(z2, z1)
    diag = np.arange(B)
    logits = S / tau
    logits[diag, diag] = pos / tau
    value = float(np.mean(logsumexp(logits, axis=1) - pos / tau))
    if not grad:
        return value
    dlogits = (softmax(logits, axis=1) - np.eye(B)) / (B * tau)
    dpos = dlogits[diag, diag].copy()
    dlogits[diag, diag] = 0.0
    ga, gb, *gc_s = sim_vjp(a, b, dlogits)
    g2, g1, *gc_p = sim_vjp(z2, z1, dpos)
    gz1 = ga.sum(axis=1) + gb.sum(axis=0) + g1
    return (value, gz1, g2, *(x + y for x, y in zip(gc_s, gc_p)))


def contrastive_loss_at(z1, z2, c: float, alpha_d: float, tau: float, grad: bool = False):
    """Hybrid hyperbolic contrastive loss for a fixed distance weight ``alpha_d``.

    With ``grad=True`` returns ``(value, grad_z1, grad_z2, grad_c)``.
    """
    sim = lambda u, v: hybrid_similarity(u, v, c, alpha_d)  # noqa: E731
    sim_vjp = lambda u, v, g: hybrid_similarity_vjp(u, v, c, alpha_d, g)  # noqa: E731
    return _info_nce(sim, sim_vjp, z1, z2, tau, grad)


def contrastive_loss(z1, z2, c: float, cfg: ContrastiveConfig, epoch: int, grad: bool = False):
    return contrastive_loss_at(z1, z2, c, cfg.alpha(epoch), cfg.temperature, grad)


# --- adaptive outlier margin and loss ------------------------------------------


def nearest_rank_quantile(values, q: float) -> float:
    """Value at 1-based rank ``ceil(q * n)`` of the ascending sort."""
    v = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if v.size == 0:
        raise ConfigurationError("quantile of an empty set")
    if not 0.0 < q < 1.0:
        raise ConfigurationError(f"quantile must lie in (0, 1), got {q}")
    # round() absorbs float noise such as 0.7 * 10 = 7.000000000000001
    rank = max(1, math.ceil(round(q * v.size, 9)))
    return float(v[rank - 1])


def _prototype_matrix(ps) -> np.ndarray:
    return ps.prototypes if isinstance(ps, PrototypeSet) else np.asarray(ps, dtype=np.float64)


def prototype_distances(z, ps, c: float) -> np.ndarray:
    """Geodesic distance from each row of ``z`` to every prototype pulled inside the ball."""
    P = geo.ball_radius(c) * _prototype_matrix(ps)
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return geo.distance(z[:, None, :], P[None, :, :], c)


def compute_margin(points, ps, c: float, quantile: float = 0.8) -> OutlierMargin:
    """Margin = quantile of the per-point minimum prototype distance. Frozen on return."""
    points = np.asarray(points, dtype=np.float64)
    if points.size == 0:
        raise ConfigurationError("cannot compute a margin from an empty set")
    dmin = prototype_distances(points, ps, c).min(axis=1)
    return OutlierMargin(nearest_rank_quantile(dmin, quantile), quantile, True)


def outlier_loss(z_mix, ps, c: float, margin: OutlierMargin, grad: bool = False):
    """Mean hinge ``max(0, gamma - min_k d(z_mix, p_k))`` over the mixed points.

    With ``grad=True`` returns ``(value, grad_z_mix, grad_c)``.
    """
    if not margin.frozen:
        raise ConfigurationError("outlier margin must be frozen before use")
    z_mix = np.asarray(z_mix, dtype=np.float64)
    if z_mix.size == 0:
        return (0.0, np.zeros_like(z_mix), 0.0) if grad else 0.0
    z_mix = np.atleast_2d(z_mix)
    P = _prototype_matrix(ps)
    R = geo.ball_radius(c)
    D = prototype_distances(z_mix, P, c)
    n = len(z_mix)
    k = np.argmin(D, axis=1)
    hinge = margin.gamma - D[np.arange(n), k]
    value = float(np.mean(np.maximum(hinge, 0.0)))
    if not grad:
        return value
    up = np.where(hinge > 0, -1.0 / n, 0.0)
    Pk = P[k]
    gz, gp, gc = geo.distance_vjp(z_mix, R * Pk, c, up)
    gc += float(np.sum(gp * Pk)) * (-R / (2.0 * c))
    return value, gz, gc


def total_loss(components, weights: LossWeights = LossWeights()) -> float:
    l1, l2, l3 = components
    w1, w2, w3 = weights.as_tuple()
    return w1 * l1 + w2 * l2 + w3 * l3


# --- Euclidean analogues (ablation only) ---------------------------------------


def class_means(z, labels):
    """Per-class means of ``z``.

    Returns ``(means, classes, y_idx, A)`` where ``A`` is the averaging matrix,
    ``means == A @ z``, so mean gradients pull back as ``A.T @ g``.
    """
    z = np.asarray(z, dtype=np.float64)
    classes, y_idx = np.unique(np.asarray(labels), return_inverse=True)
    A = np.zeros((len(classes), len(z)))
    A[y_idx, np.arange(len(z))] = 1.0
    A /= A.sum(axis=1, keepdims=True)
    return A @ z, classes, y_idx, A


def euclidean_prototype_loss(z, y_idx, means, grad: bool = False):
    """Softmax over ``-||z - mu_j||^2``; returns ``(value, grad_z, grad_means)`` with ``grad``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    means = np.asarray(means, dtype=np.float64)
    y_idx = np.asarray(y_idx)
    n = len(z)
    diff = z[:, None, :] - means[None, :, :]
    dsq = np.sum(diff * diff, axis=2)
    rows = np.arange(n)
    value = float(np.mean(dsq[rows, y_idx] + logsumexp(-dsq, axis=1)))
    if not grad:
        return value
    w = -softmax(-dsq, axis=1)
    w[rows, y_idx] += 1.0
    w /= n
    gdiff = 2.0 * w[:, :, None] * diff
    return value, gdiff.sum(axis=1), -gdiff.sum(axis=0)


def euclidean_contrastive_loss(z1, z2, tau: float, grad: bool = False):
    """Two-view InfoNCE on l2-normalized embeddings."""

    def sim_vjp(u, v, g):
        return geo.cosine_similarity_vjp(u, v, g)

    return _info_nce(geo.cosine_similarity, sim_vjp, z1, z2, tau, grad)


def euclidean_margin(points, means, quantile: float = 0.8) -> OutlierMargin:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.size == 0:
        raise ConfigurationError("cannot compute a margin from an empty set")
    D = np.linalg.norm(points[:, None, :] - np.asarray(means)[None, :, :], axis=2)
    return OutlierMargin(nearest_rank_quantile(D.min(axis=1), quantile), quantile, True)


def euclidean_outlier_loss(z_mix, means, margin: OutlierMargin, grad: bool = False):
    """Hinge on the l2 distance to the nearest class mean."""
    z_mix = np.asarray(z_mix, dtype=np.float64)
    means = np.asarray(means, dtype=np.float64)
    if z_mix.size == 0:
        return (0.0, np.zeros_like(z_mix), np.zeros_like(means)) if grad else 0.0
    z_mix = np.atleast_2d(z_mix)
    n = len(z_mix)
    diff = z_mix[:, None, :] - means[None, :, :]
    D = np.linalg.norm(diff, axis=2)
    k = np.argmin(D, axis=1)
    rows = np.arange(n)
    hinge = margin.gamma - D[rows, k]
    value = float(np.mean(np.maximum(hinge, 0.0)))
    if not grad:
        return value
    dk = D[rows, k]
    scale = np.where((hinge > 0) & (dk > 0), -1.0 / (n * np.where(dk > 0, dk, 1.0)), 0.0)
    gz = scale[:, None] * diff[rows, k]
    gmeans = np.zeros_like(means)
    np.add.at(gmeans, k, -gz)
    return value, gz, gmeans
