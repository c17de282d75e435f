"""Fixed ideal prototypes on the boundary of the ball, one per seen class."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Hashable, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigurationError


@dataclass(frozen=True)
class PrototypeSet:
    """Unit-norm class anchors. Immutable once constructed."""

    prototypes: np.ndarray
    class_ids: tuple

    def __post_init__(self):
        P = np.array(self.prototypes, dtype=np.float64)
        if P.ndim != 2 or P.shape[0] != len(self.class_ids):
            raise ConfigurationError("prototype matrix must have one row per class id")
        if len(set(self.class_ids)) != len(self.class_ids):
            raise ConfigurationError("duplicate class ids")
        P.setflags(write=False)
        object.__setattr__(self, "prototypes", P)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))
        object.__setattr__(self, "_index", {k: i for i, k in enumerate(self.class_ids)})

    def __len__(self) -> int:
        return len(self.class_ids)

    @property
    def dim(self) -> int:
        return self.prototypes.shape[1]

    def index_of(self, labels: Sequence[Hashable]) -> np.ndarray:
        try:
            return np.array([self._index[y] for y in labels], dtype=np.intp)
        except KeyError as exc:
            raise KeyError(f"unknown class label {exc.args[0]!r}") from None

    def rows_for(self, labels: Sequence[Hashable]) -> np.ndarray:
        """Prototype row for each label, stacked."""
        return self.prototypes[self.index_of(labels)]


def prototype_for(ps: PrototypeSet, label) -> np.ndarray:
    """Return the prototype of ``label``; raises ``KeyError`` if it is not registered."""
    return ps.prototypes[ps.index_of([label])[0]]


def max_pairwise_cosine(P: np.ndarray) -> float:
    G = P @ P.T
    K = len(P)
    return float(np.max(G[~np.eye(K, dtype=bool)]))


def separation_objective(P: np.ndarray, temperature: float = 10.0):
    """Smoothed max pairwise cosine, ``logsumexp(t * <p_i, p_j>) / t`` over i < j.

    Returns the value and its gradient with respect to ``P``.
    """
    K = len(P)
    iu = np.triu_indices(K, k=1)
    s = temperature * (P @ P.T)[iu]
    value = logsumexp(s) / temperature
    W = np.zeros((K, K))
    W[iu] = softmax(s)
    W = W + W.T
    return value, W @ P


def _normalize_rows(P):
    return P / np.linalg.norm(P, axis=1, keepdims=True)


def optimize_separation(
    P0: np.ndarray,
    steps: int = 1000,
    lr: float = 0.1,
    momentum: float = 0.9,
    temperature: float = 10.0,
    callback: Callable[[int, np.ndarray], None] | None = None,
) -> np.ndarray:
    """Heavy-ball descent on :func:`separation_objective`, renormalizing each step.

    Returns the iterate with the smallest max pairwise cosine, so the result is
    never less separated than ``P0``.
    """
    P = _normalize_rows(np.array(P0, dtype=np.float64))
    best, best_score = P, max_pairwise_cosine(P)
    buf = np.zeros_like(P)
    for step in range(steps):
        _, g = separation_objective(P, temperature)
        buf = momentum * buf + g
        P = _normalize_rows(P - lr * buf)
        if callback is not None:
            callback(step, P)
        score = max_pairwise_cosine(P)
        if score < best_score:
            best, best_score = P, score
    return best


def place_prototypes(
    K: int, d: int, seed: int = 0, class_ids: Sequence[Hashable] | None = None, steps: int = 1000
) -> PrototypeSet:
    """Spread ``K`` unit vectors in ``R^d`` as evenly as possible.

    Random unit initialization from ``seed`` followed by ``steps`` rounds of
    momentum descent (lr 0.1, momentum 0.9) on the smoothed max cosine.
    """
    if d < 2 and K > 2:
        raise ConfigurationError(f"cannot place {K} distinct directions in dimension {d}")
    if K < 2 or d < 1:
        raise ConfigurationError(f"need K >= 2 and d >= 2, got K={K}, d={d}")
    if class_ids is None:
        class_ids = tuple(range(K))
    if len(class_ids) != K:
        raise ConfigurationError("class_ids must have K entries")
    rng = np.random.default_rng(seed)
    P0 = _normalize_rows(rng.standard_normal((K, d)))
    P = optimize_separation(P0, steps=steps)
    return PrototypeSet(P, tuple(class_ids))
