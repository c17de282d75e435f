"""Tangent CutMix: pseudo-novel embeddings mixed in the tangent space at the origin."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo


def tangent_cutmix(z_i, z_j, lam, c: float) -> np.ndarray:
    """``exp0(lam * log0(z_i) + (1 - lam) * log0(z_j))``; ``lam`` may be per-row."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim:
        lam = lam[..., None]
    v = lam * geo.log_map0(z_i, c) + (1.0 - lam) * geo.log_map0(z_j, c)
    return geo.exp_map0(v, c)


def tangent_cutmix_vjp(z_i, z_j, lam, c: float, g):
    """Returns ``(grad_z_i, grad_z_j, grad_c)``; ``lam`` is not differentiated."""
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim:
        lam = lam[..., None]
    vi, vj = geo.log_map0(z_i, c), geo.log_map0(z_j, c)
    gv, gc = geo.exp_map0_vjp(lam * vi + (1.0 - lam) * vj, c, g)
    gi, gci = geo.log_map0_vjp(z_i, c, lam * gv)
    gj, gcj = geo.log_map0_vjp(z_j, c, (1.0 - lam) * gv)
    return gi, gj, gc + gci + gcj


def euclidean_cutmix(z_i, z_j, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim:
        lam = lam[..., None]
    return lam * np.asarray(z_i) + (1.0 - lam) * np.asarray(z_j)


@dataclass
class MixedBatch:
    """Mixed points with the ``(i, j, lam)`` parent records that produced them."""

    points: np.ndarray
    parent_i: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    parent_j: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self) -> int:
        return len(self.parent_i)

    @property
    def parent_pairs(self) -> list[tuple[int, int, float]]:
        return [(int(i), int(j), float(l)) for i, j, l in zip(self.parent_i, self.parent_j, self.lam)]


def sample_pairs(labels, rng: np.random.Generator):
    """Pair every index with a uniformly drawn partner of a different label.

    Indices whose label covers the whole batch have no partner and are skipped.
    Returns ``(i, j, lam)`` arrays with ``lam ~ Uniform(0, 1)``.
    """
    labels = np.asarray(labels)
    n = len(labels)
    anchors, partners = [], []
    for i in range(n):
        candidates = np.flatnonzero(labels != labels[i])
        if candidates.size == 0:
            continue
        anchors.append(i)
        partners.append(candidates[rng.integers(candidates.size)])
    i = np.asarray(anchors, dtype=np.intp)
    j = np.asarray(partners, dtype=np.intp)
    lam = rng.uniform(0.0, 1.0, size=len(i))
    return i, j, lam


def sample_mixed_batch(z, labels, c: float, rng: np.random.Generator, euclidean: bool = False) -> MixedBatch:
    """Up to ``len(z)`` mixes from label-mismatched pairs. Deterministic given ``rng``."""
    z = np.asarray(z, dtype=np.float64)
    i, j, lam = sample_pairs(labels, rng)
    if len(i) == 0:
        return MixedBatch(np.zeros((0, z.shape[1])))
    if euclidean:
        pts = euclidean_cutmix(z[i], z[j], lam)
    else:
        pts = tangent_cutmix(z[i], z[j], lam, c)
    return MixedBatch(pts, i, j, lam)
