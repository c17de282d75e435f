"""Domain statistics, FID, the domain-diversity score and a feature-space domain simulator."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import expm

from .data import FeatureDataset
from .errors import ConfigurationError, NumericError

PSD_TOL = 1e-8


@dataclass(frozen=True)
class DomainStats:
    """Gaussian summary of a feature distribution."""

    mean: np.ndarray
    covariance: np.ndarray
    count: int

    @classmethod
    def fit(cls, features) -> "DomainStats":
        X = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if len(X) < 2:
            raise ConfigurationError("need at least two samples to fit a covariance")
        return cls(X.mean(axis=0), np.cov(X, rowvar=False, ddof=1).reshape(X.shape[1], X.shape[1]), len(X))


def _psd_sqrt(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    if w.min() < -PSD_TOL * max(1.0, abs(w).max()):
        raise NumericError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def fid(a: DomainStats, b: DomainStats) -> float:
    """``||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``.

    The cross term uses the symmetric form ``Tr((S_a^(1/2) S_b S_a^(1/2))^(1/2))``.
    """
    dmu = a.mean - b.mean
    ra = _psd_sqrt(a.covariance)
    w = np.linalg.eigvalsh(0.5 * ((ra @ b.covariance @ ra) + (ra @ b.covariance @ ra).T))
    cross = np.sum(np.sqrt(np.clip(w, 0.0, None)))
    value = float(dmu @ dmu + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * cross)
    if value < 0.0:
        if value < -1e-6:
            raise NumericError(f"negative FID {value}")
        value = 0.0
    return value


@dataclass
class DomainScoreTable:
    names: list
    scores: np.ndarray
    source_fid: np.ndarray
    pair_fid: np.ndarray
    fallback: bool = False

    def ranking(self) -> list:
        order = sorted(range(len(self.names)), key=lambda i: (-self.scores[i], self.names[i]))
        return [self.names[i] for i in order]

    def to_text(self) -> str:
        lines = [f"domains: {len(self.names)}", f"fallback: {str(self.fallback).lower()}"]
        for name, s, f in zip(self.names, self.scores, self.source_fid):
            lines.append(f"score[{name}]: {s:.10g}  source_fid: {f:.10g}")
        for i, a in enumerate(self.names):
            for j in range(i + 1, len(self.names)):
                lines.append(f"pair_fid[{a},{self.names[j]}]: {self.pair_fid[i, j]:.10g}")
        return "\n".join(lines) + "\n"


def score_from_fids(source_fid, pair_fid, names: Sequence | None = None) -> DomainScoreTable:
    """Diversity scores from precomputed FIDs.

    ``Score(s) = 1/(M-1) * sum_{l != s} [FID(source, s) + FID(s, l)]``. With fewer
    than two synthetic domains the score falls back to ``FID(source, s)``.
    """
    source_fid = np.asarray(source_fid, dtype=np.float64)
    pair_fid = np.asarray(pair_fid, dtype=np.float64)
    M = len(source_fid)
    if pair_fid.shape != (M, M):
        raise ConfigurationError("pair FID matrix must be M x M")
    if not np.allclose(pair_fid, pair_fid.T) or np.any(np.diag(pair_fid) != 0):
        raise ConfigurationError("pair FID matrix must be symmetric with zero diagonal")
    names = list(range(M)) if names is None else list(names)
    if M < 2:
        warnings.warn("fewer than two synthetic domains: ranking by source FID only", stacklevel=2)
        return DomainScoreTable(names, source_fid.copy(), source_fid, pair_fid, fallback=True)
    scores = np.empty(M)
    for s in range(M):
        total = 0.0
        for l in range(M):
            if l != s:
                total += source_fid[s] + pair_fid[s, l]
        scores[s] = total / (M - 1)
    return DomainScoreTable(names, scores, source_fid, pair_fid)


def diversity_score(source: DomainStats, synths: Sequence[DomainStats], names: Sequence | None = None) -> DomainScoreTable:
    M = len(synths)
    src = np.array([fid(source, s) for s in synths])
    pair = np.zeros((M, M))
    for i in range(M):
        for j in range(i + 1, M):
            pair[i, j] = pair[j, i] = fid(synths[i], synths[j])
    return score_from_fids(src, pair, names)


def select_top_domains(table: DomainScoreTable, k: int) -> list:
    """The ``k`` highest-scoring domains; equal scores are ordered by domain id."""
    if k > len(table.names):
        raise ConfigurationError(f"asked for {k} domains out of {len(table.names)}")
    return table.ranking()[:k]


# --- simulator -----------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Class structure of a simulated dataset.

    Class means are leaves of a random binary tree reached by a random walk from
    the origin; step length shrinks by ``depth_decay`` per level, so classes
    sharing a branch end up close together.
    """

    n_classes: int = 7
    dim: int = 16
    n_per_class: int = 60
    class_spread: float = 4.0
    depth_decay: float = 0.6
    noise: float = 1.0
    n_known: int | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigurationError(f"invalid dimension {self.dim}")
        if self.n_classes < 2:
            raise ConfigurationError("need at least two classes")
        if self.n_per_class < 1:
            raise ConfigurationError("need at least one sample per class")
        if self.n_known is not None and not 1 <= self.n_known <= self.n_classes:
            raise ConfigurationError("n_known must lie in [1, n_classes]")

    @property
    def known_count(self) -> int:
        return self.n_known if self.n_known is not None else (self.n_classes + 1) // 2


@dataclass(frozen=True)
class DomainShift:
    """Magnitudes of the per-domain affine perturbation.

    ``rotation`` is the angle scale of a random rotation, ``bias`` the norm of
    the offset, ``scale`` the log-std of per-axis rescaling and ``jitter`` the
    std of extra per-domain noise.
    """

    rotation: float = 0.3
    bias: float = 1.0
    scale: float = 0.3
    jitter: float = 0.3

    def is_zero(self) -> bool:
        return self.rotation == self.bias == self.scale == self.jitter == 0


def _tree_means(K, d, spread, decay, rng):
    means = np.zeros((K, d))

    def walk(classes, pos, depth):
        if len(classes) == 1:
            means[classes[0]] = pos
            return
        cut = int(rng.integers(1, len(classes)))
        step = spread * decay**depth / np.sqrt(d)
        walk(classes[:cut], pos + step * rng.standard_normal(d), depth + 1)
        walk(classes[cut:], pos + step * rng.standard_normal(d), depth + 1)

    order = rng.permutation(K).tolist()
    walk(order, np.zeros(d), 0)
    return means


def _random_rotation(d, angle, rng):
    G = rng.standard_normal((d, d))
    S = (G - G.T) / np.sqrt(2.0 * d)
    return expm(angle * S)


def simulate_domains(spec: SyntheticSpec, n_domains: int, shift: DomainShift = DomainShift(), seed: int = 0) -> FeatureDataset:
    """Simulated multi-domain dataset.

    One set of base samples is drawn per class; domain ``d0`` is that base set and
    every other domain renders the same samples through its own random rotation,
    per-axis scale, offset and extra noise. Labels are ``c0..c{K-1}``; a random
    ``spec.known_count`` of them are marked known.
    """
    if n_domains < 1:
        raise ConfigurationError("need at least one domain")
    rng = np.random.default_rng(seed)
    K, d = spec.n_classes, spec.dim
    means = _tree_means(K, d, spec.class_spread, spec.depth_decay, rng)
    y = np.repeat(np.arange(K), spec.n_per_class)
    base = means[y] + spec.noise * rng.standard_normal((len(y), d))
    known = sorted(rng.choice(K, size=spec.known_count, replace=False).tolist())

    feats, doms = [base], [np.full(len(y), "d0")]
    for k in range(1, n_domains):
        Q = _random_rotation(d, shift.rotation, rng)
        scale = np.exp(shift.scale * rng.standard_normal(d))
        u = rng.standard_normal(d)
        bias = shift.bias * u / np.linalg.norm(u)
        jitter = shift.jitter * rng.standard_normal(base.shape)
        feats.append((base @ Q.T) * scale + bias + jitter)
        doms.append(np.full(len(y), f"d{k}"))
    labels = np.array([f"c{i}" for i in y])
    return FeatureDataset(
        np.concatenate(doms),
        np.tile(labels, n_domains),
        np.concatenate(feats),
        tuple(f"c{i}" for i in known),
    )
