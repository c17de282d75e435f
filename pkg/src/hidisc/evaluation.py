"""Test-time protocol: clustering, K estimation, Hungarian-matched accuracy, diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import geometry as geo
from .errors import ConfigurationError, InvalidInputError

SWEEP_LIMIT = 64


class DegenerateFeaturesWarning(UserWarning):
    """All feature rows are identical, so cluster structure is undefined."""


# --- k-means ---------------------------------------------------------------------


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float
    n_iter: int = 0
    inertia_history: list = field(default_factory=list)


def _sq_dists(X, C):
    return np.maximum((X * X).sum(1)[:, None] - 2.0 * X @ C.T + (C * C).sum(1)[None, :], 0.0)


def _kmeans_pp(X, K, rng):
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(1)
    for _ in range(1, K):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers.append(X[idx])
        d2 = np.minimum(d2, ((X - X[idx]) ** 2).sum(1))
    return np.array(centers)


def _lloyd(X, C, max_iter):
    history = []
    labels = None
    for it in range(max_iter):
        D = _sq_dists(X, C)
        new = np.argmin(D, axis=1)
        history.append(float(D[np.arange(len(X)), new].sum()))
        if labels is not None and np.array_equal(new, labels):
            return labels, C, history, it
        labels = new
        C = C.copy()
        for k in range(len(C)):
            members = labels == k
            if members.any():
                C[k] = X[members].mean(axis=0)
            else:
                # an empty cluster takes over the point worst served by its centroid
                far = int(np.argmax(D[np.arange(len(X)), labels]))
                C[k] = X[far]
    D = _sq_dists(X, C)
    labels = np.argmin(D, axis=1)
    history.append(float(D[np.arange(len(X)), labels].sum()))
    return labels, C, history, max_iter


def kmeans(features, K: int, seed: int = 0, max_iter: int = 300, n_init: int = 1) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeds; keeps the lowest-inertia of ``n_init`` runs."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = len(X)
    if K < 1 or n < K:
        raise ConfigurationError(f"k-means needs 1 <= K <= n, got K={K}, n={n}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        labels, C, hist, it = _lloyd(X, _kmeans_pp(X, K, rng), max_iter)
        res = ClusterAssignment(labels, C, hist[-1], it, hist)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


# --- Hungarian matching -------------------------------------------------------------


def kuhn_munkres(cost) -> np.ndarray:
    """Minimum-cost assignment on a square matrix; ``result[row] = column``. O(n^3)."""
    a = np.asarray(cost, dtype=np.float64)
    n, m = a.shape
    if n != m:
        raise InvalidInputError("cost matrix must be square")
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)  # p[j]: row matched to column j (1-based, 0 = free)
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, INF)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    result = np.empty(n, dtype=np.intp)
    result[p[1:] - 1] = np.arange(n)
    return result


def match_clusters(pred, truth):
    """Cluster -> class mapping maximizing the number of agreeing instances."""
    pred, truth = np.asarray(pred), np.asarray(truth)
    clusters, pi = np.unique(pred, return_inverse=True)
    classes, ti = np.unique(truth, return_inverse=True)
    D = max(len(clusters), len(classes))
    W = np.zeros((D, D))
    np.add.at(W, (pi, ti), 1.0)
    col = kuhn_munkres(W.max() - W)
    mapping = {}
    for r, cl in enumerate(clusters):
        if col[r] < len(classes):
            mapping[cl] = classes[col[r]]
    return mapping


def hungarian_accuracy(pred, truth, old_set: Sequence) -> tuple[float, float, float]:
    """All / Old / New accuracy under one global cluster-to-class matching.

    A subset with no instances gets ``nan``.
    """
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.size == 0 or pred.shape != truth.shape:
        raise InvalidInputError("need two nonempty label arrays of equal length")
    mapping = match_clusters(pred, truth)
    mapped = np.array([mapping.get(p, None) for p in pred.tolist()], dtype=object)
    correct = mapped == truth.astype(object)
    old = np.isin(truth, np.asarray(list(old_set), dtype=truth.dtype)) if len(old_set) else np.zeros(len(truth), bool)

    def frac(mask):
        return float(correct[mask].mean()) if mask.any() else float("nan")

    return float(correct.mean()), frac(old), frac(~old)


def per_class_accuracy(pred, truth) -> dict:
    pred, truth = np.asarray(pred), np.asarray(truth)
    mapping = match_clusters(pred, truth)
    mapped = np.array([mapping.get(p, None) for p in pred.tolist()], dtype=object)
    correct = mapped == truth.astype(object)
    return {str(k): float(correct[truth == k].mean()) for k in np.unique(truth)}


# --- silhouette and K estimation --------------------------------------------------------


def _pairwise(X):
    return np.sqrt(_sq_dists(X, X))


def silhouette(features, labels) -> float:
    """Mean silhouette with Euclidean distances; singleton clusters score 0."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    _, li = np.unique(np.asarray(labels), return_inverse=True)
    K = li.max() + 1 if li.size else 0
    if K < 2:
        raise ConfigurationError("silhouette is undefined for fewer than two clusters")
    D = _pairwise(X)
    np.fill_diagonal(D, 0.0)
    onehot = np.zeros((len(X), K))
    onehot[np.arange(len(X)), li] = 1.0
    sums = D @ onehot
    sizes = onehot.sum(0)
    own = sizes[li]
    a = np.where(own > 1, sums[np.arange(len(X)), li] / np.maximum(own - 1, 1), 0.0)
    mean_other = sums / sizes[None, :]
    mean_other[np.arange(len(X)), li] = np.inf
    b = mean_other.min(axis=1)
    den = np.maximum(a, b)
    s = np.where((own > 1) & (den > 0), (b - a) / np.where(den > 0, den, 1.0), 0.0)
    return float(s.mean())


def octaves(k_min: int, k_max: int) -> list[tuple[int, int]]:
    """Split ``[k_min, k_max]`` into brackets ``[k, 2k]`` (the last one truncated)."""
    out, lo = [], k_min
    while lo < k_max:
        hi = min(2 * lo, k_max)
        out.append((lo, hi))
        lo = hi
    return out or [(k_min, k_max)]


@dataclass
class KEstimate:
    k: int
    scores: dict
    degenerate: bool = False


def estimate_k(
    features,
    k_min: int,
    k_max: int,
    seed: int = 0,
    method: str = "brent",
    n_init: int = 3,
    details: bool = False,
):
    """Cluster count maximizing the silhouette of k-means.

    ``method="brent"`` runs Brent's bounded scalar minimizer over a continuous
    ``k`` (rounded, scores memoized per integer) on every octave ``[k, 2k]`` of
    the range, then climbs from the best score seen to the best neighbouring
    integer. ``method="sweep"`` scores every integer in range
    (at most 64 of them). Ties go to the smaller ``k``.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    n = len(X)
    if k_min < 2 or k_max < k_min:
        raise ConfigurationError(f"need 2 <= k_min <= k_max, got [{k_min}, {k_max}]")
    k_max = min(k_max, n - 1)
    if k_max < k_min:
        raise ConfigurationError(f"only {n} samples; cannot test k >= {k_min}")
    if np.all(X == X[0]):
        warnings.warn("all features identical; returning k_min", DegenerateFeaturesWarning, stacklevel=2)
        res = KEstimate(k_min, {}, degenerate=True)
        return res if details else res.k

    cache: dict[int, float] = {}

    def score(k: int) -> float:
        if k not in cache:
            labels = kmeans(X, k, seed=seed, n_init=n_init).labels
            cache[k] = silhouette(X, labels) if len(np.unique(labels)) > 1 else -1.0
        return cache[k]

    def best_seen() -> int:
        return min(cache, key=lambda k: (-cache[k], k))

    if k_min == k_max:
        score(k_min)
    elif method == "sweep":
        if k_max - k_min + 1 > SWEEP_LIMIT:
            raise ConfigurationError(f"sweep mode is limited to {SWEEP_LIMIT} candidates")
        for k in range(k_min, k_max + 1):
            score(k)
    elif method == "brent":
        def objective(x):
            return -score(int(np.clip(np.floor(x + 0.5), k_min, k_max)))

        # silhouette curves are multimodal in k, so Brent runs once per octave
        for lo, hi in octaves(k_min, k_max):
            if hi - lo <= 1:
                score(lo), score(hi)
            else:
                minimize_scalar(objective, bounds=(lo, hi), method="bounded", options={"xatol": 0.25})
        k = best_seen()
        while True:
            for nb in (k - 1, k + 1):
                if k_min <= nb <= k_max:
                    score(nb)
            nxt = best_seen()
            if nxt == k:
                break
            k = nxt
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    res = KEstimate(best_seen(), dict(sorted(cache.items())))
    return res if details else res.k


# --- diagnostics -----------------------------------------------------------------------


def _unit(X):
    n = np.linalg.norm(X, axis=-1, keepdims=True)
    return np.where(n > 0, X / np.where(n > 0, n, 1.0), 0.0)


def icd_icv(features, labels, domains) -> tuple[float, float]:
    """Inter-class centroid cosine distance and intra-class cross-domain similarity spread."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels, domains = np.asarray(labels), np.asarray(domains)
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ConfigurationError("ICD needs at least two classes")
    cent = np.array([X[labels == k].mean(axis=0) for k in classes])
    iu = np.triu_indices(len(classes), 1)
    icd = float(np.mean(1.0 - geo.cosine_similarity(cent[iu[0]], cent[iu[1]])))
    spreads = []
    for k in classes:
        m = labels == k
        Xk, dk = _unit(X[m]), domains[m]
        if len(Xk) < 2:
            spreads.append(0.0)
            continue
        S = Xk @ Xk.T
        cross = dk[:, None] != dk[None, :]
        iu_k = np.triu_indices(len(Xk), 1)
        vals = S[iu_k][cross[iu_k]]
        spreads.append(float(vals.std()) if vals.size else 0.0)
    return icd, float(np.mean(spreads))


@dataclass
class CrossDomainSimilarity:
    domain_a: str
    domain_b: str
    similarity: dict
    skipped: list


def cross_domain_class_similarity(
    features, labels, domains, space: str = "hyperbolic", c: float = 1.0, domain_pair=None
) -> CrossDomainSimilarity:
    """Per-class cosine between the class means of two domains.

    Euclidean space L2-normalizes the raw features first; hyperbolic space maps
    them onto the ball and compares their log maps at the origin.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels, domains = np.asarray(labels), np.asarray(domains)
    if space == "euclidean":
        R = _unit(X)
    elif space == "hyperbolic":
        R = geo.log_map0(geo.exp_map0(X, c), c)
    else:
        raise ConfigurationError(f"unknown space {space!r}")
    if domain_pair is None:
        ids = sorted(set(domains.tolist()))
        if len(ids) < 2:
            raise ConfigurationError("need two domains")
        domain_pair = (ids[0], ids[1])
    da, db = domain_pair
    sims, skipped = {}, []
    for k in np.unique(labels):
        ma, mb = (labels == k) & (domains == da), (labels == k) & (domains == db)
        if not ma.any() or not mb.any():
            skipped.append(str(k))
            continue
        sims[str(k)] = float(geo.cosine_similarity(R[ma].mean(0), R[mb].mean(0)))
    return CrossDomainSimilarity(str(da), str(db), sims, skipped)


# --- report ---------------------------------------------------------------------------

REPORT_KEYS = (
    "all_acc",
    "old_acc",
    "new_acc",
    "estimated_k",
    "k_source",
    "silhouette",
    "icd",
    "icv",
    "n",
    "n_old",
    "n_new",
)


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else format(v, ".10f")
    return str(v)


@dataclass
class EvalReport:
    all_acc: float
    old_acc: float
    new_acc: float
    estimated_k: int
    k_source: str
    silhouette: float
    icd: float
    icv: float
    n: int
    n_old: int
    n_new: int
    per_class: dict = field(default_factory=dict)

    def to_text(self, timestamp: str | None = None) -> str:
        ts = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
        lines = [f"# hidisc eval report {ts}"]
        lines += [f"{k}: {_fmt(getattr(self, k))}" for k in REPORT_KEYS]
        lines += [f"class_acc[{k}]: {_fmt(v)}" for k, v in sorted(self.per_class.items())]
        return "\n".join(lines) + "\n"


def evaluate_features(
    features,
    labels,
    domains,
    known_classes: Sequence,
    k: int | None = None,
    k_max: int = 1000,
    seed: int = 0,
    method: str = "brent",
    n_init: int = 3,
) -> EvalReport:
    """Cluster tangent-space features and score them against the true labels."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    labels = np.asarray(labels)
    known = [k_ for k_ in known_classes]
    if k is None:
        k_min = max(2, len(known))
        est = estimate_k(X, k_min, max(k_min, k_max), seed=seed, method=method, n_init=n_init)
        k_used, source = est, "estimated"
    else:
        k_used, source = int(k), "given"
    clusters = kmeans(X, k_used, seed=seed, n_init=n_init)
    sil = silhouette(X, clusters.labels) if len(np.unique(clusters.labels)) > 1 else 0.0
    all_acc, old_acc, new_acc = hungarian_accuracy(clusters.labels, labels, known)
    icd, icv = icd_icv(X, labels, domains) if len(np.unique(labels)) > 1 else (0.0, 0.0)
    old_mask = np.isin(labels, known)
    return EvalReport(
        all_acc,
        old_acc,
        new_acc,
        int(k_used),
        source,
        sil,
        icd,
        icv,
        int(len(labels)),
        int(old_mask.sum()),
        int((~old_mask).sum()),
        per_class_accuracy(clusters.labels, labels),
    )
