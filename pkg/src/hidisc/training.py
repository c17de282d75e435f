"""Training loop: views, mixing, margin freezing, the three losses, and optimization."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields, replace
from datetime import datetime, timezone

import numpy as np

from . import losses as L
from .data import FeatureDataset
from .errors import ConfigurationError, DomainError, NonFiniteGradientError
from .mixing import euclidean_cutmix, sample_pairs, tangent_cutmix, tangent_cutmix_vjp
from .model import SGD, Encoder, ProjectionHead, make_views
from .prototypes import PrototypeSet, place_prototypes

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lambda1: float = 0.60
    lambda2: float = 0.25
    lambda3: float = 0.15
    phi: float = 0.75
    radius: float = 1.0
    quantile: float = 0.8
    temperature: float = 0.1
    alpha_max: float = 1.0
    view_strength: float = 0.1
    mask_prob: float = 0.1
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-5
    init_curvature: float = 0.05
    learn_curvature: bool = True
    hidden1: int = 512
    hidden2: int = 128
    embed_dim: int = 32
    prototype_steps: int = 1000
    geometry: str = "hyperbolic"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be nonnegative")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2")
        if self.radius <= 0:
            raise ConfigurationError("radius must be positive")
        if not 0 <= self.phi < 1:
            raise ConfigurationError("phi must lie in [0, 1)")
        if not 0 < self.quantile < 1:
            raise ConfigurationError("quantile must lie in (0, 1)")
        if self.geometry not in ("hyperbolic", "euclidean"):
            raise ConfigurationError(f"unknown geometry {self.geometry!r}")
        if not 1e-6 <= self.init_curvature <= 10:
            raise ConfigurationError("init_curvature must lie in [1e-6, 10]")
        self.weights  # validates the loss weights
        self.contrastive

    @property
    def weights(self) -> L.LossWeights:
        return L.LossWeights(self.lambda1, self.lambda2, self.lambda3)

    @property
    def contrastive(self) -> L.ContrastiveConfig:
        return L.ContrastiveConfig(self.temperature, self.alpha_max, max(self.epochs, 1))

    def without_terms(self, *terms: int) -> "TrainConfig":
        """Copy with loss terms (1 = Busemann, 2 = contrastive, 3 = outlier) removed."""
        w = self.weights.without(*terms)
        return replace(self, lambda1=w.lambda1, lambda2=w.lambda2, lambda3=w.lambda3)

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def alpha_schedule(epoch: int, cfg: TrainConfig) -> float:
    """Distance weight of the hybrid similarity at ``epoch`` (0-based)."""
    if not 0 <= epoch <= max(cfg.epochs, 1):
        raise ConfigurationError(f"epoch {epoch} outside [0, {cfg.epochs}]")
    return cfg.contrastive.alpha(epoch)


# --- per-batch objective ----------------------------------------------------------


@dataclass
class BatchResult:
    total: float
    components: tuple
    head_grads: list
    grad_c: float
    margin: L.OutlierMargin


def batch_objective(
    encoder: Encoder,
    prototypes: PrototypeSet,
    x1,
    x2,
    labels,
    pairs,
    cfg: TrainConfig,
    alpha: float,
    margin: L.OutlierMargin | None = None,
    grad: bool = True,
) -> BatchResult:
    """Weighted loss of one batch and its gradient for every head parameter and ``c``.

    ``pairs`` is ``(i, j, lam)`` from :func:`hidisc.mixing.sample_pairs`; mixes are
    built from the first view. If ``margin`` is None it is computed here from the
    mixed points (or from the first view when there are none). With
    ``grad=False`` only the loss values are computed.
    """
    if encoder.hyperbolic:
        return _hyperbolic_objective(encoder, prototypes, x1, x2, labels, pairs, cfg, alpha, margin, grad)
    return _euclidean_objective(encoder, x1, x2, labels, pairs, cfg, margin, grad)


def _finish(encoder, cfg, c1, c2, comps, g1, g2, gc_loss, margin):
    total = L.total_loss(comps, cfg.weights)
    hg1, gc1 = encoder.backward(c1, g1)
    hg2, gc2 = encoder.backward(c2, g2)
    head_grads = [a + b for a, b in zip(hg1, hg2)]
    return BatchResult(total, tuple(comps), head_grads, gc_loss + gc1 + gc2, margin)


def _hyperbolic_objective(encoder, ps, x1, x2, labels, pairs, cfg, alpha, margin, grad=True):
    w1, w2, w3 = cfg.weights.as_tuple()
    c = encoder.c
    Z1, c1 = encoder.forward(x1)
    Z2, c2 = encoder.forward(x2)
    B = len(Z1)
    P = ps.rows_for(labels)
    i, j, lam = pairs
    Zm = tangent_cutmix(Z1[i], Z1[j], lam, c) if len(i) else np.zeros((0, Z1.shape[1]))
    if margin is None:
        margin = L.compute_margin(Zm if len(Zm) else Z1, ps, c, cfg.quantile)
    if not grad:
        comps = (
            L.busemann_loss(np.concatenate([Z1, Z2]), np.concatenate([P, P]), c, cfg.phi),
            L.contrastive_loss_at(Z1, Z2, c, alpha, cfg.temperature),
            L.outlier_loss(Zm, ps, c, margin),
        )
        return BatchResult(L.total_loss(comps, cfg.weights), comps, None, 0.0, margin)

    lb, gb, gcb = L.busemann_loss(np.concatenate([Z1, Z2]), np.concatenate([P, P]), c, cfg.phi, grad=True)
    lu, gu1, gu2, gcu = L.contrastive_loss_at(Z1, Z2, c, alpha, cfg.temperature, grad=True)
    lo, gm, gco = L.outlier_loss(Zm, ps, c, margin, grad=True)

    g1 = w1 * gb[:B] + w2 * gu1
    g2 = w1 * gb[B:] + w2 * gu2
    gc = w1 * gcb + w2 * gcu + w3 * gco
    if len(i):
        gi, gj, gcm = tangent_cutmix_vjp(Z1[i], Z1[j], lam, c, w3 * gm)
        np.add.at(g1, i, gi)
        np.add.at(g1, j, gj)
        gc += gcm
    return _finish(encoder, cfg, c1, c2, (lb, lu, lo), g1, g2, gc, margin)


def _euclidean_objective(encoder, x1, x2, labels, pairs, cfg, margin, grad=True):
    w1, w2, w3 = cfg.weights.as_tuple()
    Z1, c1 = encoder.forward(x1)
    Z2, c2 = encoder.forward(x2)
    B = len(Z1)
    Z = np.concatenate([Z1, Z2])
    means, _, y_idx, A = L.class_means(Z, np.concatenate([labels, labels]))
    i, j, lam = pairs
    Zm = euclidean_cutmix(Z1[i], Z1[j], lam) if len(i) else np.zeros((0, Z1.shape[1]))
    if margin is None:
        margin = L.euclidean_margin(Zm if len(Zm) else Z1, means, cfg.quantile)
    if not grad:
        comps = (
            L.euclidean_prototype_loss(Z, y_idx, means),
            L.euclidean_contrastive_loss(Z1, Z2, cfg.temperature),
            L.euclidean_outlier_loss(Zm, means, margin),
        )
        return BatchResult(L.total_loss(comps, cfg.weights), comps, None, 0.0, margin)

    lb, gb, gmb = L.euclidean_prototype_loss(Z, y_idx, means, grad=True)
    lu, gu1, gu2 = L.euclidean_contrastive_loss(Z1, Z2, cfg.temperature, grad=True)
    lo, gm, gmo = L.euclidean_outlier_loss(Zm, means, margin, grad=True)

    gZ = w1 * gb + A.T @ (w1 * gmb + w3 * gmo)
    g1 = gZ[:B] + w2 * gu1
    g2 = gZ[B:] + w2 * gu2
    if len(i):
        np.add.at(g1, i, w3 * lam[:, None] * gm)
        np.add.at(g1, j, w3 * (1.0 - lam)[:, None] * gm)
    return _finish(encoder, cfg, c1, c2, (lb, lu, lo), g1, g2, 0.0, margin)


# --- log -----------------------------------------------------------------------------

LOG_FIELDS = ("epoch", "l_buse", "l_u", "l_out", "total", "c", "alpha", "lr", "batches", "skipped")


@dataclass
class EpochRecord:
    epoch: int
    l_buse: float
    l_u: float
    l_out: float
    total: float
    c: float
    alpha: float
    lr: float
    batches: int
    skipped: int

    def to_line(self) -> str:
        parts = []
        for name in LOG_FIELDS:
            v = getattr(self, name)
            parts.append(f"{name}={v:.17g}" if isinstance(v, float) else f"{name}={v}")
        return " ".join(parts)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    gamma: float | None = None

    def __len__(self) -> int:
        return len(self.records)

    def to_text(self, timestamp: str | None = None) -> str:
        ts = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
        gamma = "none" if self.gamma is None else f"{self.gamma:.17g}"
        lines = [f"# hidisc train log {ts}", f"gamma={gamma}"]
        lines += [r.to_line() for r in self.records]
        return "\n".join(lines) + "\n"


@dataclass
class TrainResult:
    encoder: Encoder
    prototypes: PrototypeSet
    log: TrainLog
    optimizer: SGD
    rng: np.random.Generator
    margin: L.OutlierMargin | None = None


# --- loop ------------------------------------------------------------------------------


def _batches(n, size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, size):
        idx = perm[start : start + size]
        if len(idx) >= 2:
            yield idx


def init_model(dim_in: int, classes, cfg: TrainConfig):
    """Initial encoder, prototypes, optimizer and data rng for a run."""
    rng_init = np.random.default_rng([cfg.seed, 0])
    head = ProjectionHead.init((dim_in, cfg.hidden1, cfg.hidden2, cfg.embed_dim), rng_init)
    encoder = Encoder(head, c=cfg.init_curvature, radius=cfg.radius, geometry=cfg.geometry)
    prototypes = place_prototypes(len(classes), cfg.embed_dim, seed=cfg.seed, class_ids=classes, steps=cfg.prototype_steps)
    opt = SGD(cfg.lr, cfg.momentum, cfg.weight_decay, max(cfg.epochs, 1), cfg.learn_curvature)
    return encoder, prototypes, opt, np.random.default_rng([cfg.seed, 1])


def train(dataset: FeatureDataset, cfg: TrainConfig = TrainConfig()) -> TrainResult:
    """Train an encoder on the known-class rows of ``dataset``.

    Prototypes are placed once, the outlier margin is frozen on the very first
    batch, and every batch runs views -> embeddings -> mixes -> three losses ->
    one SGD step. Batches whose gradient is non-finite are skipped and counted.
    """
    data = dataset.known_only()
    if len(data) == 0:
        raise ConfigurationError("no training rows")
    classes = tuple(sorted(set(data.labels.tolist())))
    if len(classes) < 2:
        raise ConfigurationError("training needs at least two seen classes")
    encoder, prototypes, opt, rng = init_model(data.dim, classes, cfg)
    X, Y = data.features, data.labels
    tlog = TrainLog()
    margin = None
    for epoch in range(cfg.epochs):
        alpha = cfg.contrastive.alpha(epoch)
        sums = np.zeros(4)
        done = skipped = 0
        for idx in _batches(len(X), cfg.batch_size, rng):
            x1, x2 = make_views(X[idx], cfg.view_strength, rng, cfg.mask_prob)
            pairs = sample_pairs(Y[idx], rng)
            try:
                res = batch_objective(encoder, prototypes, x1, x2, Y[idx], pairs, cfg, alpha, margin)
                opt.step(encoder, res.head_grads, res.grad_c, epoch)
            except (NonFiniteGradientError, DomainError) as exc:
                log.warning("epoch %d: skipping batch: %s", epoch, exc)
                skipped += 1
                continue
            if margin is None:
                margin = res.margin
            sums += (*res.components, res.total)
            done += 1
        mean = sums / done if done else np.full(4, np.nan)
        tlog.records.append(
            EpochRecord(epoch, *map(float, mean), float(encoder.c), float(alpha), float(opt.lr(epoch)), done, skipped)
        )
    tlog.gamma = None if margin is None else margin.gamma
    return TrainResult(encoder, prototypes, tlog, opt, rng, margin)
