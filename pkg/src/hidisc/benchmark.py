"""Single-source domain-shift benchmark on simulated features.

Train on domain ``d0`` of a :func:`~hidisc.domains.simulate_domains` draw, embed
the held-out domains with the trained encoder, cluster with the true class count
and score All/Old/New. Used by the directional comparisons (hyperbolic versus
Euclidean geometry, loss-term ablations) in the acceptance suite and the demos.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .domains import DomainShift, SyntheticSpec, simulate_domains
from .evaluation import evaluate_features
from .training import TrainConfig, train

BENCH_SPEC = SyntheticSpec(n_classes=7, dim=16, n_per_class=60)
BENCH_DOMAINS = 3


@dataclass(frozen=True)
class BenchResult:
    seed: int
    label: str
    all_acc: float
    old_acc: float
    new_acc: float
    final_c: float


def run_once(
    cfg: TrainConfig,
    seed: int,
    label: str = "",
    spec: SyntheticSpec = BENCH_SPEC,
    shift: DomainShift = DomainShift(),
    n_domains: int = BENCH_DOMAINS,
) -> BenchResult:
    ds = simulate_domains(spec, n_domains, shift, seed=seed)
    source = ds.select_domains(["d0"])
    target = ds.select_domains([d for d in ds.domain_ids if d != "d0"])
    res = train(source, replace(cfg, seed=seed))
    feats = res.encoder.tangent(target.features)
    rep = evaluate_features(feats, target.labels, target.domains, ds.known_classes, k=spec.n_classes, seed=seed)
    return BenchResult(seed, label, rep.all_acc, rep.old_acc, rep.new_acc, float(res.encoder.c))


def compare(configs: dict, seeds, **kwargs) -> dict:
    """``{label: [BenchResult per seed]}`` for every named config."""
    return {label: [run_once(cfg, s, label, **kwargs) for s in seeds] for label, cfg in configs.items()}


def summary(results: dict, metric: str = "all_acc") -> dict:
    return {label: float(np.mean([getattr(r, metric) for r in rs])) for label, rs in results.items()}


def paired_margin(results: dict, a: str, b: str, metric: str = "all_acc"):
    """Per-seed differences ``a - b``, their mean and standard error."""
    da = np.array([getattr(r, metric) for r in results[a]])
    db = np.array([getattr(r, metric) for r in results[b]])
    diff = da - db
    se = float(diff.std(ddof=1) / np.sqrt(len(diff))) if len(diff) > 1 else float("nan")
    return diff, float(diff.mean()), se


def format_results(results: dict) -> str:
    lines = []
    for label, rs in results.items():
        for r in rs:
            lines.append(
                f"{label} seed={r.seed} all={r.all_acc:.4f} old={r.old_acc:.4f} new={r.new_acc:.4f} c={r.final_c:.3g}"
            )
    for label, rs in results.items():
        m = [np.mean([getattr(r, k) for r in rs]) for k in ("all_acc", "old_acc", "new_acc")]
        lines.append(f"{label} mean all={m[0]:.4f} old={m[1]:.4f} new={m[2]:.4f}")
    return "\n".join(lines) + "\n"
