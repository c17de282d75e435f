"""Finite-difference verification of every analytic gradient in the package.

Each named check draws random inputs, evaluates a scalar function of them and
its analytic gradient, and compares against central differences. The error of
one case is ``||a - f|| / max(||a||, ||f||, 1e-6)`` over the whole gradient
vector (every input concatenated). Curvature inputs use a step relative to
their value so tiny curvatures are not stepped across zero; the end-to-end
checks use a smaller one because the pulled-in prototypes make the objective
sharply curved in ``c``.

The end-to-end checks (a tiny encoder with dims 8-16-8-4 and a batch of four)
have a few hundred parameters, so instead of one difference per coordinate they
compare directional derivatives along random unit directions in parameter space,
plus the exact partial in ``c``. A wrong gradient component shows up in every
direction with probability one.

Clips, hinges and nearest-prototype switches are kinks. A case that fails at
the nominal step is retried once at a step 100x smaller and the retry is
counted in the report; a difference that straddled a kink recovers, a wrong
gradient does not.

Fault injection: ``run_checks(faults={name: fn})`` passes the analytic gradient
tuple of check ``name`` through ``fn`` before comparison, which is how the
tests confirm that a corrupted gradient is caught and named.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import geometry as geo
from . import losses as L
from .mixing import euclidean_cutmix, sample_pairs, tangent_cutmix, tangent_cutmix_vjp
from .training import TrainConfig, batch_objective, init_model

ABS_FLOOR = 1e-6
STEP = 1e-5
STEP_END_TO_END = 1e-4
C_STEP_END_TO_END = 1e-6
END_TO_END_DIRECTIONS = 8
KINK_RETRY = 1e-2
TOL_LOCAL = 1e-4
TOL_END_TO_END = 1e-3
TOL_INVERSE = 1e-6


def rel_error(analytic, numeric, floor: float = ABS_FLOOR) -> float:
    a = np.concatenate([np.ravel(x) for x in analytic])
    f = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.linalg.norm(a - f) / max(np.linalg.norm(a), np.linalg.norm(f), floor))


def central_difference(
    f: Callable, inputs: tuple, step: float = STEP, curvature: tuple = (), c_step: float | None = None
) -> tuple:
    """Numerical gradient of scalar ``f(*inputs)`` with respect to every input.

    Inputs listed in ``curvature`` are positive scalars stepped by ``c_step * value``
    (``c_step`` defaults to ``step``).
    """
    c_step = step if c_step is None else c_step
    inputs = list(inputs)
    out = []
    for k, x in enumerate(inputs):
        if k in curvature:
            h = c_step * x
            lo, hi = list(inputs), list(inputs)
            lo[k], hi[k] = x - h, x + h
            out.append((f(*hi) - f(*lo)) / (2.0 * h))
            continue
        x = np.array(x, dtype=np.float64)
        g = np.zeros_like(x)
        flat, gflat = x.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            inputs[k] = x.copy()
            fp = f(*inputs)
            flat[i] = orig - step
            inputs[k] = x.copy()
            fm = f(*inputs)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        inputs[k] = x
        out.append(g)
    return tuple(out)


@dataclass
class Case:
    f: Callable
    inputs: tuple
    analytic: tuple
    curvature: tuple = ()
    step: float = STEP
    c_step: float | None = None
    directions: int = 0


@dataclass
class CheckResult:
    name: str
    worst: float
    threshold: float
    cases: int
    seconds: float
    kind: str = "gradient"
    retried: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst) and self.worst < self.threshold)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f" kink_retries={self.retried}" if self.retried else ""
        return f"{status} {self.name} worst={self.worst:.3e} tol={self.threshold:.0e} cases={self.cases}{extra}"


# --- random inputs ------------------------------------------------------------------


def _curv(rng) -> float:
    return float(np.exp(rng.uniform(np.log(1e-3), np.log(2.0))))


def _ball(rng, shape, c, frac=0.9, unit=False):
    """Random points with norm up to ``frac`` of the (c- and optionally unit-) ball radius."""
    R = 1.0 / np.sqrt(c)
    if unit:
        R = min(R, 1.0)
    d = rng.standard_normal(shape)
    d /= np.linalg.norm(d, axis=-1, keepdims=True)
    r = frac * R * rng.uniform(0.05, 1.0, size=shape[:-1] + (1,))
    return d * r


def _dim(rng) -> int:
    return int(rng.integers(2, 6))


# --- geometry checks ------------------------------------------------------------------


def _vector_case(op, vjp, inputs, c_index, rng):
    out = op(*inputs)
    w = rng.standard_normal(np.shape(out))
    f = lambda *xs: float(np.sum(w * op(*xs)))  # noqa: E731
    return Case(f, inputs, tuple(vjp(*inputs, w)), (c_index,))


def _exp(rng):
    c, d = _curv(rng), _dim(rng)
    v = rng.standard_normal((3, d))
    v *= rng.uniform(0.05, 2.5) / np.sqrt(c) / np.linalg.norm(v, axis=1, keepdims=True)
    return _vector_case(geo.exp_map0, geo.exp_map0_vjp, (v, c), 1, rng)


def _log(rng):
    c, d = _curv(rng), _dim(rng)
    return _vector_case(geo.log_map0, geo.log_map0_vjp, (_ball(rng, (3, d), c), c), 1, rng)


def _mobius(rng):
    c, d = _curv(rng), _dim(rng)
    a, b = _ball(rng, (3, d), c, 0.7), _ball(rng, (3, d), c, 0.7)
    return _vector_case(geo.mobius_add, geo.mobius_add_vjp, (a, b, c), 2, rng)


def _distance(rng):
    c, d = _curv(rng), _dim(rng)
    a, b = _ball(rng, (3, d), c), _ball(rng, (3, d), c)
    return _vector_case(geo.distance, geo.distance_vjp, (a, b, c), 2, rng)


def _cosine(rng):
    d = _dim(rng)
    u, v = rng.standard_normal((3, d)), rng.standard_normal((3, d))
    out = geo.cosine_similarity(u, v)
    w = rng.standard_normal(out.shape)
    f = lambda a, b: float(np.sum(w * geo.cosine_similarity(a, b)))  # noqa: E731
    return Case(f, (u, v), tuple(geo.cosine_similarity_vjp(u, v, w)))


def _clip_interior(rng):
    c, d = _curv(rng), _dim(rng)
    z = rng.standard_normal((4, d))
    z *= rng.uniform(0.2, 2.0, size=(4, 1)) * geo.interior_radius(c) / np.linalg.norm(z, axis=1, keepdims=True)
    return _vector_case(geo.clip_to_interior, geo.clip_to_interior_vjp, (z, c), 1, rng)


def _cutmix(rng):
    c, d = _curv(rng), _dim(rng)
    zi, zj = _ball(rng, (4, d), c), _ball(rng, (4, d), c)
    lam = rng.uniform(0, 1, size=4)
    out = tangent_cutmix(zi, zj, lam, c)
    w = rng.standard_normal(out.shape)
    f = lambda a, b, cc: float(np.sum(w * tangent_cutmix(a, b, lam, cc)))  # noqa: E731
    return Case(f, (zi, zj, c), tuple(tangent_cutmix_vjp(zi, zj, lam, c, w)), (2,))


# --- loss checks -----------------------------------------------------------------------


def _busemann(rng):
    c, d, n = _curv(rng), _dim(rng), int(rng.integers(1, 6))
    z = _ball(rng, (n, d), c, unit=True)
    p = rng.standard_normal((n, d))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    phi = rng.uniform(0, 0.99)
    f = lambda zz, cc: L.busemann_loss(zz, p, cc, phi)  # noqa: E731
    _, gz, gc = L.busemann_loss(z, p, c, phi, grad=True)
    return Case(f, (z, c), (gz, gc), (1,))


def _contrastive(rng):
    c, d, B = _curv(rng), _dim(rng), int(rng.integers(2, 6))
    z1, z2 = _ball(rng, (B, d), c, unit=True), _ball(rng, (B, d), c, unit=True)
    alpha, tau = rng.uniform(0, 1), rng.uniform(0.1, 1.0)
    f = lambda a, b, cc: L.contrastive_loss_at(a, b, cc, alpha, tau)  # noqa: E731
    _, g1, g2, gc = L.contrastive_loss_at(z1, z2, c, alpha, tau, grad=True)
    return Case(f, (z1, z2, c), (g1, g2, gc), (2,))


def _midpoint_margin(values) -> float:
    """A margin halfway between two sorted values, so no hinge sits on its kink."""
    v = np.sort(np.ravel(values))
    m = len(v) // 2
    return float(0.5 * (v[m - 1] + v[m])) if len(v) > 1 else float(v[0] + 0.5)


def _outlier(rng):
    c, d, n, K = _curv(rng), _dim(rng), int(rng.integers(2, 7)), int(rng.integers(2, 5))
    P = rng.standard_normal((K, d))
    P /= np.linalg.norm(P, axis=1, keepdims=True)
    z = _ball(rng, (n, d), c)
    margin = L.OutlierMargin(_midpoint_margin(L.prototype_distances(z, P, c).min(axis=1)))
    f = lambda zz, cc: L.outlier_loss(zz, P, cc, margin)  # noqa: E731
    _, gz, gc = L.outlier_loss(z, P, c, margin, grad=True)
    return Case(f, (z, c), (gz, gc), (1,))


def _euc_prototype(rng):
    d, n, K = _dim(rng), int(rng.integers(2, 7)), int(rng.integers(2, 4))
    z, means = rng.standard_normal((n, d)), rng.standard_normal((K, d))
    y = rng.integers(0, K, size=n)
    f = lambda zz, mm: L.euclidean_prototype_loss(zz, y, mm)  # noqa: E731
    _, gz, gm = L.euclidean_prototype_loss(z, y, means, grad=True)
    return Case(f, (z, means), (gz, gm))


def _euc_contrastive(rng):
    d, B = _dim(rng), int(rng.integers(2, 6))
    z1, z2 = rng.standard_normal((B, d)), rng.standard_normal((B, d))
    tau = rng.uniform(0.1, 1.0)
    f = lambda a, b: L.euclidean_contrastive_loss(a, b, tau)  # noqa: E731
    _, g1, g2 = L.euclidean_contrastive_loss(z1, z2, tau, grad=True)
    return Case(f, (z1, z2), (g1, g2))


def _euc_outlier(rng):
    d, n, K = _dim(rng), int(rng.integers(2, 7)), int(rng.integers(2, 4))
    z, means = rng.standard_normal((n, d)), rng.standard_normal((K, d))
    D = np.linalg.norm(z[:, None] - means[None], axis=2).min(axis=1)
    margin = L.OutlierMargin(_midpoint_margin(D))
    f = lambda zz, mm: L.euclidean_outlier_loss(zz, mm, margin)  # noqa: E731
    _, gz, gm = L.euclidean_outlier_loss(z, means, margin, grad=True)
    return Case(f, (z, means), (gz, gm))


# --- end to end --------------------------------------------------------------------------


def _end_to_end(geometry):
    def make(rng):
        cfg = TrainConfig(
            hidden1=16, hidden2=8, embed_dim=4, prototype_steps=50, geometry=geometry,
            radius=float(rng.uniform(0.5, 3.0)), init_curvature=_curv(rng),
            seed=int(rng.integers(2**31)), temperature=float(rng.uniform(0.1, 1.0)),
        )
        classes = ("a", "b")
        enc, ps, _, _ = init_model(8, classes, cfg)
        B = 4
        labels = np.array([classes[i % 2] for i in range(B)])
        x1, x2 = rng.standard_normal((B, 8)), rng.standard_normal((B, 8))
        pairs = sample_pairs(labels, rng)
        alpha = float(rng.uniform(0, 1))
        # margin from the initial mixes, nudged off every hinge kink
        i, j, lam = pairs
        Z = enc.embed(x1)
        if enc.hyperbolic:
            dmin = L.prototype_distances(tangent_cutmix(Z[i], Z[j], lam, enc.c), ps, enc.c).min(axis=1)
        else:
            means = L.class_means(np.concatenate([Z, enc.embed(x2)]), np.concatenate([labels, labels]))[0]
            Zm = euclidean_cutmix(Z[i], Z[j], lam)
            dmin = np.linalg.norm(Zm[:, None] - means[None], axis=2).min(axis=1)
        margin = L.OutlierMargin(_midpoint_margin(dmin))
        res = batch_objective(enc, ps, x1, x2, labels, pairs, cfg, alpha, margin)
        params = enc.head.parameters()

        def f(*xs):
            saved = [p.copy() for p in params]
            saved_c = enc.c
            for p, x in zip(params, xs[:-1]):
                p[...] = x
            enc.c = xs[-1]
            try:
                return batch_objective(enc, ps, x1, x2, labels, pairs, cfg, alpha, margin, grad=False).total
            finally:
                for p, s in zip(params, saved):
                    p[...] = s
                enc.c = saved_c

        inputs = tuple(p.copy() for p in params) + (enc.c,)
        analytic = tuple(res.head_grads) + (res.grad_c if enc.hyperbolic else 0.0,)
        return Case(
            f, inputs, analytic, (len(params),), STEP_END_TO_END, C_STEP_END_TO_END, END_TO_END_DIRECTIONS
        )

    return make


GRADIENT_CHECKS: dict[str, tuple[Callable, float]] = {
    "geometry.exp_map0": (_exp, TOL_LOCAL),
    "geometry.log_map0": (_log, TOL_LOCAL),
    "geometry.mobius_add": (_mobius, TOL_LOCAL),
    "geometry.distance": (_distance, TOL_LOCAL),
    "geometry.cosine_similarity": (_cosine, TOL_LOCAL),
    "geometry.clip_to_interior": (_clip_interior, TOL_LOCAL),
    "mixing.tangent_cutmix": (_cutmix, TOL_LOCAL),
    "loss.busemann": (_busemann, TOL_LOCAL),
    "loss.contrastive": (_contrastive, TOL_LOCAL),
    "loss.outlier": (_outlier, TOL_LOCAL),
    "loss.euclidean_prototype": (_euc_prototype, TOL_LOCAL),
    "loss.euclidean_contrastive": (_euc_contrastive, TOL_LOCAL),
    "loss.euclidean_outlier": (_euc_outlier, TOL_LOCAL),
    "end_to_end.hyperbolic": (_end_to_end("hyperbolic"), TOL_END_TO_END),
    "end_to_end.euclidean": (_end_to_end("euclidean"), TOL_END_TO_END),
}

INVERSE_CURVATURES = (1e-6, 0.05, 1.0)


def inverse_map_error(rng, n: int = 1000) -> float:
    """Worst ``||log0(exp0(v)) - v||`` over ``n`` vectors with norm up to 3 at each test curvature."""
    worst = 0.0
    for c in INVERSE_CURVATURES:
        v = rng.standard_normal((n, 8))
        v *= rng.uniform(0, 3, size=(n, 1)) / np.linalg.norm(v, axis=1, keepdims=True)
        back = geo.log_map0(geo.exp_map0(v, c), c)
        worst = max(worst, float(np.max(np.linalg.norm(back - v, axis=1))))
    return worst


def directional_difference(case: Case, analytic: tuple, rng) -> tuple[np.ndarray, np.ndarray]:
    """Analytic and numerical derivatives along ``case.directions`` random directions.

    The non-curvature inputs are treated as one flat vector; each curvature input
    contributes its own exact partial (relative step) as an extra entry.
    """
    free = [k for k in range(len(case.inputs)) if k not in case.curvature]
    shapes = [np.shape(case.inputs[k]) for k in free]
    sizes = [int(np.prod(s)) for s in shapes]
    x0 = np.concatenate([np.ravel(case.inputs[k]) for k in free])
    g0 = np.concatenate([np.ravel(analytic[k]) for k in free])

    def at(x):
        xs = list(case.inputs)
        for k, part, shape in zip(free, np.split(x, np.cumsum(sizes)[:-1]), shapes):
            xs[k] = part.reshape(shape)
        return case.f(*xs)

    a, n = [], []
    for _ in range(case.directions):
        u = rng.standard_normal(x0.size)
        u /= np.linalg.norm(u)
        a.append(g0 @ u)
        n.append((at(x0 + case.step * u) - at(x0 - case.step * u)) / (2.0 * case.step))
    c_step = case.step if case.c_step is None else case.c_step
    for k in case.curvature:
        x = case.inputs[k]
        h = c_step * x
        lo, hi = list(case.inputs), list(case.inputs)
        lo[k], hi[k] = x - h, x + h
        a.append(float(analytic[k]))
        n.append((case.f(*hi) - case.f(*lo)) / (2.0 * h))
    return np.array(a), np.array(n)


def _case_error(case: Case, analytic: tuple, dir_seed: int) -> float:
    if case.directions:
        a, n = directional_difference(case, analytic, np.random.default_rng(dir_seed))
        return rel_error([a], [n])
    numeric = central_difference(case.f, case.inputs, case.step, case.curvature, case.c_step)
    return rel_error(analytic, numeric)


def run_check(name: str, seed: int = 0, cases: int = 100, fault: Callable | None = None) -> CheckResult:
    """Worst error of check ``name`` over ``cases`` random configurations.

    A case that fails at the nominal step is retried once at a step 100x smaller.
    Differences that straddle a kink (clip radius, hinge, nearest-prototype switch)
    recover; a wrong analytic gradient does not. Retries are counted in the result.
    """
    make, tol = GRADIENT_CHECKS[name]
    rng = np.random.default_rng([seed, sum(map(ord, name))])
    t0 = time.perf_counter()
    worst, retried = 0.0, 0
    for _ in range(cases):
        case = make(rng)
        dir_seed = int(rng.integers(2**63))
        analytic = case.analytic if fault is None else fault(case.analytic)
        err = _case_error(case, analytic, dir_seed)
        if not err < tol:
            retried += 1
            fine = replace(case, step=case.step * KINK_RETRY, c_step=(case.c_step or case.step) * KINK_RETRY)
            err = _case_error(fine, analytic, dir_seed)
        worst = max(worst, err) if np.isfinite(err) else np.inf
    return CheckResult(name, worst, tol, cases, time.perf_counter() - t0, retried=retried)


def run_checks(seed: int = 0, cases: int = 100, names=None, faults: dict | None = None) -> list[CheckResult]:
    """Run the named gradient checks (all by default) plus the inverse-map check."""
    faults = faults or {}
    unknown = set(faults) - set(GRADIENT_CHECKS)
    if unknown:
        raise KeyError(f"unknown checks {sorted(unknown)}")
    names = list(GRADIENT_CHECKS) if names is None else list(names)
    results = [run_check(n, seed, cases, faults.get(n)) for n in names]
    t0 = time.perf_counter()
    inv = inverse_map_error(np.random.default_rng([seed, 1]))
    results.append(CheckResult("geometry.inverse_maps", inv, TOL_INVERSE, 1000 * len(INVERSE_CURVATURES),
                               time.perf_counter() - t0, kind="inverse"))
    return results


def format_report(results) -> str:
    lines = [r.line() for r in results]
    failed = sum(not r.passed for r in results)
    lines.append(f"{'FAIL' if failed else 'PASS'} {len(results) - failed}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"


def sign_flip(index: int = 0) -> Callable:
    """Fault that negates one entry of the analytic gradient tuple."""

    def fault(grads):
        out = list(grads)
        out[index] = -np.asarray(out[index])
        return tuple(out)

    return fault
