"""Poincare-ball operations at arbitrary positive curvature.

The ball of curvature ``c`` is ``{z : c * ||z||**2 < 1}``. All functions act on
the last axis and broadcast over leading axes; ``c`` is a scalar.

Every differentiable op ``f`` has a companion ``f_vjp(*inputs, g)`` returning the
vector-Jacobian product of the upstream gradient ``g`` with respect to each input,
the curvature included. The gradient with respect to ``c`` is always summed to a
scalar.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, InvalidInputError

#: Margin kept between clipped points and the ball boundary.
BALL_EPS = 1e-5
#: Range the learnable curvature is clamped to after each update.
C_MIN, C_MAX = 1e-6, 10.0

# below this argument the closed forms lose digits to cancellation
_SERIES_CUTOFF = 1e-3


def _asarray(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("input contains non-finite values")
    return x


def _curvature(c) -> float:
    c = float(c)
    if not np.isfinite(c) or c <= 0.0:
        raise InvalidInputError(f"curvature must be a positive finite number, got {c}")
    return c


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1, keepdims=True))


def _dot(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.sum(x * y, axis=-1, keepdims=True)


def clamp_curvature(c: float) -> float:
    """Clamp a curvature value into ``[C_MIN, C_MAX]``."""
    return float(min(max(c, C_MIN), C_MAX))


def ball_radius(c: float, eps: float = BALL_EPS) -> float:
    return (1.0 - eps) / np.sqrt(_curvature(c))


# --- radial profiles --------------------------------------------------------
# exp and log at the origin are both u -> k(sqrt(c) * ||u||) * u.
# Each profile comes with q(x) = k'(x) / x, which is what the gradients need.


def _sech2(x):
    e = np.exp(-2.0 * np.abs(x))
    return 4.0 * e / (1.0 + e) ** 2


def _tanh_ratio(x):
    small = x < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    x2 = x * x
    series = 1.0 - x2 / 3.0 + 2.0 * x2**2 / 15.0 - 17.0 * x2**3 / 315.0
    return np.where(small, series, np.tanh(xs) / xs)


def _tanh_ratio_q(x):
    small = x < _SERIES_CUTOFF
    xs = np.where(small, 1.0, x)
    x2 = x * x
    series = -2.0 / 3.0 + 8.0 * x2 / 15.0 - 34.0 * x2**2 / 105.0
    return np.where(small, series, (xs * _sech2(xs) - np.tanh(xs)) / xs**3)


def _artanh_ratio(x):
    small = x < _SERIES_CUTOFF
    xs = np.where(small, 0.5, x)
    x2 = x * x
    series = 1.0 + x2 / 3.0 + x2**2 / 5.0 + x2**3 / 7.0
    return np.where(small, series, np.arctanh(xs) / xs)


def _artanh_ratio_q(x):
    small = x < _SERIES_CUTOFF
    xs = np.where(small, 0.5, x)
    x2 = x * x
    series = 2.0 / 3.0 + 4.0 * x2 / 5.0 + 6.0 * x2**2 / 7.0
    return np.where(small, series, (xs / (1.0 - xs * xs) - np.arctanh(xs)) / xs**3)


def _radial(u, c, ratio):
    return ratio(np.sqrt(c) * _norm(u)) * u


def _radial_vjp(u, c, g, ratio, ratio_q):
    n = _norm(u)
    x = np.sqrt(c) * n
    q = ratio_q(x)
    ug = _dot(u, g)
    gu = ratio(x) * g + c * q * ug * u
    gc = float(np.sum(0.5 * n * n * q * ug))
    return gu, gc


# --- clipping ---------------------------------------------------------------


def clip_to_radius(v, r: float) -> np.ndarray:
    """Rescale rows whose norm exceeds ``r`` back onto the sphere of radius ``r``."""
    v = _asarray(v)
    if r <= 0:
        raise InvalidInputError(f"clip radius must be positive, got {r}")
    n = _norm(v)
    scale = np.where(n > r, r / np.where(n > 0, n, 1.0), 1.0)
    return v * scale


def clip_to_radius_vjp(v, r: float, g):
    """Returns ``(grad_v, grad_r)``."""
    v = np.asarray(v, dtype=np.float64)
    n = _norm(v)
    active = n > r
    ns = np.where(active, n, 1.0)
    vg = _dot(v, g)
    gv = np.where(active, (r / ns) * (g - vg * v / ns**2), g)
    gr = float(np.sum(np.where(active, vg / ns, 0.0)))
    return gv, gr


def project(z, c: float, eps: float = BALL_EPS) -> np.ndarray:
    """Pull points back to norm ``(1 - eps) / sqrt(c)`` if they reach past it."""
    return clip_to_radius(z, ball_radius(c, eps))


def project_vjp(z, c: float, g, eps: float = BALL_EPS):
    c = _curvature(c)
    R = ball_radius(c, eps)
    gz, gR = clip_to_radius_vjp(z, R, g)
    return gz, gR * (-R / (2.0 * c))


def interior_radius(c: float, eps: float = BALL_EPS) -> float:
    """Largest norm allowed inside both the c-ball and the unit ball."""
    return min(ball_radius(c, eps), 1.0 - eps)


def clip_to_interior(z, c: float, eps: float = BALL_EPS) -> np.ndarray:
    return clip_to_radius(z, interior_radius(c, eps))


def clip_to_interior_vjp(z, c: float, g, eps: float = BALL_EPS):
    c = _curvature(c)
    R = ball_radius(c, eps)
    if R < 1.0 - eps:
        return project_vjp(z, c, g, eps)
    gz, _ = clip_to_radius_vjp(z, 1.0 - eps, g)
    return gz, 0.0


# --- maps at the origin -----------------------------------------------------


def exp_map0(v, c: float) -> np.ndarray:
    """Map a tangent vector at the origin onto the ball."""
    v = _asarray(v)
    c = _curvature(c)
    return project(_radial(v, c, _tanh_ratio), c)


def exp_map0_vjp(v, c: float, g):
    v = _asarray(v)
    c = _curvature(c)
    y = _radial(v, c, _tanh_ratio)
    gy, gc_proj = project_vjp(y, c, g)
    gv, gc = _radial_vjp(v, c, gy, _tanh_ratio, _tanh_ratio_q)
    return gv, gc + gc_proj


def _check_inside(z, c):
    if np.any(np.sqrt(c) * _norm(z) >= 1.0):
        raise DomainError("point lies on or outside the ball boundary")


def log_map0(z, c: float) -> np.ndarray:
    """Inverse of :func:`exp_map0`."""
    z = _asarray(z)
    c = _curvature(c)
    _check_inside(z, c)
    return _radial(z, c, _artanh_ratio)


def log_map0_vjp(z, c: float, g):
    z = _asarray(z)
    c = _curvature(c)
    _check_inside(z, c)
    return _radial_vjp(z, c, g, _artanh_ratio, _artanh_ratio_q)


# --- Mobius addition and distance -------------------------------------------


def _mobius_terms(a, b, c):
    ab, aa, bb = _dot(a, b), _dot(a, a), _dot(b, b)
    A = 1.0 + 2.0 * c * ab + c * bb
    B = 1.0 - c * aa
    D = 1.0 + 2.0 * c * ab + c * c * aa * bb
    return ab, aa, bb, A, B, D


def _mobius_raw(a, b, c):
    _, _, _, A, B, D = _mobius_terms(a, b, c)
    return (A * a + B * b) / D


def _mobius_raw_vjp(a, b, c, g):
    ab, aa, bb, A, B, D = _mobius_terms(a, b, c)
    N = A * a + B * b
    ga, gb, gN = _dot(g, a), _dot(g, b), _dot(g, N) / D**2
    grad_a = (A * g + 2.0 * c * ga * b - 2.0 * c * gb * a) / D - gN * (
        2.0 * c * b + 2.0 * c * c * bb * a
    )
    grad_b = (B * g + ga * (2.0 * c * a + 2.0 * c * b)) / D - gN * (
        2.0 * c * a + 2.0 * c * c * aa * b
    )
    grad_c = (ga * (2.0 * ab + bb) - gb * aa) / D - gN * (2.0 * ab + 2.0 * c * aa * bb)
    return grad_a, grad_b, float(np.sum(grad_c))


def mobius_add(a, b, c: float) -> np.ndarray:
    """Mobius sum ``a (+)_c b``; results are kept strictly inside the ball."""
    a, b = _asarray(a), _asarray(b)
    c = _curvature(c)
    return project(_mobius_raw(a, b, c), c)


def mobius_add_vjp(a, b, c: float, g):
    a, b = _asarray(a), _asarray(b)
    c = _curvature(c)
    a, b = np.broadcast_arrays(a, b)
    y = _mobius_raw(a, b, c)
    gy, gc_proj = project_vjp(y, c, g)
    ga, gb, gc = _mobius_raw_vjp(a, b, c, gy)
    return ga, gb, gc + gc_proj


def distance(a, b, c: float) -> np.ndarray:
    """Geodesic distance ``(2/sqrt(c)) * artanh(sqrt(c) * ||(-a) (+)_c b||)``."""
    a, b = _asarray(a), _asarray(b)
    c = _curvature(c)
    m = _norm(_mobius_raw(-a, b, c))
    x = np.sqrt(c) * m
    if np.any(x >= 1.0):
        raise DomainError("distance undefined for points on or outside the boundary")
    # 2 * m * artanh(x)/x stays well conditioned as c -> 0
    return (2.0 * m * _artanh_ratio(x))[..., 0]


def distance_vjp(a, b, c: float, g):
    """Gradients of ``sum(g * distance(a, b, c))``.

    At ``a == b`` the distance has a cusp; the gradient there is taken as 0.
    """
    a, b = _asarray(a), _asarray(b)
    c = _curvature(c)
    a, b = np.broadcast_arrays(a, b)
    g = np.asarray(g, dtype=np.float64)[..., None]
    w = _mobius_raw(-a, b, c)
    m = _norm(w)
    x = np.sqrt(c) * m
    if np.any(x >= 1.0):
        raise DomainError("distance undefined for points on or outside the boundary")
    gc_direct = float(np.sum(g * m**3 * _artanh_ratio_q(x)))
    nz = m > 0
    gw = np.where(nz, g * (2.0 / (1.0 - x * x)) * w / np.where(nz, m, 1.0), 0.0)
    gna, gb, gc = _mobius_raw_vjp(-a, b, c, gw)
    return -gna, gb, gc + gc_direct


# --- cosine -----------------------------------------------------------------


def cosine_similarity(u, v) -> np.ndarray:
    """Row-wise cosine similarity; defined as 0 when either vector is zero."""
    u, v = np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64)
    nu, nv = _norm(u), _norm(v)
    ok = (nu > 0) & (nv > 0)
    den = np.where(ok, nu * nv, 1.0)
    return np.where(ok, _dot(u, v) / den, 0.0)[..., 0]


def cosine_similarity_vjp(u, v, g):
    u, v = np.broadcast_arrays(np.asarray(u, dtype=np.float64), np.asarray(v, dtype=np.float64))
    g = np.asarray(g, dtype=np.float64)[..., None]
    nu, nv = _norm(u), _norm(v)
    ok = (nu > 0) & (nv > 0)
    nu_s, nv_s = np.where(ok, nu, 1.0), np.where(ok, nv, 1.0)
    cos = _dot(u, v) / (nu_s * nv_s)
    gu = np.where(ok, g * (v / (nu_s * nv_s) - cos * u / nu_s**2), 0.0)
    gv = np.where(ok, g * (u / (nu_s * nv_s) - cos * v / nv_s**2), 0.0)
    return gu, gv


# --- generic gradient entry point --------------------------------------------

_VJPS = {
    mobius_add: mobius_add_vjp,
    distance: distance_vjp,
    exp_map0: exp_map0_vjp,
    log_map0: log_map0_vjp,
    clip_to_radius: clip_to_radius_vjp,
    project: project_vjp,
}


def grad(op, *inputs):
    """Analytic derivatives of a single (unbatched) evaluation of ``op``.

    Returns one entry per input. For a scalar-valued op each entry has the
    input's shape; for a vector-valued op it is the Jacobian ``d out / d input``
    with the output index first (so ``c`` yields a vector).

    >>> J_v, J_c = grad(exp_map0, np.array([0.5, 0.0]), 1.0)
    >>> J_v.shape, J_c.shape
    ((2, 2), (2,))
    """
    try:
        vjp = _VJPS[op]
    except KeyError:
        raise InvalidInputError(f"no analytic gradient registered for {op!r}") from None
    # batched vjps take the zero subgradient at the cusp; a single evaluation refuses it
    if op is distance and np.all(_asarray(inputs[0]) == _asarray(inputs[1])):
        raise DomainError("distance is not differentiable where both points coincide")
    out = np.asarray(op(*inputs))
    if out.ndim == 0:
        return tuple(np.asarray(x) for x in vjp(*inputs, np.ones(())))
    rows = [vjp(*inputs, e) for e in np.eye(out.size)]
    return tuple(np.stack([np.asarray(r[i]) for r in rows]) for i in range(len(inputs)))
