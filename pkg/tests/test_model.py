import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import gammaln

from hidisc import geometry as geo
from hidisc.errors import ConfigurationError, NonFiniteGradientError, ShapeError
from hidisc.model import SGD, Encoder, ProjectionHead, cosine_lr, forward, make_views
from hidisc.training import TrainConfig, init_model


def gelu_scalar(x):
    return 0.5 * x * (1.0 + math.erf(x / math.sqrt(2.0)))


def test_zero_head_maps_to_origin():
    head = ProjectionHead.zeros((5, 7, 3, 4))
    np.testing.assert_array_equal(forward(head, np.ones((2, 5)), 1.0, 0.05), np.zeros((2, 4)))


def test_single_active_path_by_hand():
    head = ProjectionHead.zeros((2, 2, 2, 2))
    for W in head.weights:
        W[0, 0] = 1.0
    x = np.array([0.5, -3.0])
    pre = gelu_scalar(gelu_scalar(0.5))
    c = 0.8
    expected = math.tanh(math.sqrt(c) * pre) / math.sqrt(c)
    np.testing.assert_allclose(forward(head, x, 1.0, c), [[expected, 0.0]], rtol=1e-14)


def test_pre_map_clip_hits_radius_exactly():
    rng = np.random.default_rng(0)
    head = ProjectionHead.init((6, 16, 8, 4), rng)
    for W in head.weights:
        W *= 20.0
    enc = Encoder(head, c=0.05, radius=1.5)
    _, (_, h, t, _) = enc.forward(rng.standard_normal((10, 6)))
    big = np.linalg.norm(h, axis=1) > 1.5
    assert big.any()
    np.testing.assert_allclose(np.linalg.norm(t[big], axis=1), 1.5, rtol=1e-15)


def test_dimension_mismatch():
    head = ProjectionHead.zeros((3, 4, 4, 2))
    with pytest.raises(ShapeError):
        forward(head, np.zeros(4), 1.0, 1.0)


def test_default_head_shape():
    enc, *_ = init_model(20, ("a", "b"), TrainConfig(prototype_steps=1))
    assert enc.head.dims == (20, 512, 128, 32)
    assert len(enc.head.weights) == 3
    assert enc.c == 0.05


def test_head_layer_count_enforced():
    with pytest.raises(ConfigurationError):
        ProjectionHead([np.zeros((2, 2))] * 2, [np.zeros(2)] * 2)


def test_head_backward_matches_differences():
    rng = np.random.default_rng(1)
    head = ProjectionHead.init((3, 5, 4, 2), rng)
    x = rng.standard_normal((4, 3))
    g = rng.standard_normal((4, 2))
    out, cache = head.forward(x)
    grads = head.backward(cache, g)
    for p, gp in zip(head.parameters(), grads):
        idx = (0,) * p.ndim
        old = p[idx]
        p[idx] = old + 1e-6
        up = float(np.sum(g * head.forward(x)[0]))
        p[idx] = old - 1e-6
        dn = float(np.sum(g * head.forward(x)[0]))
        p[idx] = old
        assert gp[idx] == pytest.approx((up - dn) / 2e-6, rel=1e-6, abs=1e-9)


# --- optimizer ------------------------------------------------------------------------


def _encoder():
    return Encoder(ProjectionHead.init((3, 4, 4, 2), np.random.default_rng(0)), c=0.5)


def test_zero_gradient_leaves_parameters():
    enc = _encoder()
    before = [p.copy() for p in enc.head.parameters()]
    SGD(lr0=0.1, momentum=0.0, weight_decay=0.0).step(enc, [np.zeros_like(p) for p in before], 0.0, 0)
    for a, b in zip(before, enc.head.parameters()):
        np.testing.assert_array_equal(a, b)
    assert enc.c == 0.5


def test_plain_step():
    enc = _encoder()
    before = [p.copy() for p in enc.head.parameters()]
    g = [np.full_like(p, 0.3) for p in before]
    SGD(lr0=0.1, momentum=0.0, weight_decay=0.0).step(enc, g, 2.0, 0)
    for a, b, gg in zip(before, enc.head.parameters(), g):
        np.testing.assert_allclose(b, a - 0.1 * gg, rtol=1e-15)
    assert enc.c == pytest.approx(0.5 - 0.1 * 2.0)


def test_curvature_clamped_at_floor():
    enc = _encoder()
    SGD(lr0=1.0, momentum=0.0).step(enc, [np.zeros_like(p) for p in enc.head.parameters()], 100.0, 0)
    assert enc.c == 1e-6


def test_weight_decay_spares_curvature():
    enc = _encoder()
    SGD(lr0=0.1, momentum=0.0, weight_decay=0.5).step(enc, [np.zeros_like(p) for p in enc.head.parameters()], 0.0, 0)
    assert enc.c == 0.5


def test_non_finite_gradient_aborts_batch():
    enc = _encoder()
    before = [p.copy() for p in enc.head.parameters()]
    g = [np.zeros_like(p) for p in before]
    g[2][0, 0] = np.nan
    with pytest.raises(NonFiniteGradientError, match="head tensors"):
        SGD().step(enc, g, 0.0, 0)
    for a, b in zip(before, enc.head.parameters()):
        np.testing.assert_array_equal(a, b)


@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=40), st.floats(1e-4, 10.0))
def test_curvature_stays_in_range(grads, lr0):
    enc = _encoder()
    opt = SGD(lr0=lr0, total_epochs=len(grads) + 1)
    zero = [np.zeros_like(p) for p in enc.head.parameters()]
    for e, gc in enumerate(grads):
        opt.step(enc, zero, gc, e)
        assert geo.C_MIN <= enc.c <= geo.C_MAX


def test_cosine_schedule_endpoints():
    assert cosine_lr(0.01, 0, 50) == 0.01
    assert cosine_lr(0.01, 50, 50) < 1e-12
    assert cosine_lr(0.01, 25, 50) == pytest.approx(0.005)


# --- views ------------------------------------------------------------------------------


def test_views_without_noise_equal_input(rng):
    x = rng.standard_normal((4, 6))
    a, b = make_views(x, 0.0, rng, mask_prob=0.0)
    np.testing.assert_array_equal(a, x)
    np.testing.assert_array_equal(b, x)


def test_views_deterministic():
    x = np.arange(12.0).reshape(3, 4)
    a = make_views(x, 0.1, np.random.default_rng(7))
    b = make_views(x, 0.1, np.random.default_rng(7))
    assert all(np.array_equal(u, v) for u, v in zip(a, b))


def test_view_noise_norm_matches_chi_mean(rng):
    d, s = 16, 0.1
    x = np.zeros((10_000, d))
    a, _ = make_views(x, s, rng, mask_prob=0.0)
    observed = np.linalg.norm(a, axis=1).mean()
    chi_mean = s * math.sqrt(2.0) * math.exp(gammaln((d + 1) / 2) - gammaln(d / 2))
    assert observed == pytest.approx(chi_mean, rel=0.01)
    assert observed == pytest.approx(s * math.sqrt(d), rel=0.05)
