import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hidisc import geometry as geo
from hidisc.errors import DomainError, InvalidInputError

from conftest import ball_points

curvatures = st.sampled_from([1e-6, 0.05, 0.3, 1.0, 4.0])
seeds = st.integers(0, 2**32 - 1)


def mobius_scalar(a, b, c):
    """Closed form of the gyro-sum with plain Python floats."""
    ab = sum(x * y for x, y in zip(a, b))
    aa = sum(x * x for x in a)
    bb = sum(x * x for x in b)
    num_a = 1 + 2 * c * ab + c * bb
    num_b = 1 - c * aa
    den = 1 + 2 * c * ab + c * c * aa * bb
    return [(num_a * x + num_b * y) / den for x, y in zip(a, b)]


class TestMobius:
    def test_right_identity(self):
        np.testing.assert_allclose(geo.mobius_add([0.3, 0.1], [0.0, 0.0], 1.0), [0.3, 0.1], atol=1e-15)

    def test_left_inverse(self):
        np.testing.assert_allclose(geo.mobius_add([-0.3, -0.1], [0.3, 0.1], 1.0), [0.0, 0.0], atol=1e-15)

    def test_scalar_oracle(self):
        got = geo.mobius_add([0.5, 0.0], [0.2, 0.0], 1.0)
        # collinear case reduces to the relativistic velocity sum (a+b)/(1+ab)
        assert got[0] == pytest.approx(0.7 / 1.1, abs=1e-14)
        np.testing.assert_allclose(got, mobius_scalar([0.5, 0.0], [0.2, 0.0], 1.0), atol=1e-14)

    @given(seeds, curvatures)
    def test_random_against_scalar_oracle(self, seed, c):
        rng = np.random.default_rng(seed)
        a, b = ball_points(rng, 2, 3, c)
        np.testing.assert_allclose(geo.mobius_add(a, b, c), mobius_scalar(a, b, c), rtol=1e-10, atol=1e-12 / math.sqrt(c))

    def test_identities_1000_points(self, rng):
        for c in (0.05, 1.0):
            a = ball_points(rng, 1000, 5, c)
            assert np.max(np.abs(geo.mobius_add(a, np.zeros_like(a), c) - a)) < 1e-9
            assert np.max(np.abs(geo.mobius_add(-a, a, c))) < 1e-9

    @given(seeds, curvatures)
    def test_output_inside_ball(self, seed, c):
        rng = np.random.default_rng(seed)
        a, b = ball_points(rng, 2, 4, c, max_frac=0.999)
        z = geo.mobius_add(a, b, c)
        assert c * np.sum(z * z) < 1.0

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            geo.mobius_add([np.nan, 0.0], [0.0, 0.0], 1.0)


class TestDistance:
    def test_zero_on_diagonal(self):
        for c in (1e-6, 0.05, 1.0):
            assert geo.distance([0.4, 0.4], [0.4, 0.4], c) == pytest.approx(0.0, abs=1e-12)

    def test_from_origin(self):
        assert geo.distance([0.5, 0.0], [0.0, 0.0], 1.0) == pytest.approx(2 * math.atanh(0.5), rel=1e-12)
        assert geo.distance([0.5, 0.0], [0.0, 0.0], 1.0) == pytest.approx(1.0986, abs=1e-4)

    def test_euclidean_limit(self):
        d = geo.distance([0.9, 0.0], [-0.9, 0.0], 1e-9)
        assert abs(d - 3.6) / 3.6 < 1e-3

    @given(seeds)
    def test_euclidean_limit_random(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.uniform(-2, 2, size=(2, 3))
        e = 2 * np.linalg.norm(a - b)
        assert abs(geo.distance(a, b, 1e-9) - e) / e < 1e-3

    @given(seeds, curvatures)
    def test_metric_axioms(self, seed, c):
        rng = np.random.default_rng(seed)
        a, b, x = ball_points(rng, 3, 3, c)
        dab, dba = geo.distance(a, b, c), geo.distance(b, a, c)
        assert abs(dab - dba) < 1e-9 * max(1.0, dab)
        assert dab >= 0
        assert dab <= geo.distance(a, x, c) + geo.distance(x, b, c) + 1e-7

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            geo.distance([np.inf, 0.0], [0.0, 0.0], 1.0)


class TestExpLog:
    def test_origin(self):
        for c in (1e-6, 1.0, 10.0):
            np.testing.assert_array_equal(geo.exp_map0([0.0, 0.0], c), [0.0, 0.0])
            np.testing.assert_array_equal(geo.log_map0([0.0, 0.0], c), [0.0, 0.0])

    def test_exp_value(self):
        np.testing.assert_allclose(geo.exp_map0([0.5, 0.0], 1.0), [math.tanh(0.5), 0.0], atol=1e-15)
        assert geo.exp_map0([0.5, 0.0], 1.0)[0] == pytest.approx(0.46212, abs=1e-5)

    def test_exp_euclidean_limit(self):
        v = np.array([1.0, 2.0, 3.0])
        z = geo.exp_map0(v, 1e-9)
        assert np.linalg.norm(z - v) / np.linalg.norm(v) < 1e-3

    def test_log_value(self):
        np.testing.assert_allclose(geo.log_map0([0.4, 0.0], 1.0), [math.atanh(0.4), 0.0], atol=1e-15)
        assert geo.log_map0([0.4, 0.0], 1.0)[0] == pytest.approx(0.42365, abs=1e-5)

    def test_log_inverts_exp_example(self):
        z = geo.exp_map0([0.7, -0.2], 0.05)
        np.testing.assert_allclose(geo.log_map0(z, 0.05), [0.7, -0.2], atol=1e-6)

    def test_inverse_round_trip_1000(self, rng):
        for c in (1e-6, 0.05, 1.0):
            u = rng.standard_normal((1000, 6))
            v = u / np.linalg.norm(u, axis=1, keepdims=True) * rng.uniform(0, 3, size=(1000, 1))
            err = np.linalg.norm(geo.log_map0(geo.exp_map0(v, c), c) - v, axis=1)
            assert err.max() < 1e-6

    @given(seeds, curvatures)
    def test_exp_strictly_inside(self, seed, c):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal((20, 4)) * rng.uniform(0, 50)
        z = geo.exp_map0(v, c)
        assert np.all(c * np.sum(z * z, axis=1) < 1.0)

    def test_log_rejects_boundary(self):
        with pytest.raises(DomainError):
            geo.log_map0([1.0, 0.0], 1.0)
        with pytest.raises(DomainError):
            geo.log_map0([0.0, 2.0], 1.0)

    @given(seeds)
    def test_small_norm_series_matches_closed_form(self, seed):
        # both sides of the series cutoff must agree to round-off
        rng = np.random.default_rng(seed)
        u = rng.standard_normal(3)
        u /= np.linalg.norm(u)
        for r in (0.999e-3, 1.001e-3):
            z = geo.exp_map0(r * u, 1.0)
            assert np.linalg.norm(z) == pytest.approx(math.tanh(r), rel=1e-13)


class TestClip:
    def test_examples(self):
        np.testing.assert_array_equal(geo.clip_to_radius([3.0, 4.0], 10.0), [3.0, 4.0])
        np.testing.assert_allclose(geo.clip_to_radius([3.0, 4.0], 1.5), [0.9, 1.2], atol=1e-15)
        np.testing.assert_array_equal(geo.clip_to_radius([0.0, 0.0], 1.0), [0.0, 0.0])

    def test_interior_radius_is_min_of_both_balls(self):
        assert geo.interior_radius(0.05) == pytest.approx(1 - geo.BALL_EPS)
        assert geo.interior_radius(4.0) == pytest.approx((1 - geo.BALL_EPS) / 2)

    @given(seeds, curvatures)
    def test_clip_to_interior_inside_both_balls(self, seed, c):
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((10, 3)) * 5
        out = geo.clip_to_interior(z, c)
        nn = np.linalg.norm(out, axis=1)
        assert np.all(c * nn**2 < 1) and np.all(nn < 1)

    def test_clamp_curvature(self):
        assert geo.clamp_curvature(-3.0) == geo.C_MIN == 1e-6
        assert geo.clamp_curvature(1e9) == geo.C_MAX == 10.0
        assert geo.clamp_curvature(0.5) == 0.5


def central(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    out = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        out.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.stack(out, axis=-1)


class TestGrad:
    def test_exp_jacobian_at_example(self):
        v = np.array([0.5, 0.0])
        J_v, J_c = geo.grad(geo.exp_map0, v, 1.0)
        np.testing.assert_allclose(J_v, central(lambda x: geo.exp_map0(x, 1.0), v), atol=1e-9)
        # d tanh(sqrt(c) x)/sqrt(c) / dc at c=1, x=0.5
        dc = 0.5 * (0.5 / math.cosh(0.5) ** 2 - math.tanh(0.5))
        np.testing.assert_allclose(J_c, [dc, 0.0], atol=1e-12)

    def test_distance_c_derivative(self):
        a, b = np.array([0.3, -0.2]), np.array([-0.1, 0.4])
        _, _, gc = geo.grad(geo.distance, a, b, 0.7)
        h = 1e-6
        fd = (geo.distance(a, b, 0.7 + h) - geo.distance(a, b, 0.7 - h)) / (2 * h)
        assert float(gc) == pytest.approx(float(fd), rel=1e-6)

    def test_distance_grad_singular_at_coincident_points(self):
        with pytest.raises(DomainError):
            geo.grad(geo.distance, np.array([0.2, 0.1]), np.array([0.2, 0.1]), 1.0)

    def test_unregistered_op(self):
        with pytest.raises(InvalidInputError):
            geo.grad(np.sin, np.zeros(2))

    @given(seeds, curvatures)
    def test_log_jacobian_is_inverse_of_exp_jacobian(self, seed, c):
        rng = np.random.default_rng(seed)
        v = rng.standard_normal(3) / math.sqrt(c)
        J_exp, _ = geo.grad(geo.exp_map0, v, c)
        J_log, _ = geo.grad(geo.log_map0, geo.exp_map0(v, c), c)
        np.testing.assert_allclose(J_log @ J_exp, np.eye(3), atol=1e-7)
