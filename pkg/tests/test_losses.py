import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hidisc import geometry as geo
from hidisc import losses as L
from hidisc.errors import ConfigurationError, DomainError, InsufficientBatchError
from hidisc.prototypes import PrototypeSet, place_prototypes

from conftest import ball_points

seeds = st.integers(0, 2**32 - 1)


def fd_grad(f, x, h=1e-5):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        g[idx] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def rel(a, b):
    a, b = np.ravel(a), np.ravel(b)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


# --- Busemann -----------------------------------------------------------------------


class TestBusemann:
    def test_origin_is_zero(self):
        p = np.array([0.6, 0.8])
        for c, phi in ((0.05, 0.75), (1.0, 0.2)):
            assert L.busemann_loss(np.zeros(2), p, c, phi) == pytest.approx(0.0, abs=1e-15)

    def test_half_way_to_prototype(self):
        p = np.array([0.0, 1.0, 0.0])
        expected = math.log(0.25 / 0.9875) + 0.75 * math.log(0.75)
        assert L.busemann_loss(0.5 * p, p, 0.05, 0.75) == pytest.approx(expected, rel=1e-12)
        # the quoted four-digit figure is rounded loosely; the exact value is -1.58948
        assert expected == pytest.approx(-1.5896, abs=2e-4)

    def test_gradient_example(self):
        p = np.array([0.6, 0.8])
        z = 0.3 * p
        _, gz, gc = L.busemann_loss(z, p, 0.05, 0.75, grad=True)
        fz = fd_grad(lambda x: L.busemann_loss(x, p, 0.05, 0.75), z)
        fc = (L.busemann_loss(z, p, 0.05 + 1e-7, 0.75) - L.busemann_loss(z, p, 0.05 - 1e-7, 0.75)) / 2e-7
        assert rel(gz, fz) < 1e-4
        assert gc == pytest.approx(fc, rel=1e-4)

    @given(seeds, st.sampled_from([0.01, 0.05, 0.5, 1.0]), st.floats(0.0, 0.95))
    def test_decreases_along_ray_to_prototype(self, seed, c, phi):
        rng = np.random.default_rng(seed)
        p = rng.standard_normal(4)
        p /= np.linalg.norm(p)
        t = np.linspace(0.0, 0.9, 91)
        vals = [L.busemann_loss(s * p, p, c, phi) for s in t]
        assert np.all(np.diff(vals) < 0)

    def test_boundary_is_a_domain_error(self):
        p = np.array([1.0, 0.0])
        with pytest.raises(DomainError):
            L.busemann_loss(np.array([0.0, 1.0]), p, 0.05, 0.75)
        with pytest.raises(DomainError):
            L.busemann_loss(p, p, 0.05, 0.75)


# --- hybrid similarity and contrastive --------------------------------------------


class TestContrastive:
    def test_similarity_endpoints(self, rng):
        c = 0.3
        z1, z2 = ball_points(rng, 2, 3, c)
        cos = geo.cosine_similarity(geo.log_map0(z1, c), geo.log_map0(z2, c))
        assert L.hybrid_similarity(z1, z2, c, 0.0) == cos
        assert L.hybrid_similarity(z1, z2, c, 1.0) == -geo.distance(z1, z2, c)

    def test_similarity_mix_arithmetic(self):
        # distance 1 from the origin along e1 has the same tangent direction as z1
        c = 1.0
        z1 = np.array([math.tanh(0.5), 0.0])
        assert geo.distance(z1, np.zeros(2), c) == pytest.approx(1.0)
        # cosine 0.8 between tangent images
        z2 = geo.exp_map0(np.array([0.8, 0.6]) * 0.3, c)
        d = float(geo.distance(z1, z2, c))
        s = L.hybrid_similarity(z1, z2, c, 0.5)
        assert float(s) == pytest.approx(0.5 * (-d) + 0.5 * 0.8, abs=1e-12)
        assert 0.5 * (-1.0) + 0.5 * 0.8 == pytest.approx(-0.1)

    def test_all_identical_gives_log2(self):
        z = np.full((2, 3), 0.1)
        for alpha in (0.0, 0.4, 1.0):
            assert L.contrastive_loss_at(z, z, 0.05, alpha, 0.1) == pytest.approx(math.log(2.0), rel=1e-12)

    def test_saturated_softmax(self):
        tau = 0.1
        b = np.array([math.tanh(1.0), 0.0])  # distance exactly 2 = 20 tau from the origin at c=1
        z = np.stack([np.zeros(2), b])
        loss = L.contrastive_loss_at(z, z, 1.0, 1.0, tau)
        assert loss == pytest.approx(math.log1p(math.exp(-20.0)), rel=1e-6)
        assert loss < 1e-8

    def test_schedule_feeds_alpha(self, rng):
        cfg = L.ContrastiveConfig(temperature=0.2, alpha_max=0.8, total_epochs=40)
        z1, z2 = ball_points(rng, 4, 3, 0.5), ball_points(rng, 4, 3, 0.5)
        assert L.contrastive_loss(z1, z2, 0.5, cfg, 10) == L.contrastive_loss_at(z1, z2, 0.5, 0.2, 0.2)

    @given(seeds)
    def test_invariant_to_relabeling_negatives(self, seed):
        rng = np.random.default_rng(seed)
        z1, z2 = ball_points(rng, 6, 3, 1.0), ball_points(rng, 6, 3, 1.0)
        perm = rng.permutation(6)
        a = L.contrastive_loss_at(z1, z2, 1.0, 0.3, 0.1)
        b = L.contrastive_loss_at(z1[perm], z2[perm], 1.0, 0.3, 0.1)
        assert a == pytest.approx(b, rel=1e-12)

    @given(seeds)
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        z1, z2 = ball_points(rng, 5, 3, 1.0), ball_points(rng, 5, 3, 1.0)
        assert L.contrastive_loss_at(z1, z2, 1.0, 0.5, 0.1) >= 0.0

    def test_single_sample_rejected(self):
        with pytest.raises(InsufficientBatchError):
            L.contrastive_loss_at(np.zeros((1, 2)), np.zeros((1, 2)), 1.0, 0.5, 0.1)

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            L.ContrastiveConfig(temperature=0.0)
        with pytest.raises(ConfigurationError):
            L.ContrastiveConfig(alpha_max=1.5)


# --- margin and outlier loss -----------------------------------------------------------


class TestMargin:
    def test_nearest_rank_examples(self):
        assert L.nearest_rank_quantile(np.arange(1, 11), 0.8) == 8.0
        assert L.nearest_rank_quantile([3.7], 0.3) == 3.7
        assert L.nearest_rank_quantile([2.5] * 9, 0.8) == 2.5

    @given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=300), st.floats(0.01, 0.99))
    def test_matches_sort_oracle(self, values, q):
        ordered = sorted(values)
        k = 1
        while k < len(ordered) and k < q * len(ordered) - 1e-9:
            k += 1
        assert L.nearest_rank_quantile(values, q) == ordered[k - 1]

    def test_large_n_matches_sort_oracle(self, rng):
        v = rng.exponential(size=10_000)
        assert L.nearest_rank_quantile(v, 0.8) == np.sort(v)[7999]

    def test_compute_margin_brute_force(self, rng):
        c = 0.4
        ps = place_prototypes(3, 4, seed=2)
        pts = ball_points(rng, 25, 4, c)
        R = geo.ball_radius(c)
        mins = [min(float(geo.distance(z, R * p, c)) for p in ps.prototypes) for z in pts]
        m = L.compute_margin(pts, ps, c, 0.8)
        assert m.frozen and m.quantile == 0.8
        assert m.gamma == pytest.approx(sorted(mins)[19], rel=1e-12)

    def test_empty_rejected(self):
        ps = place_prototypes(2, 3)
        with pytest.raises(ConfigurationError):
            L.compute_margin(np.zeros((0, 3)), ps, 1.0)


def _point_at_distance(dist, c=1.0):
    """Point on the prototype's diameter at geodesic distance ``dist`` inside the pulled prototype."""
    R = geo.ball_radius(c)
    s = math.sqrt(c)
    return np.array([math.tanh(math.atanh(s * R) - s * dist / 2) / s, 0.0])


class TestOutlier:
    ps = PrototypeSet(np.array([[1.0, 0.0], [-1.0, 0.0]]), ("a", "b"))

    def test_hinge_inactive(self):
        z = _point_at_distance(2.5)
        assert L.outlier_loss(z[None], self.ps, 1.0, L.OutlierMargin(2.0)) == 0.0

    def test_hinge_active(self):
        z = _point_at_distance(1.2)
        assert L.prototype_distances(z, self.ps, 1.0).min() == pytest.approx(1.2, abs=1e-6)
        assert L.outlier_loss(z[None], self.ps, 1.0, L.OutlierMargin(2.0)) == pytest.approx(0.8, abs=1e-6)

    def test_empty_is_zero(self):
        assert L.outlier_loss(np.zeros((0, 2)), self.ps, 1.0, L.OutlierMargin(2.0)) == 0.0

    def test_unfrozen_margin_rejected(self):
        with pytest.raises(ConfigurationError):
            L.outlier_loss(np.zeros((1, 2)), self.ps, 1.0, L.OutlierMargin(2.0, frozen=False))

    @given(st.floats(0.05, 12.0), st.floats(0.05, 12.0), st.floats(0.1, 6.0))
    def test_nonincreasing_and_zero_past_margin(self, d1, d2, gamma):
        lo, hi = sorted((d1, d2))
        m = L.OutlierMargin(gamma)
        f = lambda d: L.outlier_loss(_point_at_distance(d)[None], self.ps, 1.0, m)  # noqa: E731
        assert f(hi) <= f(lo) + 1e-9
        if hi >= gamma + 1e-9:
            assert f(hi) == 0.0


# --- weights and total ----------------------------------------------------------------


def test_total_loss_examples():
    w = L.LossWeights()
    assert L.total_loss((1, 1, 1), w) == pytest.approx(1.0, abs=1e-12)
    assert L.total_loss((2, 0, 0), w) == pytest.approx(1.2, abs=1e-12)


@given(st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.lists(st.floats(-50, 50), min_size=3, max_size=3), st.floats(-3, 3))
def test_total_loss_linear(a, b, s):
    w = L.LossWeights()
    combo = [x + s * y for x, y in zip(a, b)]
    assert L.total_loss(combo, w) == pytest.approx(L.total_loss(a, w) + s * L.total_loss(b, w), abs=1e-9)


def test_weights_must_sum_to_one():
    with pytest.raises(ConfigurationError):
        L.LossWeights(0.5, 0.25, 0.15)
    with pytest.raises(ConfigurationError):
        L.LossWeights(1.2, -0.2, 0.0)
    dropped = L.LossWeights().without(3)
    assert dropped.lambda3 == 0 and sum(dropped.as_tuple()) == pytest.approx(1.0)
    assert dropped.lambda1 / dropped.lambda2 == pytest.approx(0.60 / 0.25)


# --- Euclidean analogues -----------------------------------------------------------


class TestEuclidean:
    def test_prototype_softmax_example(self):
        delta = 0.7
        means = np.array([[0.0, 0.0], [math.sqrt(delta), 0.0], [0.0, math.sqrt(delta)]])
        got = L.euclidean_prototype_loss(np.zeros((1, 2)), np.array([0]), means)
        assert got == pytest.approx(-math.log(1.0 / (1.0 + 2.0 * math.exp(-delta))), rel=1e-12)

    def test_contrastive_example(self):
        z = np.eye(2)
        assert L.euclidean_contrastive_loss(z, z, 1.0) == pytest.approx(-math.log(math.e / (math.e + 1.0)), rel=1e-12)

    def test_hinge_inactive(self):
        means = np.array([[0.0, 0.0], [3.0, 0.0]])
        assert L.euclidean_outlier_loss(np.array([[1.5, 1.0]]), means, L.OutlierMargin(1.0)) == 0.0

    def test_class_means_averaging_matrix(self, rng):
        z = rng.standard_normal((7, 3))
        labels = np.array(list("abacbca"))
        means, classes, y_idx, A = L.class_means(z, labels)
        assert list(classes) == ["a", "b", "c"]
        np.testing.assert_allclose(means[0], z[labels == "a"].mean(0))
        np.testing.assert_allclose(A @ z, means)
        assert np.all(classes[y_idx] == labels)
