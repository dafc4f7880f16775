import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvlearn.core import (
    INFINITY,
    ReferencePoint,
    aggregate_gradient,
    as_loss_vector,
    gamma_for_nu,
    hypervolume_weights,
    log_hypervolume,
    nu_for_mu,
    raw_hv_gradient,
)
from hvlearn.errors import DomainError, ShapeError
from hvlearn.models import finite_diff_gradient

MEAN = ReferencePoint.mean()


class TestLogHypervolume:
    def test_single_zero_loss(self):
        assert log_hypervolume([0.0], 1.0) == 0.0

    def test_pair(self):
        expected = math.log(2 - 0.5) + math.log(2 - 1.0)
        assert log_hypervolume([0.5, 1.0], 2.0) == pytest.approx(expected, rel=1e-15)
        assert expected == pytest.approx(0.4054651, abs=1e-7)

    @pytest.mark.parametrize("mu", [1.0, 0.9])
    def test_dominated_reference_rejected(self, mu):
        with pytest.raises(DomainError):
            log_hypervolume([0.5, 1.0], mu)

    def test_mean_mode_rejected(self):
        with pytest.raises(DomainError):
            log_hypervolume([0.5], MEAN)

    @pytest.mark.parametrize("bad", [[], [np.nan], [np.inf], [-0.1, 1.0]])
    def test_invalid_loss_vector(self, bad):
        with pytest.raises(DomainError):
            as_loss_vector(bad)

    @settings(max_examples=200, deadline=None)
    @given(
        st.lists(st.floats(0.0, 10.0), min_size=1, max_size=12),
        st.integers(0, 11),
        st.floats(1e-3, 1.0),
    )
    def test_monotone_in_each_loss(self, losses, which, frac):
        l = np.array(losses)
        i = which % l.size
        mu = l.max() + 1.0
        lowered = l.copy()
        lowered[i] -= frac * max(l[i], 1e-3)
        lowered[i] = max(lowered[i], 0.0)
        before, after = log_hypervolume(l, mu), log_hypervolume(lowered, mu)
        assert after >= before
        # strict increase once the exact gain exceeds the rounding error of the sum
        gain = math.log((mu - lowered[i]) / (mu - l[i]))
        if gain > 4 * l.size * np.spacing(abs(before) + 1.0):
            assert after > before

    def test_concave_along_segments_for_convex_losses(self):
        rng = np.random.default_rng(3)
        centers = rng.uniform(-1, 1, size=(4, 3))
        scales = rng.uniform(0.5, 2.0, size=4)
        mu = 40.0

        def h(theta):
            losses = scales * np.sum((theta - centers) ** 2, axis=1)
            return log_hypervolume(losses, mu)

        for _ in range(100):
            a, b = rng.uniform(-1.5, 1.5, size=(2, 3))
            assert h((a + b) / 2) >= (h(a) + h(b)) / 2 - 1e-9


class TestWeights:
    @pytest.mark.parametrize("c", [0.0, 0.3, 7.0])
    def test_equal_pair_is_uniform(self, c):
        np.testing.assert_allclose(hypervolume_weights([c, c], c + 1.5), [0.5, 0.5], rtol=0, atol=1e-15)

    def test_pair_by_hand(self):
        beta = np.array([1 / 1.5, 1 / 1.0])
        np.testing.assert_allclose(hypervolume_weights([0.5, 1.0], 2.0), beta / beta.sum(), rtol=1e-15)
        np.testing.assert_allclose(hypervolume_weights([0.5, 1.0], 2.0), [0.4, 0.6], rtol=1e-14)

    def test_mean_mode_uniform(self):
        w = hypervolume_weights([0.2, 0.9, 0.9], MEAN)
        assert np.all(w == 1.0 / 3.0)

    def test_dominated_reference_rejected(self):
        with pytest.raises(DomainError):
            hypervolume_weights([0.5, 1.0], 1.0)

    def test_tied_maxima_share_weight(self):
        w = hypervolume_weights([0.1, 1.0, 1.0], 1.0 + 1e-9)
        assert w[1] == w[2]
        assert w[1] == pytest.approx(0.5, abs=1e-8)

    @settings(max_examples=300, deadline=None)
    @given(
        st.lists(st.floats(0.0, 10.0), min_size=1, max_size=30),
        st.floats(-4.0, 2.0),
    )
    def test_simplex_and_alignment(self, losses, xi):
        l = np.array(losses)
        mu = (1 + 10**xi) * max(l.max(), 1e-3)
        w = hypervolume_weights(l, mu)
        assert np.all(w >= 0)
        assert abs(w.sum() - 1) <= 1e-12
        order = np.argsort(l, kind="stable")
        for i, j in zip(order, order[1:]):
            if l[j] > l[i] and (mu - l[i]) != (mu - l[j]):
                assert w[j] > w[i]


class TestAggregateGradient:
    def test_uniform_average(self):
        np.testing.assert_array_equal(aggregate_gradient([[1, 0], [0, 1]], [0.5, 0.5]), [0.5, 0.5])

    def test_by_hand(self):
        expected = [0.4 * 2 + 0.6 * 4, 0.4 * -2 + 0.6 * 0]
        np.testing.assert_allclose(aggregate_gradient([[2, -2], [4, 0]], [0.4, 0.6]), expected, rtol=1e-15)
        np.testing.assert_allclose(expected, [3.2, -0.8], rtol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            aggregate_gradient(np.ones((3, 2)), [0.5, 0.5])


class TestRawGradient:
    def test_single_sample(self):
        np.testing.assert_allclose(raw_hv_gradient([0.5], [[1, 1]], 1.5), [-1, -1], rtol=1e-15)

    def test_pair(self):
        np.testing.assert_allclose(
            raw_hv_gradient([0.5, 1.0], [[1, 0], [0, 1]], 2.0), [-1 / 1.5, -1.0], rtol=1e-15
        )

    def test_zero_gradient(self):
        np.testing.assert_array_equal(raw_hv_gradient([0.0], [[0, 0, 0]], 1.0), [0, 0, 0])

    def test_consistent_with_normalized_form(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n, d = rng.integers(1, 10), rng.integers(1, 6)
            l = rng.uniform(0, 3, n)
            g = rng.standard_normal((n, d))
            mu = l.max() * (1 + 10 ** rng.uniform(-3, 2)) + 1e-6
            scale = np.sum(1.0 / (mu - l))
            expected = -scale * aggregate_gradient(g, hypervolume_weights(l, mu))
            got = raw_hv_gradient(l, g, mu)
            assert np.linalg.norm(got - expected) <= 1e-10 * np.linalg.norm(expected) + 1e-300

    def test_matches_finite_differences_of_log_hypervolume(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            n, d = rng.integers(1, 6), rng.integers(1, 4)
            centers = rng.uniform(-1, 1, (n, d))
            scales = rng.uniform(0.5, 2.0, n)
            theta = rng.uniform(-1, 1, d)
            mu = 30.0

            def losses(t):
                return scales * np.sum((t - centers) ** 2, axis=1)

            grads = 2 * scales[:, None] * (theta - centers)
            analytic = raw_hv_gradient(losses(theta), grads, mu)
            fd = finite_diff_gradient(lambda t: log_hypervolume(losses(t), mu), theta, 1e-6)
            assert np.linalg.norm(fd - analytic) <= 1e-5 * np.linalg.norm(analytic)


class TestThresholds:
    def test_nu_by_hand(self):
        assert nu_for_mu(0.0, 1.0, 3.0) == pytest.approx(max(3 / 2 - 1, 1 - 2 / 3), rel=1e-15)
        assert nu_for_mu(0.0, 1.0, 3.0) == pytest.approx(0.5, rel=1e-15)

    def test_nu_equal_bounds(self):
        assert nu_for_mu(0.7, 0.7, 1.0) == 0.0

    @pytest.mark.parametrize("args", [(0.0, 1.0, 1.0), (0.0, 1.0, 0.5), (2.0, 1.0, 3.0)])
    def test_nu_errors(self, args):
        with pytest.raises(DomainError):
            nu_for_mu(*args)

    def test_nu_strictly_decreasing(self):
        mus = np.geomspace(1.01, 1e6, 200)
        nus = [nu_for_mu(0.2, 1.0, m) for m in mus]
        assert all(b < a for a, b in zip(nus, nus[1:]))

    def test_gamma_by_hand(self):
        assert gamma_for_nu(0.0, 1.0, 0.5) == pytest.approx(max(1, 1.5 / 0.5, 1 / 0.5), rel=1e-15)
        assert gamma_for_nu(0.0, 1.0, 0.5) == pytest.approx(3.0, rel=1e-15)
        assert gamma_for_nu(1.0, 1.0, 0.1) == pytest.approx(1.0, rel=1e-15)
        assert gamma_for_nu(0.0, 1.0, 1.0) == pytest.approx(2.0, rel=1e-15)

    @pytest.mark.parametrize("args", [(0.0, 1.0, 0.0), (0.0, 1.0, -1.0), (2.0, 1.0, 0.5)])
    def test_gamma_errors(self, args):
        with pytest.raises(DomainError):
            gamma_for_nu(*args)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 10), st.floats(1e-3, 10), st.floats(1e-3, 100))
    def test_round_trip(self, c1, span, above):
        c2 = c1 + span
        mu = c2 + above
        assert gamma_for_nu(c1, c2, nu_for_mu(c1, c2, mu)) == pytest.approx(mu, rel=1e-9)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(0, 10), st.floats(0, 10), st.floats(1e-3, 5), st.floats(1e-6, 10))
    def test_above_gamma_meets_nu(self, c1, span, nu, excess):
        c2 = c1 + span
        mu = gamma_for_nu(c1, c2, nu) * (1 + excess) + excess
        assert nu_for_mu(c1, c2, mu) <= nu * (1 + 1e-12)


def test_reference_point_requires_finite_mu_outside_mean_mode():
    with pytest.raises(DomainError):
        ReferencePoint(mu=INFINITY, xi=0.0)
