import numpy as np
import pytest

from hvlearn.core import hypervolume_weights, nu_for_mu
from hvlearn.errors import DomainError, ShapeError
from hvlearn.theory import (
    Theorem,
    ToyProblem,
    Verdict,
    ball_constants,
    certify_theorem1,
    certify_theorem2,
    check_weight_deviation,
    limit_checks,
    maximize_hypervolume,
    minimize_mean_loss,
    random_limit_case,
    random_weight_case,
    run_battery,
)

SYMMETRIC = ToyProblem.one_dim([1.0, -1.0], offsets=1.0, radius=1.5)
ASYMMETRIC = ToyProblem.one_dim([1.0, -1.0], scales=[1.0, 3.0], radius=2.0)


class TestToyProblem:
    def test_losses_and_grads(self):
        np.testing.assert_allclose(SYMMETRIC.losses([0.5]), [1.25, 3.25])
        np.testing.assert_allclose(SYMMETRIC.grads([0.5]), [[-1.0], [3.0]])
        assert SYMMETRIC.losses(np.zeros((4, 1))).shape == (4, 2)

    def test_sup_loss(self):
        assert SYMMETRIC.sup_loss() == pytest.approx(2.5**2 + 1)

    def test_dominated_hypervolume(self):
        with pytest.raises(DomainError):
            SYMMETRIC.hypervolume([0.0], 1.5)

    def test_invalid(self):
        with pytest.raises(ShapeError):
            ToyProblem(np.zeros(3), 1.0, 0.0, 1.0)
        with pytest.raises(DomainError):
            ToyProblem.one_dim([0.0], scales=-1.0)


class TestOptimizers:
    def test_symmetric_optima_at_zero(self):
        theta, gnorm = minimize_mean_loss(SYMMETRIC)
        assert abs(theta[0]) <= 1e-10 and gnorm <= 1e-10
        theta, _ = maximize_hypervolume(SYMMETRIC, 10.0)
        assert abs(theta[0]) <= 1e-10

    def test_asymmetric_optima_differ(self):
        mean_opt, _ = minimize_mean_loss(ASYMMETRIC)
        assert mean_opt[0] == pytest.approx(-0.5, abs=1e-10)
        hv_opt, _ = maximize_hypervolume(ASYMMETRIC, 30.0)
        # stationarity of sum log(mu - l_i) checked directly
        g = ASYMMETRIC.grads(hv_opt)[:, 0]
        gaps = 30.0 - ASYMMETRIC.losses(hv_opt)
        assert abs(np.sum(g / gaps)) <= 1e-10
        assert abs(hv_opt[0] - mean_opt[0]) > 1e-3

    def test_hypervolume_needs_domination(self):
        with pytest.raises(DomainError):
            maximize_hypervolume(SYMMETRIC, 5.0)

    def test_ball_constants_contain_exact_range(self):
        rng = np.random.default_rng(0)
        c1, c2, c3 = ball_constants(SYMMETRIC, np.zeros(1), 0.1, rng)
        # exact: losses in [2, 2.21] on [-0.1, 0.1], gradient magnitude at most 2.2
        assert c1 <= 2.0 and c2 >= 2.21 and c3 >= 2.2
        assert c1 <= c2 and c3 >= 0


class TestTheorem1:
    def test_symmetric_pair(self):
        cert = certify_theorem1(SYMMETRIC, nu=0.5, epsilon=0.1)
        assert cert.theorem is Theorem.MEAN_TO_H
        assert cert.verdict is Verdict.PASS
        assert abs(cert.theta_star[0]) <= 1e-10
        assert cert.max_violation <= 0
        assert cert.mu == pytest.approx(1.01 * cert.gamma)
        assert cert.num_samples >= 10_000

    def test_single_loss(self):
        problem = ToyProblem.one_dim([0.4], offsets=0.5)
        cert = certify_theorem1(problem, nu=0.5, epsilon=0.1)
        assert cert.verdict is Verdict.PASS
        assert cert.theta_star[0] == pytest.approx(0.4, abs=1e-10)

    def test_below_gamma_not_applicable(self):
        probe = certify_theorem1(SYMMETRIC, nu=0.5, epsilon=0.1)
        cert = certify_theorem1(SYMMETRIC, nu=0.5, epsilon=0.1, mu=probe.c2 * 1.0001)
        assert cert.verdict is Verdict.NOT_APPLICABLE
        assert not cert.applicable

    def test_asymmetric_pair(self):
        assert certify_theorem1(ASYMMETRIC, nu=0.5, epsilon=0.1).verdict is Verdict.PASS

    def test_record_format(self):
        text = certify_theorem1(SYMMETRIC, nu=0.5, epsilon=0.1).to_record()
        fields = dict(line.split("=", 1) for line in text.splitlines())
        assert fields["theorem"] == "mean_to_h" and fields["verdict"] == "pass"
        assert float(fields["mu"]) > float(fields["gamma"])


class TestTheorem2:
    def test_symmetric_pair(self):
        cert = certify_theorem2(SYMMETRIC, mu=10.0, epsilon=0.1)
        assert cert.theorem is Theorem.H_TO_MEAN
        assert cert.verdict is Verdict.PASS
        assert abs(cert.theta_star[0]) <= 1e-10
        assert cert.nu == pytest.approx(nu_for_mu(cert.c1, cert.c2, 10.0))

    def test_huge_mu(self):
        cert = certify_theorem2(ASYMMETRIC, mu=1e6, epsilon=0.1)
        assert cert.verdict is Verdict.PASS
        assert cert.nu * cert.c3 * cert.epsilon_prime <= 1e-4
        deltas = np.linspace(-0.1, 0.1, 2001)[:, None]
        j_star = ASYMMETRIC.mean_loss(cert.theta_star)
        assert np.all(ASYMMETRIC.mean_loss(cert.theta_star + deltas) >= j_star - 1e-4)

    def test_asymmetric_pair(self):
        assert certify_theorem2(ASYMMETRIC, mu=30.0, epsilon=0.1).verdict is Verdict.PASS

    def test_dominated(self):
        with pytest.raises(DomainError):
            certify_theorem2(SYMMETRIC, mu=3.0, epsilon=0.1)

    def test_two_dimensional(self):
        problem = ToyProblem(np.array([[0.5, 0.0], [-0.5, 0.3], [0.0, -0.6]]), [1.0, 2.0, 0.7], 0.2, 3.0)
        assert certify_theorem1(problem, 0.5, 0.1).verdict is Verdict.PASS
        assert certify_theorem2(problem, 1.5 * problem.sup_loss(), 0.1).verdict is Verdict.PASS


class TestWeightDeviation:
    def test_uniform(self):
        assert check_weight_deviation([0.7, 0.7, 0.7], 2.0) == 0.0

    def test_pair_by_hand(self):
        beta = np.array([1 / 3, 1 / 2])
        w = beta / beta.sum()
        expected = np.max(np.abs(2 * w - 1))
        assert expected == pytest.approx(0.2, rel=1e-14)
        assert check_weight_deviation([0.0, 1.0], 3.0) == pytest.approx(expected, rel=1e-14)
        assert check_weight_deviation([0.0, 1.0], 3.0) <= nu_for_mu(0.0, 1.0, 3.0)

    def test_collapse_near_lower_bound(self):
        assert check_weight_deviation([0.0, 1.0], 1 + 1e-9) == pytest.approx(1.0, abs=1e-8)

    def test_dominated(self):
        with pytest.raises(DomainError):
            check_weight_deviation([0.0, 1.0], 1.0)

    def test_bound_on_random_cases(self):
        rng = np.random.default_rng(0)
        for _ in range(2000):
            losses, _, mu = random_weight_case(rng)
            bound = nu_for_mu(float(losses.min()), float(losses.max()), mu)
            assert check_weight_deviation(losses, mu) <= bound + 1e-12

    def test_monotone_along_ladder(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            losses = rng.uniform(0, 3, int(rng.integers(2, 10)))
            mus = losses.max() * (1 + np.geomspace(1e-6, 1e8, 60))
            devs = [check_weight_deviation(losses, m) for m in mus]
            assert all(b <= a + 1e-15 for a, b in zip(devs, devs[1:]))
            assert devs[-1] <= 1e-7


class TestLimits:
    def test_two_samples(self):
        report = limit_checks([0.5, 1.0], [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(report.mean_direction, [0.5, 0.5], atol=1e-4)
        np.testing.assert_allclose(report.max_direction, [0.0, 1.0], atol=1e-4)
        assert report.argmax_set == [1]

    def test_tied_maxima(self):
        report = limit_checks([1.0, 1.0], [[1.0, 0.0], [0.0, 1.0]])
        np.testing.assert_allclose(report.max_direction, [0.5, 0.5], atol=1e-12)
        assert report.argmax_set == [0, 1]

    def test_single_sample(self):
        report = limit_checks([0.8], [[2.0, -1.0]])
        np.testing.assert_allclose(report.mean_direction, [2.0, -1.0], rtol=1e-15)
        np.testing.assert_allclose(report.max_direction, [2.0, -1.0], rtol=1e-15)

    def test_shape_error(self):
        with pytest.raises(ShapeError):
            limit_checks([0.1, 0.2], [[1.0, 0.0]])

    def test_random_cases(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            report = limit_checks(*random_limit_case(rng))
            assert report.mean_deviation <= 1e-4 and report.max_deviation <= 1e-4


def test_small_battery_passes():
    result = run_battery(n_problems=5, grid=500, weight_cases=500, limit_cases=20, seed=11)
    assert result.passed
    assert len(result.certificates) == 10


@pytest.mark.parametrize("nu", [0.25, 1.0])
def test_battery_nu_variants(nu):
    result = run_battery(n_problems=4, nu=nu, grid=10, weight_cases=200, limit_cases=10, seed=2)
    assert result.passed
    for cert in result.certificates:
        if cert.theorem is Theorem.MEAN_TO_H:
            assert cert.nu == nu and cert.mu > cert.gamma


def test_weights_used_are_the_core_weights():
    l = np.array([0.1, 0.4, 0.9])
    assert check_weight_deviation(l, 2.0) == pytest.approx(np.max(np.abs(3 * hypervolume_weights(l, 2.0) - 1)))
