import math
import warnings

import numpy as np
import pytest

from weaktag import aggregation as agg
from _oracles import (
    central_diff,
    enum_joint,
    enum_lf_precision,
    enum_partition,
    enum_posterior,
    random_firing_rows,
    rel_grad_error,
)

E = math.e
THETA_1 = np.array([[1.0, 0.0]])
ATT_1 = np.array([1])


def _random_theta(rng, m, k, scale=3.0):
    return rng.uniform(-scale, scale, size=(m, k))


def _random_attached(rng, m, k):
    return rng.integers(1, k + 1, size=m)


class TestPotential:
    def test_abstain_is_one(self):
        assert agg.potential(THETA_1, 0, 0, 1, ATT_1) == 1.0
        assert agg.potential(np.array([[5.0, -3.0]]), 0, 0, 2, ATT_1) == 1.0

    def test_fired_zero_theta(self):
        assert agg.potential(np.array([[0.0, 0.0]]), 0, 1, 1, np.array([1])) == 1.0

    def test_fired_unit_theta(self):
        assert agg.potential(THETA_1, 0, 1, 1, ATT_1) == pytest.approx(E, abs=1e-12)

    def test_rejects_foreign_class_value(self):
        with pytest.raises(ValueError):
            agg.potential(THETA_1, 0, 2, 1, ATT_1)


class TestLogPartition:
    def test_worked_example(self):
        # (1 + e) + (1 + 1) enumerated directly
        expected = math.log((1 + E) + 2.0)
        assert agg.log_partition(THETA_1) == pytest.approx(expected, abs=1e-12)
        assert agg.log_partition(THETA_1) == pytest.approx(1.743660, abs=1e-4)

    def test_all_zero_theta(self):
        for m, k in ((1, 2), (3, 2), (4, 5)):
            theta = np.zeros((m, k))
            assert agg.log_partition(theta) == pytest.approx(math.log(k * 2**m), abs=1e-12)

    def test_no_lfs(self):
        assert agg.log_partition(np.zeros((0, 3))) == pytest.approx(math.log(3), abs=1e-12)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(11)
        for _ in range(60):
            m = int(rng.integers(1, 7))
            k = int(rng.integers(2, 5))
            theta = _random_theta(rng, m, k)
            ours = math.exp(agg.log_partition(theta))
            brute = enum_partition(theta)
            assert abs(ours - brute) / brute < 1e-9

    def test_stays_finite_at_extreme_theta(self):
        theta = np.array([[500.0, -500.0], [250.0, 500.0]])
        assert np.isfinite(agg.log_partition(theta))


class TestJointAndPosterior:
    def test_worked_joint(self):
        row = np.array([1])
        assert agg.joint_prob(THETA_1, row, 1) == pytest.approx(0.475367, abs=1e-5)
        assert agg.joint_prob(THETA_1, row, 2) == pytest.approx(0.174878, abs=1e-5)
        assert agg.joint_prob(THETA_1, row, 1) == pytest.approx(
            enum_joint(THETA_1, row, 1), abs=1e-12
        )

    def test_abstain_row_is_uniform_over_classes(self):
        rng = np.random.default_rng(2)
        theta = _random_theta(rng, 3, 4)
        row = np.zeros(3, dtype=np.int64)
        joints = [agg.joint_prob(theta, row, y) for y in range(1, 5)]
        assert np.allclose(joints, joints[0])
        assert np.allclose(agg.posterior(theta, row), 0.25, atol=1e-12)

    def test_worked_posterior(self):
        post = agg.posterior(THETA_1, np.array([1]))
        np.testing.assert_allclose(post, [E / (1 + E), 1 / (1 + E)], atol=1e-9)
        np.testing.assert_allclose(post, [0.731059, 0.268941], atol=1e-5)

    def test_posterior_matches_enumeration(self):
        rng = np.random.default_rng(5)
        for _ in range(60):
            m = int(rng.integers(1, 7))
            k = int(rng.integers(2, 5))
            theta = _random_theta(rng, m, k)
            attached = _random_attached(rng, m, k)
            row = random_firing_rows(rng, attached, 1)[0]
            ours = agg.posterior(theta, row)
            np.testing.assert_allclose(ours, enum_posterior(theta, row), atol=1e-9)
            assert abs(ours.sum() - 1.0) < 1e-9
            row_mass = sum(agg.joint_prob(theta, row, y) for y in range(1, k + 1))
            assert row_mass <= 1.0 + 1e-12

    def test_joint_sums_to_one_over_full_event_space(self):
        # summing P(l, y) over all firing patterns and classes gives exactly 1
        import itertools

        rng = np.random.default_rng(7)
        theta = _random_theta(rng, 4, 3)
        attached = _random_attached(rng, 4, 3)
        total = 0.0
        for pattern in itertools.product((0, 1), repeat=4):
            row = np.array(pattern) * attached
            for y in range(1, 4):
                total += agg.joint_prob(theta, row, y)
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_posterior_uses_only_fired_rows(self):
        # for a fixed fired set the posterior is exactly softmax of the fired thetas
        rng = np.random.default_rng(9)
        theta = _random_theta(rng, 5, 3)
        attached = _random_attached(rng, 5, 3)
        row = random_firing_rows(rng, attached, 1)[0]
        fired = row != 0
        scores = theta[fired].sum(axis=0)
        expected = np.exp(scores - scores.max())
        expected /= expected.sum()
        np.testing.assert_allclose(agg.posterior(theta, row), expected, atol=1e-12)

    def test_monotone_in_own_class_weight(self):
        rng = np.random.default_rng(13)
        theta = _random_theta(rng, 3, 3, scale=1.0)
        attached = np.array([1, 2, 3])
        row = np.array([1, 2, 0])
        base = agg.posterior(theta, row)[0]
        theta2 = theta.copy()
        theta2[0, 0] += 0.5
        assert agg.posterior(theta2, row)[0] > base


class TestUnsupervisedNLL:
    def test_worked_example(self):
        nll = agg.nll_unsupervised(THETA_1, np.array([[1]]))
        expected = -math.log(enum_joint(THETA_1, np.array([1]), 1) + enum_joint(THETA_1, np.array([1]), 2))
        assert nll == pytest.approx(expected, abs=1e-12)
        assert nll == pytest.approx(0.430405, abs=1e-5)

    def test_duplicated_row_doubles_loss(self):
        rng = np.random.default_rng(3)
        theta = _random_theta(rng, 4, 3)
        attached = _random_attached(rng, 4, 3)
        row = random_firing_rows(rng, attached, 1)
        single = agg.nll_unsupervised(theta, row)
        double = agg.nll_unsupervised(theta, np.vstack([row, row]))
        assert double == pytest.approx(2 * single, rel=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            theta = _random_theta(rng, 3, 3)
            attached = _random_attached(rng, 3, 3)
            rows = random_firing_rows(rng, attached, 5)
            assert agg.nll_unsupervised(theta, rows) >= 0.0

    def test_all_abstain_rows_dropped_with_warning(self):
        theta = np.array([[1.0, 0.0]])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            value = agg.nll_unsupervised(theta, np.zeros((3, 1), dtype=np.int64))
        assert value == 0.0
        assert any("firings" in str(w.message) for w in caught)

    def test_abstain_rows_do_not_change_loss(self):
        theta = np.array([[1.0, 0.0], [0.5, -0.5]])
        fired = np.array([[1, 0]])
        with_abstain = np.array([[1, 0], [0, 0]])
        assert agg.nll_unsupervised(theta, with_abstain) == pytest.approx(
            agg.nll_unsupervised(theta, fired), abs=1e-12
        )


class TestPrecisionModel:
    def test_worked_example(self):
        assert agg.lf_precision(THETA_1, ATT_1, 0) == pytest.approx(E / (1 + E), abs=1e-9)

    def test_uniform_theta_gives_uniform_precision(self):
        theta = np.zeros((3, 4))
        attached = np.array([1, 2, 3])
        for j in range(3):
            assert agg.lf_precision(theta, attached, j) == pytest.approx(0.25, abs=1e-12)

    def test_strictly_interior(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            theta = _random_theta(rng, 4, 3)
            attached = _random_attached(rng, 4, 3)
            p = agg.lf_precisions(theta, attached)
            assert np.all(p > 0) and np.all(p < 1)

    def test_matches_enumeration(self):
        rng = np.random.default_rng(21)
        for _ in range(40):
            m = int(rng.integers(1, 6))
            k = int(rng.integers(2, 5))
            theta = _random_theta(rng, m, k)
            attached = _random_attached(rng, m, k)
            j = int(rng.integers(0, m))
            ours = agg.lf_precision(theta, attached, j)
            brute = enum_lf_precision(theta, attached, j)
            assert abs(ours - brute) / brute < 1e-9


class TestPrecisionGuide:
    def test_single_lf_symmetric_belief(self):
        # p = 0.5 maximizes 0.5 log p + 0.5 log(1-p) at log 0.5
        theta = np.zeros((1, 2))
        attached = np.array([1])
        beliefs = np.array([0.5])
        top = agg.precision_guide(theta, attached, beliefs)
        assert top == pytest.approx(math.log(0.5), abs=1e-12)
        for delta in (0.5, 1.0, -0.7):
            off = agg.precision_guide(np.array([[delta, 0.0]]), attached, beliefs)
            assert off < top

    def test_always_nonpositive(self):
        rng = np.random.default_rng(6)
        for _ in range(25):
            theta = _random_theta(rng, 3, 3)
            attached = _random_attached(rng, 3, 3)
            beliefs = rng.uniform(0.05, 0.95, size=3)
            assert agg.precision_guide(theta, attached, beliefs) <= 0.0


class TestGradients:
    def test_nll_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(17)
        for _ in range(25):
            m = int(rng.integers(1, 5))
            k = int(rng.integers(2, 4))
            theta = _random_theta(rng, m, k, scale=2.0)
            attached = _random_attached(rng, m, k)
            rows = random_firing_rows(rng, attached, int(rng.integers(1, 11)))
            analytic = agg.nll_grad(theta, rows)
            numeric = central_diff(lambda t: agg.nll_unsupervised(t, rows), theta)
            assert rel_grad_error(analytic, numeric) < 1e-5

    def test_guide_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(18)
        for _ in range(25):
            m = int(rng.integers(1, 5))
            k = int(rng.integers(2, 4))
            theta = _random_theta(rng, m, k, scale=2.0)
            attached = _random_attached(rng, m, k)
            beliefs = rng.uniform(0.1, 0.9, size=m)
            analytic = agg.precision_guide_grad(theta, attached, beliefs)
            numeric = central_diff(
                lambda t: agg.precision_guide(t, attached, beliefs), theta
            )
            assert rel_grad_error(analytic, numeric) < 1e-5

    def test_combined_objective_gradient(self):
        rng = np.random.default_rng(19)
        for _ in range(15):
            m = int(rng.integers(1, 5))
            k = int(rng.integers(2, 4))
            theta = _random_theta(rng, m, k, scale=2.0)
            attached = _random_attached(rng, m, k)
            rows = random_firing_rows(rng, attached, int(rng.integers(1, 11)))
            beliefs = rng.uniform(0.1, 0.9, size=m)
            weight = float(rng.uniform(0.2, 2.0))
            analytic = agg.grad_theta(theta, attached, rows, beliefs, guide_weight=weight)
            numeric = central_diff(
                lambda t: agg.nll_unsupervised(t, rows)
                - weight * agg.precision_guide(t, attached, beliefs),
                theta,
            )
            assert rel_grad_error(analytic, numeric) < 1e-5

    def test_duplicated_rows_double_the_gradient(self):
        rng = np.random.default_rng(20)
        theta = _random_theta(rng, 3, 3)
        attached = _random_attached(rng, 3, 3)
        row = random_firing_rows(rng, attached, 1)
        single = agg.nll_grad(theta, row)
        double = agg.nll_grad(theta, np.vstack([row, row]))
        np.testing.assert_allclose(double, 2 * single, rtol=1e-12)

    def test_agreement_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(22)
        for _ in range(15):
            m = int(rng.integers(1, 5))
            k = int(rng.integers(2, 4))
            theta = _random_theta(rng, m, k, scale=2.0)
            attached = _random_attached(rng, m, k)
            rows = random_firing_rows(rng, attached, int(rng.integers(1, 8)))
            probs = rng.dirichlet(np.ones(k), size=rows.shape[0])

            def kl_sum(t):
                post = agg.posterior_rows(t, rows)
                return float(np.sum(probs * (np.log(probs) - np.log(post))))

            analytic = agg.agreement_grad_theta(theta, rows, probs)
            numeric = central_diff(kl_sum, theta)
            assert rel_grad_error(analytic, numeric) < 1e-5


def test_init_theta_prefers_own_class():
    attached = np.array([2, 1, 3])
    theta = agg.init_theta(attached, 3)
    np.testing.assert_array_equal(theta[np.arange(3), attached - 1], 1.0)
    assert theta.sum() == pytest.approx(3.0)
