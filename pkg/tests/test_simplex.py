"""Softmax/logit, entropy, KL, cross-entropy and the scalar inequalities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bregwts.bregman import DomainError, NegEntropyMulticlass, divergence
from bregwts.simplex import (
    clamp_to_interior,
    complete,
    entropy,
    kl,
    kl_loginf_bound_slack,
    logit,
    pinsker_slack,
    softmax,
    total_variation,
    truncate,
    xe,
)


def random_pairs(n, c, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.ones(c), size=n)
    q = rng.dirichlet(np.ones(c), size=n)
    # keep strictly interior
    p = np.maximum(p, 1e-12)
    q = np.maximum(q, 1e-12)
    return p / p.sum(1, keepdims=True), q / q.sum(1, keepdims=True)


class TestSoftmaxLogit:
    def test_uniform(self):
        np.testing.assert_allclose(softmax(np.zeros(3)), np.full(4, 0.25), rtol=1e-15)
        np.testing.assert_allclose(logit(np.full(5, 0.2)), np.zeros(4), atol=1e-15)

    def test_implicit_zero_logit_is_last(self):
        np.testing.assert_allclose(softmax([math.log(3)]), [0.75, 0.25], rtol=1e-15)
        assert logit([0.75, 0.25])[0] == pytest.approx(math.log(3), rel=1e-15)

    def test_inverse_pair(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(-30, 30, size=(10_000, 4))
        np.testing.assert_allclose(logit(softmax(z)), z, atol=1e-10)
        p = rng.dirichlet(np.ones(5), size=1000)
        np.testing.assert_allclose(softmax(logit(p)), p, atol=1e-12)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            softmax([np.nan, 0.0])
        with pytest.raises(ValueError):
            softmax([np.inf])

    def test_logit_rejects_boundary(self):
        with pytest.raises(DomainError):
            logit([1.0, 0.0])

    def test_truncate_complete(self):
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_allclose(complete(truncate(p)), p, rtol=1e-15)


class TestEntropyKlXe:
    def test_entropy_values(self):
        assert entropy([0.5, 0.5]) == pytest.approx(math.log(2), rel=1e-15)
        assert entropy([1.0, 0.0, 0.0]) == 0.0
        assert entropy([0.9, 0.1]) == pytest.approx(-0.9 * math.log(0.9) - 0.1 * math.log(0.1), rel=1e-14)
        assert entropy([0.9, 0.1]) == pytest.approx(0.3251, abs=1e-4)

    def test_kl_values(self):
        assert kl([0.3, 0.7], [0.3, 0.7]) == 0.0
        expected = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        assert kl([0.5, 0.5], [0.25, 0.75]) == pytest.approx(expected, rel=1e-14)
        assert kl([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.1438, abs=1e-4)

    def test_kl_infinite_off_support(self):
        assert kl([0.5, 0.5], [1.0, 0.0]) == math.inf
        assert kl([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), rel=1e-15)

    def test_xe_values(self):
        assert xe([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2), rel=1e-15)
        p = np.array([0.2, 0.3, 0.5])
        assert xe(p, p) == pytest.approx(entropy(p), rel=1e-15)

    def test_gibbs(self):
        p, q = random_pairs(100_000, 4, 1)
        assert np.min(kl(p, q)) >= 0.0

    def test_xe_decomposition(self):
        p, q = random_pairs(10_000, 5, 2)
        np.testing.assert_allclose(xe(p, q), kl(p, q) + entropy(p), atol=1e-10)

    def test_kl_matches_multiclass_divergence(self):
        for c in (2, 3, 10):
            p, q = random_pairs(1000, c, c)
            np.testing.assert_allclose(divergence(NegEntropyMulticlass(c), p[:, :-1], q[:, :-1]),
                                       kl(p, q), atol=1e-10)

    def test_invalid_vectors(self):
        with pytest.raises(DomainError):
            kl([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(DomainError):
            entropy([-0.1, 1.1])
        with pytest.raises(ValueError):
            entropy([1.0])


class TestInequalities:
    def test_pinsker_values(self):
        assert pinsker_slack([0.4, 0.6], [0.4, 0.6]) == 0.0
        p, q = [0.9, 0.1], [0.1, 0.9]
        assert total_variation(p, q) == pytest.approx(0.8, rel=1e-15)
        d = 0.8 * math.log(9)
        assert kl(p, q) == pytest.approx(d, rel=1e-14)
        assert pinsker_slack(p, q) == pytest.approx(d - 1.28, rel=1e-13)

    def test_loginf_values(self):
        assert kl_loginf_bound_slack([0.3, 0.7], [0.3, 0.7]) == 0.0
        d = 0.5 * math.log(2) + 0.5 * math.log(2 / 3)
        expected = math.sqrt(2 * d) / 0.25 - math.log(2)
        got = kl_loginf_bound_slack([0.5, 0.5], [0.25, 0.75])
        assert got == pytest.approx(expected, rel=1e-13)
        assert got == pytest.approx(1.452, abs=1e-3)

    def test_loginf_rejects_boundary(self):
        with pytest.raises(DomainError):
            kl_loginf_bound_slack([1.0, 0.0], [0.5, 0.5])

    @pytest.mark.parametrize("c", [2, 3, 10, 50])
    def test_slacks_nonnegative(self, c):
        p, q = random_pairs(100_000, c, 10 + c)
        assert np.min(pinsker_slack(p, q)) >= -1e-12
        assert np.min(kl_loginf_bound_slack(p, q)) >= -1e-12


class TestClamp:
    def test_interior_unchanged(self):
        p = np.array([0.2, 0.3, 0.5])
        np.testing.assert_array_equal(clamp_to_interior(p, 1e-7), p)

    def test_point_mass(self):
        out = clamp_to_interior([1.0, 0.0], 1e-7)
        assert out[1] == 1e-7
        assert out[0] == pytest.approx(1 - 1e-7, rel=1e-15)
        assert np.all(out >= 1e-7)

    def test_only_touched_rows_change(self):
        p = np.array([[0.2, 0.3, 0.5], [1.0, 0.0, 0.0]])
        out = clamp_to_interior(p, 1e-3)
        np.testing.assert_array_equal(out[0], p[0])
        np.testing.assert_allclose(out[1], [0.998, 1e-3, 1e-3], rtol=1e-12)

    def test_eps_range(self):
        with pytest.raises(ValueError):
            clamp_to_interior([0.5, 0.5], 0.5)
        with pytest.raises(ValueError):
            clamp_to_interior([0.5, 0.5], 0.0)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(0, 1)),
           st.floats(1e-9, 1e-2))
    def test_output_interior(self, raw, eps):
        if raw.sum() == 0 or eps >= 1.0 / len(raw):
            return
        p = raw / raw.sum()
        out = clamp_to_interior(p, eps)
        assert np.all(out >= eps * (1 - 1e-12))
        assert abs(out.sum() - 1.0) <= 1e-12
