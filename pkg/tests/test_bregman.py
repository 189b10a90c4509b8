"""Divergence generators, their conjugates and the duality identities."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logit as sp_logit

from bregwts.bregman import (
    DomainError,
    ItakuraSaito,
    L2,
    Logistic,
    NegEntropyBinary,
    NegEntropyMulticlass,
    divergence,
    dual_divergence,
    dual_map,
    duality_residual,
    generator_value,
    inverse_dual_map,
    law_of_cosines_residual,
    legendre_value,
    make_generator,
)

GENERATORS = [
    L2(3),
    NegEntropyBinary(2),
    NegEntropyMulticlass(2),
    NegEntropyMulticlass(3),
    NegEntropyMulticlass(10),
    Logistic(3),
    ItakuraSaito(3),
]
IDS = [f"{g.kind}-{g.dim}" for g in GENERATORS]


def bernoulli_kl(p, q):
    return p * math.log(p / q) + (1 - p) * math.log((1 - p) / (1 - q))


class TestPointValues:
    def test_generator_values(self):
        assert generator_value(L2(1), 3.0) == 4.5
        assert generator_value(NegEntropyBinary(1), 0.5) == pytest.approx(-math.log(2), abs=1e-15)
        assert generator_value(ItakuraSaito(1), 1.0) == 0.0

    def test_dual_map_values(self):
        assert dual_map(L2(1), [7.0])[0] == 7.0
        assert dual_map(NegEntropyBinary(1), [0.5])[0] == 0.0
        assert dual_map(Logistic(1), [0.0])[0] == 0.5

    def test_inverse_dual_map_values(self):
        assert inverse_dual_map(L2(1), [7.0])[0] == 7.0
        assert inverse_dual_map(NegEntropyBinary(1), [0.0])[0] == 0.5
        assert inverse_dual_map(Logistic(1), [0.5])[0] == 0.0

    def test_legendre_values(self):
        assert legendre_value(NegEntropyBinary(1), 0.0) == pytest.approx(math.log(2), abs=1e-15)
        assert legendre_value(L2(1), 4.0) == 8.0
        assert legendre_value(Logistic(1), 0.5) == pytest.approx(-math.log(2), abs=1e-15)

    def test_divergence_values(self):
        assert divergence(L2(1), 3.0, 1.0) == 2.0
        assert divergence(NegEntropyBinary(1), 0.3, 0.3) == 0.0
        d = divergence(Logistic(1), sp_logit(0.2), sp_logit(0.7))
        assert d == pytest.approx(bernoulli_kl(0.7, 0.2), rel=1e-12)

    def test_itakura_saito_closed_form(self):
        x, y = 2.0, 5.0
        assert divergence(ItakuraSaito(1), x, y) == pytest.approx(x / y - math.log(x / y) - 1, rel=1e-14)
        # conjugate of -log x is -1 - log(-s)
        assert legendre_value(ItakuraSaito(1), -0.5) == pytest.approx(-1 - math.log(0.5), rel=1e-14)

    def test_multiclass_divergence_is_kl(self):
        p = np.array([0.2, 0.5, 0.3])
        q = np.array([0.4, 0.4, 0.2])
        expected = float(np.sum(p * np.log(p / q)))
        assert divergence(NegEntropyMulticlass(3), p[:2], q[:2]) == pytest.approx(expected, rel=1e-13)

    def test_make_generator(self):
        assert make_generator("negentropy-multiclass", 4) == NegEntropyMulticlass(4)
        assert make_generator("L2", 2) == L2(2)
        with pytest.raises(ValueError):
            make_generator("hinge")


class TestDomains:
    def test_outside_closed_domain_is_infinite(self):
        assert generator_value(NegEntropyBinary(1), 1.5) == math.inf
        assert generator_value(ItakuraSaito(1), -1.0) == math.inf
        assert generator_value(NegEntropyMulticlass(3), [0.7, 0.5]) == math.inf
        assert divergence(NegEntropyBinary(1), 1.5, 0.5) == math.inf

    def test_boundary_first_argument_uses_zero_log_zero(self):
        # D(0, q) = -log(1 - q) for the Bernoulli KL
        assert divergence(NegEntropyBinary(1), 0.0, 0.3) == pytest.approx(-math.log(0.7), rel=1e-14)
        assert generator_value(NegEntropyMulticlass(3), [0.0, 1.0]) == 0.0

    def test_dual_map_rejects_boundary(self):
        with pytest.raises(DomainError):
            dual_map(NegEntropyBinary(1), [0.0])
        with pytest.raises(DomainError):
            dual_map(NegEntropyMulticlass(3), [0.5, 0.5])
        with pytest.raises(DomainError):
            divergence(NegEntropyBinary(1), 0.3, 1.0)

    def test_dual_domain_checked(self):
        with pytest.raises(DomainError):
            inverse_dual_map(ItakuraSaito(1), [1.0])
        with pytest.raises(DomainError):
            legendre_value(Logistic(1), 1.5)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            divergence(L2(3), [1.0, 2.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            generator_value(NegEntropyMulticlass(4), [0.1, 0.2])

    def test_multiclass_reconstruction_tolerance(self):
        g = NegEntropyMulticlass(3)
        assert generator_value(g, [0.5, 0.5 + 5e-13]) < math.inf
        assert generator_value(g, [0.5, 0.5 + 1e-9]) == math.inf

    def test_never_nan(self):
        vals = generator_value(NegEntropyBinary(1), np.array([[-1.0], [0.0], [0.5], [1.0], [2.0]]))
        assert not np.any(np.isnan(vals))


@pytest.mark.parametrize("gen", GENERATORS, ids=IDS)
class TestIdentities:
    def sample(self, gen, n, seed=0):
        return gen.sample_interior(np.random.default_rng(seed), n)

    def test_roundtrip(self, gen):
        x = self.sample(gen, 1000)
        back = inverse_dual_map(gen, dual_map(gen, x))
        np.testing.assert_allclose(back, x, rtol=1e-10, atol=1e-14)

    def test_fenchel_equality(self, gen):
        x = self.sample(gen, 1000)
        xs = dual_map(gen, x)
        gap = generator_value(gen, x) + legendre_value(gen, xs) - np.sum(x * xs, axis=-1)
        scale = 1 + np.abs(np.sum(x * xs, axis=-1))
        assert np.max(np.abs(gap) / scale) <= 1e-10

    def test_nonnegative_and_zero_on_diagonal(self, gen):
        x = self.sample(gen, 10_000, 1)
        y = self.sample(gen, 10_000, 2)
        assert np.min(divergence(gen, x, y)) >= -1e-12
        assert np.max(np.abs(divergence(gen, x, x))) <= 1e-12
        far = np.linalg.norm(x - y, axis=-1) >= 1e-3
        assert np.all(np.asarray(divergence(gen, x, y))[far] > 0)

    def test_midpoint_convexity(self, gen):
        x1, x2, y = (self.sample(gen, 1000, s) for s in (3, 4, 5))
        lhs = divergence(gen, 0.5 * (x1 + x2), y)
        rhs = 0.5 * divergence(gen, x1, y) + 0.5 * divergence(gen, x2, y)
        assert np.all(lhs <= rhs + 1e-12 * (1 + np.abs(rhs)))

    def test_duality(self, gen):
        x, y = self.sample(gen, 1000, 6), self.sample(gen, 1000, 7)
        assert np.max(duality_residual(gen, x, y)) <= 1e-9

    def test_law_of_cosines(self, gen):
        x, y, z = (self.sample(gen, 1000, s) for s in (8, 9, 10))
        assert np.max(np.abs(law_of_cosines_residual(gen, x, y, z))) <= 1e-9


class TestResidualOracles:
    def test_duality_two_sided(self):
        """Both sides from the value functions alone, no shared code path."""
        for gen, x, y in ((NegEntropyBinary(1), 0.2, 0.7), (ItakuraSaito(1), 2.0, 5.0)):
            xs, ys = dual_map(gen, [x])[0], dual_map(gen, [y])[0]
            primal = generator_value(gen, x) - generator_value(gen, y) - (x - y) * ys
            dual = legendre_value(gen, ys) - legendre_value(gen, xs) - (ys - xs) * x
            assert abs(primal - dual) <= 1e-9
            assert duality_residual(gen, x, y) <= 1e-9

    def test_l2_self_dual(self):
        rng = np.random.default_rng(0)
        x, y = rng.normal(size=(2, 100, 4))
        np.testing.assert_allclose(dual_divergence(L2(4), y, x), divergence(L2(4), x, y), rtol=1e-14)

    def test_law_of_cosines_degenerate(self):
        gen = NegEntropyMulticlass(3)
        x, y = np.array([0.2, 0.3]), np.array([0.5, 0.1])
        assert law_of_cosines_residual(gen, x, y, y) == 0.0
        assert law_of_cosines_residual(gen, x, x, y) == 0.0

    def test_law_of_cosines_multiclass_terms(self):
        """Each term evaluated from explicit KL sums."""
        p = np.array([0.2, 0.3, 0.5])
        q = np.array([0.6, 0.1, 0.3])
        r = np.array([0.25, 0.25, 0.5])

        def kl(a, b):
            return float(np.sum(a * np.log(a / b)))

        inner = float(np.sum((p - q)[:2] * (np.log(r[:2] / r[2]) - np.log(q[:2] / q[2]))))
        oracle = kl(p, r) - kl(p, q) - kl(q, r) + inner
        res = law_of_cosines_residual(NegEntropyMulticlass(3), p[:2], q[:2], r[:2])
        assert abs(oracle) <= 1e-12 and abs(res) <= 1e-9


probs = st.floats(min_value=1e-6, max_value=1 - 1e-6)


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(probs, probs, probs)
    def test_bernoulli_law_of_cosines(self, x, y, z):
        assert abs(law_of_cosines_residual(NegEntropyBinary(1), x, y, z)) <= 1e-9

    @settings(max_examples=200, deadline=None)
    @given(probs, probs)
    def test_bernoulli_matches_kl(self, p, q):
        assert divergence(NegEntropyBinary(1), p, q) == pytest.approx(bernoulli_kl(p, q), rel=1e-9, abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-30, 30), st.floats(-30, 30))
    def test_logistic_argument_flip(self, a, b):
        """D_logistic(a, b) is the Bernoulli KL with the arguments swapped."""
        pa, pb = 1 / (1 + math.exp(-a)), 1 / (1 + math.exp(-b))
        if min(pa, pb, 1 - pa, 1 - pb) < 1e-9:
            return
        assert divergence(Logistic(1), a, b) == pytest.approx(bernoulli_kl(pb, pa), rel=1e-6, abs=1e-10)
