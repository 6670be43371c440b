import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st
from scipy.integrate import quad, simpson
from scipy.special import expit

from fermibgk.errors import ConvergenceError, DomainError, OutOfBranchError, UsageError
from fermibgk.fdintegrals import (
    LN3,
    QuadratureRule,
    beta,
    beta_branch,
    beta_inverse,
    beta_prime,
    fd_integral,
    log_moment_integrals,
)

BRANCH_C = st.floats(min_value=-LN3, max_value=20.0)


def simpson_oracle(k, c, n=1_000_001, upper=12.0):
    """Brute-force composite Simpson on [0, upper] with ``n`` nodes."""
    r = np.linspace(0.0, upper, n)
    x = r**2 + c
    return simpson(r**k * np.exp(-x) / (1.0 + np.exp(-x)), x=r)


def quad_oracle(kind, k, c):
    if kind == "I":
        f = lambda r: r**k * expit(-(r * r + c))
    else:
        f = lambda r: r**k * expit(r * r + c) * expit(-(r * r + c))
    val, _ = quad(f, 0.0, math.inf, epsabs=0.0, epsrel=1e-13, limit=200)
    return val


def beta_from_oracle(c):
    I2, I4 = simpson_oracle(2, c), simpson_oracle(4, c)
    return 4 * math.pi * I2 / (4 * math.pi * I4) ** 0.6


class TestOracles:
    def test_I0_at_zero_matches_simpson(self):
        assert fd_integral("I", 0, 0.0) == pytest.approx(simpson_oracle(0, 0.0), rel=1e-12)

    def test_beta_at_branch_end_matches_simpson(self):
        assert beta(-LN3) == pytest.approx(beta_from_oracle(-LN3), rel=1e-12)
        assert beta_branch().beta_lower == pytest.approx(beta_from_oracle(-LN3), rel=1e-12)

    @pytest.mark.parametrize("kind", ["I", "J"])
    @pytest.mark.parametrize("k", [0, 2, 4, 6])
    @pytest.mark.parametrize("c", [-LN3, -0.5, 0.0, 1.0, 7.5])
    def test_matches_adaptive_quadrature(self, kind, k, c):
        assert fd_integral(kind, k, c) == pytest.approx(quad_oracle(kind, k, c), rel=1e-11)

    def test_kind_aliases(self):
        assert fd_integral("plain", 2, 0.3) == fd_integral("I", 2, 0.3)
        assert fd_integral("weighted", 2, 0.3) == fd_integral("J", 2, 0.3)


class TestMaxwellBoltzmannLimit:
    def test_I2_large_c(self):
        assert fd_integral("I", 2, 30.0) == pytest.approx(math.sqrt(math.pi) / 4 * math.exp(-30.0), rel=1e-2)

    @pytest.mark.parametrize("c", [30.0, 40.0])
    def test_beta_large_c(self, c):
        mb = math.pi**0.6 * 1.5**-0.6 * math.exp(-0.4 * c)
        assert beta(c) == pytest.approx(mb, rel=1e-2)

    def test_beta_prime_large_c(self):
        assert beta_prime(40.0) == pytest.approx(-0.4 * beta(40.0), rel=1e-2)

    def test_huge_c_stays_finite(self):
        b = beta(700.0)
        assert 0 < b < 1e-100
        assert beta_inverse(b) == pytest.approx(700.0, rel=1e-12)


class TestIntegrationByParts:
    @given(BRANCH_C)
    def test_identities(self, c):
        for jk, ik, factor in ((2, 0, 0.5), (4, 2, 1.5), (6, 4, 2.5)):
            J = fd_integral("J", jk, c)
            I = fd_integral("I", ik, c)
            assert J == pytest.approx(factor * I, rel=1e-10)

    def test_J4_at_zero(self):
        assert fd_integral("J", 4, 0.0) == pytest.approx(1.5 * fd_integral("I", 2, 0.0), rel=1e-12)


class TestQuadratureRule:
    @pytest.mark.parametrize("c", [-LN3, 0.0, 5.0, 50.0])
    def test_doubling_nodes_changes_little(self, c):
        base = log_moment_integrals(c)
        fine = log_moment_integrals(c, QuadratureRule().doubled())
        assert base[0] == fine[0]
        np.testing.assert_allclose(base[1], fine[1], rtol=1e-12)
        np.testing.assert_allclose(base[2], fine[2], rtol=1e-12)

    def test_simpson_scheme_agrees(self):
        rule = QuadratureRule(nodes_per_panel=2001, scheme="simpson")
        assert fd_integral("I", 2, 0.0, rule) == pytest.approx(fd_integral("I", 2, 0.0), rel=1e-10)

    @pytest.mark.parametrize("c", [-3.0, 0.0, 10.0])
    def test_tail_negligible_at_cutoff(self, c):
        R = QuadratureRule().cutoff(c)
        r = np.linspace(0, R, 2001)
        g = r**6 / (np.exp(np.minimum(r**2 + c, 700)) + 1)
        assert g[-1] < 1e-16 * g.max()


class TestErrors:
    @pytest.mark.parametrize("c", [math.nan, math.inf, -math.inf])
    def test_non_finite_c(self, c):
        with pytest.raises(DomainError):
            fd_integral("I", 2, c)

    @pytest.mark.parametrize("k", [1, 3, 8, -2])
    def test_bad_order(self, k):
        with pytest.raises(UsageError):
            fd_integral("I", k, 0.0)

    def test_bad_kind(self):
        with pytest.raises(UsageError):
            fd_integral("K", 2, 0.0)

    @pytest.mark.parametrize("B", [0.0, -1.0])
    def test_inverse_non_positive(self, B):
        with pytest.raises(OutOfBranchError):
            beta_inverse(B)

    def test_inverse_above_branch(self):
        lo = beta_branch().beta_lower
        with pytest.raises(OutOfBranchError) as info:
            beta_inverse(lo * 1.01)
        assert info.value.B == pytest.approx(lo * 1.01)
        assert info.value.beta_lower == lo

    def test_inverse_at_endpoint_rejected(self):
        with pytest.raises(OutOfBranchError):
            beta_inverse(beta_branch().beta_lower)

    def test_convergence_error_is_reported(self):
        with pytest.raises(ConvergenceError):
            beta_inverse(beta(3.0), max_iter=1)


class TestBeta:
    def test_decreasing_example(self):
        assert beta(0.0) > beta(1.0)

    def test_branch_end_derivative_negative(self):
        assert beta_prime(-LN3) < 0

    def test_prime_vs_central_difference(self):
        h = 1e-5
        fd = (beta(2 + h) - beta(2 - h)) / (2 * h)
        assert beta_prime(2.0) == pytest.approx(fd, rel=1e-6)

    @given(BRANCH_C, BRANCH_C)
    def test_monotone_pairs(self, c1, c2):
        lo, hi = sorted((c1, c2))
        # separations below ~1e-8 are not resolvable in double precision
        assume(hi - lo > 1e-8)
        assert beta(lo) > beta(hi)

    @given(BRANCH_C)
    def test_prime_negative(self, c):
        assert beta_prime(c) < 0

    def test_vectorized(self):
        c = np.linspace(-LN3, 10, 7)
        np.testing.assert_allclose(beta(c), [beta(float(x)) for x in c], rtol=1e-14)

    def test_proof_claim_sign_grid(self):
        r = np.linspace(0, 8, 161)[:, None]
        c = np.linspace(-LN3, 10, 201)[None, :]
        expr = -3 * np.exp(r**2 + 2 * c) + np.exp(r**2 + c) + np.exp(c) - 3
        assert np.all(expr <= 1e-12 * np.exp(r**2 + 2 * c))


class TestInverse:
    @pytest.mark.parametrize("c", [0.0, 5.0, -LN3 + 1e-3, 20.0])
    def test_round_trip(self, c):
        assert beta_inverse(beta(c)) == pytest.approx(c, abs=1e-8)

    @given(st.floats(min_value=-LN3 + 1e-3, max_value=20.0))
    def test_round_trip_property(self, c):
        B = beta(c)
        got = beta_inverse(B)
        assert got == pytest.approx(c, abs=1e-8)
        assert abs(beta(got) - B) <= 1e-10 * B

    def test_vectorized_inverse(self):
        c = np.array([-1.0, 0.0, 2.0, 12.0])
        np.testing.assert_allclose(beta_inverse(beta(c)), c, atol=1e-10)

    def test_branch_record(self):
        br = beta_branch()
        assert br.lower == -LN3
        assert br.decreasing
        assert br.contains(1.0) and not br.contains(br.beta_lower) and not br.contains(0.0)
