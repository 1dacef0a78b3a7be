import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from certunlearn.errors import InvalidArgument
from certunlearn.unlearning import (
    Budget,
    UnlearnConfig,
    analytic_delta,
    bound_basic,
    bound_components,
    bound_convex,
    bound_efficient,
    bound_practical,
    calibrate,
    group_budget,
    implied_budget_range,
    implied_epsilon,
    sigma_analytic,
    sigma_classic,
)

# frozen from 40-digit mpmath evaluations of the closed forms
EFFICIENT_EXAMPLE = 22.332231495616150
PRACTICAL_EXAMPLE_G1 = 22.439843070396958
SIGMA_CLASSIC_EXAMPLE = 5.074544964718079
SIGMA_ANALYTIC_EXAMPLE = 2.033210529801637

EXAMPLE = dict(C=10.0, M=1.0, L=1.0, lam=1000.0, lambda_min=0.0, rho=0.05, H=2000.0)


def cfg(**kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return UnlearnConfig(**kw)


def mp_efficient(C, M, L, lam, lmin, d, rho):
    k = mpmath.mpf(lam) + lmin
    return 2 * C * (M * C + lam) / k + (32 * mpmath.sqrt(mpmath.log(mpmath.mpf(d) / rho)) / k + mpmath.mpf(1) / 8) * L * C


def mp_practical(C, M, L, lam, lmin, d, rho, G):
    k = mpmath.mpf(lam) + lmin
    first = (2 * C * (M * C + lam) + G) / k
    return first + (16 * mpmath.sqrt(mpmath.log(mpmath.mpf(d) / rho)) / k + mpmath.mpf(1) / 16) * (2 * L * C + G)


class TestConfig:
    def test_defaults(self):
        c = UnlearnConfig()
        assert (c.lam, c.H, c.L, c.M, c.lambda_min) == (1.0, 10.0, 1.0, 1.0, 0.0)

    @pytest.mark.parametrize(
        "kw",
        [{"rho": 0.0}, {"rho": 1.0}, {"lam": 0.0}, {"lam": 1.0, "lambda_min": -1.0},
         {"H": 0.0}, {"s": -1}, {"G": -1.0}, {"hessian_batch_size": 0}, {"C": float("nan")}],
    )
    def test_rejects(self, kw):
        with pytest.raises(InvalidArgument):
            cfg(**kw)

    def test_small_h_warns(self):
        with pytest.warns(UserWarning, match="Hessian scale"):
            UnlearnConfig(lam=20.0, H=10.0)

    def test_budget_validation(self):
        for eps, delta in [(0.0, 0.1), (1.0, 0.0), (1.0, 1.0)]:
            with pytest.raises(InvalidArgument):
                Budget(eps, delta)

    def test_group_budget(self):
        assert group_budget(Budget(0.5, 0.1), 3) == Budget(1.5, 0.1)
        assert group_budget(Budget(0.5, 0.1), 1) == Budget(0.5, 0.1)
        assert group_budget(Budget(0.5, 0.1), 10).epsilon == pytest.approx(5.0)
        with pytest.raises(InvalidArgument):
            group_budget(Budget(0.5, 0.1), 0)

    @given(st.floats(1e-3, 10), st.integers(1, 100))
    def test_group_budget_monotone(self, eps, k):
        b = Budget(eps, 0.1)
        assert group_budget(b, k).epsilon < group_budget(b, k + 1).epsilon


class TestBounds:
    def test_basic_example(self):
        assert bound_basic(cfg(C=10, M=1, lam=1, lambda_min=0)) == pytest.approx(220.0, abs=1e-12)

    def test_basic_degenerate_and_limit(self):
        assert bound_basic(cfg(C=0.0, lam=3.0)) == 0.0
        assert bound_basic(cfg(C=10, M=1, lam=1e12, H=2e12)) == pytest.approx(20.0, rel=1e-9)

    def test_efficient_example(self):
        c = cfg(**EXAMPLE)
        oracle = float(mp_efficient(10, 1, 1, 1000, 0, 100, mpmath.mpf("0.05")))
        assert oracle == pytest.approx(EFFICIENT_EXAMPLE, abs=1e-12)
        assert bound_efficient(c, 100) == pytest.approx(EFFICIENT_EXAMPLE, abs=1e-9)

    def test_practical_examples(self):
        c = cfg(**EXAMPLE)
        oracle = float(mp_practical(10, 1, 1, 1000, 0, 100, mpmath.mpf("0.05"), 1))
        assert oracle == pytest.approx(PRACTICAL_EXAMPLE_G1, abs=1e-12)
        assert bound_practical(c, 100, 1.0) == pytest.approx(PRACTICAL_EXAMPLE_G1, abs=1e-9)
        assert bound_practical(c, 100, 0.0) == pytest.approx(bound_efficient(c, 100), abs=1e-12)

    def test_practical_without_lipschitz_terms(self):
        c = cfg(C=3.0, M=0.0, L=0.0, lam=2.0, lambda_min=0.5)
        assert bound_practical(c, 50, 0.0) == pytest.approx(2 * 3.0 * 2.0 / 2.5, rel=1e-15)

    def test_efficient_equals_basic_without_l(self):
        c = cfg(C=5.0, L=0.0, lam=4.0)
        assert bound_efficient(c, 10) == bound_basic(c)

    def test_efficient_decreases_with_rho(self):
        assert bound_efficient(cfg(rho=0.2), 100) < bound_efficient(cfg(rho=0.01), 100)

    def test_convex(self):
        assert bound_convex(1.0, 10.0, 1.0) == 200.0
        assert bound_convex(0.0, 10.0, 1.0) == 0.0
        with pytest.raises(InvalidArgument):
            bound_convex(1.0, 1.0, 0.0)

    @settings(max_examples=200)
    @given(
        st.floats(0.01, 100), st.floats(0, 10), st.floats(1e-3, 1e4), st.floats(-0.5, 0.0),
    )
    def test_convex_never_exceeds_basic(self, C, M, lam, lmin_frac):
        lmin = lmin_frac * lam
        c = cfg(C=C, M=M, lam=lam, lambda_min=lmin)
        assert bound_convex(M, C, lam + lmin) <= bound_basic(c) * (1 + 1e-12)

    def test_rejects_nonpositive_curvature(self):
        c = cfg(lam=1.0, lambda_min=0.0)
        object.__setattr__(c, "lambda_min", -1.0)
        with pytest.raises(InvalidArgument):
            bound_basic(c)
        with pytest.raises(InvalidArgument):
            bound_practical(cfg(), 0, 0.0)

    def test_components(self):
        comp = bound_components(cfg(**EXAMPLE), 100, 1.0)
        assert comp["practical"] == pytest.approx(PRACTICAL_EXAMPLE_G1, abs=1e-9)
        assert comp["basic"] <= comp["efficient"]


class TestCalibration:
    def test_classic_example(self):
        oracle = float(2 * mpmath.sqrt(2 * mpmath.log(25)))
        assert oracle == pytest.approx(SIGMA_CLASSIC_EXAMPLE, abs=1e-14)
        assert sigma_classic(1.0, Budget(0.5, 0.05)) == pytest.approx(SIGMA_CLASSIC_EXAMPLE, abs=1e-12)

    def test_classic_linearity(self):
        b = Budget(0.7, 0.01)
        assert sigma_classic(0.0, b) == 0.0
        assert sigma_classic(2.0, b) == pytest.approx(2 * sigma_classic(1.0, b), rel=1e-15)
        assert sigma_classic(1.0, Budget(1.4, 0.01)) == pytest.approx(sigma_classic(1.0, b) / 2, rel=1e-15)

    def test_analytic_delta_matches_mpmath(self):
        for sigma, D, eps in [(2.0, 1.0, 0.5), (0.3, 1.0, 5.0), (50.0, 10.0, 0.1), (0.05, 1.0, 40.0)]:
            a, b = mpmath.mpf(D) / (2 * sigma), mpmath.mpf(eps) * sigma / D
            ref = mpmath.ncdf(a - b) - mpmath.exp(eps) * mpmath.ncdf(-a - b)
            assert analytic_delta(sigma, D, eps) == pytest.approx(float(ref), rel=1e-9, abs=1e-300)

    def test_analytic_example(self):
        s = sigma_analytic(1.0, Budget(0.5, 0.05))
        assert s == pytest.approx(SIGMA_ANALYTIC_EXAMPLE, rel=1e-12)
        assert s < sigma_classic(1.0, Budget(0.5, 0.05))
        # strict slack at the classic value
        assert analytic_delta(SIGMA_CLASSIC_EXAMPLE, 1.0, 0.5) < 0.05

    @settings(max_examples=150, deadline=None)
    @given(
        st.floats(0.05, 20), st.floats(1e-8, 0.5), st.sampled_from([0.01, 0.1, 1.0, 10.0, 100.0])
    )
    def test_analytic_is_minimal(self, eps, delta, D):
        b = Budget(eps, delta)
        s = sigma_analytic(D, b)
        assert analytic_delta(s, D, eps) <= delta
        assert analytic_delta(s * (1 - 1e-6), D, eps) > delta

    def test_zero_sensitivity(self):
        assert sigma_analytic(0.0, Budget(1.0, 0.1)) == 0.0

    def test_calibrate_dispatch(self):
        b = Budget(1.0, 0.1)
        assert calibrate(2.0, b, "classic") == sigma_classic(2.0, b)
        assert calibrate(2.0, b, "analytic") == sigma_analytic(2.0, b)
        with pytest.raises(InvalidArgument):
            calibrate(2.0, b, "laplace")

    @pytest.mark.parametrize("mechanism", ["classic", "analytic"])
    def test_implied_epsilon_inverts_calibration(self, mechanism):
        b = Budget(0.8, 0.02)
        sigma = calibrate(3.0, b, mechanism)
        assert implied_epsilon(3.0, sigma, 0.02, mechanism) == pytest.approx(0.8, rel=1e-9)

    def test_implied_range_monotone(self):
        rows = implied_budget_range(1.0, 2.0, "analytic", [1e-4, 1e-3, 1e-2, 1e-1])
        eps = [r["epsilon"] for r in rows]
        assert all(a >= b for a, b in zip(eps, eps[1:]))

    def test_large_epsilon_bracket_expansion(self):
        # the classic value violates the exact condition here
        b = Budget(10.0, 1e-6)
        assert analytic_delta(sigma_classic(1.0, b), 1.0, 10.0) > 1e-6
        s = sigma_analytic(1.0, b)
        assert analytic_delta(s, 1.0, 10.0) <= 1e-6
        assert math.isfinite(s) and s > sigma_classic(1.0, b)
