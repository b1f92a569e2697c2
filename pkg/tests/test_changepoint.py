"""Tests for change-point profiles, the exclusion window and the limit-law helpers."""

from __future__ import annotations

import numpy as np
import pandas as pd
import pytest

from core.changepoint import (
    ExclusionWindow,
    _scan,
    compute_J,
    estimate_tau_alpha,
    estimate_tau_beta,
    exclusion_window,
    limit_law_ks,
    sample_limit_argmin,
)
from core.errors import BoundaryHitError, ConfigError, DataError, DimensionError
from core.estimate import alpha_contrast, beta_contrast
from core.model import hyperbolic_model, ou_model
from core.simulate import ParamSchedule, simulate_ou_exact


@pytest.fixture()
def ou():
    return ou_model()


def profile_by_hand(contrast, n: int, lo: int, hi: int) -> np.ndarray:
    """Direct evaluation of the two-regime contrast at every split."""
    out = []
    for k in range(lo, hi + 1):
        total = 0.0
        if k > lo:
            total += contrast((lo, k), first=True)
        if k < hi:
            total += contrast((k, hi), first=False)
        out.append(total)
    return np.array(out)


class TestDiffusionChangePoint:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_minimization(self, ou, seed: int) -> None:
        s = ParamSchedule.from_changes([1.0], [1.0, 2.0], alpha2=[1.3], tau_alpha=0.6)
        path = simulate_ou_exact(s, [2.0], 400, 0.01, seed=seed)
        a1, a2 = np.array([1.0]), np.array([1.3])

        def contrast(iv, first):
            return alpha_contrast(path, iv, a1 if first else a2, ou)

        direct = profile_by_hand(contrast, path.n, 0, path.n)
        est = estimate_tau_alpha(path, a1, a2, ou, keep_profile=True)
        assert est.index_hat == int(np.argmin(direct))
        np.testing.assert_allclose(est.profile, direct, rtol=1e-9, atol=1e-9)

    def test_locates_change(self, ou) -> None:
        s = ParamSchedule.from_changes([1.0], [1.0, 2.0], alpha2=[1.5], tau_alpha=0.8)
        path = simulate_ou_exact(s, [2.0], 20_000, 0.01, seed=1)
        est = estimate_tau_alpha(path, [1.0], [1.5], ou)
        assert est.tau_hat == pytest.approx(0.8, abs=0.005)
        assert not est.flags

    def test_equal_estimates_give_first_index(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 200, 0.01)
        est = estimate_tau_alpha(path, [1.1], [1.1], ou)
        assert est.index_hat == 0
        assert est.flags

    def test_constant_shift_keeps_argmin(self) -> None:
        rng = np.random.default_rng(3)
        first, second = rng.normal(size=100), rng.normal(size=100)
        base = _scan(first, second, (0, 100), 100, True, False, "x")
        shifted = _scan(first + 2.5, second + 2.5, (0, 100), 100, True, False, "x")
        assert shifted.index_hat == base.index_hat
        diff = shifted.profile - base.profile
        np.testing.assert_allclose(diff, diff[0], atol=1e-9)

    def test_profile_csv(self, ou, tmp_path) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 300, 0.01)
        est = estimate_tau_alpha(path, [1.0], [1.2], ou, keep_profile=True)
        target = tmp_path / "profile.csv"
        est.write_profile_csv(target)
        frame = pd.read_csv(target)
        assert list(frame.columns) == ["index", "tau", "contrast"]
        assert len(frame) == path.n + 1

    def test_profile_requires_keep(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 300, 0.01)
        with pytest.raises(ConfigError):
            estimate_tau_alpha(path, [1.0], [1.2], ou).profile_frame()


class TestDriftChangePoint:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_direct_minimization(self, ou, seed: int) -> None:
        s = ParamSchedule.from_changes([1.0], [1.0, 1.0], beta2=[1.0, 2.0], tau_beta=0.4)
        path = simulate_ou_exact(s, [1.0], 500, 0.05, seed=seed)
        window = ExclusionWindow(0.45, 0.9, 0.8, 0.95, path.n)
        b1, b2 = np.array([1.0, 1.0]), np.array([1.0, 2.0])

        def contrast(iv, first):
            return beta_contrast(path, iv, b1 if first else b2, [1.0], ou)

        direct = profile_by_hand(contrast, path.n, 0, window.index_lower)
        est = estimate_tau_beta(path, "left", window, [1.0], b1, b2, ou)
        assert est.window == (0, 400)
        assert est.index_hat == int(np.argmin(direct))

    def test_right_side_window(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 500, 0.05)
        window = ExclusionWindow(0.45, 0.3, 0.2, 0.4, path.n)
        est = estimate_tau_beta(path, "right", window, [1.0], [1.0, 1.5], [1.0, 2.0], ou)
        assert est.window == (200, 500)
        assert 200 <= est.index_hat <= 500

    def test_unknown_side(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 500, 0.05)
        window = ExclusionWindow(0.45, 0.3, 0.2, 0.4, path.n)
        with pytest.raises(ConfigError):
            estimate_tau_beta(path, "both", window, [1.0], [1.0, 1.5], [1.0, 2.0], ou)


class TestExclusionWindow:
    def test_capped_width(self) -> None:
        w = exclusion_window(10 ** 6, 0.8, [1.0], [1.2])
        assert w.epsilon1 == pytest.approx(0.45)
        assert w.tau_lower == pytest.approx(0.8 - 10 ** (-6 * 0.45))

    def test_shrinking_difference(self) -> None:
        n = 10 ** 6
        w = exclusion_window(n, 0.5, [1.0], [1.0 + n ** -0.3])
        assert w.epsilon1 == pytest.approx(0.36, abs=1e-9)

    def test_monotone_in_difference(self) -> None:
        eps = [exclusion_window(10 ** 5, 0.5, [1.0], [1.0 + d]).epsilon1 for d in (0.001, 0.01, 0.05, 0.1, 1.0)]
        assert all(b >= a for a, b in zip(eps, eps[1:]))

    def test_clamped_near_end(self) -> None:
        n = 10 ** 4
        w = exclusion_window(n, 0.999, [1.0], [1.2], cap=0.5)
        assert w.tau_upper == pytest.approx(1.0 - 1.0 / n)
        assert w.flags

    def test_floor(self) -> None:
        w = exclusion_window(10 ** 4, 0.5, [1.0], [1.0 + 1e-6])
        assert w.epsilon1 == 0.01
        assert any("floored" in f for f in w.flags)

    def test_equal_estimates(self) -> None:
        with pytest.raises(DataError):
            exclusion_window(10 ** 4, 0.5, [1.0], [1.0])

    def test_small_n(self) -> None:
        with pytest.raises(DataError):
            exclusion_window(5, 0.5, [1.0], [1.2])


class TestConstantJ:
    def test_ou_intercept_direction(self, ou) -> None:
        assert compute_J(ou, [1.0], [1.0, 2.0], [0.0, 1.0]) == pytest.approx(1.0, rel=1e-12)

    def test_ou_reversion_direction(self, ou) -> None:
        assert compute_J(ou, [1.0], [1.0, 2.0], [1.0, 0.0]) == pytest.approx(0.5, rel=1e-10)

    def test_sign_of_direction_irrelevant(self, ou) -> None:
        e = np.array([0.6, -0.8])
        assert compute_J(ou, [1.3], [2.0, 1.0], -e) == pytest.approx(compute_J(ou, [1.3], [2.0, 1.0], e))

    def test_mixed_direction(self, ou) -> None:
        assert compute_J(ou, [1.0], [1.0, 2.0], [1.0, 1.0]) == pytest.approx(1.5, rel=1e-10)

    def test_alpha_kind(self, ou) -> None:
        assert compute_J(ou, [1.0], [1.0, 2.0], [1.0], kind="alpha") == pytest.approx(2.0)
        assert compute_J(ou, [1.0], [1.0, 2.0], [2.0], kind="alpha") == pytest.approx(8.0)
        assert compute_J(ou, [2.0], [1.0, 2.0], [1.0], kind="alpha") == pytest.approx(0.5)

    def test_monte_carlo_on_state_free_integrand(self, ou) -> None:
        J = compute_J(ou, [1.0], [1.0, 2.0], [0.0, 1.0], method="mc",
                      n_mc=100, burn_in=10, thin=1, chains=10)
        assert J == pytest.approx(1.0, rel=1e-12)

    @pytest.mark.slow
    def test_monte_carlo_matches_quadrature(self, ou) -> None:
        mc = compute_J(ou, [1.0], [1.0, 2.0], [1.0, 0.0], method="mc", n_mc=25_000,
                       burn_in=2500, thin=1000, h=0.002, chains=5000, seed=2)
        assert mc == pytest.approx(0.5, rel=0.03)

    def test_hyperbolic_needs_monte_carlo(self) -> None:
        with pytest.raises(ConfigError):
            compute_J(hyperbolic_model(), [1.0], [1.0, 2.0], [1.0, 0.0], method="analytic")

    def test_direction_dimension(self, ou) -> None:
        with pytest.raises(DimensionError):
            compute_J(ou, [1.0], [1.0, 2.0], [1.0])


class TestLimitLaw:
    def test_symmetric_and_centered(self) -> None:
        draws = sample_limit_argmin(1.0, reps=2000, seed=1)
        assert abs(np.median(draws)) < 0.5
        assert abs(draws.mean()) < 3.0 * draws.std() / np.sqrt(draws.size)

    def test_scaling_with_J(self) -> None:
        base = sample_limit_argmin(1.0, reps=2000, seed=1)
        scaled = sample_limit_argmin(4.0, reps=2000, seed=1)
        np.testing.assert_allclose(4.0 * scaled, base, rtol=1e-9, atol=1e-9)

    def test_boundary_hits_raise(self) -> None:
        with pytest.raises(BoundaryHitError):
            sample_limit_argmin(1.0, reps=500, v_max=0.5, grid_step=0.01)

    def test_non_positive_J(self) -> None:
        with pytest.raises(ConfigError):
            sample_limit_argmin(0.0)

    def test_ks_against_itself(self) -> None:
        draws = sample_limit_argmin(1.0, reps=3000, seed=7)
        stat, pvalue = limit_law_ks(draws, 1.0, reps=3000, seed=0)
        assert stat < 0.06

    @pytest.mark.slow
    def test_grid_refinement(self) -> None:
        coarse = sample_limit_argmin(1.0, reps=10_000, seed=3)
        fine = sample_limit_argmin(1.0, reps=10_000, grid_step=0.005, seed=4)
        stat, _ = limit_law_ks(fine, 1.0, reps=10_000, seed=3)
        assert stat < 0.03
        assert abs(np.median(coarse) - np.median(fine)) < 0.2
