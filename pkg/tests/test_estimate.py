"""Tests for the interval contrasts, estimators and the interval-expansion search."""

from __future__ import annotations

import numpy as np
import pytest

from core.cusum import MonteCarloConfig
from core.errors import NoChangeDetectedError, WindowTooShortError
from core.estimate import (
    OptimizerConfig,
    alpha_contrast,
    alpha_terms,
    beta_contrast,
    estimate_alpha,
    estimate_beta,
    estimate_beta_pooled,
    expand_and_estimate,
)
from core.model import ou_model
from core.path import Path
from core.simulate import ParamSchedule, simulate_ou_exact, simulate_path


@pytest.fixture()
def ou():
    return ou_model()


@pytest.fixture()
def ou_path():
    return simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 5000, 0.01, seed=1)


class TestContrasts:
    def test_alpha_contrast_example(self, ou) -> None:
        path = Path(h=1.0, x=np.array([0.0, 2.0, 4.0]))
        assert alpha_contrast(path, (0, 2), [2.0], ou) == pytest.approx(2.0 + 2.0 * np.log(4.0))

    def test_zero_increments_with_unit_diffusion(self, ou) -> None:
        path = Path(h=0.1, x=np.full(6, 3.0))
        assert alpha_contrast(path, (0, 5), [1.0], ou) == pytest.approx(0.0, abs=1e-15)

    def test_additive_over_split(self, ou, ou_path) -> None:
        whole = alpha_contrast(ou_path, (0, 5000), [1.1], ou)
        parts = alpha_contrast(ou_path, (0, 1234), [1.1], ou) + alpha_contrast(ou_path, (1234, 5000), [1.1], ou)
        assert parts == pytest.approx(whole, rel=1e-9)

    def test_quadratic_part_scales_with_path(self, ou, ou_path) -> None:
        scaled = Path(h=ou_path.h, x=3.0 * ou_path.x)
        log_a2 = np.log(1.2 ** 2)
        base = alpha_terms(ou_path, (0, 100), [1.2], ou) - log_a2
        np.testing.assert_allclose(alpha_terms(scaled, (0, 100), [1.2], ou) - log_a2, 9.0 * base, rtol=1e-10)

    def test_single_increment_drift_contrast(self, ou) -> None:
        path = Path(h=1.0, x=np.array([2.0, 3.0, 3.0]))
        assert beta_contrast(path, (0, 1), [1.0, 2.0], [1.0], ou) == pytest.approx(1.0)

    def test_drift_contrast_vanishes_on_drift_only_path(self, ou) -> None:
        noiseless = ou_model(alpha_range=(0.0, 10.0))
        path = simulate_path(noiseless, ParamSchedule.constant([0.0], [1.0, 2.0]), [5.0], 200, 0.01, substeps=1)
        assert beta_contrast(path, (0, 200), [1.0, 2.0], [1.0], ou) < 1e-12


class TestAlphaEstimate:
    def test_closed_form_example(self, ou) -> None:
        path = Path(h=1.0, x=np.array([0.0, 2.0, 4.0]))
        assert estimate_alpha(path, (0, 2), ou).alpha_hat == pytest.approx([2.0])

    def test_numeric_argmin_matches_closed_form(self, ou, ou_path) -> None:
        closed = estimate_alpha(ou_path, (0, 5000), ou)
        numeric = estimate_alpha(ou_path, (0, 5000), ou, OptimizerConfig(use_closed_form=False))
        assert numeric.method == "nelder-mead"
        assert numeric.alpha_hat == pytest.approx(closed.alpha_hat, rel=1e-6)

    def test_constant_path_is_clamped_and_flagged(self, ou) -> None:
        est = estimate_alpha(Path(h=0.1, x=np.full(10, 1.0)), (0, 9), ou)
        assert est.alpha_hat == pytest.approx([1e-3])
        assert est.flags

    def test_long_path_accuracy(self, ou) -> None:
        n = 100_000
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], n, n ** -0.52, seed=4)
        assert abs(estimate_alpha(path, path.full(), ou).alpha_hat[0] - 1.0) < 0.01

    def test_interval_too_short(self, ou, ou_path) -> None:
        with pytest.raises(WindowTooShortError):
            estimate_alpha(ou_path, (10, 11), ou)


class TestBetaEstimate:
    def test_recovers_drift_from_drift_only_path(self, ou) -> None:
        noiseless = ou_model(alpha_range=(0.0, 10.0))
        path = simulate_path(noiseless, ParamSchedule.constant([0.0], [1.0, 2.0]), [5.0], 200, 0.01, substeps=1)
        est = estimate_beta(path, (0, 200), ou, [1.0])
        np.testing.assert_allclose(est.beta_hat, [1.0, 2.0], atol=1e-8)

    def test_numeric_argmin_matches_closed_form(self, ou, ou_path) -> None:
        closed = estimate_beta(ou_path, (0, 5000), ou, [1.0])
        numeric = estimate_beta(ou_path, (0, 5000), ou, [1.0], OptimizerConfig(use_closed_form=False))
        np.testing.assert_allclose(numeric.beta_hat, closed.beta_hat, rtol=1e-5, atol=1e-5)
        assert numeric.contrast_value >= closed.contrast_value - 1e-9

    def test_pooled_over_split_equals_whole(self, ou, ou_path) -> None:
        alpha = np.array([1.0])
        whole = estimate_beta(ou_path, (0, 5000), ou, alpha)
        pooled = estimate_beta_pooled(ou_path, [((0, 2000), alpha), ((2000, 5000), alpha)], ou)
        np.testing.assert_allclose(pooled.beta_hat, whole.beta_hat, rtol=1e-10)

    @pytest.mark.slow
    def test_average_accuracy_over_replications(self, ou) -> None:
        n = 100_000
        s = ParamSchedule.constant([1.0], [1.0, 2.0])
        estimates = np.array([
            estimate_beta(p, p.full(), ou, [1.0]).beta_hat
            for p in (simulate_ou_exact(s, [2.0], n, n ** -0.52, seed=i) for i in range(20))
        ])
        np.testing.assert_allclose(estimates.mean(axis=0), [1.0, 2.0], atol=0.07)
        assert np.median(np.linalg.norm(estimates - [1.0, 2.0], axis=1)) < 0.15


class TestExpansion:
    def test_constant_increments_find_no_change(self, ou) -> None:
        path = Path(h=0.01, x=(np.arange(1001) % 2).astype(float))
        with pytest.raises(NoChangeDetectedError):
            expand_and_estimate(path, path.full(), "alpha", ou)

    def test_window_too_short(self, ou) -> None:
        path = Path(h=0.01, x=(np.arange(101) % 2).astype(float))
        with pytest.raises(WindowTooShortError):
            expand_and_estimate(path, path.full(), "alpha", ou)

    def test_central_change_uses_widest_margin(self, ou) -> None:
        s = ParamSchedule.from_changes([1.0], [1.0, 2.0], alpha2=[1.5], tau_alpha=0.5)
        path = simulate_ou_exact(s, [2.0], 20_000, 0.01, seed=2)
        result = expand_and_estimate(path, path.full(), "alpha", ou)
        assert result.split_used == 0.25
        assert result.first.alpha_hat[0] == pytest.approx(1.0, abs=0.05)
        assert result.second.alpha_hat[0] == pytest.approx(1.5, abs=0.05)

    def test_early_change_needs_narrow_margin(self, ou) -> None:
        s = ParamSchedule.from_changes([1.0], [1.0, 2.0], alpha2=[2.0], tau_alpha=0.05)
        path = simulate_ou_exact(s, [2.0], 20_000, 0.01, seed=6)
        mc = MonteCarloConfig(n_grid=500, n_reps=2000)
        result = expand_and_estimate(path, path.full(), "alpha", ou, level=0.001, mc=mc)
        assert result.split_used in (0.0625, 0.01)
        assert result.second.alpha_hat[0] == pytest.approx(2.0, abs=0.2)

    def test_drift_role_needs_alpha(self, ou, ou_path) -> None:
        with pytest.raises(ValueError):
            expand_and_estimate(ou_path, ou_path.full(), "beta", ou)
