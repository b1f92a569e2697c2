"""Tests for the CUSUM kernel, the diffusion and drift tests and critical values."""

from __future__ import annotations

import json

import numpy as np
import pytest

import core.cusum as cusum
from core.cusum import (
    CRITICAL_VALUE_TABLE,
    MonteCarloConfig,
    critical_value,
    cusum_sup,
    drift_decision,
    drift_window,
    fisher_weight,
    same_point_statistic,
    t1_drift,
    t2_drift,
    t_alpha,
    weighted_cusum,
    xi_sequence,
    zeta_sequence,
)
from core.errors import ConfigError, DataError, DimensionError, SingularMatrixError, WindowTooShortError
from core.model import DiffusionModel, ParameterBox, ou_model
from core.path import Path
from core.simulate import ParamSchedule, simulate_ou_exact


@pytest.fixture()
def ou():
    return ou_model()


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


def brute_force_sup(values: np.ndarray, scale: float):
    m = values.size
    total = values.sum()
    best, arg = -1.0, 0
    for j in range(1, m + 1):
        v = abs(values[:j].sum() - j / m * total)
        if v > best:
            best, arg = v, j
    return scale * best, arg


class TestKernel:
    def test_step_example(self) -> None:
        stat, j = cusum_sup(np.array([0, 0, 0, 0, 2, 2, 2, 2], dtype=float), 0.25)
        assert stat == pytest.approx(1.0)
        assert j == 4

    def test_constant_sequence(self) -> None:
        stat, _ = cusum_sup(np.full(1000, 3.7), 1.0)
        assert stat < 1e-9

    def test_shift_invariance(self, rng) -> None:
        v = rng.normal(size=500)
        assert cusum_sup(v + 12.5, 0.1)[0] == pytest.approx(cusum_sup(v, 0.1)[0], rel=1e-9)

    def test_matches_brute_force(self, rng) -> None:
        v = rng.normal(size=300)
        stat, j = cusum_sup(v, 0.3)
        ref, ref_j = brute_force_sup(v, 0.3)
        assert stat == pytest.approx(ref, rel=1e-9)
        assert j == ref_j

    def test_empty_sequence(self) -> None:
        with pytest.raises(DataError):
            cusum_sup(np.array([]), 1.0)

    def test_scale_must_be_positive(self) -> None:
        with pytest.raises(ConfigError):
            cusum_sup(np.ones(5), 0.0)

    def test_weighted_statistic_invariant_under_linear_map(self, rng) -> None:
        zeta = rng.normal(size=(200, 2))
        B = rng.normal(size=(2, 2))
        fisher = B @ B.T + np.eye(2)
        M = np.array([[2.0, 0.5], [-1.0, 1.5]])
        base = weighted_cusum(zeta, fisher, 0.1)[0]
        mapped = weighted_cusum(zeta @ M.T, M @ fisher @ M.T, 0.1)[0]
        assert mapped == pytest.approx(base, rel=1e-8)


class TestDiffusionTest:
    def test_identical_increments_do_not_reject(self, ou) -> None:
        path = Path(h=0.01, x=0.1 * np.arange(2001))
        result = t_alpha(path, [1.0], ou)
        assert result.statistic < 1e-8
        assert not result.reject
        assert result.critical_value == CRITICAL_VALUE_TABLE[(1, 0.05)]

    def test_rejects_doubling_of_diffusion(self, ou) -> None:
        s = ParamSchedule.from_changes([1.0], [1.0, 2.0], alpha2=[2.0], tau_alpha=0.5)
        path = simulate_ou_exact(s, [2.0], 5000, 0.01, seed=1)
        result = t_alpha(path, [1.5], ou)
        assert result.reject
        assert abs(result.argmax_index - 2500) < 250

    def test_result_serializes(self, ou) -> None:
        path = Path(h=0.01, x=0.1 * np.arange(201))
        json.dumps(t_alpha(path, [1.0], ou).to_dict())


class TestDriftSequences:
    def test_xi_example(self, ou) -> None:
        path = Path(h=1.0, x=np.array([2.0, 3.0, 4.0]))
        assert xi_sequence(path, (0, 1), [2.0], [1.0, 2.0], ou) == pytest.approx([0.5])

    def test_xi_two_dimensional_sums_components(self) -> None:
        model = DiffusionModel(
            name="lin2", state_dim=2, noise_dim=2, alpha_dim=1, beta_dim=1,
            drift=lambda x, t: -t[0] * x,
            diffusion=lambda x, a: np.broadcast_to(a[0] * np.eye(2), (x.shape[0], 2, 2)).copy(),
            drift_jac_beta=lambda x, t: (-x)[:, :, None],
            alpha_space=ParameterBox([0.1], [5.0]), beta_space=ParameterBox([0.1], [5.0]),
        )
        path = Path(h=1.0, x=np.array([[0.0, 0.0], [1.0, 2.0], [1.0, 2.0]]))
        assert xi_sequence(path, (0, 1), [1.0], [1.0], model) == pytest.approx([3.0])

    def test_zeta_example(self, ou) -> None:
        path = Path(h=1.0, x=np.array([3.0, 2.1, 2.1]))
        zeta = zeta_sequence(path, (0, 1), [1.0], [1.0, 2.0], ou)
        np.testing.assert_allclose(zeta[0], [-0.1, 0.1], atol=1e-12)

    def test_zeta_scales_with_inverse_diffusion_square(self, ou, rng) -> None:
        path = Path(h=0.01, x=2.0 + np.cumsum(rng.normal(scale=0.1, size=300)))
        z1 = zeta_sequence(path, (0, 299), [1.0], [1.0, 2.0], ou)
        z3 = zeta_sequence(path, (0, 299), [3.0], [1.0, 2.0], ou)
        np.testing.assert_allclose(z3, z1 / 9.0, rtol=1e-12)


class TestFisherWeight:
    def test_constant_path_is_rank_one(self, ou) -> None:
        path = Path(h=0.01, x=np.full(101, 3.0))
        G = fisher_weight(path, (0, 100), [1.0], [1.0, 2.0], ou, check=False)
        np.testing.assert_allclose(G, [[1.0, -1.0], [-1.0, 1.0]])
        with pytest.raises(SingularMatrixError):
            fisher_weight(path, (0, 100), [1.0], [1.0, 2.0], ou)

    def test_symmetric_positive_definite(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 2000, 0.01, seed=3)
        G = fisher_weight(path, (0, 2000), [1.0], [1.0, 2.0], ou)
        np.testing.assert_array_equal(G, G.T)
        assert np.linalg.eigvalsh(G)[0] > 0

    def test_matches_stationary_expectation(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 100_000, 0.05, seed=8)
        G = fisher_weight(path, path.full(), [1.0], [1.0, 2.0], ou)
        np.testing.assert_allclose(G, [[0.5, 0.0], [0.0, 1.0]], atol=0.08)


class TestDriftTests:
    def test_window_too_short(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 1000, 0.01)
        with pytest.raises(WindowTooShortError):
            drift_window(path, "right", 0.95)
        with pytest.raises(WindowTooShortError):
            t1_drift(path, "left", 0.05, [1.0], [1.0, 2.0], ou)

    def test_window_bounds(self) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 1000, 0.01)
        assert drift_window(path, "left", 0.3) == (0, 300)
        assert drift_window(path, "right", 0.6) == (600, 1000)

    def test_unknown_side(self) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 1000, 0.01)
        with pytest.raises(ConfigError):
            drift_window(path, "middle", 0.5)

    def test_intercept_change_rejects_on_left(self, ou) -> None:
        n = 20_000
        s = ParamSchedule.from_changes([1.0], [1.0, 0.5], beta2=[1.0, 2.0], tau_beta=0.3)
        path = simulate_ou_exact(s, [0.5], n, n ** -0.52, seed=4)
        for test in (t1_drift, t2_drift):
            result = test(path, "left", 0.6, [1.0], [1.0, 0.5], ou)
            assert result.reject
            assert result.window == (0, 12_000)
            assert result.argmax_index == pytest.approx(6000, abs=1500)

    def test_t2_uses_parameter_dimension(self, ou) -> None:
        path = simulate_ou_exact(ParamSchedule.constant([1.0], [1.0, 2.0]), [2.0], 5000, 0.01, seed=2)
        result = t2_drift(path, "right", 0.5, [1.0], [1.0, 2.0], ou)
        assert result.name == "t2_right"
        assert result.dim == 2
        assert result.critical_value == pytest.approx(1.5736)
        assert result.window == (2500, 5000)

    def test_decision_rules(self) -> None:
        yes = cusum.TestResult("t1", 2.0, 1, 1, 1.36, 0.05, True, (0, 10))
        no = cusum.TestResult("t2", 0.5, 1, 2, 1.57, 0.05, False, (0, 10))
        assert drift_decision(yes, no, "either")
        assert not drift_decision(yes, no, "both")
        assert drift_decision(yes, no, "t1")
        assert not drift_decision(yes, no, "t2")
        assert not drift_decision(None, None, "either")
        with pytest.raises(ConfigError):
            drift_decision(yes, no, "majority")


class TestCriticalValues:
    def test_table_values(self) -> None:
        assert critical_value(1, 0.05) == 1.3617
        assert critical_value(2, 0.05) == 1.5736

    def test_invalid_arguments(self) -> None:
        with pytest.raises(ConfigError):
            critical_value(0, 0.05)
        with pytest.raises(ConfigError):
            critical_value(1, 1.5)
        with pytest.raises(ConfigError):
            critical_value(1, 0.05, source="book")

    def test_monte_carlo_is_memoized(self, monkeypatch) -> None:
        calls = []
        real = cusum.sample_brownian_bridge_sup

        def counting(*args, **kwargs):
            calls.append(args)
            return real(*args, **kwargs)

        monkeypatch.delenv("DIFFCP_CACHE_DIR", raising=False)
        monkeypatch.setattr(cusum, "sample_brownian_bridge_sup", counting)
        mc = MonteCarloConfig(n_grid=100, n_reps=200, seed=12345)
        first = critical_value(1, 0.1, source="mc", mc=mc)
        second = critical_value(1, 0.1, source="mc", mc=mc)
        assert first == second
        assert len(calls) == 1

    def test_disk_cache(self, monkeypatch, tmp_path) -> None:
        monkeypatch.setenv("DIFFCP_CACHE_DIR", str(tmp_path))
        mc = MonteCarloConfig(n_grid=100, n_reps=200, seed=54321)
        value = critical_value(2, 0.1, source="mc", mc=mc)
        assert list(tmp_path.glob("cv_k2_*.json"))

        monkeypatch.setattr(cusum, "_cv_cache", {})
        monkeypatch.setattr(cusum, "sample_brownian_bridge_sup",
                            lambda *a, **k: pytest.fail("disk cache not used"))
        assert critical_value(2, 0.1, source="mc", mc=mc) == value

    @pytest.mark.slow
    def test_simulated_one_dimensional_value(self) -> None:
        assert critical_value(1, 0.05, source="mc") == pytest.approx(1.3617, abs=0.02)

    @pytest.mark.slow
    def test_kolmogorov_median(self) -> None:
        assert critical_value(1, 0.5, source="mc") == pytest.approx(0.83, abs=0.03)


class TestSamePointStatistic:
    def test_example(self) -> None:
        assert same_point_statistic([1.0, 2.0], [1.0, 1.0], 25.0) == pytest.approx(5.0)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(DimensionError):
            same_point_statistic([1.0, 2.0], [1.0], 25.0)
