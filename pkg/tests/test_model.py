"""Tests for the diffusion model layer: coefficient evaluation and derivative checks."""

from __future__ import annotations

import dataclasses

import numpy as np
import pytest

from core.errors import ConfigError, DimensionError, ParameterBoxError, SingularMatrixError
from core.model import (
    DiffusionModel,
    ParameterBox,
    check_derivatives,
    drift_jacobian,
    eval_A,
    eval_drift,
    get_model,
    hyperbolic_model,
    ou_model,
    precision_terms,
    solve_a,
)


def linear_2d_model(a_matrix, noise_dim: int = 2) -> DiffusionModel:
    """dX = -theta X dt + alpha M dW in two dimensions."""
    a_matrix = np.asarray(a_matrix, dtype=float)

    def drift(x, theta):
        return -theta[0] * x

    def diffusion(x, alpha):
        return np.broadcast_to(alpha[0] * a_matrix, (x.shape[0],) + a_matrix.shape).copy()

    def jac(x, theta):
        return (-x)[:, :, None]

    return DiffusionModel(
        name="lin2", state_dim=2, noise_dim=noise_dim, alpha_dim=1, beta_dim=1,
        drift=drift, diffusion=diffusion, drift_jac_beta=jac,
        alpha_space=ParameterBox([0.1], [5.0]), beta_space=ParameterBox([0.1], [5.0]),
    )


@pytest.fixture()
def ou():
    return ou_model()


class TestEvaluation:
    def test_ou_drift(self, ou) -> None:
        assert eval_drift(ou, [3.0], [1.0, 2.0]) == pytest.approx([-1.0])

    def test_ou_diffusion_square(self, ou) -> None:
        assert eval_A(ou, [5.0], [1.5]) == pytest.approx([[2.25]])

    def test_two_dimensional_A(self) -> None:
        model = linear_2d_model([[1.0, 0.0], [1.0, 1.0]])
        A = eval_A(model, [0.0, 0.0], [1.0])
        np.testing.assert_allclose(A, [[1.0, 1.0], [1.0, 2.0]])
        np.testing.assert_array_equal(A, A.T)

    def test_hyperbolic_drift(self) -> None:
        model = hyperbolic_model()
        b = eval_drift(model, [0.0], [0.5, 2.0])
        assert b == pytest.approx([0.5])

    def test_state_dimension_mismatch(self, ou) -> None:
        with pytest.raises(DimensionError):
            eval_drift(ou, [1.0, 2.0], [1.0, 2.0])

    def test_beta_outside_box(self, ou) -> None:
        with pytest.raises(ParameterBoxError):
            eval_drift(ou, [1.0], [-1.0, 2.0])

    def test_alpha_wrong_length(self, ou) -> None:
        with pytest.raises(DimensionError):
            eval_A(ou, [1.0], [1.0, 2.0])

    def test_unknown_model(self) -> None:
        with pytest.raises(ConfigError, match="unknown model"):
            get_model("heston")


class TestJacobians:
    @pytest.mark.parametrize("name", ["ou", "hyperbolic"])
    def test_builtin_models_pass(self, name: str) -> None:
        report = check_derivatives(get_model(name))
        assert report.passed
        assert report.max_rel_error < 1e-5
        assert report.min_eig_A > 0.0

    def test_wrong_jacobian_fails(self, ou) -> None:
        broken = dataclasses.replace(ou, drift_jac_beta=lambda x, t: ou.drift_jac_beta(x, t) + 0.1)
        report = check_derivatives(broken)
        assert not report.passed
        assert report.max_rel_error > 1e-5

    def test_small_jacobian_error_is_relative(self) -> None:
        base = linear_2d_model(np.eye(2))
        tiny = dataclasses.replace(
            base,
            drift=lambda x, t: -1e-4 * t[0] * x,
            drift_jac_beta=lambda x, t: (-1.01e-4 * x)[:, :, None],
        )
        report = check_derivatives(tiny)
        assert not report.passed
        assert report.max_rel_error == pytest.approx(0.01 / 1.01, rel=1e-3)

    def test_structural_zeros_pass(self) -> None:
        base = linear_2d_model(np.eye(2))
        flat = dataclasses.replace(base, drift=lambda x, t: np.zeros_like(x) + 0.0 * t[0],
                                   drift_jac_beta=lambda x, t: np.zeros(x.shape + (1,)))
        assert check_derivatives(flat).max_rel_error == 0.0

    def test_ou_jacobian_is_exact(self, ou) -> None:
        x = np.array([[0.5], [3.0]])
        J = drift_jacobian(ou, x, np.array([1.5, 2.0]))
        np.testing.assert_allclose(J[:, 0, :], [[1.5, 1.5], [-1.0, 1.5]])

    def test_hyperbolic_jacobian_is_exact(self) -> None:
        model = hyperbolic_model()
        x = np.array([[1.0]])
        J = drift_jacobian(model, x, np.array([0.5, 2.0]))
        np.testing.assert_allclose(J[0, 0], [1.0, -1.0 / np.sqrt(2.0)])


class TestPathQuadraticForms:
    def test_singular_A_names_index(self) -> None:
        model = ou_model(alpha_range=(0.0, 10.0))
        with pytest.raises(SingularMatrixError) as info:
            precision_terms(model, np.zeros((5, 1)), np.array([0.0]), offset=7)
        assert info.value.index == 7

    def test_solve_a_needs_square_noise(self) -> None:
        model = linear_2d_model([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], noise_dim=3)
        with pytest.raises(DimensionError):
            solve_a(model, np.zeros((2, 2)), np.array([1.0]), np.ones((2, 2)))
