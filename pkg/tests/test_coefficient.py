import numpy as np
import pytest

from bdie.services.coefficient import (
    eval_dlog_a_dn,
    make_coefficient,
)
from bdie.services.geometry import build_sphere_boundary
from bdie.utils.errors import CoefficientError


POINTS = np.array([[0.1, -0.2, 0.3], [0.5, 0.5, 0.0], [-0.7, 0.1, 0.2]])


class TestRegistry:
    """Named coefficients and their derived fields"""

    def test_constant(self):
        """a ≡ c with vanishing log derivatives"""
        coefficient = make_coefficient("const", {"c": 2.0})
        assert coefficient.is_constant
        np.testing.assert_allclose(coefficient.a(POINTS), 2.0)
        np.testing.assert_allclose(coefficient.grad_log_a(POINTS), 0.0)
        np.testing.assert_allclose(coefficient.lap_log_a(POINTS), 0.0)

    def test_exp_linear(self):
        """ln a = k·x1, so ∇ln a = (k, 0, 0) and Δln a = 0"""
        coefficient = make_coefficient("exp_linear", {"k": 2.0})
        assert not coefficient.is_constant
        np.testing.assert_allclose(coefficient.a(POINTS), np.exp(2 * POINTS[:, 0]), rtol=1e-14)
        np.testing.assert_allclose(coefficient.grad_log_a(POINTS), [[2.0, 0.0, 0.0]] * 3, atol=1e-14)
        np.testing.assert_allclose(coefficient.lap_log_a(POINTS), 0.0, atol=1e-14)
        np.testing.assert_allclose(
            coefficient.grad_a(POINTS)[:, 0], 2 * np.exp(2 * POINTS[:, 0]), rtol=1e-14
        )

    def test_one_plus_x1_squared(self):
        """Log derivatives of 1 + x1²"""
        coefficient = make_coefficient("one_plus_x1_squared")
        x = POINTS[:, 0]
        np.testing.assert_allclose(coefficient.grad_log_a(POINTS)[:, 0], 2 * x / (1 + x ** 2), rtol=1e-12)
        np.testing.assert_allclose(
            coefficient.lap_log_a(POINTS), 2 * (1 - x ** 2) / (1 + x ** 2) ** 2, rtol=1e-12
        )

    def test_non_positive_constant_rejected(self):
        """c must be positive"""
        with pytest.raises(CoefficientError):
            make_coefficient("const", {"c": 0.0})
        with pytest.raises(CoefficientError):
            make_coefficient("const", {"c": -1.0})

    def test_unknown_name_rejected(self):
        """Only registered names are accepted"""
        with pytest.raises(CoefficientError, match="Unknown coefficient"):
            make_coefficient("sine")

    def test_coefficient_errors_are_value_errors(self):
        """Precondition failures stay catchable as ValueError"""
        with pytest.raises(ValueError):
            make_coefficient("const", {"c": -3.0})


class TestFiniteDifferenceOracles:
    """Closed-form log derivatives against numerical differentiation"""

    def test_laplacian_of_log(self):
        """Seven-point Δ(ln a) at (0.5, 0, 0) with h = 1e-4"""
        coefficient = make_coefficient("one_plus_x1_squared")
        x = np.array([0.5, 0.0, 0.0])
        h = 1e-4
        shifts = np.vstack([np.zeros(3), h * np.eye(3), -h * np.eye(3)])
        log_a = np.log(coefficient.a(x + shifts))
        numerical = (np.sum(log_a[1:]) - 6 * log_a[0]) / h ** 2
        assert abs(numerical - coefficient.lap_log_a(x[None, :])[0]) <= 1e-6

    @pytest.mark.parametrize("name, params", [("exp_linear", {"k": 2.0}), ("one_plus_x1_squared", {})])
    def test_log_gradient_chain_rule(self, name, params):
        """∇ln a = ∇a / a at random points of the ball"""
        coefficient = make_coefficient(name, params)
        rng = np.random.default_rng(7)
        points = rng.uniform(-1.0, 1.0, (400, 3))
        points = points[np.linalg.norm(points, axis=1) <= 1.0][:100]
        chain = coefficient.grad_a(points) / coefficient.a(points)[:, None]
        assert np.max(np.abs(coefficient.grad_log_a(points) - chain)) <= 1e-10


class TestNormalDerivative:
    """∂ln a/∂n on S"""

    def test_exp_linear_on_sphere(self):
        """∂ln a/∂n = k·n1"""
        coefficient = make_coefficient("exp_linear", {"k": 2.0})
        mesh = build_sphere_boundary(1.0, 4, 8)
        np.testing.assert_allclose(
            coefficient.dlog_a_dn(mesh.points, mesh.normals), 2 * mesh.normals[:, 0], atol=1e-14
        )

    def test_single_node(self):
        """Node-level evaluation matches the vectorised one"""
        coefficient = make_coefficient("exp_linear", {"k": 3.0})
        mesh = build_sphere_boundary(1.0, 4, 8)
        node = mesh.node(5)
        assert eval_dlog_a_dn(coefficient, node) == pytest.approx(3 * node.normal[0], abs=1e-14)
