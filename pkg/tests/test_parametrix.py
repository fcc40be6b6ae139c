import numpy as np
import pytest

from bdie.services import laplace_core as lc
from bdie.services.coefficient import make_coefficient
from bdie.services.parametrix import (
    ParametrixContext,
    eval_parametrix,
    eval_parametrix_y,
    eval_remainder,
    eval_remainder_y,
)
from bdie.services.geometry import build_ball_volume, build_sphere_boundary
from bdie.services.verify import make_context
from bdie.utils.errors import CoincidentPointsError, GeometryError
from bdie.utils.spherical import real_sph_harm


X = np.array([0.3, -0.1, 0.2])
Y = np.array([-0.2, 0.4, 0.1])
TARGETS = np.array([[0.0, 0.0, 0.0], [0.2, 0.3, -0.4], [-0.5, 0.1, 0.2]])


class TestPointKernels:
    """P^x, P^y and their remainders"""

    def test_parametrix_scales_with_coefficient(self):
        """P^x = P_Δ/a(x)"""
        coefficient = make_coefficient("const", {"c": 2.0})
        p_delta, _ = lc.eval_kernel_Delta(X, Y)
        assert eval_parametrix(coefficient, X, Y) == pytest.approx(p_delta / 2)

    def test_symmetric_weighting(self, exp_coefficient):
        """a(x)P^x(x, y) = a(y)P^y(x, y)"""
        left = exp_coefficient.a(X)[0] * eval_parametrix(exp_coefficient, X, Y)
        right = exp_coefficient.a(Y)[0] * eval_parametrix_y(exp_coefficient, X, Y)
        assert left == pytest.approx(right, rel=1e-14)

    def test_remainder_vanishes_for_constant(self):
        """No remainder when a is constant"""
        coefficient = make_coefficient("const", {"c": 3.0})
        assert eval_remainder(coefficient, X, Y) == 0.0
        assert eval_remainder_y(coefficient, X, Y) == 0.0

    def test_remainder_exp_linear(self, exp_coefficient):
        """R^x = −k·(x1 − y1)/(4π|x − y|³) for a = exp(k·x1)"""
        d = X - Y
        r = np.linalg.norm(d)
        assert eval_remainder(exp_coefficient, X, Y) == pytest.approx(-2 * d[0] / (4 * np.pi * r ** 3), rel=1e-12)

    def test_remainder_y_exp_linear(self, exp_coefficient):
        """R^y = ∇a(x)·∇ₓP_Δ/a(y)"""
        d = X - Y
        r = np.linalg.norm(d)
        expected = 2 * np.exp(2 * X[0]) * d[0] / (4 * np.pi * r ** 3) / np.exp(2 * Y[0])
        assert eval_remainder_y(exp_coefficient, X, Y) == pytest.approx(expected, rel=1e-12)

    def test_coincident_points(self, exp_coefficient):
        """Every point kernel refuses x = y"""
        for kernel in (eval_parametrix, eval_parametrix_y, eval_remainder, eval_remainder_y):
            with pytest.raises(CoincidentPointsError):
                kernel(exp_coefficient, X, X)


class TestContext:
    """Operators assembled through the Laplace relations"""

    def test_mismatched_radii_rejected(self, unit_coefficient):
        """Boundary and volume must describe the same ball"""
        with pytest.raises(GeometryError):
            ParametrixContext(unit_coefficient, build_sphere_boundary(1.0, 4, 8), build_ball_volume(2.0, 2, 2, 4))

    def test_reduction_to_laplace(self, small_unit_ctx):
        """With a ≡ 1 every operator is its Laplace counterpart"""
        ctx = small_unit_ctx
        layers = lc.volume_layer_matrices(ctx.boundary, ctx.volume)
        np.testing.assert_array_equal(ctx.P_matrix, ctx.newton_self.value)
        np.testing.assert_array_equal(ctx.R_matrix, 0.0)
        np.testing.assert_array_equal(ctx.R_boundary_matrix, 0.0)
        np.testing.assert_allclose(ctx.V_matrix(), layers.single, atol=1e-15)
        np.testing.assert_allclose(ctx.W_matrix(), layers.double, atol=1e-15)
        np.testing.assert_allclose(ctx.direct_Wp_matrix, lc.direct_Wp_matrix(ctx.boundary), atol=1e-15)

    def test_constant_scaling(self, small_geometry, small_unit_ctx):
        """a ≡ 2 halves 𝒫, V and 𝒱 and leaves W, 𝒲, 𝒲' unchanged"""
        two = make_context(make_coefficient("const", {"c": 2.0}), small_geometry)
        one = small_unit_ctx
        np.testing.assert_allclose(two.P_matrix, one.P_matrix / 2, rtol=1e-12)
        np.testing.assert_allclose(two.V_matrix(), one.V_matrix() / 2, rtol=1e-12)
        np.testing.assert_allclose(two.direct_V_matrix, one.direct_V_matrix / 2, rtol=1e-12)
        np.testing.assert_allclose(two.W_matrix(), one.W_matrix(), rtol=1e-12)
        np.testing.assert_allclose(two.direct_W_matrix, one.direct_W_matrix, rtol=1e-12)
        np.testing.assert_allclose(two.direct_Wp_matrix, one.direct_Wp_matrix, rtol=1e-12)

    def test_remainder_relation_matches_direct_quadrature(self, small_exp_ctx):
        """For ρ ≡ 1 and a = exp(2x1) both routes give ℛ[1](y) = 2y1/3"""
        ctx = small_exp_ctx
        rho = np.ones(ctx.volume.size)
        relation = ctx.pot_R(rho, TARGETS, method="relation")
        direct = ctx.pot_R(rho, TARGETS, method="direct")
        np.testing.assert_allclose(relation, 2 * TARGETS[:, 0] / 3, atol=1e-10)
        np.testing.assert_allclose(direct, relation, atol=1e-8)

    def test_remainder_routes_agree_for_varying_fields(self, default_geometry):
        """a = 1 + x1², ρ = 1 + x2²: relation and direct quadrature within 1e-3"""
        ctx = make_context(make_coefficient("one_plus_x1_squared"), default_geometry)
        rho = 1.0 + ctx.volume.points[:, 1] ** 2
        targets = np.vstack([TARGETS, [[0.6, -0.3, 0.4], [-0.1, -0.7, -0.2]]])
        relation = ctx.pot_R(rho, targets, method="relation")
        direct = ctx.pot_R(rho, targets, method="direct")
        assert np.max(np.abs(direct)) > 0.05
        np.testing.assert_allclose(relation, direct, atol=1e-3)

    def test_direct_remainder_needs_interior_targets(self, small_exp_ctx):
        """Rays are cut at S, so targets on S are refused"""
        ctx = small_exp_ctx
        with pytest.raises(GeometryError):
            ctx.pot_R(np.ones(ctx.volume.size), ctx.boundary.points[:1], method="direct")

    def test_boundary_rows_match_pointwise_relation(self, small_exp_ctx):
        """γ⁺ℛ as a matrix equals the relation evaluated at the boundary nodes"""
        ctx = small_exp_ctx
        rho = 1.0 + ctx.volume.points[:, 0]
        np.testing.assert_allclose(
            ctx.R_boundary_matrix @ rho, ctx.pot_R(rho, ctx.boundary.points), atol=1e-12
        )

    def test_unknown_remainder_method(self, small_exp_ctx):
        """Only 'relation' and 'direct' exist"""
        with pytest.raises(ValueError):
            small_exp_ctx.pot_R(np.ones(small_exp_ctx.volume.size), TARGETS, method="fft")

    def test_direct_values_through_relations(self, small_exp_ctx):
        """𝒲 = 𝒲_Δ − 𝒱_Δ D(∂ln a/∂n) applied to a density"""
        ctx = small_exp_ctx
        tau = real_sph_harm(1, 1, ctx.boundary.points)
        expected = lc.direct_W_Delta(ctx.boundary, tau) - lc.direct_V_Delta(ctx.boundary, tau * ctx.dlog_dn)
        np.testing.assert_allclose(ctx.direct_W(tau), expected, atol=1e-13)

    def test_newton_potential_relation(self, small_exp_ctx):
        """𝒫ρ = 𝒫_Δ(ρ/a)"""
        ctx = small_exp_ctx
        rho = ctx.a_volume.copy()
        np.testing.assert_allclose(ctx.pot_P(rho), ctx.newton_self.value @ np.ones(ctx.volume.size), rtol=1e-12)


class TestHypersingular:
    """𝓛̂ and ℒ± on the unit sphere"""

    def test_l_hat_on_first_degree(self, small_unit_ctx):
        """ℒ_ΔY_1 = −(2/3)Y_1 when a ≡ 1"""
        ctx = small_unit_ctx
        y1 = real_sph_harm(1, 0, ctx.boundary.points)
        np.testing.assert_allclose(ctx.op_L_hat(y1), -2 / 3 * y1, atol=1e-12)

    def test_l_hat_annihilates_constants(self, small_exp_ctx):
        """𝓛̂[1] = 0"""
        ctx = small_exp_ctx
        np.testing.assert_allclose(ctx.op_L_hat(np.ones(ctx.boundary.size)), 0.0, atol=1e-12)

    def test_jump_of_conormal_operator(self, small_exp_ctx):
        """ℒ⁺ρ − ℒ⁻ρ = −aρ∂ln a/∂n"""
        ctx = small_exp_ctx
        rho = real_sph_harm(1, 0, ctx.boundary.points)
        jump = ctx.op_L(rho, "+") - ctx.op_L(rho, "-")
        np.testing.assert_allclose(jump, -ctx.a_boundary * rho * ctx.dlog_dn, atol=1e-10)

    def test_compact_difference_identity(self, default_exp_ctx):
        """Nyström and spectral sides agree on the default boundary"""
        ctx = default_exp_ctx
        rho = real_sph_harm(1, 0, ctx.boundary.points)
        for side in ("+", "-"):
            left, right = ctx.compact_difference_identity(rho, side)
            assert np.max(np.abs(left - right)) < 5e-2


class TestNearBoundaryLimits:
    """Potentials evaluated at y ∓ δn"""

    def test_single_layer_limit_of_one(self, small_unit_ctx):
        """V[1] → 𝒱[1] = 1 from both sides"""
        ctx = small_unit_ctx
        ones = np.ones(ctx.boundary.size)
        for side in ("+", "-"):
            single, double, _ = ctx.near_boundary_limits(ones, ones, 1e-3, side)
            np.testing.assert_allclose(single, 1.0, atol=1e-4)
        _, inner, _ = ctx.near_boundary_limits(ones, ones, 1e-3, "+")
        _, outer, _ = ctx.near_boundary_limits(ones, ones, 1e-3, "-")
        np.testing.assert_allclose(inner, -1.0, atol=1e-6)
        np.testing.assert_allclose(outer, 0.0, atol=1e-6)
