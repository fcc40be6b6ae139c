import numpy as np
import pytest

from bdie.services.geometry import build_ball_volume, build_sphere_boundary
from bdie.utils.spherical import (
    ShCoefficients,
    ball_interpolate,
    ball_interpolation_matrix,
    default_degree,
    interpolation_matrix,
    lagrange_basis,
    lagrange_monomials,
    project,
    real_sph_harm,
    sample_degree,
    sh_basis,
    sh_count,
    sh_index,
    shell_coefficients,
    synthesize,
)


@pytest.fixture(scope="module")
def mesh():
    return build_sphere_boundary(1.0, 8, 16)


class TestHarmonics:
    """Real orthonormal Y_{n,m}"""

    def test_degree_zero_is_constant(self):
        """Y_00 = 1/sqrt(4π)"""
        points = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.3, -0.4, 0.5]])
        np.testing.assert_allclose(real_sph_harm(0, 0, points), 1 / np.sqrt(4 * np.pi))

    def test_y10_is_proportional_to_x3(self):
        """Y_10 = sqrt(3/4π)·x3 on the unit sphere"""
        points = np.array([[0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, 1.0, 0.0]])
        np.testing.assert_allclose(real_sph_harm(1, 0, points), np.sqrt(3 / (4 * np.pi)) * points[:, 2], atol=1e-15)

    def test_evaluated_at_radial_projection(self):
        """Scaling a point does not change the value"""
        p = np.array([[0.2, -0.3, 0.4]])
        assert real_sph_harm(2, 1, p)[0] == pytest.approx(real_sph_harm(2, 1, 5 * p)[0], rel=1e-14)

    def test_origin_is_finite(self):
        """The centre gets a fixed finite value"""
        assert np.isfinite(real_sph_harm(3, -2, np.zeros((1, 3)))).all()

    def test_invalid_order(self):
        """|m| > n is rejected"""
        with pytest.raises(ValueError):
            real_sph_harm(1, 2, np.array([[0.0, 0.0, 1.0]]))

    def test_orthonormal_under_mesh_rule(self, mesh):
        """The product rule integrates Y·Y exactly up to the default degree"""
        degree = default_degree(mesh)
        basis = sh_basis(degree, mesh.points)
        gram = basis.T @ (basis * mesh.weights[:, None])
        np.testing.assert_allclose(gram, np.eye(sh_count(degree)), atol=1e-12)


class TestProjection:
    """Nodal values to coefficients and back"""

    def test_default_degree(self, mesh):
        """min(n_polar − 1, (n_azimuth − 1) // 2)"""
        assert default_degree(mesh) == 7
        assert default_degree(build_sphere_boundary(1.0, 16, 20)) == 9

    def test_single_harmonic(self, mesh):
        """Projecting Y_21 gives one unit coefficient"""
        coeffs = project(mesh, real_sph_harm(2, 1, mesh.points))
        expected = np.zeros(sh_count(coeffs.degree))
        expected[sh_index(2, 1)] = 1.0
        np.testing.assert_allclose(coeffs.values, expected, atol=1e-12)

    def test_synthesis_reproduces_band_limited_data(self, mesh):
        """x1·x2 + x3 is degree 2 and survives projection"""
        values = mesh.points[:, 0] * mesh.points[:, 1] + mesh.points[:, 2]
        np.testing.assert_allclose(synthesize(project(mesh, values), mesh.points), values, atol=1e-12)

    def test_interpolation_of_constant(self, mesh):
        """Constants interpolate exactly at any projection point"""
        targets = np.array([[0.0, 0.0, 0.5], [2.0, 1.0, -1.0], [0.0, 0.0, 0.0]])
        np.testing.assert_allclose(interpolation_matrix(mesh, targets) @ np.ones(mesh.size), 1.0, atol=1e-12)

    def test_sample_degree_shape(self, mesh):
        """2n + 1 columns per degree"""
        assert sample_degree(mesh, 3).shape == (mesh.size, 7)


class TestShCoefficients:
    """Flat coefficient container"""

    def test_length_checked(self):
        """(degree + 1)² entries are required"""
        with pytest.raises(ValueError):
            ShCoefficients(2, np.zeros(5))

    def test_scale_degrees(self):
        """Each degree block is scaled by its own factor"""
        coeffs = ShCoefficients(1, np.ones(4)).scale_degrees([2.0, 3.0])
        np.testing.assert_allclose(coeffs.values, [2.0, 3.0, 3.0, 3.0])
        np.testing.assert_allclose(coeffs.degree_block(1), [3.0, 3.0, 3.0])

    def test_single(self):
        """single(n, m) has one nonzero entry"""
        coeffs = ShCoefficients.single(2, -1, degree=3)
        assert coeffs.values.sum() == 1.0
        assert coeffs.values[sh_index(2, -1)] == 1.0


class TestBallInterpolation:
    """Shell harmonics joined by radial Lagrange interpolation"""

    @pytest.fixture(scope="class")
    def volume(self):
        return build_ball_volume(1.0, 4, 6, 12)

    def test_lagrange_forms_agree(self):
        """Monomial coefficients and the product form describe the same polynomials"""
        nodes = np.array([0.1, 0.4, 0.7, 0.9])
        s = np.linspace(0.0, 1.0, 7)
        monomials = lagrange_monomials(nodes)
        from_monomials = np.vander(s, 4, increasing=True) @ monomials
        np.testing.assert_allclose(lagrange_basis(nodes, s), from_monomials, atol=1e-10)
        np.testing.assert_allclose(lagrange_basis(nodes, nodes), np.eye(4), atol=1e-14)

    def test_polynomial_reproduced(self, volume):
        """x1·x3 + x2² is resolved by shells and radial nodes alike, S included"""
        def field(points):
            return points[:, 0] * points[:, 2] + points[:, 1] ** 2

        targets = np.array([[0.0, 0.0, 0.0], [0.2, -0.5, 0.3], [0.6, 0.0, -0.8], [0.0, 1.0, 0.0]])
        values = field(volume.points)
        np.testing.assert_allclose(ball_interpolate(volume, values, targets), field(targets), atol=1e-12)
        matrix = ball_interpolation_matrix(volume, targets)
        assert matrix.shape == (4, volume.size)
        np.testing.assert_allclose(matrix @ values, field(targets), atol=1e-12)

    def test_shell_coefficients_of_constant(self, volume):
        """Only the Y_00 entry is set, with √(4π)"""
        coefficients = shell_coefficients(volume, np.ones(volume.size))
        assert coefficients.shape == (4, sh_count(5))
        np.testing.assert_allclose(coefficients[:, 0], np.sqrt(4 * np.pi), rtol=1e-13)
        np.testing.assert_allclose(coefficients[:, 1:], 0.0, atol=1e-13)
