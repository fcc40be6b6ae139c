"""Parametrix P^x(x, y) = P_Δ(x − y)/a(x) and the potentials built on it.

Every operator is realised through its relation to the Laplace operators
of ``laplace_core``: the density is divided by a (or multiplied by
∂ln a/∂n) at the quadrature nodes and the constant-coefficient matrix is
applied. The remainder potential has a second, direct quadrature of the
remainder kernel used as a cross-check.
"""
import logging
import numpy as np
from functools import cached_property
from typing import Literal, Optional, Tuple, Union
from scipy.special import roots_legendre

from bdie.services import laplace_core as lc
from bdie.services.coefficient import CoefficientField
from bdie.services.geometry import BoundaryMesh, VolumeMesh, unit_sphere_rule
from bdie.utils.errors import CoincidentPointsError, GeometryError
from bdie.utils.spherical import (
    ShCoefficients,
    ball_interpolation_matrix,
    evaluate_ball,
    project,
    shell_coefficients,
    synthesize,
)
from bdie.utils.symbolic import as_points


logger = logging.getLogger(__name__)

RemainderMethod = Literal["relation", "direct"]

# (polar, azimuth, radial) node counts of the target-centred remainder rule
POLAR_RULE = (16, 32, 12)
POLAR_CHUNK = 8


def _coincident_guard(x: np.ndarray, y: np.ndarray) -> float:
    r = float(np.linalg.norm(x - y))
    if r == 0.0:
        raise CoincidentPointsError(f"Parametrix evaluated at coincident points {x.tolist()}")
    return r


def eval_parametrix(coefficient: CoefficientField, x, y) -> float:
    """P^x(x, y) = −1/(4π a(x)|x − y|)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p_delta, _ = lc.eval_kernel_Delta(x, y)
    return float(p_delta / coefficient.a(x)[0])


def eval_parametrix_y(coefficient: CoefficientField, x, y) -> float:
    """P^y(x, y) = −1/(4π a(y)|x − y|)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p_delta, _ = lc.eval_kernel_Delta(x, y)
    return float(p_delta / coefficient.a(y)[0])


def eval_remainder(coefficient: CoefficientField, x, y) -> float:
    """R^x(x, y) = −Δln a(x)·P_Δ(x − y) − ∇ln a(x)·∇ₓP_Δ(x − y)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    p_delta, grad_x = lc.eval_kernel_Delta(x, y)
    return float(-coefficient.lap_log_a(x)[0] * p_delta - coefficient.grad_log_a(x)[0] @ grad_x)


def eval_remainder_y(coefficient: CoefficientField, x, y) -> float:
    """R^y(x, y) = ∇a(x)·∇ₓP_Δ(x − y)/a(y)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _, grad_x = lc.eval_kernel_Delta(x, y)
    return float(coefficient.grad_a(x)[0] @ grad_x / coefficient.a(y)[0])


class ParametrixContext:
    """Coefficient plus meshes, with the assembled parametrix operators

    Matrices are built on first use and kept for the lifetime of the
    context. Volume-node targets are the default wherever a target set is
    optional.
    """

    def __init__(self, coefficient: CoefficientField, boundary: BoundaryMesh, volume: VolumeMesh):
        if abs(boundary.radius - volume.radius) > 1e-12 * boundary.radius:
            raise GeometryError(
                f"Boundary radius {boundary.radius} and volume radius {volume.radius} differ"
            )
        self.coefficient = coefficient
        self.boundary = boundary
        self.volume = volume

        self.a_volume = coefficient.a(volume.points)
        self.a_boundary = coefficient.a(boundary.points)
        self.grad_log_volume = coefficient.grad_log_a(volume.points)
        self.lap_log_volume = coefficient.lap_log_a(volume.points)
        self.dlog_dn = coefficient.dlog_a_dn(boundary.points, boundary.normals)

    @property
    def radius(self) -> float:
        return self.boundary.radius

    # -- volume potentials -------------------------------------------------

    @cached_property
    def newton_self(self) -> lc.NewtonMatrices:
        return lc.newton_self_matrices(self.volume)

    @cached_property
    def newton_boundary(self) -> lc.NewtonMatrices:
        return lc.newton_boundary_matrices(self.volume, self.boundary)

    def _newton(self, targets: Optional[np.ndarray]) -> lc.NewtonMatrices:
        if targets is None:
            return self.newton_self
        if targets is self.boundary.points:
            return self.newton_boundary
        return lc.newton_matrices(self.volume, targets)

    def _remainder_from_newton(self, newton: lc.NewtonMatrices) -> np.ndarray:
        """Σ_k ∂_k𝒫_Δ D(∂_k ln a) − 𝒫_Δ D(Δln a)"""
        matrix = -newton.value * self.lap_log_volume[None, :]
        for k in range(3):
            matrix = matrix + newton.gradient[k] * self.grad_log_volume[None, :, k]
        return matrix

    @cached_property
    def P_matrix(self) -> np.ndarray:
        """𝒫 on the volume nodes"""
        return self.newton_self.value / self.a_volume[None, :]

    @cached_property
    def P_boundary_matrix(self) -> np.ndarray:
        """γ⁺𝒫 from volume nodes to boundary nodes"""
        return self.newton_boundary.value / self.a_volume[None, :]

    @cached_property
    def R_matrix(self) -> np.ndarray:
        """ℛ on the volume nodes"""
        return self._remainder_from_newton(self.newton_self)

    @cached_property
    def R_boundary_matrix(self) -> np.ndarray:
        """γ⁺ℛ from volume nodes to boundary nodes"""
        return self._remainder_from_newton(self.newton_boundary)

    def pot_P(self, rho: np.ndarray, targets: Optional[np.ndarray] = None) -> np.ndarray:
        """𝒫ρ = 𝒫_Δ(ρ/a)"""
        rho = np.asarray(rho, dtype=float)
        if targets is None:
            return self.P_matrix @ rho
        values, _ = self._newton(targets).apply(rho / self.a_volume)
        return values

    def pot_R(
        self,
        rho: np.ndarray,
        targets: Optional[np.ndarray] = None,
        method: RemainderMethod = "relation",
    ) -> np.ndarray:
        """ℛρ through the Newton-potential relation or by direct quadrature"""
        rho = np.asarray(rho, dtype=float)
        if method == "direct":
            return self._pot_R_direct(rho, targets)
        if method != "relation":
            raise ValueError(f"Unknown remainder method '{method}'")
        if targets is None:
            return self.R_matrix @ rho

        newton = self._newton(targets)
        result = np.zeros(newton.targets.shape[0])
        for k in range(3):
            _, grads = newton.apply(rho * self.grad_log_volume[:, k])
            result += grads[:, k]
        values, _ = newton.apply(rho * self.lap_log_volume)
        return result - values

    def _pot_R_direct(self, rho: np.ndarray, targets: Optional[np.ndarray]) -> np.ndarray:
        """Quadrature of R(x, y)ρ(x) in polar coordinates about each target

        With x = y + tω the volume element t² cancels the singularity,
        R(x, y)t² = (tΔln a(x) − ∇ln a(x)·ω)/(4π), and every ray is cut
        at S. ρ between the nodes is the shell-harmonic interpolant.
        """
        tgt = self.volume.points if targets is None else as_points(targets)
        radius = self.radius
        clearance = radius ** 2 - np.einsum("tk,tk->t", tgt, tgt)
        if np.any(clearance <= 0):
            raise GeometryError("Direct remainder quadrature needs targets strictly inside Ω")

        coefficients = shell_coefficients(self.volume, rho)
        directions, direction_weights = unit_sphere_rule(POLAR_RULE[0], POLAR_RULE[1])
        nodes, node_weights = roots_legendre(POLAR_RULE[2])
        omega = np.repeat(directions, nodes.size, axis=0)

        def build(rows: slice):
            out = np.empty(rows.stop - rows.start)
            for i, t_index in enumerate(range(rows.start, rows.stop)):
                y = tgt[t_index]
                along = directions @ y
                reach = np.sqrt(along ** 2 + clearance[t_index]) - along
                t = 0.5 * reach[:, None] * (nodes + 1.0)
                weights = 0.5 * reach[:, None] * node_weights[None, :] * direction_weights[:, None]
                points = (y + t[:, :, None] * directions[:, None, :]).reshape(-1, 3)
                kernel = (
                    t.ravel() * self.coefficient.lap_log_a(points)
                    - np.einsum("pk,pk->p", self.coefficient.grad_log_a(points), omega)
                ) / lc.FOUR_PI
                out[i] = np.dot(weights.ravel(), kernel * evaluate_ball(self.volume, coefficients, points))
            return (out,)

        parts = lc.assemble_rows(tgt.shape[0], build, chunk=POLAR_CHUNK)
        return np.concatenate([p[0] for p in parts])

    @cached_property
    def trace_matrix(self) -> np.ndarray:
        """Volume nodes to S: the shell-harmonic interpolant continued to radius R"""
        return ball_interpolation_matrix(self.volume, self.boundary.points)

    # -- layer potentials off S -------------------------------------------

    @cached_property
    def volume_layers(self) -> lc.LayerMatrices:
        return lc.volume_layer_matrices(self.boundary, self.volume)

    def layers(self, targets: Optional[np.ndarray] = None) -> lc.LayerMatrices:
        """Laplace layer matrices to the given targets, volume nodes by default"""
        if targets is None:
            return self.volume_layers
        return lc.layer_matrices(self.boundary, targets)

    def V_matrix(self, targets: Optional[np.ndarray] = None) -> np.ndarray:
        """Vρ = V_Δ(ρ/a)"""
        return self.layers(targets).single / self.a_boundary[None, :]

    def W_matrix(self, targets: Optional[np.ndarray] = None) -> np.ndarray:
        """Wτ = W_Δτ − V_Δ(τ∂ln a/∂n)"""
        layers = self.layers(targets)
        return layers.double - layers.single * self.dlog_dn[None, :]

    def pot_V(self, rho: np.ndarray, targets: Optional[np.ndarray] = None) -> np.ndarray:
        return self.V_matrix(targets) @ np.asarray(rho, dtype=float)

    def pot_W(self, tau: np.ndarray, targets: Optional[np.ndarray] = None) -> np.ndarray:
        return self.W_matrix(targets) @ np.asarray(tau, dtype=float)

    # -- direct values on S ------------------------------------------------

    @cached_property
    def direct_V_matrix(self) -> np.ndarray:
        """𝒱ρ = 𝒱_Δ(ρ/a)"""
        return lc.direct_V_matrix(self.boundary) / self.a_boundary[None, :]

    @cached_property
    def direct_W_matrix(self) -> np.ndarray:
        """𝒲τ = 𝒲_Δτ − 𝒱_Δ(τ∂ln a/∂n)"""
        return lc.direct_W_matrix(self.boundary) - lc.direct_V_matrix(self.boundary) * self.dlog_dn[None, :]

    @cached_property
    def direct_Wp_matrix(self) -> np.ndarray:
        """𝒲'ρ = a·𝒲'_Δ(ρ/a)"""
        return self.a_boundary[:, None] * lc.direct_Wp_matrix(self.boundary) / self.a_boundary[None, :]

    def direct_V(self, rho: np.ndarray) -> np.ndarray:
        return self.direct_V_matrix @ np.asarray(rho, dtype=float)

    def direct_W(self, tau: np.ndarray) -> np.ndarray:
        return self.direct_W_matrix @ np.asarray(tau, dtype=float)

    def direct_Wp(self, rho: np.ndarray) -> np.ndarray:
        return self.direct_Wp_matrix @ np.asarray(rho, dtype=float)

    # -- hypersingular operators on the unit sphere -------------------------

    def _nodal(self, rho: Union[np.ndarray, ShCoefficients]) -> np.ndarray:
        if isinstance(rho, ShCoefficients):
            return synthesize(rho, self.boundary.points)
        return np.asarray(rho, dtype=float)

    def _coefficients(self, rho: Union[np.ndarray, ShCoefficients]) -> ShCoefficients:
        if isinstance(rho, ShCoefficients):
            return rho
        return project(self.boundary, rho)

    def op_L_hat(self, rho: Union[np.ndarray, ShCoefficients]) -> np.ndarray:
        """𝓛̂ρ = a·ℒ_Δρ, ℒ_Δ through its spherical-harmonic eigenvalues"""
        coeffs = lc.sphere_spectral_apply(lc.SpectralOperator.L, self._coefficients(rho), self.radius)
        return self.a_boundary * synthesize(coeffs, self.boundary.points)

    def op_L(self, rho: Union[np.ndarray, ShCoefficients], side: lc.Side) -> np.ndarray:
        """ℒ±ρ = 𝓛̂ρ − a·T±_ΔV_Δ(ρ∂ln a/∂n)"""
        flux = self._nodal(rho) * self.dlog_dn
        return self.op_L_hat(rho) - self.a_boundary * lc.conormal_T_Delta_pm_of_V(self.boundary, flux, side)

    def compact_difference_identity(
        self, rho: Union[np.ndarray, ShCoefficients], side: lc.Side
    ) -> Tuple[np.ndarray, np.ndarray]:
        """Both sides of ℒ±ρ − 𝓛̂ρ = −a(±½ + 𝒲'_Δ)(ρ∂ln a/∂n)

        The left side is assembled with the Nyström 𝒲'_Δ, the right side
        applies 𝒲'_Δ through the spectral oracle.
        """
        left = self.op_L(rho, side) - self.op_L_hat(rho)
        flux = self._nodal(rho) * self.dlog_dn
        spectral = synthesize(
            lc.sphere_spectral_apply(lc.SpectralOperator.WP, project(self.boundary, flux), self.radius),
            self.boundary.points,
        )
        right = -self.a_boundary * (lc.side_sign(side) * 0.5 * flux + spectral)
        return left, right

    # -- limits at S -------------------------------------------------------

    def near_boundary_limits(
        self, rho: np.ndarray, tau: np.ndarray, delta: float, side: lc.Side
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """One-sided limits at S of Vρ, Wτ and the conormal derivative of Vρ

        The potentials are summed from their harmonic series at y ∓ δn and
        y ∓ 2δn for every node y ('+' is the interior) and extrapolated
        linearly to the surface.
        """
        sign = lc.side_sign(side)
        rho = np.asarray(rho, dtype=float)
        tau = np.asarray(tau, dtype=float)
        sigma = rho / self.a_boundary
        flux = tau * self.dlog_dn
        samples = []
        for distance in (delta, 2.0 * delta):
            targets = self.boundary.points - sign * distance * self.boundary.normals
            single, double, slope = lc.layer_series_Delta(self.boundary, sigma, tau, targets)
            correction, _, _ = lc.layer_series_Delta(self.boundary, flux, tau, targets)
            samples.append((single, double - correction, self.a_boundary * slope))
        near, far = samples
        single, double, conormal = (2.0 * a - b for a, b in zip(near, far))
        return single, double, conormal
