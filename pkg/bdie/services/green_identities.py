import logging
import numpy as np
import sympy as sp
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Union

from bdie.services import laplace_core as lc
from bdie.services.coefficient import CoefficientField
from bdie.services.parametrix import ParametrixContext
from bdie.utils.errors import GeometryError
from bdie.utils.symbolic import (
    divergence_of_flux,
    gradient,
    parse_expression,
    vectorize,
    vectorize_vector,
)


logger = logging.getLogger(__name__)

TARGET_CLEARANCE = 0.05

TEST_FUNCTIONS: Dict[str, str] = {
    "one": "1",
    "x1": "x1",
    "x2": "x2",
    "x2_squared": "x2**2",
    "x1_plus_2x2": "x1 + 2*x2",
    "mixed": "x1*x2 + x3**2",
}


@dataclass(frozen=True, eq=False)
class SmoothTestFunction:
    """Closed-form u with ∇u and 𝒜u = ∇·(a∇u) for a given coefficient"""
    name: str
    expr: sp.Expr
    coefficient: CoefficientField
    value: Callable = field(init=False, repr=False)
    grad: Callable = field(init=False, repr=False)
    operator: Callable = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "value", vectorize(self.expr))
        object.__setattr__(self, "grad", vectorize_vector(gradient(self.expr)))
        object.__setattr__(self, "operator", vectorize(divergence_of_flux(self.coefficient.expr, self.expr)))

    def conormal(self, points: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """Classical conormal derivative a·∂u/∂n"""
        return self.coefficient.a(points) * np.einsum("ij,ij->i", self.grad(points), normals)

    def energy_density(self, other: "SmoothTestFunction", points: np.ndarray) -> np.ndarray:
        """E(u, v)(x) = a(x)∇u·∇v"""
        return self.coefficient.a(points) * np.einsum("ij,ij->i", self.grad(points), other.grad(points))

    def operator_fd_deviation(self, points: np.ndarray, h: float = 1e-4) -> float:
        """Max gap between 𝒜u and central differences of the flux a∇u"""
        points = np.asarray(points, dtype=float)
        total = np.zeros(points.shape[0])
        for k in range(3):
            step = np.zeros(3)
            step[k] = h
            plus = self.coefficient.a(points + step) * self.grad(points + step)[:, k]
            minus = self.coefficient.a(points - step) * self.grad(points - step)[:, k]
            total += (plus - minus) / (2 * h)
        return float(np.max(np.abs(total - self.operator(points))))


def make_test_function(
    expression: Union[str, sp.Expr],
    coefficient: CoefficientField,
    name: Optional[str] = None,
) -> SmoothTestFunction:
    """Test function from a catalog name or a closed-form expression in x1, x2, x3"""
    if isinstance(expression, str) and expression in TEST_FUNCTIONS:
        name = name or expression
        expression = TEST_FUNCTIONS[expression]
    expr = parse_expression(expression)
    return SmoothTestFunction(name=name or str(expr), expr=expr, coefficient=coefficient)


def _check_clearance(ctx: ParametrixContext, targets: np.ndarray) -> np.ndarray:
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    gap = ctx.radius - np.linalg.norm(targets, axis=1)
    if np.any(gap < TARGET_CLEARANCE * ctx.radius - 1e-12):
        raise GeometryError(
            f"Targets must lie inside Ω at least {TARGET_CLEARANCE} from S (closest gap {gap.min():.3g})"
        )
    return targets


def first_green_residual(u: SmoothTestFunction, v: SmoothTestFunction, ctx: ParametrixContext) -> float:
    """|⟨T⁺u, γ⁺v⟩_S − ∫_Ω (v𝒜u + E(u, v)) dx|"""
    b, vol = ctx.boundary, ctx.volume
    surface = b.integrate(u.conormal(b.points, b.normals) * v.value(b.points))
    domain = vol.integrate(v.value(vol.points) * u.operator(vol.points) + u.energy_density(v, vol.points))
    return abs(surface - domain)


def second_green_residual(u: SmoothTestFunction, v: SmoothTestFunction, ctx: ParametrixContext) -> float:
    """|∫_Ω (u𝒜v − v𝒜u) dx − ∫_S (uT⁺v − vT⁺u) dS|"""
    b, vol = ctx.boundary, ctx.volume
    domain = vol.integrate(u.value(vol.points) * v.operator(vol.points) - v.value(vol.points) * u.operator(vol.points))
    surface = b.integrate(
        u.value(b.points) * v.conormal(b.points, b.normals) - v.value(b.points) * u.conormal(b.points, b.normals)
    )
    return abs(domain - surface)


def third_green_domain_residual(u: SmoothTestFunction, ctx: ParametrixContext, targets: np.ndarray) -> np.ndarray:
    """u + ℛu − V T⁺u + W γ⁺u − 𝒫𝒜u at interior targets"""
    targets = _check_clearance(ctx, targets)
    b, vol = ctx.boundary, ctx.volume
    u_t = u.value(targets)
    remainder = ctx.pot_R(u.value(vol.points), targets)
    single = ctx.pot_V(u.conormal(b.points, b.normals), targets)
    double = ctx.pot_W(u.value(b.points), targets)
    newton = ctx.pot_P(u.operator(vol.points), targets)
    return u_t + remainder - single + double - newton


def third_green_boundary_residual(u: SmoothTestFunction, ctx: ParametrixContext) -> np.ndarray:
    """½γ⁺u + γ⁺ℛu − 𝒱T⁺u + 𝒲γ⁺u − γ⁺𝒫𝒜u at the boundary nodes"""
    b, vol = ctx.boundary, ctx.volume
    trace = u.value(b.points)
    remainder = ctx.pot_R(u.value(vol.points), b.points)
    newton = ctx.pot_P(u.operator(vol.points), b.points)
    return (
        0.5 * trace
        + remainder
        - ctx.direct_V(u.conormal(b.points, b.normals))
        + ctx.direct_W(trace)
        - newton
    )


def indirect_relation_residual(
    psi: np.ndarray,
    phi: np.ndarray,
    u: SmoothTestFunction,
    ctx: ParametrixContext,
    targets: np.ndarray,
) -> np.ndarray:
    """V(Ψ − T⁺u) − W(Φ − γ⁺u) at interior targets"""
    b = ctx.boundary
    targets = np.asarray(targets, dtype=float).reshape(-1, 3)
    flux_gap = np.asarray(psi, dtype=float) - u.conormal(b.points, b.normals)
    trace_gap = np.asarray(phi, dtype=float) - u.value(b.points)
    return ctx.pot_V(flux_gap, targets) - ctx.pot_W(trace_gap, targets)


def classical_green_residual(u: SmoothTestFunction, ctx: ParametrixContext, targets: np.ndarray) -> np.ndarray:
    """Laplace representation u − V_Δ∂ₙu + W_Δu − 𝒫_ΔΔu, valid for a ≡ 1"""
    targets = _check_clearance(ctx, targets)
    b, vol = ctx.boundary, ctx.volume
    normal_derivative = np.einsum("ij,ij->i", u.grad(b.points), b.normals)
    layers = lc.layer_matrices(b, targets)
    newton, _ = lc.newton_Delta(vol, u.operator(vol.points), targets)
    return u.value(targets) - layers.single @ normal_derivative + layers.double @ u.value(b.points) - newton
