"""Manufactured solutions, convergence studies and discrete checks of the
operator identities."""
import logging
import numpy as np
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

from bdie.models.schemas import GeometryConfig, SolverConfig
from bdie.services import laplace_core as lc
from bdie.services.bdies import (
    BdiesSystem,
    ExtensionPair,
    SolveReport,
    assemble_F0,
    assemble_M12,
    build_extensions,
    recover_cauchy_data,
    smallest_singular_value,
    solve,
)
from bdie.services.coefficient import CoefficientField, make_coefficient
from bdie.services.geometry import BoundaryMesh, VolumeMesh, build_ball_volume, build_sphere_boundary
from bdie.services.green_identities import SmoothTestFunction, make_test_function
from bdie.services.parametrix import ParametrixContext, eval_remainder, eval_remainder_y
from bdie.utils.errors import ConfigurationError, GeometryError
from bdie.utils.spherical import default_degree, project, real_sph_harm, sample_degree, sh_basis, synthesize


logger = logging.getLogger(__name__)

# name -> (coefficient, coefficient params, exact solution)
MANUFACTURED_CASES: Dict[str, Tuple[str, Dict[str, float], str]] = {
    "laplace-linear": ("const", {"c": 1.0}, "x1 + 2*x2"),
    "exp-linear": ("exp_linear", {"k": 2.0}, "x1"),
    "quadratic": ("one_plus_x1_squared", {}, "x2**2"),
    "constant": ("const", {"c": 1.0}, "1"),
}

EXACT_FLOOR = 1e-14
SECTION_CONCENTRATION = 0.8
OPERATOR_FD_TOLERANCE = 1e-5
OPERATOR_FD_POINTS = np.array([
    [0.1, -0.2, 0.3],
    [0.5, 0.0, 0.0],
    [-0.4, 0.3, -0.2],
    [0.0, 0.0, 0.6],
])


@lru_cache(maxsize=8)
def build_meshes(geometry: GeometryConfig) -> Tuple[BoundaryMesh, VolumeMesh]:
    """Boundary and volume meshes for a resolution, shared between callers"""
    boundary = build_sphere_boundary(geometry.radius, geometry.n_polar, geometry.n_azimuth)
    volume = build_ball_volume(geometry.radius, geometry.n_r, geometry.volume_polar, geometry.volume_azimuth)
    logger.info("Meshes %s: %d boundary, %d volume nodes", geometry.label(), boundary.size, volume.size)
    return boundary, volume


def make_context(coefficient: CoefficientField, geometry: GeometryConfig) -> ParametrixContext:
    """Parametrix context on the shared meshes of a resolution"""
    boundary, volume = build_meshes(geometry)
    return ParametrixContext(coefficient, boundary, volume)


def relative_l2(approx: np.ndarray, exact: np.ndarray, weights: np.ndarray) -> float:
    """Weighted discrete L² error relative to the exact field"""
    err = np.sqrt(np.dot(weights, (approx - exact) ** 2))
    ref = np.sqrt(np.dot(weights, exact ** 2))
    return float(err / ref) if ref > EXACT_FLOOR else float(err)


def relative_max(approx: np.ndarray, exact: np.ndarray) -> float:
    """max|error| / max|exact|; absolute when the exact field vanishes"""
    err = np.max(np.abs(approx - exact)) if approx.size else 0.0
    ref = np.max(np.abs(exact)) if exact.size else 0.0
    return float(err / ref) if ref > EXACT_FLOOR else float(err)


@dataclass(frozen=True, eq=False)
class ManufacturedCase:
    """Exact u for a coefficient, with data f = 𝒜u, φ₀ = γ⁺u|S_D, ψ₀ = T⁺u|S_N"""
    name: str
    coefficient: CoefficientField
    solution: SmoothTestFunction

    def f(self, points: np.ndarray) -> np.ndarray:
        return self.solution.operator(points)

    def exact_trace(self, boundary: BoundaryMesh) -> np.ndarray:
        return self.solution.value(boundary.points)

    def exact_conormal(self, boundary: BoundaryMesh) -> np.ndarray:
        return self.solution.conormal(boundary.points, boundary.normals)

    def phi0(self, boundary: BoundaryMesh) -> np.ndarray:
        return self.exact_trace(boundary)[boundary.dirichlet]

    def psi0(self, boundary: BoundaryMesh) -> np.ndarray:
        return self.exact_conormal(boundary)[boundary.neumann]


def make_manufactured_case(name: str, coefficient: Optional[CoefficientField] = None) -> ManufacturedCase:
    """Registered case with its closed-form data, 𝒜u checked against finite differences"""
    if name not in MANUFACTURED_CASES:
        raise ConfigurationError(f"Unknown case '{name}', expected one of {sorted(MANUFACTURED_CASES)}")
    coefficient_name, params, expression = MANUFACTURED_CASES[name]
    if coefficient is None:
        coefficient = make_coefficient(coefficient_name, params)
    solution = make_test_function(expression, coefficient, name=name)
    deviation = solution.operator_fd_deviation(OPERATOR_FD_POINTS)
    if not deviation <= OPERATOR_FD_TOLERANCE:
        raise ConfigurationError(
            f"Case '{name}': 𝒜u disagrees with finite differences of the flux by {deviation:.3e}"
        )
    return ManufacturedCase(name=name, coefficient=coefficient, solution=solution)


@dataclass
class CaseRun:
    """Everything produced by one pipeline run"""
    case: ManufacturedCase
    geometry: GeometryConfig
    context: ParametrixContext
    system: BdiesSystem
    extensions: ExtensionPair
    report: SolveReport


def assemble_case(case: ManufacturedCase, geometry: GeometryConfig) -> Tuple[ParametrixContext, BdiesSystem, ExtensionPair]:
    """Context, M12 with F₀ and the zero extensions for a case at one resolution"""
    ctx = make_context(case.coefficient, geometry)
    b, vol = ctx.boundary, ctx.volume
    ext = build_extensions(b, case.phi0(b), case.psi0(b))
    rhs = assemble_F0(ctx, case.f(vol.points), ext)
    return ctx, assemble_M12(ctx, rhs), ext


def case_errors(case: ManufacturedCase, ctx: ParametrixContext, system: BdiesSystem, report: SolveReport) -> Dict[str, float]:
    """Relative errors of u, ψ, φ and, once recovered, the Cauchy data"""
    b, vol = ctx.boundary, ctx.volume
    trace = case.exact_trace(b)
    conormal = case.exact_conormal(b)
    errors = {
        "u": relative_l2(report.u, case.solution.value(vol.points), vol.weights),
        "psi": relative_max(report.psi, conormal[system.dirichlet]),
        "phi": relative_max(report.phi, trace[system.neumann]),
    }
    if report.trace is not None:
        errors["trace"] = relative_max(report.trace, trace)
        errors["conormal"] = relative_max(report.conormal, conormal)
    return errors


def run_case(case: ManufacturedCase, geometry: GeometryConfig, solver: Optional[SolverConfig] = None) -> CaseRun:
    """Extensions, F₀, M12, solve, recovery and errors against the exact solution"""
    solver = solver or SolverConfig()
    ctx, system, ext = assemble_case(case, geometry)
    options = {} if solver.method == "dense" else {
        "tol": solver.tol, "max_iter": solver.max_iter, "restart": solver.restart,
    }
    report = solve(system, solver.method, **options)
    recover_cauchy_data(report, ext, system)
    report.errors = case_errors(case, ctx, system, report)
    logger.info(
        "Case %s on %s: u %.3e, psi %.3e, phi %.3e",
        case.name, geometry.label(), report.errors["u"], report.errors["psi"], report.errors["phi"],
    )
    return CaseRun(case=case, geometry=geometry, context=ctx, system=system, extensions=ext, report=report)


def exact_system_residual(case: ManufacturedCase, geometry: GeometryConfig, system: Optional[BdiesSystem] = None) -> float:
    """Relative residual of M12 at the exact (u, ψ, φ)"""
    if system is None:
        _, system, _ = assemble_case(case, geometry)
    boundary, volume = build_meshes(geometry)
    x = system.stack(
        case.solution.value(volume.points),
        case.exact_conormal(boundary)[system.dirichlet],
        case.exact_trace(boundary)[system.neumann],
    )
    b = system.rhs_vector()
    r = np.linalg.norm(system.matvec(x) - b)
    norm_b = np.linalg.norm(b)
    return float(r / norm_b) if norm_b > 0 else float(r)


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    geometry: GeometryConfig
    field: str
    error: float
    order: Optional[float]


def observed_order(e_prev: float, e_cur: float, n_prev: int, n_cur: int) -> Optional[float]:
    """None when either error vanishes or the counts coincide"""
    if e_prev <= 0 or e_cur <= 0 or n_cur == n_prev:
        return None
    return float(np.log(e_prev / e_cur) / np.log(n_cur / n_prev))


def convergence_study(
    case: ManufacturedCase,
    levels: Sequence[GeometryConfig],
    solver: Optional[SolverConfig] = None,
    fields: Sequence[str] = ("u", "psi", "phi"),
) -> List[ConvergenceRow]:
    """Errors per unknown over successive resolutions with observed orders"""
    if len(levels) < 3:
        raise ConfigurationError(f"A convergence study needs at least 3 levels, got {len(levels)}")
    errors = [run_case(case, geometry, solver).report.errors for geometry in levels]
    rows: List[ConvergenceRow] = []
    for name in fields:
        for i, geometry in enumerate(levels):
            order = None
            if i > 0:
                order = observed_order(errors[i - 1][name], errors[i][name], levels[i - 1].n_polar, geometry.n_polar)
            rows.append(ConvergenceRow(level=i, geometry=geometry, field=name, error=errors[i][name], order=order))
    return rows


@dataclass(frozen=True)
class SpectrumRow:
    operator: str
    degree: int
    oracle: float
    computed: float
    abs_error: float
    max_deviation: float


def spectrum_compare(boundary: BoundaryMesh, operator: str, max_degree: int) -> List[SpectrumRow]:
    """Nyström operator on sampled Y_n against the eigenvalue table

    ``computed`` is the weighted Rayleigh quotient over all orders m;
    ``max_deviation`` is max|KY − λY| / max|Y|. ℒ_Δ has no Nyström form and
    goes through projection, the eigenvalue table and synthesis.
    """
    if abs(boundary.radius - 1.0) > 1e-12:
        raise GeometryError(f"Spectrum comparison needs the unit sphere, got radius {boundary.radius}")
    op = lc.SpectralOperator(operator)
    eigenvalues = lc.sphere_eigenvalues(op, max_degree)
    matrices = {
        lc.SpectralOperator.V: lc.direct_V_matrix,
        lc.SpectralOperator.W: lc.direct_W_matrix,
        lc.SpectralOperator.WP: lc.direct_Wp_matrix,
    }
    w = boundary.weights
    rows = []
    for n in range(max_degree + 1):
        samples = sample_degree(boundary, n)
        if op is lc.SpectralOperator.L:
            applied = np.stack([
                synthesize(lc.sphere_spectral_apply(op, project(boundary, samples[:, j])), boundary.points)
                for j in range(samples.shape[1])
            ], axis=1)
        else:
            applied = matrices[op](boundary) @ samples
        computed = float(np.sum(w[:, None] * applied * samples) / np.sum(w[:, None] * samples ** 2))
        deviation = float(np.max(np.abs(applied - eigenvalues[n] * samples)) / np.max(np.abs(samples)))
        rows.append(SpectrumRow(
            operator=op.value,
            degree=n,
            oracle=float(eigenvalues[n]),
            computed=computed,
            abs_error=abs(computed - float(eigenvalues[n])),
            max_deviation=deviation,
        ))
    return rows


@dataclass(frozen=True)
class InjectivityReport:
    """Smallest singular values of the nodal 𝒱 matrices and of their
    Galerkin sections on harmonics of degree ≤ ``degree``"""
    sigma_min_full: float
    sigma_min_dirichlet: float
    degree: int
    section_full: float
    section_dirichlet: float

    def drop_to(self, refined: "InjectivityReport") -> Dict[str, float]:
        """Relative decrease of every σ_min from this level to a refined one"""
        names = ("sigma_min_full", "sigma_min_dirichlet", "section_full", "section_dirichlet")
        return {name: 1.0 - getattr(refined, name) / getattr(self, name) for name in names}


def _section_sigma_min(matrix: np.ndarray, boundary: BoundaryMesh, indices: np.ndarray, degree: int) -> float:
    scale = np.sqrt(boundary.weights[indices]) / boundary.radius
    # harmonics that keep most of their norm on the node subset; all of them on S
    sampled = scale[:, None] * sh_basis(degree, boundary.points[indices])
    left, concentration, _ = np.linalg.svd(sampled, full_matrices=False)
    basis = left[:, concentration >= SECTION_CONCENTRATION]
    weighted = scale[:, None] * matrix[np.ix_(indices, indices)] / scale[None, :]
    return smallest_singular_value(basis.T @ weighted @ basis)


def injectivity_check_V(ctx: ParametrixContext, degree: Optional[int] = None) -> InjectivityReport:
    """Smallest singular values of 𝒱 and of its restriction r_{S_D}𝒱

    The nodal values follow the finest grid scale, which near the poles of
    the product rule shrinks faster than the mesh width. The sections
    compress 𝒱 onto a fixed harmonic space in the weighted L² product, so
    they compare across resolutions when ``degree`` is held fixed. The
    default is half the degree the boundary rule resolves.
    """
    b = ctx.boundary
    d = b.dirichlet_indices
    everything = np.arange(b.size)
    degree = default_degree(b) // 2 if degree is None else degree
    matrix = ctx.direct_V_matrix
    report = InjectivityReport(
        sigma_min_full=smallest_singular_value(matrix),
        sigma_min_dirichlet=smallest_singular_value(matrix[np.ix_(d, d)]),
        degree=degree,
        section_full=_section_sigma_min(matrix, b, everything, degree),
        section_dirichlet=_section_sigma_min(matrix, b, d, degree),
    )
    logger.debug(
        "σ_min(𝒱)=%.3e σ_min(r_D 𝒱)=%.3e, degree-%d sections %.3e / %.3e",
        report.sigma_min_full, report.sigma_min_dirichlet, degree, report.section_full, report.section_dirichlet,
    )
    return report


@dataclass(frozen=True)
class RhsVanishingReport:
    seed: int
    zero_norm: float
    unit_source_norm: float
    random_norms: List[float]

    @property
    def min_random_norm(self) -> float:
        return min(self.random_norms) if self.random_norms else float("inf")


def rhs_map(ctx: ParametrixContext, f: np.ndarray, Phi0: np.ndarray, Psi0: np.ndarray) -> np.ndarray:
    """(f, Φ₀, Ψ₀) ↦ (F₀, γ⁺F₀ − Φ₀) stacked"""
    return assemble_F0(ctx, f, ExtensionPair(Phi0=Phi0, Psi0=Psi0)).stacked()


def rhs_vanishing_check(ctx: ParametrixContext, seed: int, count: int = 20) -> RhsVanishingReport:
    """Zero data gives a zero right-hand side; seeded nonzero data does not"""
    nv, ns = ctx.volume.size, ctx.boundary.size
    zero = rhs_map(ctx, np.zeros(nv), np.zeros(ns), np.zeros(ns))
    unit = assemble_F0(ctx, np.ones(nv), ExtensionPair(Phi0=np.zeros(ns), Psi0=np.zeros(ns))).F0_volume
    rng = np.random.default_rng(seed)
    norms = []
    for _ in range(count):
        f = rng.standard_normal(nv)
        Phi0 = rng.standard_normal(ns)
        Psi0 = rng.standard_normal(ns)
        norms.append(float(np.max(np.abs(rhs_map(ctx, f, Phi0, Psi0)))))
    return RhsVanishingReport(
        seed=seed,
        zero_norm=float(np.max(np.abs(zero))),
        unit_source_norm=float(np.max(np.abs(unit))),
        random_norms=norms,
    )


def jump_densities(boundary: BoundaryMesh) -> Dict[str, np.ndarray]:
    """The constant, Y_{1,0} and Y_{2,1} sampled on S"""
    return {
        "1": np.ones(boundary.size),
        "Y1": real_sph_harm(1, 0, boundary.points),
        "Y2": real_sph_harm(2, 1, boundary.points),
    }


@dataclass(frozen=True)
class JumpRow:
    quantity: str
    side: str
    error: float


def jump_relation_check(ctx: ParametrixContext, density: np.ndarray, delta: float = 1e-3) -> List[JumpRow]:
    """One-sided limits from distance δ along the normal against the Nyström direct values

    γ±V → 𝒱ρ, γ±W → ∓ρ/2 + 𝒲ρ and T±V → ±ρ/2 + 𝒲'ρ, '+' being the interior.
    """
    density = np.asarray(density, dtype=float)
    direct_V = ctx.direct_V(density)
    direct_W = ctx.direct_W(density)
    direct_Wp = ctx.direct_Wp(density)
    rows = []
    for side in ("+", "-"):
        sign = lc.side_sign(side)
        single, double, conormal = ctx.near_boundary_limits(density, density, delta, side)
        rows.append(JumpRow("V", side, float(np.max(np.abs(single - direct_V)))))
        rows.append(JumpRow("W", side, float(np.max(np.abs(double - (-sign * 0.5 * density + direct_W))))))
        rows.append(JumpRow("TV", side, float(np.max(np.abs(conormal - (sign * 0.5 * density + direct_Wp))))))
    return rows


def remainder_growth_exponent(
    coefficient: CoefficientField,
    y: Sequence[float],
    direction: Sequence[float],
    kind: str = "x",
    distances: Sequence[float] = tuple(10.0 ** -k for k in np.linspace(1, 4, 7)),
) -> float:
    """Slope of −log|R| against log|x − y| along a ray x = y + t·direction"""
    y = np.asarray(y, dtype=float)
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    kernel = eval_remainder if kind == "x" else eval_remainder_y
    t = np.asarray(distances, dtype=float)
    values = np.array([abs(kernel(coefficient, y + s * direction, y)) for s in t])
    slope, _ = np.polyfit(np.log(t), np.log(values), 1)
    return float(-slope)
