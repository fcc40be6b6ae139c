"""Segregated boundary-domain integral equation system M12.

Unknowns are stacked as X = (u at volume nodes, ψ at S_D nodes, φ at S_N
nodes) and the equations as (volume nodes, boundary nodes):

    [ I + ℛ     −V|_D    W|_N       ] [u]   [ F₀          ]
    [ γ⁺ℛ       −𝒱|_D    ½E_N + 𝒲|_N ] [ψ] = [ γ⁺F₀ − Φ₀   ]
                                      [φ]

The principal part M12⁰ drops ℛ, γ⁺ℛ and 𝒲 and is block triangular.
"""
import logging
import numpy as np
from dataclasses import dataclass, field, replace
from typing import Dict, Literal, Optional, Tuple
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, gmres

from bdie.services.geometry import BoundaryMesh
from bdie.services.parametrix import ParametrixContext
from bdie.utils.errors import SolverError


logger = logging.getLogger(__name__)

SolveMethod = Literal["dense", "gmres"]

CONDITION_LIMIT = 1e12
CONDITION_ITERATIONS = 20


@dataclass(frozen=True)
class ExtensionPair:
    """Continuations Φ₀ of φ₀ and Ψ₀ of ψ₀ to all of S"""
    Phi0: np.ndarray
    Psi0: np.ndarray


def build_extensions(boundary: BoundaryMesh, phi0: np.ndarray, psi0: np.ndarray) -> ExtensionPair:
    """Zero-extend Dirichlet data from S_D and Neumann data from S_N"""
    d_idx, n_idx = boundary.dirichlet_indices, boundary.neumann_indices
    phi0 = np.asarray(phi0, dtype=float)
    psi0 = np.asarray(psi0, dtype=float)
    if phi0.shape != d_idx.shape or psi0.shape != n_idx.shape:
        raise ValueError(
            f"Expected φ₀ on {d_idx.size} Dirichlet nodes and ψ₀ on {n_idx.size} Neumann nodes, "
            f"got {phi0.shape} and {psi0.shape}"
        )
    Phi0 = np.zeros(boundary.size)
    Psi0 = np.zeros(boundary.size)
    Phi0[d_idx] = phi0
    Psi0[n_idx] = psi0
    return ExtensionPair(Phi0=Phi0, Psi0=Psi0)


@dataclass(frozen=True)
class RightHandSide:
    """F₀ at the volume nodes and γ⁺F₀ at the boundary nodes"""
    F0_volume: np.ndarray
    F0_trace: np.ndarray
    extensions: ExtensionPair

    @property
    def r1(self) -> np.ndarray:
        return self.F0_volume

    @property
    def r2(self) -> np.ndarray:
        return self.F0_trace - self.extensions.Phi0

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.r1, self.r2])


def assemble_F0(ctx: ParametrixContext, f: np.ndarray, ext: ExtensionPair) -> RightHandSide:
    """F₀ = 𝒫f + VΨ₀ − WΦ₀ and its trace γ⁺F₀ = γ⁺𝒫f + 𝒱Ψ₀ + ½Φ₀ − 𝒲Φ₀"""
    f = np.asarray(f, dtype=float)
    F0_volume = ctx.pot_P(f) + ctx.V_matrix() @ ext.Psi0 - ctx.W_matrix() @ ext.Phi0
    newton_trace = ctx.pot_P(f, ctx.boundary.points)
    F0_trace = newton_trace + ctx.direct_V(ext.Psi0) - (-0.5 * ext.Phi0 + ctx.direct_W(ext.Phi0))
    return RightHandSide(F0_volume=F0_volume, F0_trace=F0_trace, extensions=ext)


def zero_rhs(ctx: ParametrixContext) -> RightHandSide:
    """Right-hand side of zero data"""
    zeros_s = np.zeros(ctx.boundary.size)
    return RightHandSide(
        F0_volume=np.zeros(ctx.volume.size),
        F0_trace=zeros_s.copy(),
        extensions=ExtensionPair(Phi0=zeros_s.copy(), Psi0=zeros_s.copy()),
    )


@dataclass(frozen=True)
class BdiesSystem:
    """Assembled M12 blocks, right-hand side and index maps

    ``trace_map`` takes u at the volume nodes to its boundary trace; it
    plays no part in the equations.
    """
    A_uu: np.ndarray
    A_upsi: np.ndarray
    A_uphi: np.ndarray
    B_u: np.ndarray
    B_psi: np.ndarray
    B_phi: np.ndarray
    rhs: RightHandSide
    dirichlet: np.ndarray
    neumann: np.ndarray
    principal: bool = False
    trace_map: Optional[np.ndarray] = None

    @property
    def n_volume(self) -> int:
        return self.A_uu.shape[0]

    @property
    def n_boundary(self) -> int:
        return self.B_u.shape[0]

    @property
    def n_dirichlet(self) -> int:
        return self.dirichlet.size

    @property
    def n_neumann(self) -> int:
        return self.neumann.size

    @property
    def size(self) -> int:
        return self.n_volume + self.n_boundary

    def matrix(self) -> np.ndarray:
        return np.block([
            [self.A_uu, self.A_upsi, self.A_uphi],
            [self.B_u, self.B_psi, self.B_phi],
        ])

    def rhs_vector(self) -> np.ndarray:
        return self.rhs.stacked()

    def stack(self, u: np.ndarray, psi: np.ndarray, phi: np.ndarray) -> np.ndarray:
        return np.concatenate([u, psi, phi])

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        nv, nd = self.n_volume, self.n_dirichlet
        return x[:nv], x[nv:nv + nd], x[nv + nd:]

    def matvec(self, x: np.ndarray) -> np.ndarray:
        """M12 applied block by block"""
        u, psi, phi = self.split(x)
        return np.concatenate([
            self.A_uu @ u + self.A_upsi @ psi + self.A_uphi @ phi,
            self.B_u @ u + self.B_psi @ psi + self.B_phi @ phi,
        ])

    def extend_psi(self, psi: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_boundary)
        full[self.dirichlet] = psi
        return full

    def extend_phi(self, phi: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_boundary)
        full[self.neumann] = phi
        return full

    def principal_part(self) -> "BdiesSystem":
        """M12⁰: identity for I + ℛ, zero for γ⁺ℛ, ½E_N for ½E_N + 𝒲"""
        half_identity = np.zeros_like(self.B_phi)
        half_identity[self.neumann, np.arange(self.n_neumann)] = 0.5
        return replace(
            self,
            A_uu=np.eye(self.n_volume),
            B_u=np.zeros_like(self.B_u),
            B_phi=half_identity,
            principal=True,
        )


def assemble_M12(ctx: ParametrixContext, rhs: Optional[RightHandSide] = None) -> BdiesSystem:
    """Assemble the dense blocks of M12 on the context's meshes"""
    d_idx = ctx.boundary.dirichlet_indices
    n_idx = ctx.boundary.neumann_indices

    A_uu = np.eye(ctx.volume.size) + ctx.R_matrix
    A_upsi = -ctx.V_matrix()[:, d_idx]
    A_uphi = ctx.W_matrix()[:, n_idx]
    B_u = ctx.R_boundary_matrix.copy()
    B_psi = -ctx.direct_V_matrix[:, d_idx]
    B_phi = ctx.direct_W_matrix[:, n_idx].copy()
    B_phi[n_idx, np.arange(n_idx.size)] += 0.5

    system = BdiesSystem(
        A_uu=A_uu,
        A_upsi=A_upsi,
        A_uphi=A_uphi,
        B_u=B_u,
        B_psi=B_psi,
        B_phi=B_phi,
        rhs=rhs if rhs is not None else zero_rhs(ctx),
        dirichlet=d_idx,
        neumann=n_idx,
        trace_map=ctx.trace_matrix,
    )
    logger.info(
        "Assembled M12: %d volume, %d Dirichlet, %d Neumann unknowns",
        system.n_volume, system.n_dirichlet, system.n_neumann,
    )
    return system


@dataclass(frozen=True)
class ConditionEstimate:
    sigma_max: float
    sigma_min: float

    @property
    def condition(self) -> float:
        return self.sigma_max / self.sigma_min if self.sigma_min > 0 else np.inf


def estimate_condition(matrix: np.ndarray, iterations: int = CONDITION_ITERATIONS, seed: int = 0) -> ConditionEstimate:
    """Power and inverse-power iteration on AᵀA for σ_max and σ_min"""
    rng = np.random.default_rng(seed)
    n = matrix.shape[1]
    x = rng.standard_normal(n)
    x /= np.linalg.norm(x)
    for _ in range(iterations):
        y = matrix.T @ (matrix @ x)
        norm = np.linalg.norm(y)
        if norm == 0:
            return ConditionEstimate(sigma_max=0.0, sigma_min=0.0)
        x = y / norm
    sigma_max = float(np.linalg.norm(matrix @ x))

    try:
        lu = linalg.lu_factor(matrix, check_finite=True)
    except (linalg.LinAlgError, ValueError):
        return ConditionEstimate(sigma_max=sigma_max, sigma_min=0.0)
    if np.any(np.diag(lu[0]) == 0):
        return ConditionEstimate(sigma_max=sigma_max, sigma_min=0.0)
    z = rng.standard_normal(n)
    z /= np.linalg.norm(z)
    for _ in range(iterations):
        w = linalg.lu_solve(lu, linalg.lu_solve(lu, z, trans=1))
        z = w / np.linalg.norm(w)
    sigma_min = float(np.linalg.norm(matrix @ z))
    logger.debug("Condition estimate: σ_max=%.3e σ_min=%.3e", sigma_max, sigma_min)
    return ConditionEstimate(sigma_max=sigma_max, sigma_min=sigma_min)


def smallest_singular_value(matrix: np.ndarray) -> float:
    """σ_min by full SVD"""
    return float(linalg.svdvals(matrix).min())


@dataclass
class SolveReport:
    """Solution of M12 with recovered Cauchy data and diagnostics"""
    u: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    method: str
    iterations: int
    residual: float
    trace: Optional[np.ndarray] = None
    conormal: Optional[np.ndarray] = None
    trace_mismatch: Optional[float] = None
    condition: Optional[float] = None
    errors: Dict[str, float] = field(default_factory=dict)

    @property
    def solution(self) -> np.ndarray:
        return np.concatenate([self.u, self.psi, self.phi])


def _relative_residual(system: BdiesSystem, x: np.ndarray) -> float:
    b = system.rhs_vector()
    norm_b = np.linalg.norm(b)
    r = np.linalg.norm(system.matvec(x) - b)
    return float(r / norm_b) if norm_b > 0 else float(r)


def solve_dense(system: BdiesSystem) -> SolveReport:
    """LU solve of the stacked system"""
    matrix = system.matrix()
    lu, piv = linalg.lu_factor(matrix)
    if np.any(np.diag(lu) == 0):
        raise SolverError("M12 is singular: zero pivot in the LU factorization")
    x = linalg.lu_solve((lu, piv), system.rhs_vector())
    residual = _relative_residual(system, x)
    if residual > 1e-10:
        logger.warning("Dense solve relative residual %.3e exceeds 1e-10", residual)
    u, psi, phi = system.split(x)
    logger.info("Dense solve finished: relative residual %.3e", residual)
    return SolveReport(u=u, psi=psi, phi=phi, method="dense", iterations=0, residual=residual)


class M0BlockSolver:
    """Block-triangular solve of the principal part M12⁰

    ψ from the r_{S_D}𝒱 block, then φ from the S_N rows, then u.
    """

    def __init__(self, system: BdiesSystem):
        self.system = system
        d, n = system.dirichlet, system.neumann
        self.V_DD = -system.B_psi[d, :]
        self.B_psi_N = system.B_psi[n, :]
        self.estimate = estimate_condition(self.V_DD)
        if not np.isfinite(self.estimate.condition) or self.estimate.condition > CONDITION_LIMIT:
            raise SolverError(
                f"r_S_D 𝒱 block is ill-conditioned (condition estimate {self.estimate.condition:.3e})"
            )
        self.lu = linalg.lu_factor(self.V_DD)

    def solve(self, r1: np.ndarray, r2: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        s = self.system
        psi = linalg.lu_solve(self.lu, -r2[s.dirichlet])
        phi = 2.0 * (r2[s.neumann] - self.B_psi_N @ psi)
        u = r1 - s.A_upsi @ psi - s.A_uphi @ phi
        return u, psi, phi

    def apply_inverse(self, rhs: np.ndarray) -> np.ndarray:
        """Stacked (M12⁰)⁻¹ rhs"""
        nv = self.system.n_volume
        return self.system.stack(*self.solve(rhs[:nv], rhs[nv:]))


def solve_M0_block(system: BdiesSystem, rhs: Optional[np.ndarray] = None) -> np.ndarray:
    """Solve M12⁰X = rhs; the system's principal part is taken if needed"""
    principal = system if system.principal else system.principal_part()
    rhs = principal.rhs_vector() if rhs is None else np.asarray(rhs, dtype=float)
    return M0BlockSolver(principal).apply_inverse(rhs)


def solve_gmres_preconditioned(
    system: BdiesSystem,
    tol: float = 1e-8,
    max_iter: int = 200,
    restart: int = 50,
) -> SolveReport:
    """Restarted GMRES on M12, right-preconditioned by the M12⁰ block solve

    The initial guess is M12⁰⁻¹b. Each restart cycle is one scipy call
    whose Krylov dimension is cut so the inner iterations never exceed
    ``max_iter``.
    """
    preconditioner = M0BlockSolver(system.principal_part())
    n = system.size
    operator = LinearOperator(
        shape=(n, n),
        matvec=lambda z: system.matvec(preconditioner.apply_inverse(np.ravel(z))),
        dtype=float,
    )
    b = system.rhs_vector()
    iterations = []

    def count(_residual_norm):
        iterations.append(1)

    z = b.copy()
    while True:
        done = len(iterations)
        inner = min(restart, max_iter - done)
        z, info = gmres(
            operator, b, x0=z, rtol=tol, atol=0.0, restart=inner, maxiter=1,
            callback=count, callback_type="pr_norm",
        )
        if info < 0:
            raise SolverError(f"GMRES failed with illegal input (info={info})")
        if info == 0:
            break
        if len(iterations) >= max_iter or len(iterations) == done:
            raise SolverError(f"GMRES did not reach relative residual {tol:g} within {max_iter} iterations")

    x = preconditioner.apply_inverse(z)
    residual = _relative_residual(system, x)
    u, psi, phi = system.split(x)
    logger.info("GMRES finished in %d iterations: relative residual %.3e", len(iterations), residual)
    return SolveReport(
        u=u, psi=psi, phi=phi, method="gmres", iterations=len(iterations), residual=residual,
        condition=preconditioner.estimate.condition,
    )


def solve(system: BdiesSystem, method: SolveMethod = "dense", **options) -> SolveReport:
    """Dispatch to the dense or the preconditioned GMRES solver"""
    if method == "dense":
        return solve_dense(system)
    if method == "gmres":
        return solve_gmres_preconditioned(system, **options)
    raise ValueError(f"Unknown solve method '{method}'")


def recover_cauchy_data(report: SolveReport, ext: ExtensionPair, system: BdiesSystem) -> Tuple[np.ndarray, np.ndarray]:
    """γ⁺u = Φ₀ + φ and T⁺u = Ψ₀ + ψ on all of S

    When the system carries a trace map, the volume solution (the
    representation F₀ − ℛu + Vψ − Wφ at the nodes) is also continued to S
    and its largest deviation from Φ₀ + φ is stored in the report.
    """
    trace = ext.Phi0 + system.extend_phi(report.phi)
    conormal = ext.Psi0 + system.extend_psi(report.psi)
    report.trace = trace
    report.conormal = conormal
    if system.trace_map is not None:
        report.trace_mismatch = float(np.max(np.abs(system.trace_map @ report.u - trace)))
    return trace, conormal
