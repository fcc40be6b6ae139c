"""Constant-coefficient (a ≡ 1) kernels, potentials and direct values.

Sign conventions follow P_Δ(x − y) = −1/(4π|x − y|):

    V_Δρ(y) =  ∫_S ρ(x) / (4π|x − y|) dS(x)
    W_Δτ(y) = −∫_S ∂_n(x) P_Δ(x − y) τ(x) dS(x)
    𝒫_Δg(y) =  ∫_Ω P_Δ(x − y) g(x) dx

Matrices are stored with one row per target and one column per source
node, quadrature weights folded in.
"""
import logging
import numpy as np
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Callable, List, Literal, Optional, Tuple, Union

from bdie.services.geometry import BoundaryMesh, VolumeMesh
from bdie.utils.errors import CoincidentPointsError, GeometryError
from bdie.utils.spherical import (
    ShCoefficients,
    default_degree,
    interpolation_matrix,
    lagrange_monomials,
    legendre_table,
    project,
    sh_basis,
)
from bdie.utils.symbolic import as_points


logger = logging.getLogger(__name__)

FOUR_PI = 4.0 * np.pi
ROW_CHUNK = 256
ON_SURFACE_TOLERANCE = 1e-12
TANGENT_STEP = 1e-5

Side = Literal["+", "-"]

_workers = 1


def set_workers(workers: int) -> None:
    """Set the thread count used for row-chunked assembly"""
    global _workers
    _workers = max(1, int(workers))
    logger.debug("Assembly workers set to %d", _workers)


def get_workers() -> int:
    """Thread count currently used for assembly"""
    return _workers


def side_sign(side: Union[Side, int]) -> float:
    """+1 for the interior side, −1 for the exterior"""
    if side in ("+", 1, +1.0):
        return 1.0
    if side in ("-", -1, -1.0):
        return -1.0
    raise ValueError(f"side must be '+' or '-', got {side!r}")


def assemble_rows(
    n_rows: int,
    build: Callable[[slice], Tuple[np.ndarray, ...]],
    chunk: int = ROW_CHUNK,
) -> List[Tuple[np.ndarray, ...]]:
    """Evaluate ``build`` on consecutive row chunks, results in row order

    Each chunk is computed independently, so the output does not depend
    on the worker count.
    """
    chunks = [slice(start, min(start + chunk, n_rows)) for start in range(0, n_rows, chunk)]
    if _workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=_workers) as pool:
            return list(pool.map(build, chunks))
    return [build(chunk) for chunk in chunks]


def _pairwise(targets: np.ndarray, sources: np.ndarray):
    """diff[t, i] = x_i − y_t and its length"""
    diff = sources[None, :, :] - targets[:, None, :]
    return diff, np.linalg.norm(diff, axis=2)


def eval_kernel_Delta(x, y) -> Tuple[float, np.ndarray]:
    """P_Δ(x − y) and ∇ₓP_Δ(x − y)"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d = x - y
    r = float(np.linalg.norm(d))
    if r == 0.0:
        raise CoincidentPointsError(f"Kernel evaluated at coincident points {x.tolist()}")
    return -1.0 / (FOUR_PI * r), d / (FOUR_PI * r ** 3)


# ---------------------------------------------------------------------------
# Newton potential
# ---------------------------------------------------------------------------

def uniform_ball_potential(points: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray]:
    """𝒫_Δ[1] and its gradient for the ball of the given radius"""
    pts = as_points(points)
    rho = np.linalg.norm(pts, axis=1)
    inside = rho <= radius
    values = np.empty(pts.shape[0])
    grads = np.empty_like(pts)
    values[inside] = -(3.0 * radius ** 2 - rho[inside] ** 2) / 6.0
    grads[inside] = pts[inside] / 3.0
    out = ~inside
    values[out] = -radius ** 3 / (3.0 * rho[out])
    grads[out] = radius ** 3 * pts[out] / (3.0 * rho[out, None] ** 3)
    return values, grads


@dataclass(frozen=True)
class NewtonMatrices:
    """Discrete 𝒫_Δ and ∇_y𝒫_Δ from a volume mesh to a set of targets"""
    value: np.ndarray
    gradient: np.ndarray
    targets: np.ndarray
    radius: float

    def apply(self, g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        g = np.asarray(g, dtype=float)
        return self.value @ g, np.einsum("ktv,v->tk", self.gradient, g)


def _radial_moments(degree: int, n_powers: int, rho: np.ndarray):
    """Moments of s^p against the radial Laplace kernel on [0, 1]

    A[t, n, p] = ∫₀¹ s^{p+2} s_<^n / s_>^{n+1} ds with s_< = min(s, ρ_t),
    s_> = max(s, ρ_t); also dA/dρ and A/ρ (the latter for n ≥ 1 only).
    """
    rho = np.asarray(rho, dtype=float)
    moments = np.zeros((rho.size, degree + 1, n_powers))
    slopes = np.zeros_like(moments)
    over = np.zeros_like(moments)
    positive = rho > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        log_rho = np.where(positive, np.log(np.where(positive, rho, 1.0)), 0.0)
        for n in range(degree + 1):
            rn = rho ** n
            rn1 = rho ** (n - 1) if n >= 1 else np.zeros_like(rho)
            for p in range(n_powers):
                inner = 1.0 / (n + p + 3)
                k = p + 2 - n
                rp2 = rho ** (p + 2)
                rp1 = rho ** (p + 1)
                if k == 0:
                    moments[:, n, p] = rp2 * inner - rn * log_rho
                    slopes[:, n, p] = (p + 2) * rp1 * inner - n * rn1 * log_rho - rn1
                    over[:, n, p] = rp1 * inner - rn1 * log_rho
                else:
                    moments[:, n, p] = rp2 * inner + (rn - rp2) / k
                    slopes[:, n, p] = (p + 2) * rp1 * inner + (n * rn1 - (p + 2) * rp1) / k
                    over[:, n, p] = rp1 * inner + (rn1 - rp1) / k
    over[:, 0, :] = 0.0
    return moments, slopes, over


def newton_matrices(volume: VolumeMesh, targets: Optional[np.ndarray] = None) -> NewtonMatrices:
    """Assemble 𝒫_Δ and its gradient by shell-wise harmonic integration

    On every shell the density is expanded in spherical harmonics up to
    the degree the angular rule resolves; between shells it is the
    Lagrange interpolant through the radial nodes. Each term of the
    Laplace expansion of 1/|x − y| then integrates in closed form, so the
    rule is exact for such densities at any target of the closed ball,
    S included. Passing no targets uses the volume nodes.
    """
    tgt = volume.points if targets is None else as_points(targets)
    radius = volume.radius
    rho = np.linalg.norm(tgt, axis=1) / radius
    if np.any(rho > 1.0 + ON_SURFACE_TOLERANCE):
        raise GeometryError(f"Newton targets must lie in the closed ball (max |y|/R = {rho.max():.6g})")
    rho = np.minimum(rho, 1.0)

    degree = default_degree(volume)
    lagrange = lagrange_monomials(volume.radial_nodes)
    directions = volume.directions
    w_dir = volume.direction_weights
    n_shells = volume.n_r

    def build(rows: slice):
        y = tgt[rows]
        norm = np.linalg.norm(y, axis=1)
        # the origin has no direction; the n ≥ 1 terms vanish there anyway
        unit = np.where(norm[:, None] > 0, y / np.where(norm > 0, norm, 1.0)[:, None], [0.0, 0.0, 1.0])
        mu = np.clip(unit @ directions.T, -1.0, 1.0)
        legendre, dlegendre = legendre_table(degree, mu)
        moments, slopes, over = _radial_moments(degree, n_shells, rho[rows])

        c_value = moments @ lagrange
        c_slope = slopes @ lagrange
        c_over = over @ lagrange
        value = np.einsum("tnj,nta->tja", c_value, legendre) * (-radius ** 2 / FOUR_PI)
        radial = np.einsum("tnj,nta->tja", c_slope, legendre) * (-radius / FOUR_PI)
        tangential = np.einsum("tnj,nta->tja", c_over, dlegendre) * (-radius / FOUR_PI)

        along = radial - mu[:, None, :] * tangential
        grad = np.stack([
            unit[:, k, None, None] * along + directions[None, None, :, k] * tangential
            for k in range(3)
        ])
        n_rows = y.shape[0]
        value = (value * w_dir).reshape(n_rows, -1)
        grad = (grad * w_dir).reshape(3, n_rows, -1)
        return value, grad

    parts = assemble_rows(tgt.shape[0], build)
    value = np.concatenate([p[0] for p in parts], axis=0)
    gradient = np.concatenate([p[1] for p in parts], axis=1)
    logger.debug("Newton matrices %s (degree %d, %d shells)", value.shape, degree, n_shells)
    return NewtonMatrices(value=value, gradient=gradient, targets=tgt, radius=radius)


@lru_cache(maxsize=4)
def newton_self_matrices(volume: VolumeMesh) -> NewtonMatrices:
    """𝒫_Δ from the volume nodes to themselves"""
    return newton_matrices(volume)


@lru_cache(maxsize=4)
def newton_boundary_matrices(volume: VolumeMesh, boundary: BoundaryMesh) -> NewtonMatrices:
    """𝒫_Δ from the volume nodes to the boundary nodes"""
    return newton_matrices(volume, boundary.points)


def newton_Delta(volume: VolumeMesh, g: np.ndarray, targets: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """𝒫_Δg and ∇𝒫_Δg at arbitrary targets in the closed ball"""
    return newton_matrices(volume, targets).apply(g)


# ---------------------------------------------------------------------------
# Layer potentials off S
# ---------------------------------------------------------------------------

def _check_off_surface(targets: np.ndarray, radius: float) -> np.ndarray:
    rho = np.linalg.norm(targets, axis=1)
    on = np.abs(rho - radius) <= ON_SURFACE_TOLERANCE * radius
    if np.any(on):
        raise GeometryError(
            f"{int(on.sum())} target(s) lie on S; use the direct-value operators there"
        )
    return rho


def constant_layer_values(targets: np.ndarray, radius: float):
    """V_Δ[1], W_Δ[1] and ∇V_Δ[1] off the sphere"""
    tgt = as_points(targets)
    rho = np.linalg.norm(tgt, axis=1)
    inside = rho < radius
    single = np.where(inside, radius, radius ** 2 / np.where(inside, 1.0, rho))
    double = np.where(inside, -1.0, 0.0)
    grad = np.where(inside[:, None], 0.0, -radius ** 2 * tgt / np.where(inside, 1.0, rho)[:, None] ** 3)
    return single, double, grad


@dataclass(frozen=True)
class LayerMatrices:
    """Discrete V_Δ, W_Δ and ∇V_Δ from boundary nodes to off-surface targets"""
    single: np.ndarray
    double: np.ndarray
    gradient: np.ndarray
    targets: np.ndarray


def layer_matrices(boundary: BoundaryMesh, targets: np.ndarray, subtract: bool = True) -> LayerMatrices:
    """Assemble layer-potential matrices for targets off S

    With ``subtract`` the density at the radial projection of each target,
    taken from the band-limited interpolant, is integrated exactly. This
    keeps targets close to S accurate.
    """
    tgt = as_points(targets)
    _check_off_surface(tgt, boundary.radius)
    src = boundary.points
    w = boundary.weights
    normals = boundary.normals

    def build(rows: slice):
        diff, r = _pairwise(tgt[rows], src)
        inv_r3 = 1.0 / r ** 3
        single = w / (FOUR_PI * r)
        double = -w * np.einsum("tik,ik->ti", diff, normals) * inv_r3 / FOUR_PI
        grad = np.moveaxis(diff * (w * inv_r3 / FOUR_PI)[:, :, None], 2, 0)
        return single, double, grad

    parts = assemble_rows(tgt.shape[0], build)
    single = np.concatenate([p[0] for p in parts], axis=0)
    double = np.concatenate([p[1] for p in parts], axis=0)
    gradient = np.concatenate([p[2] for p in parts], axis=1)

    if subtract:
        interp = interpolation_matrix(boundary, tgt)
        v1, w1, g1 = constant_layer_values(tgt, boundary.radius)
        single = single - (single.sum(axis=1) - v1)[:, None] * interp
        double = double - (double.sum(axis=1) - w1)[:, None] * interp
        gradient = gradient - (gradient.sum(axis=2) - g1.T)[:, :, None] * interp[None, :, :]

    return LayerMatrices(single=single, double=double, gradient=gradient, targets=tgt)


@lru_cache(maxsize=8)
def volume_layer_matrices(boundary: BoundaryMesh, volume: VolumeMesh) -> LayerMatrices:
    """Layer matrices from the boundary nodes to the volume nodes"""
    return layer_matrices(boundary, volume.points)


def single_layer_Delta(boundary: BoundaryMesh, rho: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """V_Δρ at off-surface targets"""
    return layer_matrices(boundary, targets).single @ rho


def double_layer_Delta(boundary: BoundaryMesh, tau: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """W_Δτ at off-surface targets"""
    return layer_matrices(boundary, targets).double @ tau


def single_layer_gradient_Delta(boundary: BoundaryMesh, rho: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """∇_yV_Δρ at off-surface targets, shape (N, 3)"""
    return np.einsum("ktv,v->tk", layer_matrices(boundary, targets).gradient, rho)


def layer_series_Delta(
    boundary: BoundaryMesh,
    sigma: np.ndarray,
    tau: np.ndarray,
    targets: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """V_Δσ, W_Δτ and ∂_|y|V_Δσ off S from the harmonic expansions of the densities

    Both densities are projected onto Y_{n,m}, n ≤ L, and each degree is
    continued off the sphere with its interior (q^n) or exterior
    (q^{−(n+1)}) radial factor, q = |y|/R. The node layout of S plays no
    further part, so the values are independent of the Nyström sums.
    """
    tgt = as_points(targets)
    radius = boundary.radius
    q = _check_off_surface(tgt, radius)[:, None] / radius
    if np.any(q == 0.0):
        raise GeometryError("Layer series are not evaluated at the centre of the ball")
    sigma_c = project(boundary, sigma)
    tau_c = project(boundary, tau)
    degree = sigma_c.degree
    n = np.concatenate([np.full(2 * k + 1, float(k)) for k in range(degree + 1)])[None, :]
    inside = q < 1.0
    scale = 2 * n + 1

    single = np.where(inside, radius * q ** n, radius * q ** (-n - 1)) / scale
    double = np.where(inside, -(n + 1) * q ** n, n * q ** (-n - 1)) / scale
    slope = np.where(inside, n * q ** (n - 1), -(n + 1) * q ** (-n - 2)) / scale

    basis = sh_basis(degree, tgt)
    return (
        (basis * single) @ sigma_c.values,
        (basis * double) @ tau_c.values,
        (basis * slope) @ sigma_c.values,
    )


# ---------------------------------------------------------------------------
# Direct values on S
# ---------------------------------------------------------------------------

def tangent_frame(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two orthonormal tangents per unit normal, the first along e_z × n"""
    normals = as_points(normals)
    first = np.cross([0.0, 0.0, 1.0], normals)
    polar = np.linalg.norm(first, axis=1) < 1e-8
    first[polar] = np.cross([1.0, 0.0, 0.0], normals[polar])
    first /= np.linalg.norm(first, axis=1)[:, None]
    return first, np.cross(normals, first)


@lru_cache(maxsize=8)
def tangential_derivative_matrices(boundary: BoundaryMesh) -> Tuple[Tuple[np.ndarray, np.ndarray], np.ndarray]:
    """Tangent frames and the matrices taking nodal values to tangential derivatives

    The derivative is that of the band-limited interpolant, by central
    differences over the arc ±TANGENT_STEP. Rows sum to zero.
    """
    radius = boundary.radius
    normals = boundary.normals
    frames = tangent_frame(normals)
    idx = np.arange(boundary.size)
    c, s = np.cos(TANGENT_STEP), np.sin(TANGENT_STEP)
    derivatives = []
    for tangent in frames:
        ahead = interpolation_matrix(boundary, radius * (c * normals + s * tangent))
        behind = interpolation_matrix(boundary, radius * (c * normals - s * tangent))
        derivative = (ahead - behind) / (2.0 * radius * TANGENT_STEP)
        derivative[idx, idx] -= derivative.sum(axis=1)
        derivatives.append(derivative)
    return frames, np.stack(derivatives)


def _direct_matrix(boundary: BoundaryMesh, kernel: Callable, exact_constant: float) -> np.ndarray:
    """Nyström matrix with a local tangential correction and the constant-density value on the diagonal

    The off-diagonal sum misses the tangential moment m_t = Σ w k(x_i − y_t),
    which vanishes for the exact integral of a kernel depending only on
    |x − y| over the sphere; m_t·∇σ(y_t) is removed with the interpolated
    tangential gradient.
    """
    pts = boundary.points
    w = boundary.weights
    n = pts.shape[0]

    def build(rows: slice):
        diff, r = _pairwise(pts[rows], pts)
        local = np.arange(rows.start, rows.stop)
        r[np.arange(len(local)), local] = 1.0
        block = w * kernel(diff, r, local)
        block[np.arange(len(local)), local] = 0.0
        return block, np.einsum("ti,tik->tk", block, diff)

    parts = assemble_rows(n, build)
    matrix = np.concatenate([p[0] for p in parts], axis=0)
    moments = np.concatenate([p[1] for p in parts], axis=0)

    frames, derivatives = tangential_derivative_matrices(boundary)
    for tangent, derivative in zip(frames, derivatives):
        matrix -= np.einsum("tk,tk->t", moments, tangent)[:, None] * derivative

    idx = np.arange(n)
    matrix[idx, idx] += exact_constant - matrix.sum(axis=1)
    # cached and shared between callers
    matrix.setflags(write=False)
    return matrix


@lru_cache(maxsize=16)
def direct_V_matrix(boundary: BoundaryMesh) -> np.ndarray:
    """Nyström 𝒱_Δ with 𝒱_Δ[1] = R"""
    return _direct_matrix(boundary, lambda diff, r, rows: 1.0 / (FOUR_PI * r), boundary.radius)


@lru_cache(maxsize=16)
def direct_W_matrix(boundary: BoundaryMesh) -> np.ndarray:
    """Nyström 𝒲_Δ with 𝒲_Δ[1] = −½"""
    normals = boundary.normals

    def kernel(diff, r, rows):
        return -np.einsum("tik,ik->ti", diff, normals) / (FOUR_PI * r ** 3)

    return _direct_matrix(boundary, kernel, -0.5)


@lru_cache(maxsize=16)
def direct_Wp_matrix(boundary: BoundaryMesh) -> np.ndarray:
    normals = boundary.normals

    def kernel(diff, r, rows):
        return np.einsum("tik,tk->ti", diff, normals[rows]) / (FOUR_PI * r ** 3)

    return _direct_matrix(boundary, kernel, -0.5)


def direct_V_Delta(boundary: BoundaryMesh, rho: np.ndarray) -> np.ndarray:
    """𝒱_Δρ at the boundary nodes"""
    return direct_V_matrix(boundary) @ rho


def direct_W_Delta(boundary: BoundaryMesh, tau: np.ndarray) -> np.ndarray:
    """𝒲_Δτ at the boundary nodes"""
    return direct_W_matrix(boundary) @ tau


def direct_Wp_Delta(boundary: BoundaryMesh, rho: np.ndarray) -> np.ndarray:
    """𝒲'_Δρ at the boundary nodes"""
    return direct_Wp_matrix(boundary) @ rho


def conormal_T_Delta_pm_of_V(boundary: BoundaryMesh, rho: np.ndarray, side: Side) -> np.ndarray:
    """T±V_Δρ = ±ρ/2 + 𝒲'_Δρ"""
    rho = np.asarray(rho, dtype=float)
    return side_sign(side) * 0.5 * rho + direct_Wp_Delta(boundary, rho)


# ---------------------------------------------------------------------------
# Spectral oracle on the unit sphere
# ---------------------------------------------------------------------------

class SpectralOperator(str, Enum):
    V = "V"
    W = "W"
    WP = "Wp"
    L = "L"


def sphere_eigenvalues(op: Union[SpectralOperator, str], degree: int) -> np.ndarray:
    """Eigenvalue of the operator on Y_n for n = 0..degree, unit sphere"""
    op = SpectralOperator(op)
    n = np.arange(degree + 1, dtype=float)
    if op is SpectralOperator.V:
        return 1.0 / (2 * n + 1)
    if op in (SpectralOperator.W, SpectralOperator.WP):
        return -1.0 / (2 * (2 * n + 1))
    return -n * (n + 1) / (2 * n + 1)


def sphere_spectral_apply(
    op: Union[SpectralOperator, str],
    coeffs: ShCoefficients,
    radius: float = 1.0,
) -> ShCoefficients:
    """Apply the operator to harmonic coefficients through its eigenvalues"""
    if abs(radius - 1.0) > 1e-12:
        raise GeometryError(f"Spectral operators are available on the unit sphere only, got radius {radius}")
    return coeffs.scale_degrees(sphere_eigenvalues(op, coeffs.degree))
