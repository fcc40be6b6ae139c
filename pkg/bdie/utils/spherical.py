"""Real spherical harmonics on the unit sphere.

Y_{n,m} are orthonormal with respect to the surface measure of the unit
sphere. Coefficients are stored flat, index n*n + n + m, so a degree-L
expansion has (L+1)^2 entries. Meshes are passed duck-typed: anything
with ``points``, ``weights``, ``radius``, ``n_polar`` and ``n_azimuth``.
Volume meshes additionally provide ``radial_nodes``, ``directions``,
``direction_weights`` and ``shells``.
"""
import numpy as np
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple
from scipy.special import gammaln, lpmv

from bdie.utils.symbolic import as_points


def sh_index(n: int, m: int) -> int:
    return n * n + n + m


def sh_count(degree: int) -> int:
    return (degree + 1) ** 2


@dataclass(frozen=True)
class ShCoefficients:
    """Real spherical-harmonic coefficients c_{n,m}, 0 <= n <= degree"""
    degree: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != (sh_count(self.degree),):
            raise ValueError(
                f"Expected {sh_count(self.degree)} coefficients for degree {self.degree}, got {values.shape}"
            )
        object.__setattr__(self, "values", values)

    @classmethod
    def single(cls, n: int, m: int, degree: Optional[int] = None) -> "ShCoefficients":
        """Coefficients of a single harmonic Y_{n,m}"""
        degree = n if degree is None else degree
        values = np.zeros(sh_count(degree))
        values[sh_index(n, m)] = 1.0
        return cls(degree, values)

    def degree_block(self, n: int) -> np.ndarray:
        return self.values[n * n:(n + 1) * (n + 1)]

    def scale_degrees(self, factors: Sequence[float]) -> "ShCoefficients":
        """Multiply every degree-n block by factors[n]"""
        per_entry = np.concatenate([np.full(2 * n + 1, factors[n]) for n in range(self.degree + 1)])
        return ShCoefficients(self.degree, self.values * per_entry)


def real_sph_harm(n: int, m: int, points: np.ndarray) -> np.ndarray:
    """Evaluate Y_{n,m} at the radial projections of the given points"""
    if abs(m) > n:
        raise ValueError(f"|m| must not exceed n (got n={n}, m={m})")
    pts = as_points(points)
    r = np.linalg.norm(pts, axis=1)
    # the origin has no direction; any fixed choice works for callers
    r = np.where(r > 0, r, 1.0)
    cos_theta = np.clip(pts[:, 2] / r, -1.0, 1.0)
    phi = np.arctan2(pts[:, 1], pts[:, 0])

    am = abs(m)
    norm = np.sqrt((2 * n + 1) / (4 * np.pi) * np.exp(gammaln(n - am + 1) - gammaln(n + am + 1)))
    legendre = lpmv(am, n, cos_theta)
    if m == 0:
        return norm * legendre
    if m > 0:
        return np.sqrt(2.0) * norm * legendre * np.cos(m * phi)
    return np.sqrt(2.0) * norm * legendre * np.sin(am * phi)


def sh_basis(degree: int, points: np.ndarray) -> np.ndarray:
    """Basis matrix B[p, n*n+n+m] = Y_{n,m}(points[p])"""
    pts = as_points(points)
    basis = np.empty((pts.shape[0], sh_count(degree)))
    for n in range(degree + 1):
        for m in range(-n, n + 1):
            basis[:, sh_index(n, m)] = real_sph_harm(n, m, pts)
    return basis


def default_degree(mesh) -> int:
    """Largest degree whose products the product rule integrates exactly"""
    return min(mesh.n_polar - 1, (mesh.n_azimuth - 1) // 2)


def _unit_weights(mesh) -> np.ndarray:
    return mesh.weights / mesh.radius ** 2


def project(mesh, values: np.ndarray, degree: Optional[int] = None) -> ShCoefficients:
    """Project nodal values on the boundary mesh onto Y_{n,m}, n <= degree"""
    degree = default_degree(mesh) if degree is None else degree
    basis = sh_basis(degree, mesh.points)
    return ShCoefficients(degree, basis.T @ (np.asarray(values, dtype=float) * _unit_weights(mesh)))


def synthesize(coeffs: ShCoefficients, points: np.ndarray) -> np.ndarray:
    """Evaluate the expansion at the radial projections of points"""
    return sh_basis(coeffs.degree, points) @ coeffs.values


def interpolation_matrix(mesh, targets: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
    """Linear map from nodal values to band-limited values at the projections of targets"""
    degree = default_degree(mesh) if degree is None else degree
    nodes = sh_basis(degree, mesh.points) * _unit_weights(mesh)[:, None]
    return sh_basis(degree, targets) @ nodes.T


def sample_degree(mesh, n: int) -> np.ndarray:
    """All Y_{n,m}, m = -n..n, sampled at the mesh nodes, shape (N, 2n+1)"""
    return np.stack([real_sph_harm(n, m, mesh.points) for m in range(-n, n + 1)], axis=1)


def legendre_table(degree: int, mu: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """P_n(μ) and P_n'(μ) for n = 0..degree, stacked along a new first axis"""
    mu = np.asarray(mu, dtype=float)
    values = np.empty((degree + 1,) + mu.shape)
    derivatives = np.empty_like(values)
    values[0] = 1.0
    derivatives[0] = 0.0
    if degree >= 1:
        values[1] = mu
        derivatives[1] = 1.0
    for n in range(1, degree):
        values[n + 1] = ((2 * n + 1) * mu * values[n] - n * values[n - 1]) / (n + 1)
        derivatives[n + 1] = derivatives[n - 1] + (2 * n + 1) * values[n]
    return values, derivatives


def lagrange_monomials(nodes: np.ndarray) -> np.ndarray:
    """c[p, j]: coefficient of s^p in the Lagrange polynomial of node j"""
    nodes = np.asarray(nodes, dtype=float)
    return np.linalg.inv(np.vander(nodes, increasing=True))


def lagrange_basis(nodes: np.ndarray, s: np.ndarray) -> np.ndarray:
    """L[p, j] = ℓ_j(s_p), product form"""
    nodes = np.asarray(nodes, dtype=float)
    s = np.asarray(s, dtype=float).reshape(-1)
    basis = np.ones((s.size, nodes.size))
    for j, node in enumerate(nodes):
        for m, other in enumerate(nodes):
            if m != j:
                basis[:, j] *= (s - other) / (node - other)
    return basis


def shell_coefficients(volume, values: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
    """Harmonic coefficients of nodal volume values on every shell, shape (n_r, (L+1)^2)"""
    degree = default_degree(volume) if degree is None else degree
    weighted = sh_basis(degree, volume.directions) * volume.direction_weights[:, None]
    return volume.shells(values) @ weighted


def evaluate_ball(volume, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Shell harmonics joined radially by Lagrange interpolation, at arbitrary points"""
    pts = as_points(points)
    degree = int(round(np.sqrt(coefficients.shape[1]))) - 1
    radial = lagrange_basis(volume.radial_nodes, np.linalg.norm(pts, axis=1) / volume.radius)
    return np.einsum("pj,jk,pk->p", radial, coefficients, sh_basis(degree, pts))


def ball_interpolate(volume, values: np.ndarray, points: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
    """Nodal volume values interpolated to points of the closed ball"""
    return evaluate_ball(volume, shell_coefficients(volume, values, degree), points)


def ball_interpolation_matrix(volume, points: np.ndarray, degree: Optional[int] = None) -> np.ndarray:
    """Linear map from nodal volume values to the interpolant at points in the closed ball"""
    degree = default_degree(volume) if degree is None else degree
    pts = as_points(points)
    radial = lagrange_basis(volume.radial_nodes, np.linalg.norm(pts, axis=1) / volume.radius)
    weighted = sh_basis(degree, volume.directions) * volume.direction_weights[:, None]
    angular = sh_basis(degree, pts) @ weighted.T
    return (radial[:, :, None] * angular[:, None, :]).reshape(pts.shape[0], -1)
