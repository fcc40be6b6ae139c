import logging
import numpy as np
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import List, Sequence, Tuple
from scipy.special import roots_legendre

from bdie.utils.errors import GeometryError
from bdie.utils.reporting import write_csv


logger = logging.getLogger(__name__)

Point3 = np.ndarray

PARTITION_TOLERANCE = 1e-14


class Region(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class BoundaryNode:
    """Collocation node on S"""
    pos: Point3
    normal: Point3
    weight: float
    region: Region


@dataclass(frozen=True)
class VolumeNode:
    pos: Point3
    weight: float


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BoundaryMesh:
    """Product quadrature on the sphere of the given radius

    Meshes compare by identity so they can key operator caches.
    """
    points: np.ndarray
    normals: np.ndarray
    weights: np.ndarray
    dirichlet: np.ndarray
    radius: float
    n_polar: int
    n_azimuth: int

    def __post_init__(self):
        for name in ("points", "normals", "weights"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))
        mask = np.array(self.dirichlet, dtype=bool)
        mask.setflags(write=False)
        object.__setattr__(self, "dirichlet", mask)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def neumann(self) -> np.ndarray:
        return ~self.dirichlet

    @property
    def dirichlet_indices(self) -> np.ndarray:
        return np.flatnonzero(self.dirichlet)

    @property
    def neumann_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.dirichlet)

    def region(self, index: int) -> Region:
        return Region.DIRICHLET if self.dirichlet[index] else Region.NEUMANN

    def node(self, index: int) -> BoundaryNode:
        return BoundaryNode(
            pos=self.points[index],
            normal=self.normals[index],
            weight=float(self.weights[index]),
            region=self.region(index),
        )

    @property
    def nodes(self) -> List[BoundaryNode]:
        return [self.node(i) for i in range(self.size)]

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def to_csv(self, path: Path) -> Path:
        rows = [
            (*p, *n, w, self.region(i).value)
            for i, (p, n, w) in enumerate(zip(self.points, self.normals, self.weights))
        ]
        return write_csv(path, ["x1", "x2", "x3", "n1", "n2", "n3", "weight", "region"], rows)


@dataclass(frozen=True, eq=False)
class VolumeMesh:
    """Radial Gauss-Legendre times spherical product rule on the ball

    Nodes are stored shell by shell: node j*A + α sits at radius
    R·radial_nodes[j] in direction α, A being the number of directions.
    """
    points: np.ndarray
    weights: np.ndarray
    radius: float
    n_r: int
    n_polar: int
    n_azimuth: int

    def __post_init__(self):
        object.__setattr__(self, "points", _freeze(self.points))
        object.__setattr__(self, "weights", _freeze(self.weights))

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @cached_property
    def radial_nodes(self) -> np.ndarray:
        """Shell radii divided by R, increasing, inside (0, 1)"""
        t, _ = roots_legendre(self.n_r)
        return _freeze(0.5 * (t + 1.0))

    @cached_property
    def directions(self) -> np.ndarray:
        directions, _ = unit_sphere_rule(self.n_polar, self.n_azimuth)
        return _freeze(directions)

    @cached_property
    def direction_weights(self) -> np.ndarray:
        """Unit-sphere weights of the angular rule, summing to 4π"""
        _, weights = unit_sphere_rule(self.n_polar, self.n_azimuth)
        return _freeze(weights)

    def shells(self, values: np.ndarray) -> np.ndarray:
        """Nodal values reshaped to (n_r, directions)"""
        return np.asarray(values, dtype=float).reshape(self.n_r, -1)

    @property
    def nodes(self) -> List[VolumeNode]:
        return [VolumeNode(pos=p, weight=float(w)) for p, w in zip(self.points, self.weights)]

    def integrate(self, values: np.ndarray) -> float:
        return float(np.dot(self.weights, values))

    def to_csv(self, path: Path) -> Path:
        rows = [(*p, w) for p, w in zip(self.points, self.weights)]
        return write_csv(path, ["x1", "x2", "x3", "weight"], rows)


def unit_sphere_rule(n_polar: int, n_azimuth: int) -> Tuple[np.ndarray, np.ndarray]:
    """Directions and weights of the Gauss(cos θ) x uniform(φ) product rule"""
    cos_theta, w_theta = roots_legendre(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azimuth) / n_azimuth
    w_phi = 2.0 * np.pi / n_azimuth

    ct, ph = np.meshgrid(cos_theta, phi, indexing="ij")
    st = np.sqrt(1.0 - ct ** 2)
    directions = np.stack([st * np.cos(ph), st * np.sin(ph), ct], axis=-1).reshape(-1, 3)
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    weights = np.repeat(w_theta * w_phi, n_azimuth)
    return directions, weights


def build_sphere_boundary(radius: float, n_polar: int, n_azimuth: int) -> BoundaryMesh:
    """Build the quadrature mesh of S with S_D = {x3 < 0}, S_N = {x3 > 0}"""
    if radius <= 0:
        raise GeometryError(f"radius must be positive, got {radius}")
    if n_polar % 2 != 0:
        raise GeometryError(
            f"n_polar must be even (got {n_polar}): an odd count puts nodes on the equator, "
            "the partition curve between S_D and S_N"
        )
    if n_polar < 4:
        raise GeometryError(f"n_polar must be at least 4, got {n_polar}")
    if n_azimuth < 8:
        raise GeometryError(f"n_azimuth must be at least 8, got {n_azimuth}")

    directions, weights = unit_sphere_rule(n_polar, n_azimuth)
    mesh = BoundaryMesh(
        points=radius * directions,
        normals=directions,
        weights=radius ** 2 * weights,
        dirichlet=directions[:, 2] < 0,
        radius=float(radius),
        n_polar=n_polar,
        n_azimuth=n_azimuth,
    )
    logger.debug("Boundary mesh: %d nodes (%d Dirichlet)", mesh.size, mesh.dirichlet.sum())
    return mesh


def build_ball_volume(radius: float, n_r: int, n_polar: int, n_azimuth: int) -> VolumeMesh:
    """Build the ball quadrature; weights carry the r^2 Jacobian"""
    if radius <= 0:
        raise GeometryError(f"radius must be positive, got {radius}")
    for name, count in (("n_r", n_r), ("n_polar", n_polar), ("n_azimuth", n_azimuth)):
        if count < 2:
            raise GeometryError(f"{name} must be at least 2, got {count}")

    t, w_t = roots_legendre(n_r)
    r = 0.5 * radius * (t + 1.0)
    w_r = 0.5 * radius * w_t
    directions, w_dir = unit_sphere_rule(n_polar, n_azimuth)

    points = (r[:, None, None] * directions[None, :, :]).reshape(-1, 3)
    weights = ((r ** 2 * w_r)[:, None] * w_dir[None, :]).reshape(-1)
    mesh = VolumeMesh(
        points=points,
        weights=weights,
        radius=float(radius),
        n_r=n_r,
        n_polar=n_polar,
        n_azimuth=n_azimuth,
    )
    logger.debug("Volume mesh: %d nodes", mesh.size)
    return mesh


def classify_region(p: Sequence[float], radius: float = 1.0, tol: float = 1e-9) -> Region:
    """Dirichlet below the equator, Neumann above"""
    p = np.asarray(p, dtype=float)
    if abs(np.linalg.norm(p) - radius) > tol * max(radius, 1.0):
        raise GeometryError(f"Point {p.tolist()} is not on the sphere of radius {radius}")
    if abs(p[2]) < PARTITION_TOLERANCE:
        raise GeometryError(f"Point {p.tolist()} lies on the partition curve x3 = 0")
    return Region.DIRICHLET if p[2] < 0 else Region.NEUMANN
