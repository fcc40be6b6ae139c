import logging
import numpy as np
import sympy as sp
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

from bdie.services.geometry import BoundaryNode
from bdie.utils.errors import CoefficientError
from bdie.utils.symbolic import (
    X1,
    gradient,
    laplacian,
    vectorize,
    vectorize_vector,
)


logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Smooth positive coefficient a(x) with its closed-form derived fields"""
    name: str
    params: Dict[str, float]
    expr: sp.Expr
    a: Callable = field(init=False, repr=False)
    grad_a: Callable = field(init=False, repr=False)
    grad_log_a: Callable = field(init=False, repr=False)
    lap_log_a: Callable = field(init=False, repr=False)

    def __post_init__(self):
        log_a = sp.log(self.expr)
        grad_log = [sp.simplify(g) for g in gradient(log_a)]
        object.__setattr__(self, "a", vectorize(self.expr))
        object.__setattr__(self, "grad_a", vectorize_vector(gradient(self.expr)))
        object.__setattr__(self, "grad_log_a", vectorize_vector(grad_log))
        object.__setattr__(self, "lap_log_a", vectorize(laplacian(log_a)))

    @property
    def is_constant(self) -> bool:
        return not self.expr.free_symbols

    def dlog_a_dn(self, points: np.ndarray, normals: np.ndarray) -> np.ndarray:
        """∇ln a · n at each point"""
        return np.einsum("ij,ij->i", self.grad_log_a(points), np.asarray(normals, dtype=float))

    def check_positive(self, radius: float = 1.0, samples: int = 24) -> float:
        """Sample a on a grid over the closed ball and return the minimum"""
        axis = np.linspace(-radius, radius, samples)
        grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        norms = np.linalg.norm(grid, axis=1)
        inside = grid[norms <= radius * (1 + 1e-9)]
        shell = grid[norms > 0]
        shell = radius * (1 + 1e-9) * shell / np.linalg.norm(shell, axis=1)[:, None]
        minimum = float(min(self.a(inside).min(), self.a(shell).min()))
        if not np.isfinite(minimum) or minimum <= 0:
            raise CoefficientError(
                f"Coefficient '{self.name}' is not positive on the closed ball (min sample {minimum})"
            )
        return minimum


def _const(params: Dict[str, float]) -> sp.Expr:
    c = float(params.get("c", 1.0))
    if c <= 0:
        raise CoefficientError(f"const coefficient requires c > 0, got {c}")
    return sp.Float(c) if c != int(c) else sp.Integer(int(c))


def _exp_linear(params: Dict[str, float]) -> sp.Expr:
    k = params.get("k", 2)
    k = sp.Integer(int(k)) if float(k) == int(k) else sp.Float(k)
    return sp.exp(k * X1)


def _one_plus_x1_squared(params: Dict[str, float]) -> sp.Expr:
    return 1 + X1 ** 2


COEFFICIENTS: Dict[str, Callable[[Dict[str, float]], sp.Expr]] = {
    "const": _const,
    "exp_linear": _exp_linear,
    "one_plus_x1_squared": _one_plus_x1_squared,
}


def make_coefficient(name: str, params: Optional[Dict[str, float]] = None, radius: float = 1.0) -> CoefficientField:
    """Build a registered coefficient by name"""
    params = dict(params or {})
    builder = COEFFICIENTS.get(name)
    if builder is None:
        raise CoefficientError(f"Unknown coefficient '{name}', expected one of {sorted(COEFFICIENTS)}")
    coefficient = CoefficientField(name=name, params=params, expr=builder(params))
    coefficient.check_positive(radius)
    logger.debug("Coefficient %s%s: a = %s", name, params or "", coefficient.expr)
    return coefficient


def eval_dlog_a_dn(coefficient: CoefficientField, node: BoundaryNode) -> float:
    """∂ln a/∂n at a single boundary node"""
    return float(coefficient.dlog_a_dn(node.pos, node.normal.reshape(1, 3))[0])
