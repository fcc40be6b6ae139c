import numpy as np
import sympy as sp
from typing import Callable, List, Union


X1, X2, X3 = sp.symbols("x1 x2 x3", real=True)
COORDS = (X1, X2, X3)

PointFunction = Callable[[np.ndarray], np.ndarray]


def parse_expression(expression: Union[str, sp.Expr]) -> sp.Expr:
    """Parse a closed-form expression in x1, x2, x3"""
    if isinstance(expression, sp.Expr):
        return expression
    return sp.sympify(expression, locals={"x1": X1, "x2": X2, "x3": X3})


def gradient(expr: sp.Expr) -> List[sp.Expr]:
    return [sp.diff(expr, x) for x in COORDS]


def laplacian(expr: sp.Expr) -> sp.Expr:
    return sp.simplify(sum(sp.diff(expr, x, 2) for x in COORDS))


def divergence_of_flux(coefficient: sp.Expr, expr: sp.Expr) -> sp.Expr:
    """Closed form of ∇·(a∇u)"""
    return sp.simplify(sum(sp.diff(coefficient * sp.diff(expr, x), x) for x in COORDS))


def as_points(points: np.ndarray) -> np.ndarray:
    """Promote a single point or a list of points to an (N, 3) float array"""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"Expected points of shape (N, 3), got {pts.shape}")
    return pts


def vectorize(expr: sp.Expr) -> PointFunction:
    """Lambdify an expression into a function of (N, 3) points returning (N,)

    Constant expressions are broadcast to the number of points.
    """
    fn = sp.lambdify(COORDS, expr, modules="numpy")

    def evaluate(points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        value = np.asarray(fn(pts[:, 0], pts[:, 1], pts[:, 2]), dtype=float)
        return np.broadcast_to(value, (pts.shape[0],)).copy()

    return evaluate


def vectorize_vector(exprs: List[sp.Expr]) -> PointFunction:
    """Lambdify a 3-vector of expressions into (N, 3) values"""
    components = [vectorize(e) for e in exprs]

    def evaluate(points: np.ndarray) -> np.ndarray:
        pts = as_points(points)
        return np.stack([c(pts) for c in components], axis=1)

    return evaluate
