"""
Poincaré Ball Operations

Numerically guarded Poincaré-ball maths used by the classifier surrogate:
- mobius_add: Möbius addition x ⊕_c y
- exp_map_zero / log_map_zero: tangent space at the origin <-> ball
- exp_map / log_map: the same maps at an arbitrary base point
- project_to_ball: rescale a vector to sit strictly inside the ball
- riemannian_gradient: metric rescaling used by RSGD for ball-resident parameters

All functions are pure, work in float64 and operate on the last axis, so a
single point has shape (m,) and a batch has shape (B, m). Curvature c = 0 is
the Euclidean degeneration: every map reduces to plain vector arithmetic.
"""

import logging

import numpy as np

from .errors import ContractViolation

logger = logging.getLogger(__name__)

BALL_EPS = 1e-5
MIN_NORM = 1e-15
# c·‖p‖² above 1 - SATURATION_EPS counts as saturated; tanh(10)² sits below it
SATURATION_EPS = 1e-9


def _as_vector(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        raise ContractViolation(f"{name} must be a vector, got a scalar")
    if not np.all(np.isfinite(arr)):
        raise ContractViolation(f"{name} contains non-finite values")
    return arr


def check_curvature(c: float) -> float:
    """Validate a curvature value and return it as a float."""
    c = float(c)
    if not np.isfinite(c) or c < 0:
        raise ContractViolation(f"curvature must be a finite value >= 0, got {c}")
    return c


def _sq_norm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(_sq_norm(x))


def _check_inside(x: np.ndarray, c: float, name: str) -> None:
    if c > 0 and np.any(c * _sq_norm(x) >= 1.0):
        raise ContractViolation(f"{name} lies outside the Poincaré ball of curvature {c}")


def _check_same_shape(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise ContractViolation(f"dimension mismatch: {x.shape} vs {y.shape}")


def conformal_factor(x, c: float) -> np.ndarray:
    """λ^c_x = 2 / (1 - c‖x‖²), shaped (..., 1)."""
    x = _as_vector(x, "x")
    c = check_curvature(c)
    return 2.0 / (1.0 - c * _sq_norm(x))


def project_to_ball(p, c: float) -> np.ndarray:
    """
    Keep p strictly inside the ball with a fixed margin.

    Vectors with c·‖p‖² < (1 - BALL_EPS)² are returned unchanged; anything on
    or beyond that shell is rescaled to norm (1 - BALL_EPS)/√c.
    """
    p = _as_vector(p, "p")
    c = check_curvature(c)
    if c == 0:
        return p.copy()
    max_norm = (1.0 - BALL_EPS) / np.sqrt(c)
    norm = _norm(p)
    outside = c * norm * norm >= (1.0 - BALL_EPS) ** 2
    if not np.any(outside):
        return p.copy()
    scale = np.where(outside, max_norm / np.maximum(norm, MIN_NORM), 1.0)
    return p * scale


def _guard_boundary(p: np.ndarray, c: float) -> np.ndarray:
    # tanh saturates to within an ulp of 1.0 for large arguments; only then pull back inside
    if c > 0 and np.any(c * _sq_norm(p) > 1.0 - SATURATION_EPS):
        return project_to_ball(p, c)
    return p


def _mobius_add_raw(x: np.ndarray, y: np.ndarray, c: float) -> np.ndarray:
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2 = _sq_norm(x)
    y2 = _sq_norm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + c * c * x2 * y2
    return num / np.maximum(den, MIN_NORM)


def mobius_add(x, y, c: float) -> np.ndarray:
    """
    Möbius addition x ⊕_c y, projected back into the ball.

    Raises:
        ContractViolation: on shape mismatch, non-finite input, negative curvature
            or an operand outside the ball.
    """
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    c = check_curvature(c)
    _check_same_shape(x, y)
    if c == 0:
        return x + y
    _check_inside(x, c, "x")
    _check_inside(y, c, "y")
    return project_to_ball(_mobius_add_raw(x, y, c), c)


def exp_map_zero(v, c: float) -> np.ndarray:
    """Map a tangent vector at the origin onto the ball: tanh(√c‖v‖)·v/(√c‖v‖)."""
    v = _as_vector(v, "v")
    c = check_curvature(c)
    if c == 0:
        return v.copy()
    sqrt_c = np.sqrt(c)
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    out = np.where(norm > 0, np.tanh(sqrt_c * safe) * v / (sqrt_c * safe), 0.0)
    return _guard_boundary(out, c)


def log_map_zero(y, c: float) -> np.ndarray:
    """
    Inverse of exp_map_zero: artanh(√c‖y‖)·y/(√c‖y‖).

    Raises:
        ContractViolation: if y is not strictly inside the ball.
    """
    y = _as_vector(y, "y")
    c = check_curvature(c)
    if c == 0:
        return y.copy()
    _check_inside(y, c, "y")
    sqrt_c = np.sqrt(c)
    norm = _norm(y)
    safe = np.maximum(norm, MIN_NORM)
    return np.where(norm > 0, np.arctanh(sqrt_c * safe) * y / (sqrt_c * safe), 0.0)


def exp_map(x, v, c: float) -> np.ndarray:
    """Exponential map at base point x: x ⊕_c (tanh(√c·λ_x‖v‖/2)·v/(√c‖v‖))."""
    x = _as_vector(x, "x")
    v = _as_vector(v, "v")
    c = check_curvature(c)
    _check_same_shape(x, v)
    if c == 0:
        return x + v
    _check_inside(x, c, "x")
    sqrt_c = np.sqrt(c)
    lam = 2.0 / (1.0 - c * _sq_norm(x))
    norm = _norm(v)
    safe = np.maximum(norm, MIN_NORM)
    step = np.where(norm > 0, np.tanh(sqrt_c * lam * safe / 2.0) * v / (sqrt_c * safe), 0.0)
    step = _guard_boundary(step, c)
    return project_to_ball(_mobius_add_raw(x, step, c), c)


def log_map(x, y, c: float) -> np.ndarray:
    """Logarithmic map at base point x: (2/(√c·λ_x))·artanh(√c‖-x ⊕ y‖)·(-x ⊕ y)/‖-x ⊕ y‖."""
    x = _as_vector(x, "x")
    y = _as_vector(y, "y")
    c = check_curvature(c)
    _check_same_shape(x, y)
    if c == 0:
        return y - x
    _check_inside(x, c, "x")
    _check_inside(y, c, "y")
    sqrt_c = np.sqrt(c)
    lam = 2.0 / (1.0 - c * _sq_norm(x))
    sub = _mobius_add_raw(-x, y, c)
    sub = _guard_boundary(sub, c)
    norm = _norm(sub)
    safe = np.maximum(norm, MIN_NORM)
    coef = 2.0 / (sqrt_c * lam) * np.arctanh(sqrt_c * safe) / safe
    same = np.all(x == y, axis=-1, keepdims=True)
    return np.where((norm > 0) & ~same, coef * sub, 0.0)


def riemannian_gradient(p, euclidean_grad, c: float) -> np.ndarray:
    """Rescale a Euclidean gradient by the inverse Poincaré metric, (1 - c‖p‖²)²/4."""
    p = _as_vector(p, "p")
    g = _as_vector(euclidean_grad, "euclidean_grad")
    c = check_curvature(c)
    _check_same_shape(p, g)
    if c == 0:
        return g.copy()
    return g * (1.0 - c * _sq_norm(p)) ** 2 / 4.0
