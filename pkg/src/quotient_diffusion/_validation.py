"""Input validation helpers shared by the geometry, objectives and estimators."""

import numbers

import numpy as np
from sklearn.utils import check_random_state  # noqa: F401  (re-exported)


class InvalidInputError(ValueError):
    """Raised when an array argument is malformed (shape, finiteness, group membership)."""


def check_cloud(x, dim=None, n_points=None, name="x", allow_batch=True):
    """Validate a point cloud (or a batch of them) and return it as float64.

    Accepts arrays shaped ``(N, d)`` or, when ``allow_batch`` is true,
    ``(..., N, d)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or (not allow_batch and x.ndim != 2):
        raise InvalidInputError(f"{name} must have shape (N, d){' or (..., N, d)' if allow_batch else ''}, got {x.shape}")
    if dim is not None and x.shape[-1] != dim:
        raise InvalidInputError(f"{name} must have {dim} coordinates per point, got {x.shape[-1]}")
    if n_points is not None and x.shape[-2] != n_points:
        raise InvalidInputError(f"{name} must have {n_points} points, got {x.shape[-2]}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return x


def check_same_shape(a, b, names=("x", "v")):
    if a.shape != b.shape:
        raise InvalidInputError(f"{names[0]} and {names[1]} shapes differ: {a.shape} vs {b.shape}")


def check_rotation(g, dim=None, atol=1e-10):
    """Validate a proper rotation matrix (or a stack of them)."""
    g = np.asarray(g, dtype=np.float64)
    if g.ndim < 2 or g.shape[-1] != g.shape[-2]:
        raise InvalidInputError(f"rotation must be square, got shape {g.shape}")
    if dim is not None and g.shape[-1] != dim:
        raise InvalidInputError(f"rotation must be {dim}x{dim}, got {g.shape[-2:]}")
    eye = np.eye(g.shape[-1])
    gtg = np.swapaxes(g, -1, -2) @ g
    if not np.all(np.abs(gtg - eye) <= atol):
        raise InvalidInputError("rotation matrix is not orthogonal")
    if not np.all(np.abs(np.linalg.det(g) - 1.0) <= atol):
        raise InvalidInputError("rotation matrix must have determinant +1")
    return g


def check_time(t, name="t"):
    """Validate time values in [0, 1]; returns a float or float array."""
    arr = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInputError(f"{name} must lie in [0, 1]")
    return float(arr) if arr.ndim == 0 else arr


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise InvalidInputError(f"{name} must be a finite real number")
    if (strict and value <= 0) or (not strict and value < 0):
        raise InvalidInputError(f"{name} must be {'positive' if strict else 'non-negative'}, got {value}")
    return value


def broadcast_time(t, x):
    """Reshape a scalar or per-sample time so it broadcasts against ``(..., N, d)``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0:
        return t
    return t.reshape(t.shape + (1, 1))
