"""Input validation helpers shared by the numerical modules and estimators."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import InvalidInputError

SYMMETRY_RTOL = 1e-8


def as_matrix(M, name="matrix"):
    """Return ``M`` as a finite 2-D float64 array (scalars become 1x1)."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 0:
        M = M.reshape(1, 1)
    try:
        return check_array(M, ensure_2d=True, dtype=np.float64,
                           ensure_all_finite=True, input_name=name, copy=False)
    except ValueError as exc:
        raise InvalidInputError(f"{name}: {exc}") from exc


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise InvalidInputError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return v


def as_square(M, name="matrix"):
    M = as_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {M.shape}")
    return M


def as_symmetric(M, name="matrix", rtol=SYMMETRY_RTOL):
    """Validate approximate symmetry and return the symmetrized matrix."""
    M = as_square(M, name)
    scale = np.linalg.norm(M)
    if np.linalg.norm(M - M.T) > rtol * max(scale, np.finfo(float).tiny):
        raise InvalidInputError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def symmetrize(M):
    return 0.5 * (M + M.T)
