"""Dense linear-algebra kernels.

All matrices are ``numpy.ndarray`` of dtype float64 in numpy's default
row-major (C) order.  Every function is pure: inputs are never modified.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._validation import as_matrix, as_square, as_symmetric, symmetrize
from .exceptions import IndefiniteMatrixError, InvalidInputError, UnstableSystemError

#: Relative eigenvalue cut-off used when factoring semidefinite matrices.
CLIP_TOL = 1e-12
#: A is stable iff its spectral abscissa is below ``-STABILITY_RTOL * ||A||_F``.
STABILITY_RTOL = 1e-10
#: Relative gap below which two generalized eigenvalues count as tied.
TIE_RTOL = 1e-8


@dataclass(frozen=True)
class GramianFactor:
    """Tall factor ``F`` of a symmetric positive semidefinite matrix ``F @ F.T``."""

    factor: np.ndarray
    rank: int
    clip_tol: float = CLIP_TOL

    @property
    def dim(self):
        return self.factor.shape[0]

    def gramian(self):
        return self.factor @ self.factor.T


@dataclass(frozen=True)
class GeneralizedEigenpairs:
    """Eigenpairs ``Q v = lam P^{-1} v`` with ``v.T P^{-1} v = 1``, descending."""

    values: np.ndarray
    vectors: np.ndarray
    ties: bool = False


def spectral_abscissa(A):
    A = as_square(A, "A")
    return float(np.max(np.linalg.eigvals(A).real))


def check_stable(A, name="A"):
    """Raise :class:`UnstableSystemError` unless ``A`` is strictly stable."""
    alpha = spectral_abscissa(A)
    if not alpha < -STABILITY_RTOL * np.linalg.norm(A):
        raise UnstableSystemError(
            f"{name} is not stable: spectral abscissa {alpha:.3e} >= 0 within tolerance")
    return alpha


def mat_exp(A, t=1.0):
    """Matrix exponential ``e^{A t}``.

    Delegates to :func:`scipy.linalg.expm`, which scales ``A t`` by a power of
    two until a Pade approximant of degree 3, 5, 7, 9 or 13 meets double
    precision backward error, then squares back (Al-Mohy & Higham, 2009).
    """
    A = as_square(A, "A")
    t = float(t)
    if not np.isfinite(t):
        raise InvalidInputError("t must be finite")
    if t == 0.0:
        return np.eye(A.shape[0])
    return sla.expm(A * t)


def solve_lyapunov(A, W):
    """Solve ``A X + X A^T + W = 0`` for stable ``A`` by Bartels-Stewart.

    The real Schur form of ``A`` reduces the equation to a quasi-triangular
    Sylvester system (LAPACK ``trsyl`` through
    :func:`scipy.linalg.solve_continuous_lyapunov`).  The returned ``X`` is
    symmetrized; its residual is of order ``eps * (||A|| ||X|| + ||W||)``
    times the conditioning of the Lyapunov operator.
    """
    A = as_square(A, "A")
    W = as_symmetric(W, "W")
    if W.shape != A.shape:
        raise InvalidInputError(f"W has shape {W.shape}, expected {A.shape}")
    check_stable(A)
    X = sla.solve_continuous_lyapunov(A, -W)
    return symmetrize(X)


def lyapunov_residual(A, X, W):
    """Relative residual ``||A X + X A^T + W|| / (||A|| ||X|| + ||W||)``."""
    R = A @ X + X @ A.T + W
    scale = np.linalg.norm(A) * np.linalg.norm(X) + np.linalg.norm(W)
    return np.linalg.norm(R) / scale if scale > 0 else 0.0


def cholesky_factor(M):
    """Lower Cholesky factor of an SPD matrix as a :class:`GramianFactor`.

    Raises :class:`IndefiniteMatrixError` when ``M`` is not numerically
    positive definite.
    """
    M = as_symmetric(M, "M")
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise IndefiniteMatrixError("matrix is not positive definite") from exc
    return GramianFactor(L, M.shape[0], 0.0)


def solve_lyapunov_factored(A, F, clip_tol=CLIP_TOL):
    """Factor ``R`` with ``R R^T`` solving ``A X + X A^T + F F^T = 0``.

    Implemented as a full Bartels-Stewart solve on ``F F^T`` followed by a
    square-root factorization: the lower Cholesky factor when ``X`` is
    numerically definite, otherwise the clipped eigen-factor of
    :func:`spsd_sqrt_factor`.
    """
    A = as_square(A, "A")
    F = as_matrix(F, "F")
    if F.shape[0] != A.shape[0]:
        raise InvalidInputError(f"F has {F.shape[0]} rows, expected {A.shape[0]}")
    X = solve_lyapunov(A, F @ F.T)
    w = np.linalg.eigvalsh(X)
    if w[0] > clip_tol * w[-1] > 0:
        try:
            return GramianFactor(np.linalg.cholesky(X), X.shape[0], clip_tol)
        except np.linalg.LinAlgError:
            pass
    return spsd_sqrt_factor(X, clip_tol)


def spsd_sqrt_factor(M, clip_tol=CLIP_TOL):
    """Eigen-factor ``F = V_k diag(sqrt(lam_k))`` of a semidefinite ``M``.

    Eigenvalues below ``clip_tol * max(lam)`` (negative round-off included)
    are dropped.  Columns are ordered by decreasing eigenvalue.
    """
    M = as_symmetric(M, "M")
    lam, V = np.linalg.eigh(M)
    lam, V = lam[::-1], V[:, ::-1]
    scale = np.max(np.abs(lam)) if lam.size else 0.0
    if scale == 0.0:
        return GramianFactor(np.zeros((M.shape[0], 0)), 0, clip_tol)
    if lam[-1] < -10.0 * clip_tol * scale:
        raise IndefiniteMatrixError(
            f"matrix is indefinite: eigenvalue {lam[-1]:.3e} vs scale {scale:.3e}")
    keep = lam > clip_tol * lam[0]
    F = V[:, keep] * np.sqrt(lam[keep])
    return GramianFactor(F, int(keep.sum()), clip_tol)


def _orient(U):
    # Deterministic signs: the largest-magnitude entry of each column is positive.
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def sym_def_geig(Q, P_factor):
    """Generalized eigenpairs of the pencil ``(Q, P^{-1})`` with ``P = R R^T``.

    Solves the symmetric problem ``R^T Q R u = lam u`` and maps ``v = R u``,
    so that ``Q v = lam P^{-1} v`` and ``v^T P^{-1} v = 1``.  Values are sorted
    descending; tied values keep the ascending-index order returned by LAPACK
    reversed, and ``ties`` reports whether any retained nonzero values
    coincide within ``TIE_RTOL``.
    """
    Q = as_symmetric(Q, "Q")
    R = P_factor.factor if isinstance(P_factor, GramianFactor) else as_square(P_factor, "R")
    if R.shape[0] != R.shape[1] or R.shape[0] != Q.shape[0]:
        raise InvalidInputError(
            f"P factor must be square of size {Q.shape[0]}, got {R.shape}")
    sv = np.linalg.svd(R, compute_uv=False)
    if sv[-1] <= sv[0] * R.shape[0] * np.finfo(float).eps:
        raise InvalidInputError("P factor is rank deficient")
    lam, U = np.linalg.eigh(symmetrize(R.T @ Q @ R))
    lam, U = lam[::-1], _orient(U[:, ::-1])
    scale = max(abs(lam[0]), abs(lam[-1]))
    if scale > 0 and lam[-1] < -1e-8 * scale:
        raise IndefiniteMatrixError(f"Q is indefinite relative to P: {lam[-1]:.3e}")
    lam = np.maximum(lam, 0.0)
    nonzero = lam[lam > CLIP_TOL * lam[0]] if lam[0] > 0 else lam[:0]
    ties = bool(nonzero.size > 1 and np.any(-np.diff(nonzero) <= TIE_RTOL * nonzero[0]))
    return GeneralizedEigenpairs(lam, R @ U, ties)


def nearest_nsd_split(M):
    """Split ``M = M_minus + F F^T`` with ``M_minus`` negative semidefinite.

    ``F = U_+ diag(sqrt(lam_+))`` collects the strictly positive spectrum;
    zero eigenvalues go to ``M_minus``.  ``M_minus`` is the nearest negative
    semidefinite matrix to ``M`` in the Frobenius and spectral norms.
    """
    M = as_symmetric(M, "M")
    lam, U = np.linalg.eigh(M)
    pos = lam > 0
    Um, lm = U[:, ~pos], lam[~pos]
    M_minus = symmetrize((Um * lm) @ Um.T)
    pos_factor = U[:, pos][:, ::-1] * np.sqrt(lam[pos][::-1])
    return M_minus, pos_factor
