"""Optimal low-rank posterior approximations and the Forstner metric.

The baselines here decompose the pencil (Fisher information, prior
precision) once and truncate it.  They need the full forward dynamics: the
projected adjoint is applied to ``G^T Gamma_obs^{-1} m`` computed with the
full-order model.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._validation import as_symmetric
from .exceptions import IndefiniteMatrixError, InvalidInputError
from .inference import adjoint_data, fisher_information
from .linalg import CLIP_TOL, TIE_RTOL, cholesky_factor, sym_def_geig, symmetrize


@dataclass(frozen=True, eq=False)
class PencilDecomposition:
    """Eigenpairs ``H w_i = tau_i^2 Gamma_pr^{-1} w_i`` with ``W^T Gamma_pr^{-1} W = I``.

    ``W_tilde = Gamma_pr^{-1} W`` so that ``W_tilde^T W = I``.
    """

    tau_sq: np.ndarray
    W: np.ndarray
    W_tilde: np.ndarray
    prior_cov: np.ndarray
    n_zero: int = 0
    ties: bool = False

    @property
    def d(self):
        return self.tau_sq.size


def spantini_eigenpairs(H, prior):
    """Decompose the pencil ``(H, Gamma_pr^{-1})`` through the prior factor."""
    H = as_symmetric(H, "H")
    eig = sym_def_geig(H, prior.factor)
    R = prior.factor.factor
    W = eig.vectors
    W_tilde = np.linalg.solve(R.T, np.linalg.solve(R, W))
    tau_sq = eig.values
    n_zero = int(np.sum(tau_sq <= CLIP_TOL * tau_sq[0])) if tau_sq[0] > 0 else tau_sq.size
    return PencilDecomposition(tau_sq, W, W_tilde, prior.cov, n_zero, eig.ties)


def _check_rank(pencil, r):
    r = int(r)
    if not 0 <= r <= pencil.d:
        raise InvalidInputError(f"rank r={r} outside [0, {pencil.d}]")
    t = np.sqrt(pencil.tau_sq)
    # Only pairs that are numerically nonzero can make the optimum ambiguous.
    live = 0 < r < pencil.d and pencil.tau_sq[r - 1] > CLIP_TOL * pencil.tau_sq[0]
    if live and abs(t[r - 1] - t[r]) <= TIE_RTOL * t[0]:
        warnings.warn(f"tau_{r} and tau_{r + 1} coincide; the rank-{r} optimum is not unique",
                      RuntimeWarning, stacklevel=3)
    return r


def olru_covariance(prior, pencil, r):
    """``Gamma_pr - sum_{i<=r} tau_i^2 / (1 + tau_i^2) w_i w_i^T``."""
    r = _check_rank(pencil, r)
    if prior is not None and prior.cov.shape != pencil.prior_cov.shape:
        raise InvalidInputError("prior and pencil dimensions differ")
    return _olru_cov(pencil, r)


def olru_update_factor(pencil, r):
    t2 = pencil.tau_sq[:r]
    return pencil.W[:, :r] * np.sqrt(t2 / (1.0 + t2))


def forstner_distance(Acov, Bcov):
    """``sum_i ln^2(sigma_i)`` over the eigenvalues of the pencil ``(Acov, Bcov)``."""
    Acov = as_symmetric(Acov, "Acov")
    Bcov = as_symmetric(Bcov, "Bcov")
    if Acov.shape != Bcov.shape:
        raise InvalidInputError(f"shape mismatch {Acov.shape} vs {Bcov.shape}")
    Lb = cholesky_factor(Bcov).factor
    X = sla.solve_triangular(Lb, Acov, lower=True)
    sigma = np.linalg.eigvalsh(symmetrize(sla.solve_triangular(Lb, X.T, lower=True)))
    if sigma[0] <= 0:
        raise IndefiniteMatrixError("Forstner distance needs SPD arguments")
    return float(np.sum(np.log(sigma) ** 2))


def olru_optimal_distance(pencil, r):
    """Closed-form ``sum_{i>r} ln^2(1 / (1 + tau_i^2))``."""
    r = int(r)
    if not 0 <= r <= pencil.d:
        raise InvalidInputError(f"rank r={r} outside [0, {pencil.d}]")
    return float(np.sum(np.log1p(pencil.tau_sq[r:]) ** 2))


def oblique_projector(pencil, r):
    """``Pi_r = sum_{i<=r} w_tilde_i w_i^T``."""
    return pencil.W_tilde[:, :r] @ pencil.W[:, :r].T


def projected_fisher(pencil, H, r):
    """``Pi_r H Pi_r^T`` (the Fisher information of ``G Pi_r^T``)."""
    r = _check_rank(pencil, r)
    P = oblique_projector(pencil, r)
    return symmetrize(P @ H @ P.T)


def projected_forward_quantities(pencil, sys, schedule, r, H=None):
    """Projected Fisher information and the projected adjoint ``m -> Pi_r G^T Gamma_obs^{-1} m``."""
    if H is None:
        H = fisher_information(sys, schedule)
    H_hat = projected_fisher(pencil, H, r)
    P = oblique_projector(pencil, r)

    def apply_adjoint(values):
        return P @ adjoint_data(sys, schedule, values)

    return H_hat, apply_adjoint


def _olru_cov(pencil, r):
    t2 = pencil.tau_sq[:r]
    Wr = pencil.W[:, :r] * np.sqrt(t2 / (1.0 + t2))
    return symmetrize(pencil.prior_cov - Wr @ Wr.T)


def _adjoint(sys, schedule, measurements, g):
    if g is not None:
        return g
    return adjoint_data(sys, schedule, measurements.values)


def olr_mean(pencil, sys, schedule, measurements, r, g=None):
    """Optimal low-rank mean ``Gamma_hat Pi_r G^T Gamma_obs^{-1} m``.

    ``g`` may carry a precomputed full adjoint ``G^T Gamma_obs^{-1} m``.
    """
    r = _check_rank(pencil, r)
    g = _adjoint(sys, schedule, measurements, g)
    return _olru_cov(pencil, r) @ (oblique_projector(pencil, r) @ g)


def olru_mean(pencil, sys, schedule, measurements, r, g=None):
    """Optimal low-rank-update mean ``Gamma_hat G^T Gamma_obs^{-1} m``."""
    r = _check_rank(pencil, r)
    g = _adjoint(sys, schedule, measurements, g)
    return _olru_cov(pencil, r) @ g
