"""Prior covariances compatible with the state dynamics.

A covariance ``G`` is compatible with ``A`` when ``A G + G A^T`` is negative
semidefinite, i.e. ``G`` is the reachability Gramian of ``(A, B)`` for some
port matrix ``B``.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import as_matrix, as_square, as_symmetric, symmetrize
from .exceptions import IncompatiblePriorError, InvalidInputError, SingularPriorError
from .linalg import (
    GramianFactor,
    check_stable,
    cholesky_factor,
    nearest_nsd_split,
    solve_lyapunov,
    solve_lyapunov_factored,
    spectral_abscissa,
)

#: Relative tolerance on the largest eigenvalue of ``A G + G A^T``.
COMPAT_TOL = 1e-10

PROVENANCES = ("spin_up", "modified", "user_asserted")


@dataclass(frozen=True, eq=False)
class CompatiblePrior:
    """Zero-mean Gaussian prior covariance ``cov = factor @ factor.T``."""

    cov: np.ndarray
    factor: GramianFactor
    residual_abscissa: float
    provenance: str = "user_asserted"
    ridge: float = 0.0

    @property
    def d(self):
        return self.cov.shape[0]

    @classmethod
    def from_covariance(cls, A, cov, tol=COMPAT_TOL, provenance="user_asserted"):
        """Wrap a user-supplied covariance after checking compatibility."""
        cov = as_symmetric(cov, "cov")
        ok, resid = check_compatibility(A, cov, tol)
        if not ok:
            raise IncompatiblePriorError(
                f"prior is not compatible with A: residual abscissa {resid:.3e}", resid)
        return cls(cov, cholesky_factor(cov), resid, provenance)


def check_compatibility(A, Gamma, tol=COMPAT_TOL):
    """Return ``(compatible, max eigenvalue of A G + G A^T)``.

    Compatible means the largest eigenvalue is at most ``tol * ||A G + G A^T||_F``.
    """
    A = as_square(A, "A")
    Gamma = as_symmetric(Gamma, "Gamma")
    if Gamma.shape != A.shape:
        raise InvalidInputError(f"Gamma has shape {Gamma.shape}, expected {A.shape}")
    M = symmetrize(A @ Gamma + Gamma @ A.T)
    top = float(np.linalg.eigvalsh(M)[-1])
    return bool(top <= tol * np.linalg.norm(M)), top


def spin_up_prior(A, B, ridge=0.0):
    """Stationary covariance of ``dx = A x dt + B dW``: ``A G + G A^T + B B^T = 0``.

    An unreachable pair gives a singular covariance, which is rejected unless
    a positive ``ridge`` adds ``ridge * I`` to ``B B^T``.
    """
    A = as_square(A, "A")
    B = as_matrix(B, "B")
    if B.shape[0] != A.shape[0]:
        raise InvalidInputError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
    check_stable(A)
    if ridge < 0:
        raise InvalidInputError("ridge must be nonnegative")
    F = B if ridge == 0 else np.hstack([B, np.sqrt(ridge) * np.eye(A.shape[0])])
    cov = solve_lyapunov(A, F @ F.T)
    factor = solve_lyapunov_factored(A, F)
    if factor.rank < A.shape[0] or factor.factor.shape[1] != A.shape[0]:
        raise SingularPriorError(
            f"spin-up covariance is singular (numerical rank {factor.rank} < {A.shape[0]}); "
            "the pair (A, B) is not reachable; supply a ridge")
    _, resid = check_compatibility(A, cov)
    return CompatiblePrior(cov, factor, resid, "spin_up", float(ridge))


def make_compatible(A, Gamma0, tol=COMPAT_TOL):
    """Modify ``Gamma0`` so the Lyapunov residual becomes its nearest NSD part.

    With ``M0 = A G0 + G0 A^T = M_- + F F^T`` the correction solves
    ``A D + D A^T + F F^T = 0`` and ``G = G0 + D`` satisfies
    ``A G + G A^T = M_-``.  Returns ``(prior, D, E)`` with ``D = E E^T``.
    """
    A = as_square(A, "A")
    Gamma0 = as_symmetric(Gamma0, "Gamma0")
    if Gamma0.shape != A.shape:
        raise InvalidInputError(f"Gamma0 has shape {Gamma0.shape}, expected {A.shape}")
    check_stable(A)
    R0 = cholesky_factor(Gamma0).factor
    ok, resid = check_compatibility(A, Gamma0, tol)
    d = A.shape[0]
    if ok:
        prior = CompatiblePrior(Gamma0, GramianFactor(R0, d, 0.0), resid, "modified")
        return prior, np.zeros((d, d)), np.zeros((d, 0))
    M0 = symmetrize(A @ Gamma0 + Gamma0 @ A.T)
    _, pos_factor = nearest_nsd_split(M0)
    E = solve_lyapunov_factored(A, pos_factor).factor
    Delta = symmetrize(E @ E.T)
    cov = symmetrize(Gamma0 + Delta)
    # Combined lower factor from the QR of the stacked upper factors.
    _, Ru = np.linalg.qr(np.vstack([R0.T, E.T]), mode="reduced")
    signs = np.sign(np.diag(Ru))
    signs[signs == 0] = 1.0
    factor = GramianFactor((Ru * signs[:, None]).T, d, 0.0)
    _, resid = check_compatibility(A, cov, tol)
    return CompatiblePrior(cov, factor, resid, "modified"), Delta, E


def _check_step(A, dt, t_burn):
    alpha = abs(spectral_abscissa(A))
    radius = np.max(np.abs(np.linalg.eigvals(A)))
    if dt > 0.1 / alpha or dt * radius > 0.5:
        raise InvalidInputError(
            f"dt={dt} too coarse: need dt <= 0.1/|abscissa| = {0.1 / alpha:.3e} "
            f"and dt * spectral radius <= 0.5 ({0.5 / radius:.3e})")
    if t_burn < 10.0 / alpha:
        raise InvalidInputError(f"t_burn={t_burn} shorter than 10/|abscissa| = {10 / alpha:.3e}")


def monte_carlo_stationary_cov(A, B, n_paths, t_burn, dt, seed, chunk=4096):
    """Euler-Maruyama estimate of the covariance of ``x(0)`` for ``dx = A x dt + B dW``.

    Paths start at ``x(-t_burn) = 0``.  The step must satisfy
    ``dt <= 0.1 / |abscissa(A)|`` and ``dt * spectral_radius(A) <= 0.5``; the
    scheme's stationary covariance is then biased by ``O(dt ||A||)``
    relative.  Paths are simulated in chunks; chunk ``j`` draws from a Philox
    stream keyed by ``(seed, j)``.  Returns ``(cov, std_errors)`` where the
    standard errors are those of the entrywise sample means of ``x_i x_j``
    (the mean is known to be zero).
    """
    A = as_square(A, "A")
    B = as_matrix(B, "B")
    check_stable(A)
    _check_step(A, dt, t_burn)
    d = A.shape[0]
    n_steps = int(np.ceil(t_burn / dt))
    step = np.eye(d) + dt * A
    noise = np.sqrt(dt) * B
    total = np.zeros((d, d))
    total_sq = np.zeros((d, d))
    for j, start in enumerate(range(0, n_paths, chunk)):
        size = min(chunk, n_paths - start)
        rng = np.random.Generator(np.random.Philox(key=[seed, j]))
        X = np.zeros((size, d))
        for _ in range(n_steps):
            X = X @ step.T + rng.standard_normal((size, B.shape[1])) @ noise.T
        prods = X[:, :, None] * X[:, None, :]
        total += prods.sum(axis=0)
        total_sq += (prods ** 2).sum(axis=0)
    cov = total / n_paths
    var = np.maximum(total_sq / n_paths - cov ** 2, 0.0) * n_paths / max(n_paths - 1, 1)
    return cov, np.sqrt(var / n_paths)
