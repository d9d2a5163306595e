"""Linear time-invariant system model, Gramians and the stacked forward map."""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._validation import as_matrix, as_square, as_symmetric, as_vector
from .exceptions import InvalidInputError
from .linalg import (
    check_stable,
    mat_exp,
    solve_lyapunov,
    solve_lyapunov_factored,
    spectral_abscissa,
    symmetrize,
)

__all__ = [
    "LtiSystem",
    "ForwardMap",
    "spectral_abscissa",
    "reachability_gramian",
    "noisy_observability_gramian",
    "noisy_observability_factor",
    "time_limited_fisher_gramian",
    "build_forward_map",
]


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """``dx/dt = A x (+ B u)``, outputs ``C x`` observed with noise ``N(0, noise_cov)``.

    Stability is not enforced here; Gramian computations check it on demand.
    """

    A: np.ndarray
    C: np.ndarray
    noise_cov: np.ndarray
    B: np.ndarray = None
    _noise_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        A = as_square(self.A, "A")
        C = as_matrix(self.C, "C")
        if C.shape[1] != A.shape[0]:
            raise InvalidInputError(f"C has {C.shape[1]} columns, expected {A.shape[0]}")
        noise = as_symmetric(self.noise_cov, "noise_cov")
        if noise.shape != (C.shape[0], C.shape[0]):
            raise InvalidInputError(
                f"noise_cov has shape {noise.shape}, expected {(C.shape[0],) * 2}")
        try:
            chol = np.linalg.cholesky(noise)
        except np.linalg.LinAlgError as exc:
            raise InvalidInputError("noise_cov must be positive definite") from exc
        B = self.B
        if B is not None:
            B = as_matrix(B, "B")
            if B.shape[0] != A.shape[0]:
                raise InvalidInputError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "noise_cov", noise)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "_noise_chol", chol)

    @property
    def d(self):
        return self.A.shape[0]

    @property
    def k(self):
        return self.C.shape[0]

    @property
    def m(self):
        return None if self.B is None else self.B.shape[1]

    @property
    def C_white(self):
        """``L^{-1} C`` where ``noise_cov = L L^T``; ``C_white^T C_white = C^T noise_cov^{-1} C``."""
        return sla.solve_triangular(self._noise_chol, self.C, lower=True)

    def whiten(self, values):
        """Apply ``L^{-1}`` to measurement rows (shape ``(n, k)``)."""
        values = np.asarray(values, dtype=float)
        return sla.solve_triangular(self._noise_chol, values.T, lower=True).T

    @property
    def noise_chol(self):
        return self._noise_chol

    def spectral_abscissa(self):
        return spectral_abscissa(self.A)

    def replace(self, **changes):
        fields = {"A": self.A, "C": self.C, "noise_cov": self.noise_cov, "B": self.B}
        fields.update(changes)
        return LtiSystem(**fields)


@dataclass(frozen=True)
class ForwardMap:
    """Stacked forward map; ``blocks[i] = C e^{A t_i}`` (shape ``(n, k, d)``)."""

    blocks: np.ndarray
    times: np.ndarray

    def matrix(self):
        n, k, d = self.blocks.shape
        return self.blocks.reshape(n * k, d)


def reachability_gramian(sys):
    """Infinite reachability Gramian ``P`` with ``A P + P A^T + B B^T = 0``."""
    if sys.B is None:
        raise InvalidInputError("system has no input port B")
    return solve_lyapunov(sys.A, sys.B @ sys.B.T)


def noisy_observability_gramian(sys):
    """``Q_m = int_0^inf e^{A^T t} C^T noise^{-1} C e^{A t} dt`` via its Lyapunov equation."""
    Cw = sys.C_white
    return solve_lyapunov(sys.A.T, Cw.T @ Cw)


def noisy_observability_factor(sys):
    """Square-root factor ``L`` of the noisy observability Gramian."""
    return solve_lyapunov_factored(sys.A.T, sys.C_white.T)


def time_limited_fisher_gramian(sys, t_start, t_end, Q_m=None):
    """``int_{t_start}^{t_end} e^{A^T t} C^T noise^{-1} C e^{A t} dt``.

    Evaluated as ``Phi(s)^T Q_m Phi(s) - Phi(e)^T Q_m Phi(e)`` with
    ``Phi(t) = e^{A t}``; pass ``Q_m`` to reuse a precomputed Gramian.
    """
    t_start, t_end = float(t_start), float(t_end)
    if not (t_start >= 0 and t_end > t_start and np.isfinite(t_end)):
        raise InvalidInputError(f"need 0 <= t_start < t_end, got [{t_start}, {t_end}]")
    if Q_m is None:
        Q_m = noisy_observability_gramian(sys)
    Ps = mat_exp(sys.A, t_start)
    Pe = mat_exp(sys.A, t_end)
    return symmetrize(Ps.T @ Q_m @ Ps - Pe.T @ Q_m @ Pe)


def check_times(times):
    times = as_vector(times, "times")
    if times.size == 0:
        raise InvalidInputError("times must be nonempty")
    if times[0] <= 0 or np.any(np.diff(times) <= 0):
        raise InvalidInputError("times must be positive and strictly increasing")
    return times


def equispaced_step(times, rtol=1e-12):
    """Return ``h`` if ``times[i] == (i + 1) h`` up to ``rtol``, else ``None``."""
    h = times[0]
    grid = h * np.arange(1, times.size + 1)
    if np.allclose(times, grid, rtol=rtol, atol=0.0):
        return h
    return None


def build_forward_map(sys, times):
    """Blocks ``C e^{A t_i}`` by repeated propagation.

    Equispaced times ``t_i = i h`` reuse one ``e^{A h}``; other schedules use
    one exponential per gap ``t_i - t_{i-1}``.
    """
    times = check_times(times)
    n = times.size
    blocks = np.empty((n, sys.k, sys.d))
    h = equispaced_step(times)
    Phi = np.eye(sys.d)
    if h is not None:
        E = mat_exp(sys.A, h)
    prev = 0.0
    for i, t in enumerate(times):
        step = E if h is not None else mat_exp(sys.A, t - prev)
        Phi = step @ Phi
        blocks[i] = sys.C @ Phi
        prev = t
    return ForwardMap(blocks, times)


def check_stable_system(sys):
    return check_stable(sys.A)
