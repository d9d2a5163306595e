"""Square-root balanced truncation for initial-condition inference.

Two balancing pencils are supported, both with the prior covariance as the
reachability Gramian:

* ``BT-Q`` balances against the noisy observability Gramian.  The reduced
  model inherits stability and the Hankel tail bound.
* ``BT-H`` balances against the Fisher information of a given schedule.  Its
  reduced model may be unstable; stability is recorded, not guaranteed.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import as_matrix, as_square
from .exceptions import IncompatiblePriorError, InvalidInputError, OverTruncationError
from .inference import (
    Posterior,
    adjoint_data,
    fisher_information,
    posterior_covariance,
)
from .linalg import (
    TIE_RTOL,
    GramianFactor,
    spectral_abscissa,
    spsd_sqrt_factor,
    symmetrize,
)
from .lti import LtiSystem, build_forward_map, noisy_observability_factor, noisy_observability_gramian
from .prior import check_compatibility

#: Hankel values below ``RANK_RTOL * delta_1`` are not usable for truncation.
RANK_RTOL = 1e-12


@dataclass(eq=False)
class BalancedReduction:
    """Truncated balancing bases with ``S_r^T T_r = I_r`` and optional reduced operators."""

    T_r: np.ndarray
    S_r: np.ndarray
    hankel_values: np.ndarray
    hankel_spectrum: np.ndarray
    pencil: str = "standard"
    A_r: np.ndarray = None
    C_r: np.ndarray = None
    B_r: np.ndarray = None
    noise_cov: np.ndarray = None
    reduced_abscissa: float = None
    ties: bool = False

    @property
    def r(self):
        return self.T_r.shape[1]

    @property
    def projector(self):
        """Oblique projector ``T_r S_r^T`` onto the retained subspace."""
        return self.T_r @ self.S_r.T

    @property
    def reduced_system(self):
        if self.A_r is None:
            raise InvalidInputError("reduced operators not formed; call project() first")
        noise = self.noise_cov if self.noise_cov is not None else np.eye(self.C_r.shape[0])
        return LtiSystem(self.A_r, self.C_r, noise, self.B_r)


@dataclass(eq=False)
class BalancingTransform:
    """One SVD ``U diag(s) Z^T = L^T R`` shared by every truncation order."""

    R: np.ndarray
    L: np.ndarray
    U: np.ndarray
    s: np.ndarray
    Z: np.ndarray
    pencil: str = "standard"
    rank_rtol: float = RANK_RTOL
    operators: dict = field(default_factory=dict)

    @property
    def usable_rank(self):
        if self.s.size == 0 or self.s[0] == 0:
            return 0
        return int(np.sum(self.s >= self.rank_rtol * self.s[0]))

    def truncate(self, r):
        r = int(r)
        q = self.usable_rank
        if r < 1 or r > q:
            raise OverTruncationError(
                f"requested order r={r} but only {q} Hankel values are usable "
                f"(>= {self.rank_rtol:g} * delta_1)", usable_rank=q)
        scale = 1.0 / np.sqrt(self.s[:r])
        T_r = (self.R @ self.Z[:, :r]) * scale
        S_r = (self.L @ self.U[:, :r]) * scale
        hsv = self.s[:q]
        head = hsv[:min(r + 1, q)]
        ties = bool(head.size > 1 and np.any(-np.diff(head) <= TIE_RTOL * head[:-1]))
        red = BalancedReduction(T_r, S_r, self.s[:r].copy(), hsv.copy(), self.pencil, ties=ties)
        if self.operators:
            red = project(red, **self.operators)
        return red


def _factor_array(F, name):
    return F.factor if isinstance(F, GramianFactor) else as_matrix(F, name)


def balancing_transform(P_factor, Q_factor, pencil="standard", rank_rtol=RANK_RTOL):
    """SVD of ``L^T R`` for ``P = R R^T`` and ``Q = L L^T``."""
    R = _factor_array(P_factor, "P_factor")
    L = _factor_array(Q_factor, "Q_factor")
    if R.shape[0] != L.shape[0]:
        raise InvalidInputError(f"factor row counts differ: {R.shape[0]} vs {L.shape[0]}")
    if L.shape[1] == 0 or R.shape[1] == 0:
        s = np.zeros(0)
        return BalancingTransform(R, L, np.zeros((L.shape[1], 0)), s,
                                  np.zeros((R.shape[1], 0)), pencil, rank_rtol)
    U, s, Zt = np.linalg.svd(L.T @ R, full_matrices=False)
    # Deterministic singular-vector signs.
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return BalancingTransform(R, L, U * signs, s, Zt.T * signs, pencil, rank_rtol)


def balance_square_root(P_factor, Q_factor, r, pencil="standard"):
    """Order-``r`` balancing bases ``T_r = R Z_r D^{-1/2}``, ``S_r = L U_r D^{-1/2}``."""
    return balancing_transform(P_factor, Q_factor, pencil).truncate(r)


def project(reduction, A, C, B=None, noise_cov=None):
    """Petrov-Galerkin operators ``A_r = S_r^T A T_r``, ``C_r = C T_r``, ``B_r = S_r^T B``."""
    A = as_square(A, "A")
    C = as_matrix(C, "C")
    T, S = reduction.T_r, reduction.S_r
    if A.shape[0] != T.shape[0] or C.shape[1] != T.shape[0]:
        raise InvalidInputError("operator dimensions do not match the balancing bases")
    A_r = S.T @ A @ T
    C_r = C @ T
    B_r = None if B is None else S.T @ as_matrix(B, "B")
    return replace(reduction, A_r=A_r, C_r=C_r, B_r=B_r, noise_cov=noise_cov,
                   reduced_abscissa=spectral_abscissa(A_r))


def _operators(sys):
    return {"A": sys.A, "C": sys.C, "B": sys.B, "noise_cov": sys.noise_cov}


def bt_q_transform(sys, prior, Q_factor=None):
    """Balancing transform for the pencil (noisy observability Gramian, prior)."""
    ok, resid = check_compatibility(sys.A, prior.cov)
    if not ok:
        raise IncompatiblePriorError(
            f"BT-Q needs a compatible prior; residual abscissa {resid:.3e} > 0", resid)
    if Q_factor is None:
        Q_factor = noisy_observability_factor(sys)
    bt = balancing_transform(prior.factor, Q_factor, "BT-Q")
    bt.operators = _operators(sys)
    return bt


def bt_q_reduce(sys, prior, r):
    return bt_q_transform(sys, prior).truncate(r)


def fisher_factor(sys, schedule, H=None, mode="auto"):
    """Square-root factor of the Fisher information.

    When ``n k <= d`` this is the stacked tall factor with columns
    ``(L^{-1} C e^{A t_i})^T`` and ``H`` is never formed; otherwise ``H`` is
    factored by its clipped eigendecomposition.
    """
    n = schedule.times.size
    if H is None and n * sys.k <= sys.d:
        white = sys.replace(C=sys.C_white, noise_cov=np.eye(sys.k))
        return GramianFactor(build_forward_map(white, schedule.times).matrix().T, n * sys.k)
    if H is None:
        H = fisher_information(sys, schedule, mode)
    return spsd_sqrt_factor(H)


def bt_h_transform(sys, prior, schedule, H=None, mode="auto"):
    """Balancing transform for the pencil (Fisher information, prior)."""
    bt = balancing_transform(prior.factor, fisher_factor(sys, schedule, H, mode), "BT-H")
    bt.operators = _operators(sys)
    return bt


def bt_h_reduce(sys, prior, schedule, r, H=None):
    return bt_h_transform(sys, prior, schedule, H).truncate(r)


def _reduced(reduction):
    if reduction.A_r is None:
        raise InvalidInputError("reduced operators not formed; call project() first")
    return reduction.reduced_system


def bt_fisher_information(reduction, schedule, mode="auto"):
    """``H_BT = S_r (sum_i e^{A_r^T t_i} C_r^T noise^{-1} C_r e^{A_r t_i}) S_r^T``."""
    inner = fisher_information(_reduced(reduction), schedule, mode)
    return symmetrize(reduction.S_r @ inner @ reduction.S_r.T)


def reduced_noisy_gramian(reduction):
    """Noisy observability Gramian of the reduced model (``r x r``)."""
    return noisy_observability_gramian(_reduced(reduction))


def qm_bt(reduction):
    """Lifted reduced noisy observability Gramian ``S_r X_r S_r^T``."""
    X_r = reduced_noisy_gramian(reduction)
    return symmetrize(reduction.S_r @ X_r @ reduction.S_r.T)


def low_rank_update_factor(Gamma, V):
    """``K`` with ``(Gamma^{-1} + V V^T)^{-1} = Gamma - K K^T`` (Woodbury)."""
    GV = Gamma @ V
    M = symmetrize(np.eye(V.shape[1]) + V.T @ GV)
    L = np.linalg.cholesky(M)
    return np.linalg.solve(L, GV.T).T


def bt_posterior(reduction, prior, measurements, mode="auto", H_BT=None):
    """Posterior approximation that evolves only the ``r``-dimensional dynamics.

    ``cov = (H_BT + Gamma_pr^{-1})^{-1}`` (sandwich form) and
    ``mean = cov S_r sum_i e^{A_r^T t_i} C_r^T noise^{-1} m_i``.
    The low-rank form ``cov = Gamma_pr - K K^T`` is returned in ``info``.
    """
    red_sys = _reduced(reduction)
    schedule = measurements.schedule
    inner = fisher_information(red_sys, schedule, mode)
    if H_BT is None:
        H_BT = symmetrize(reduction.S_r @ inner @ reduction.S_r.T)
    cov = posterior_covariance(prior.factor, H_BT)
    g = reduction.S_r @ adjoint_data(red_sys, schedule, measurements.values)
    inner_factor = spsd_sqrt_factor(inner).factor
    K = low_rank_update_factor(prior.cov, reduction.S_r @ inner_factor)
    info = {"update_factor": K, "reduced_abscissa": reduction.reduced_abscissa,
            "hankel_values": reduction.hankel_values}
    return Posterior(cov @ g, cov, reduction.pencil, reduction.r, info)
