"""Estimator-style wrappers around the functional API.

``fit(times)`` sets up everything that depends only on the observation
schedule (reduction, Fisher information, posterior covariance).
``predict(measurements)`` then returns posterior means for one or many data
sets observed on that schedule.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import InvalidInputError
from .inference import (
    MeasurementSet,
    ObservationSchedule,
    adjoint_data,
    fisher_information,
    full_posterior,
    posterior_covariance,
    sample_schedule,
)
from .lti import LtiSystem, check_times, equispaced_step
from .optimal import olr_mean, olru_covariance, olru_mean, spantini_eigenpairs
from .prior import CompatiblePrior, spin_up_prior
from .reduction import bt_fisher_information, bt_h_transform, bt_posterior, bt_q_transform


def schedule_from_times(times):
    """Equispaced schedule when ``times[i] = (i + 1) h``, explicit otherwise."""
    t = check_times(times)
    h = equispaced_step(t)
    if h is not None:
        return ObservationSchedule("equispaced", h * np.arange(1, t.size + 1), float(h), t.size)
    return sample_schedule("explicit", times=t)


class _PosteriorBase(BaseEstimator):
    def _setup(self, times):
        if not isinstance(self.system, LtiSystem):
            raise InvalidInputError("system must be an LtiSystem")
        sys_ = self.system
        if self.prior is None:
            B = sys_.B if sys_.B is not None else np.eye(sys_.d)
            prior = spin_up_prior(sys_.A, B)
        elif isinstance(self.prior, CompatiblePrior):
            prior = self.prior
        else:
            prior = CompatiblePrior.from_covariance(sys_.A, self.prior)
        self.prior_ = prior
        self.schedule_ = schedule_from_times(times)
        self.n_features_in_ = sys_.d
        return sys_, prior

    def _measurement_sets(self, M):
        check_is_fitted(self, "covariance_")
        arr = np.asarray(M, dtype=float)
        n, k = self.schedule_.times.size, self.system.k
        single = arr.ndim <= 2
        if single:
            arr = check_array(arr.reshape(n, k) if arr.size == n * k else arr,
                              ensure_2d=True, ensure_all_finite=True)
            arr = arr[None]
        else:
            if arr.ndim != 3 or not np.all(np.isfinite(arr)):
                raise InvalidInputError("measurements must be (n, k) or (n_sets, n, k) and finite")
        if arr.shape[1:] != (n, k):
            raise InvalidInputError(f"measurements must have shape ({n}, {k}), got {arr.shape[1:]}")
        return [MeasurementSet(self.schedule_, a) for a in arr], single

    def predict(self, M):
        """Posterior mean(s) for data ``M`` of shape ``(n, k)`` or ``(n_sets, n, k)``."""
        sets, single = self._measurement_sets(M)
        means = np.array([self._mean(s) for s in sets])
        return means[0] if single else means


class FullPosterior(_PosteriorBase):
    """Exact posterior with a dense covariance."""

    def __init__(self, system=None, prior=None, fisher_mode="auto"):
        self.system = system
        self.prior = prior
        self.fisher_mode = fisher_mode

    def fit(self, times, y=None):
        sys_, prior = self._setup(times)
        self.fisher_ = fisher_information(sys_, self.schedule_, self.fisher_mode)
        self.covariance_ = posterior_covariance(prior.factor, self.fisher_)
        return self

    def _mean(self, meas):
        return full_posterior(self.prior_, self.system, meas, H=self.fisher_).mean


class BalancedTruncationPosterior(TransformerMixin, _PosteriorBase):
    """Posterior approximation through a balanced reduced model.

    ``method='BT-Q'`` balances the prior against the noisy observability
    Gramian; ``'BT-H'`` balances it against the Fisher information of the
    fitted schedule.  ``transform`` maps states to reduced coordinates.
    """

    def __init__(self, system=None, prior=None, method="BT-Q", rank=10, fisher_mode="auto"):
        self.system = system
        self.prior = prior
        self.method = method
        self.rank = rank
        self.fisher_mode = fisher_mode

    def fit(self, times, y=None):
        if self.method not in ("BT-Q", "BT-H"):
            raise InvalidInputError(f"method must be BT-Q or BT-H, got {self.method!r}")
        sys_, prior = self._setup(times)
        if self.method == "BT-Q":
            bt = bt_q_transform(sys_, prior)
        else:
            bt = bt_h_transform(sys_, prior, self.schedule_, mode=self.fisher_mode)
        self.reduction_ = bt.truncate(self.rank)
        self.hankel_values_ = self.reduction_.hankel_values
        self.reduced_abscissa_ = self.reduction_.reduced_abscissa
        self.fisher_ = bt_fisher_information(self.reduction_, self.schedule_, self.fisher_mode)
        self.covariance_ = posterior_covariance(prior.factor, self.fisher_)
        return self

    def _mean(self, meas):
        return bt_posterior(self.reduction_, self.prior_, meas, self.fisher_mode,
                            H_BT=self.fisher_).mean

    def transform(self, X):
        """Reduced coordinates ``X S_r`` (rows are states)."""
        check_is_fitted(self, "reduction_")
        X = check_array(X, ensure_all_finite=True)
        if X.shape[1] != self.n_features_in_:
            raise InvalidInputError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X @ self.reduction_.S_r

    def inverse_transform(self, Z):
        """Lift reduced coordinates back: ``Z T_r^T``."""
        check_is_fitted(self, "reduction_")
        Z = check_array(Z, ensure_all_finite=True)
        if Z.shape[1] != self.reduction_.r:
            raise InvalidInputError(f"expected {self.reduction_.r} columns, got {Z.shape[1]}")
        return Z @ self.reduction_.T_r.T


class OptimalLowRankPosterior(TransformerMixin, _PosteriorBase):
    """Optimal low-rank-update covariance with the OLR or OLRU mean."""

    def __init__(self, system=None, prior=None, rank=10, mean="OLRU", fisher_mode="auto"):
        self.system = system
        self.prior = prior
        self.rank = rank
        self.mean = mean
        self.fisher_mode = fisher_mode

    def fit(self, times, y=None):
        if self.mean not in ("OLR", "OLRU"):
            raise InvalidInputError(f"mean must be OLR or OLRU, got {self.mean!r}")
        sys_, prior = self._setup(times)
        self.fisher_ = fisher_information(sys_, self.schedule_, self.fisher_mode)
        self.pencil_ = spantini_eigenpairs(self.fisher_, prior)
        self.covariance_ = olru_covariance(prior, self.pencil_, self.rank)
        return self

    def _mean(self, meas):
        g = adjoint_data(self.system, self.schedule_, meas.values)
        fn = olr_mean if self.mean == "OLR" else olru_mean
        return fn(self.pencil_, self.system, self.schedule_, meas, self.rank, g=g)

    def transform(self, X):
        """Coordinates ``X W_r`` along the leading pencil directions."""
        check_is_fitted(self, "pencil_")
        X = check_array(X, ensure_all_finite=True)
        return X @ self.pencil_.W[:, :self.rank]

    def inverse_transform(self, Z):
        check_is_fitted(self, "pencil_")
        Z = check_array(Z, ensure_all_finite=True)
        return Z @ self.pencil_.W_tilde[:, :self.rank].T
