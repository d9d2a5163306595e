"""Observation schedules, measurements, Fisher information and the exact posterior.

The block-diagonal observation covariance is never formed: every
contraction with its inverse goes through the whitened output matrix
``L^{-1} C`` (``noise_cov = L L^T``) one measurement block at a time.
"""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from ._validation import as_vector, symmetrize
from .exceptions import EmptyMeasurementsError, InvalidInputError
from .linalg import mat_exp
from .lti import check_times

SCHEDULE_KINDS = ("explicit", "equispaced", "uniform_subinterval", "poisson")
FISHER_MODES = ("auto", "direct", "doubling")
#: ``auto`` switches to the doubling recursion above this many equispaced times.
DOUBLING_THRESHOLD = 1000
#: Measurement blocks propagated together in equispaced forward/adjoint sweeps.
CHUNK = 512


def make_rng(seed):
    """Counter-based Philox generator; streams are identical on every platform."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True, eq=False)
class ObservationSchedule:
    kind: str
    times: np.ndarray
    h: float
    n: int
    seed: int = 0

    @property
    def is_equispaced(self):
        return self.kind == "equispaced"

    def metadata(self):
        return {"kind": self.kind, "h": self.h, "n": self.n, "seed": self.seed}


def sample_schedule(kind, h=None, n=None, seed=0, times=None):
    """Materialize observation times.

    ``equispaced``: ``t_i = i h``.  ``uniform_subinterval``: one uniform time
    in each ``((i-1) h, i h)``.  ``poisson``: i.i.d. exponential gaps with
    mean ``h``.  ``explicit``: the given ``times`` (``h`` is their mean gap).
    """
    if kind not in SCHEDULE_KINDS:
        raise InvalidInputError(f"unknown schedule kind {kind!r}")
    if kind == "explicit":
        t = check_times(times)
        return ObservationSchedule(kind, t, float(t[-1] / t.size), int(t.size), int(seed))
    if h is None or n is None or not h > 0 or int(n) < 1:
        raise InvalidInputError(f"need h > 0 and n >= 1, got h={h}, n={n}")
    n, h = int(n), float(h)
    idx = np.arange(1, n + 1, dtype=float)
    if kind == "equispaced":
        t = h * idx
    elif kind == "uniform_subinterval":
        u = make_rng(seed).uniform(np.nextafter(0.0, 1.0), 1.0, size=n)
        t = h * (idx - 1.0 + u)
    else:
        gaps = make_rng(seed).exponential(h, size=n)
        t = np.cumsum(np.maximum(gaps, np.finfo(float).tiny))
    return ObservationSchedule(kind, t, h, n, int(seed))


@dataclass(frozen=True, eq=False)
class MeasurementSet:
    schedule: ObservationSchedule
    values: np.ndarray
    truth: np.ndarray = None
    seed: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[0] != self.schedule.times.size:
            raise InvalidInputError(
                f"{values.shape[0]} measurements for {self.schedule.times.size} times")
        object.__setattr__(self, "values", values)

    def write_csv(self, path):
        """Write ``time,y_1..y_k`` rows and a ``.meta.json`` companion file."""
        path = Path(path)
        k = self.values.shape[1]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time"] + [f"y_{j + 1}" for j in range(k)])
            for t, row in zip(self.schedule.times, self.values):
                w.writerow([f"{t:.17g}"] + [f"{v:.17g}" for v in row])
        meta = self.schedule.metadata()
        meta["noise_seed"] = self.seed
        if self.truth is not None:
            meta["truth"] = [float(x) for x in self.truth]
        meta_path(path).write_text(json.dumps(meta, indent=2))

    @classmethod
    def read_csv(cls, path):
        path = Path(path)
        with path.open(newline="") as fh:
            rows = [r for r in csv.reader(fh) if r]
        if not rows or rows[0][0].strip() != "time":
            raise InvalidInputError(f"{path}: missing 'time,y_1,...' header")
        body = rows[1:]
        if not body:
            raise EmptyMeasurementsError(f"{path}: no measurement rows")
        try:
            data = np.array([[float(x) for x in r] for r in body])
        except ValueError as exc:
            raise InvalidInputError(f"{path}: {exc}") from exc
        if data.shape[1] != len(rows[0]):
            raise InvalidInputError(f"{path}: ragged rows")
        times, values = data[:, 0], data[:, 1:]
        meta = {}
        if meta_path(path).exists():
            meta = json.loads(meta_path(path).read_text())
        kind = meta.get("kind", "explicit")
        if kind == "equispaced":
            schedule = ObservationSchedule(kind, times, float(meta["h"]), times.size,
                                           int(meta.get("seed", 0)))
        else:
            schedule = sample_schedule("explicit", times=times)
            schedule = ObservationSchedule(kind, schedule.times,
                                           float(meta.get("h", schedule.h)), times.size,
                                           int(meta.get("seed", 0)))
        truth = np.array(meta["truth"]) if "truth" in meta else None
        return cls(schedule, values, truth, int(meta.get("noise_seed", 0)))


def meta_path(csv_path):
    csv_path = Path(csv_path)
    return csv_path.with_name(csv_path.stem + ".meta.json")


@dataclass(eq=False)
class Posterior:
    """Gaussian posterior (or approximation) ``N(mean, cov)``."""

    mean: np.ndarray
    cov: np.ndarray
    method: str = "full"
    rank: int = None
    info: dict = field(default_factory=dict)


# -- propagation kernels -----------------------------------------------------
# Each kernel takes a dynamics matrix A and a whitened output matrix Cw so the
# same code serves the full system and reduced models.

def _power_blocks(E, Cw, b):
    """Stacked ``[Cw E, Cw E^2, ..., Cw E^b]`` with shape ``(b * k, d)``."""
    k, d = Cw.shape
    out = np.empty((b, k, d))
    Y = Cw
    for j in range(b):
        Y = Y @ E
        out[j] = Y
    return out.reshape(b * k, d)


def _gap_exponentials(A, times):
    gaps = np.diff(np.concatenate([[0.0], times]))
    cache = {}
    for g in gaps:
        if g not in cache:
            cache[g] = mat_exp(A, g)
    return [cache[g] for g in gaps]


def propagate_outputs(A, Cw, schedule, x0):
    """Noise-free outputs ``Cw e^{A t_i} x0`` as an ``(n, k)`` array."""
    k = Cw.shape[0]
    n = schedule.times.size
    out = np.empty((n, k))
    if schedule.is_equispaced:
        E = mat_exp(A, schedule.h)
        b = min(CHUNK, n)
        blocks = _power_blocks(E, Cw, b)
        Eb = np.linalg.matrix_power(E, b)
        x = np.asarray(x0, dtype=float)
        for start in range(0, n, b):
            size = min(b, n - start)
            out[start:start + size] = (blocks[:size * k] @ x).reshape(size, k)
            x = Eb @ x
        return out
    x = np.asarray(x0, dtype=float)
    for i, P in enumerate(_gap_exponentials(A, schedule.times)):
        x = P @ x
        out[i] = Cw @ x
    return out


def adjoint_apply(A, Cw, schedule, white_values):
    """``sum_i e^{A^T t_i} Cw^T w_i`` for whitened measurements ``w`` (Horner sweep)."""
    n = schedule.times.size
    k, d = Cw.shape
    w = np.asarray(white_values, dtype=float).reshape(n, k)
    y = np.zeros(d)
    if schedule.is_equispaced:
        E = mat_exp(A, schedule.h)
        b = min(CHUNK, n)
        blocks = _power_blocks(E, Cw, b)
        EbT = np.linalg.matrix_power(E, b).T
        starts = list(range(0, n, b))
        for start in reversed(starts):
            size = min(b, n - start)
            y = blocks[:size * k].T @ w[start:start + size].ravel() + EbT @ y
        return y
    mats = _gap_exponentials(A, schedule.times)
    for i in range(n - 1, -1, -1):
        y = mats[i].T @ (y + Cw.T @ w[i])
    return y


def _doubling_sum(E, W, n):
    """``sum_{i=1}^n (E^i)^T W E^i`` in ``O(log n)`` products."""
    S, P = E.T @ W @ E, E
    for bit in bin(n)[3:]:
        S = S + P.T @ S @ P
        P = P @ P
        if bit == "1":
            P = P @ E
            S = S + P.T @ W @ P
    return symmetrize(S)


def fisher_sum(A, Cw, schedule, mode="auto"):
    """``sum_i e^{A^T t_i} Cw^T Cw e^{A t_i}`` for any dynamics ``A``."""
    if mode not in FISHER_MODES:
        raise InvalidInputError(f"unknown fisher mode {mode!r}")
    n = schedule.times.size
    if n == 0:
        raise EmptyMeasurementsError("empty schedule")
    use_doubling = schedule.is_equispaced and (
        mode == "doubling" or (mode == "auto" and n > DOUBLING_THRESHOLD))
    if mode == "doubling" and not schedule.is_equispaced:
        raise InvalidInputError("doubling recursion needs an equispaced schedule")
    if use_doubling:
        return _doubling_sum(mat_exp(A, schedule.h), Cw.T @ Cw, n)
    d = A.shape[0]
    S = np.zeros((d, d))
    Y = Cw
    if schedule.is_equispaced:
        E = mat_exp(A, schedule.h)
        for _ in range(n):
            Y = Y @ E
            S += Y.T @ Y
    else:
        for P in _gap_exponentials(A, schedule.times):
            Y = Y @ P
            S += Y.T @ Y
    return symmetrize(S)


# -- public operations --------------------------------------------------------

def simulate_measurements(sys, schedule, x0, seed, noise=True):
    """``m_i = C e^{A t_i} x0 + eps_i`` with ``eps_i ~ N(0, noise_cov)`` drawn from Philox(seed)."""
    x0 = as_vector(x0, "x0")
    if x0.size != sys.d:
        raise InvalidInputError(f"x0 has length {x0.size}, expected {sys.d}")
    values = propagate_outputs(sys.A, sys.C, schedule, x0)
    if noise:
        z = make_rng(seed).standard_normal(values.shape)
        values = values + z @ sys.noise_chol.T
    return MeasurementSet(schedule, values, x0.copy(), int(seed))


def fisher_information(sys, schedule, mode="auto"):
    """``H = sum_i e^{A^T t_i} C^T noise^{-1} C e^{A t_i}``.

    ``mode='auto'`` uses the doubling recursion for equispaced schedules with
    more than ``DOUBLING_THRESHOLD`` times and direct summation otherwise.
    """
    return fisher_sum(sys.A, sys.C_white, schedule, mode)


def adjoint_data(sys, schedule, values):
    """``G^T Gamma_obs^{-1} m`` accumulated blockwise."""
    values = np.asarray(values, dtype=float).reshape(schedule.times.size, sys.k)
    return adjoint_apply(sys.A, sys.C_white, schedule, sys.whiten(values))


def posterior_covariance(R, H):
    """``(H + (R R^T)^{-1})^{-1}`` in the sandwich form ``R (I + R^T H R)^{-1} R^T``."""
    R = R.factor if hasattr(R, "factor") else R
    M = symmetrize(np.eye(R.shape[1]) + R.T @ H @ R)
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError("I + R^T H R is not positive definite") from exc
    K = sla.solve_triangular(L, R.T, lower=True)
    return symmetrize(K.T @ K)


def full_posterior(prior, sys, measurements, H=None, mode="auto"):
    """Exact posterior ``N(Gamma_pos G^T Gamma_obs^{-1} m, (H + Gamma_pr^{-1})^{-1})``."""
    if prior.d != sys.d:
        raise InvalidInputError(f"prior has dimension {prior.d}, system {sys.d}")
    schedule = measurements.schedule
    if H is None:
        H = fisher_information(sys, schedule, mode)
    cov = posterior_covariance(prior.factor, H)
    g = adjoint_data(sys, schedule, measurements.values)
    return Posterior(cov @ g, cov, "full", None)


def schedule_from_dict(spec):
    return sample_schedule(spec.get("kind", "equispaced"), spec.get("h"), spec.get("n"),
                           spec.get("seed", 0), spec.get("times"))
