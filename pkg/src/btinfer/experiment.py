"""Configuration-driven comparison of posterior approximations versus rank.

A run builds the system and prior, draws a truth and noisy data, computes the
exact posterior once, decomposes each pencil once and then scores every
(rank, method) pair.  Results go to ``results.csv``, ``spectra.csv``,
``manifest.json`` and a small stand-alone plotting script.
"""

import configparser
import json
import platform
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from ._version import __version__
from .bench import gen_heat, load_system, parse_noise_spec, read_matrix_market
from .exceptions import BTInferError, ConfigError, InvalidInputError, OverTruncationError
from .inference import (
    FISHER_MODES,
    SCHEDULE_KINDS,
    adjoint_data,
    fisher_information,
    full_posterior,
    make_rng,
    propagate_outputs,
    sample_schedule,
    simulate_measurements,
)
from .linalg import check_stable
from .lti import noisy_observability_gramian
from .optimal import (
    forstner_distance,
    olr_mean,
    olru_covariance,
    olru_mean,
    spantini_eigenpairs,
)
from .prior import make_compatible, spin_up_prior
from .reduction import bt_h_transform, bt_posterior, bt_q_transform

METHODS = ("BT-Q", "BT-H", "OLR", "OLRU", "full")
PRIOR_KINDS = ("spin_up", "identity_spin_up", "make_compatible")
RESULTS_HEADER = ("r", "method", "mean_rel_err", "forstner_err", "reduced_abscissa")
SPECTRA_HEADER = ("i", "tau_over_tau1", "delta_over_delta1")

# section -> key -> parser
_SCHEMA = {
    "benchmark": {"name": str, "source": str, "d": int, "output_fraction": float,
                  "target_abscissa": float, "a": str, "b": str, "c": str},
    "schedule": {"kind": str, "h": float, "n": int, "seed": int, "times": str},
    "noise": {"std": str, "cov": str, "calibrate_fraction": float},
    "prior": {"kind": str, "gamma0": str, "ridge": float},
    "run": {"ranks": str, "methods": str, "fisher_mode": str, "n_replicates": int,
            "workers": int},
    "seeds": {"truth_seed": int, "noise_seed": int},
    "output": {"dir": str},
}
_REQUIRED = {"benchmark": ("source",)}


class StageError(BTInferError):
    """Failure inside one pipeline stage; keeps the category of the cause."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.category = getattr(cause, "category", "error")


@contextmanager
def _stage(name):
    try:
        yield
    except StageError:
        raise
    except (BTInferError, ValueError, np.linalg.LinAlgError, OSError) as exc:
        raise StageError(name, exc) from exc


def default_ranks(d):
    top = min(d, 60)
    return list(range(1, min(20, top) + 1)) + list(range(25, top + 1, 5))


def parse_ranks(text, d):
    """``"default"``, or comma-separated ints, ``a-b`` / ``a-b:step`` ranges and ``d``."""
    text = text.strip()
    if text.lower() == "default":
        return default_ranks(d)
    ranks = []
    for tok in (t.strip() for t in text.split(",")):
        if not tok:
            continue
        try:
            if tok == "d":
                ranks.append(d)
            elif "-" in tok:
                span, _, step = tok.partition(":")
                lo, hi = (int(v) for v in span.split("-"))
                ranks.extend(range(lo, hi + 1, int(step) if step else 1))
            else:
                ranks.append(int(tok))
        except ValueError as exc:
            raise ConfigError(f"bad rank token {tok!r}") from exc
    ranks = sorted(set(ranks))
    if not ranks:
        raise ConfigError("rank list is empty")
    if ranks[0] < 1 or ranks[-1] > d:
        raise ConfigError(f"ranks must lie in [1, {d}]")
    return ranks


@dataclass
class ExperimentConfig:
    benchmark: dict
    schedule: dict
    noise: dict = field(default_factory=dict)
    prior: dict = field(default_factory=lambda: {"kind": "spin_up"})
    run: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    output: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_text(cls, text, base_dir=None):
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc).splitlines()[0]) from exc
        sections = {}
        for sec in cp.sections():
            if sec not in _SCHEMA:
                raise ConfigError(f"unknown section [{sec}]")
            vals = {}
            for key, raw in cp.items(sec):
                if key not in _SCHEMA[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                try:
                    vals[key] = _SCHEMA[sec][key](raw)
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key} = {raw!r}: {exc}") from exc
            sections[sec] = vals
        for sec, keys in _REQUIRED.items():
            for key in keys:
                if key not in sections.get(sec, {}):
                    raise ConfigError(f"missing required key {key!r} in [{sec}]")
        cfg = cls(**sections, base_dir=Path(base_dir) if base_dir else Path.cwd())
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path):
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        return cls.from_text(path.read_text(), base_dir=path.parent)

    def validate(self):
        src = self.benchmark.get("source")
        if src not in ("generated_heat", "files"):
            raise ConfigError(f"benchmark source must be generated_heat or files, got {src!r}")
        if src == "files" and not {"a", "c"} <= set(self.benchmark):
            raise ConfigError("file benchmarks need paths a and c")
        kind = self.schedule.get("kind", "equispaced")
        if kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {kind!r}")
        need = ("times",) if kind == "explicit" else ("h", "n")
        missing = [k for k in need if k not in self.schedule]
        if missing:
            raise ConfigError(f"[schedule] kind {kind} needs {', '.join(missing)}")
        if self.prior.get("kind", "spin_up") not in PRIOR_KINDS:
            raise ConfigError(f"prior kind must be one of {PRIOR_KINDS}")
        if self.prior.get("kind") == "make_compatible" and "gamma0" not in self.prior:
            raise ConfigError("make_compatible prior needs gamma0")
        if sum(k in self.noise for k in ("std", "cov", "calibrate_fraction")) > 1:
            raise ConfigError("give at most one of std, cov, calibrate_fraction in [noise]")
        frac = self.noise.get("calibrate_fraction")
        if frac is not None and not 0 < frac < 1:
            raise ConfigError("calibrate_fraction must lie in (0, 1)")
        if not self.methods:
            raise ConfigError("methods must be nonempty")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {METHODS}")
        if self.fisher_mode not in FISHER_MODES:
            raise ConfigError(f"fisher_mode must be one of {FISHER_MODES}")
        if self.n_replicates < 1 or self.workers < 1:
            raise ConfigError("n_replicates and workers must be positive")

    @property
    def methods(self):
        raw = self.run.get("methods", ",".join(METHODS))
        return [m.strip() for m in raw.split(",") if m.strip()]

    @property
    def fisher_mode(self):
        return self.run.get("fisher_mode", "auto")

    @property
    def n_replicates(self):
        return self.run.get("n_replicates", 1)

    @property
    def workers(self):
        return self.run.get("workers", 1)

    @property
    def truth_seed(self):
        return self.seeds.get("truth_seed", 0)

    @property
    def noise_seed(self):
        return self.seeds.get("noise_seed", 1)

    def resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    def output_dir(self, override=None):
        if override is not None:
            return Path(override)
        return self.resolve(self.output.get("dir", "results"))

    def with_seed(self, seed):
        """Override every seed from one master value."""
        self.seeds = {"truth_seed": int(seed), "noise_seed": int(seed) + 1}
        self.schedule = {**self.schedule, "seed": int(seed) + 2}
        return self

    def as_dict(self):
        return {"benchmark": self.benchmark, "schedule": self.schedule, "noise": self.noise,
                "prior": self.prior, "run": self.run, "seeds": self.seeds,
                "output": self.output}


@dataclass
class ExperimentResult:
    rows: list
    tau: np.ndarray
    delta: np.ndarray
    rel_frob_diff: float
    abscissa: float
    unavailable: list
    manifest: dict
    paths: dict = field(default_factory=dict)


def draw_truth(prior, seed):
    """``x0 = R z`` with ``z ~ N(0, I)`` from Philox(seed), so ``x0 ~ N(0, Gamma_pr)``."""
    R = prior.factor.factor
    return R @ make_rng(seed).standard_normal(R.shape[1])


def calibrate_noise(sys, schedule, truth_seed, fraction=0.1, prior=None, explicit_std=None,
                    x0=None):
    """Diagonal noise covariance from explicit standard deviations or output scale.

    With ``explicit_std`` the calibration is skipped.  Otherwise the noiseless
    output of the seeded truth draw is simulated and each channel gets
    ``sigma = fraction * max |y_channel|``.
    """
    if explicit_std is not None:
        std = np.atleast_1d(np.asarray(explicit_std, dtype=float))
        if std.size == 1:
            std = np.full(sys.k, std[0])
        if std.size != sys.k or np.any(std <= 0):
            raise InvalidInputError(f"need {sys.k} positive standard deviations")
        return np.diag(std ** 2)
    if not 0 < fraction < 1:
        raise InvalidInputError("fraction must lie in (0, 1)")
    if x0 is None:
        if prior is None:
            raise InvalidInputError("calibration needs a prior or a truth x0")
        x0 = draw_truth(prior, truth_seed)
    y = propagate_outputs(sys.A, sys.C, schedule, x0)
    peak = np.max(np.abs(y), axis=0)
    if np.any(peak == 0):
        raise InvalidInputError(
            f"output channel(s) {np.flatnonzero(peak == 0).tolist()} are identically zero")
    return np.diag((fraction * peak) ** 2)


def build_system(cfg):
    b = cfg.benchmark
    if b["source"] == "generated_heat":
        return gen_heat(b.get("d", 200), b.get("output_fraction", 2.0 / 3.0),
                        b.get("target_abscissa", -0.1))
    return load_system(cfg.resolve(b["a"]), cfg.resolve(b["c"]), None,
                       cfg.resolve(b["b"]) if "b" in b else None)


def build_prior(cfg, sys):
    kind = cfg.prior.get("kind", "spin_up")
    ridge = cfg.prior.get("ridge", 0.0)
    if kind == "identity_spin_up" or (kind == "spin_up" and sys.B is None):
        return spin_up_prior(sys.A, np.eye(sys.d), ridge)
    if kind == "spin_up":
        return spin_up_prior(sys.A, sys.B, ridge)
    prior, _, _ = make_compatible(sys.A, read_matrix_market(cfg.resolve(cfg.prior["gamma0"])))
    return prior


def noise_cov_for(cfg, sys, schedule, prior):
    n = cfg.noise
    if "std" in n:
        vals = [float(v) for v in n["std"].replace(";", ",").split(",") if v.strip()]
        return calibrate_noise(sys, schedule, cfg.truth_seed, explicit_std=vals)
    if "cov" in n:
        spec = n["cov"]
        path = cfg.resolve(spec)
        return parse_noise_spec(str(path) if path.is_file() else spec, sys.k)
    return calibrate_noise(sys, schedule, cfg.truth_seed, n.get("calibrate_fraction", 0.1),
                           prior)


def rel_frob_diff(H, Q_m, h):
    return float(np.linalg.norm(h * H - Q_m) / np.linalg.norm(Q_m))


def _rel(a, b):
    nb = np.linalg.norm(b)
    return float(np.linalg.norm(a - b) / nb) if nb > 0 else float(np.linalg.norm(a - b))


def _fmt(x):
    return "" if x is None else format(float(x), ".10g")


def write_results(path, rows):
    lines = [",".join(RESULTS_HEADER)]
    for row in rows:
        lines.append(",".join([str(row["r"]), row["method"], _fmt(row["mean_rel_err"]),
                               _fmt(row["forstner_err"]), _fmt(row["reduced_abscissa"])]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_spectra(path, tau, delta):
    lines = [",".join(SPECTRA_HEADER)]
    t = tau / tau[0] if tau.size and tau[0] > 0 else tau
    s = delta / delta[0] if delta.size and delta[0] > 0 else delta
    for i in range(max(t.size, s.size)):
        lines.append(",".join([str(i + 1), _fmt(t[i]) if i < t.size else "",
                               _fmt(s[i]) if i < s.size else ""]))
    Path(path).write_text("\n".join(lines) + "\n")


PLOT_SCRIPT = '''"""Plot experiment output.  Usage: python plot_results.py [output_dir]"""
import csv
import sys
from pathlib import Path

import matplotlib.pyplot as plt

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent
rows = list(csv.DictReader(open(out / "results.csv")))
spec = list(csv.DictReader(open(out / "spectra.csv")))
fig, ax = plt.subplots(1, 3, figsize=(14, 4))
for col, key in ((0, "tau_over_tau1"), (0, "delta_over_delta1")):
    pts = [(int(s["i"]), float(s[key])) for s in spec if s[key]]
    ax[col].semilogy(*zip(*pts), "o-", ms=3, label=key)
ax[0].set_xlabel("i")
ax[0].legend()
for method in sorted({r["method"] for r in rows}):
    sel = [r for r in rows if r["method"] == method]
    rs = [int(r["r"]) for r in sel]
    ax[1].semilogy(rs, [float(r["mean_rel_err"]) for r in sel], "o-", ms=3, label=method)
    ax[2].semilogy(rs, [float(r["forstner_err"]) for r in sel], "o-", ms=3, label=method)
ax[1].set_title("relative mean error")
ax[2].set_title("Forstner covariance error")
for a in ax[1:]:
    a.set_xlabel("r")
    a.legend()
fig.tight_layout()
fig.savefig(out / "results.png", dpi=150)
'''


def _score_rank(r, method, ctx):
    """One (rank, method) evaluation; returns a row dict or ``None`` if unavailable."""
    post = ctx["posterior"]
    means = ctx["means"]
    if method == "full":
        return {"mean_rel_err": 0.0, "forstner_err": 0.0, "reduced_abscissa": None}
    if method in ("OLR", "OLRU"):
        pencil = ctx["pencil"]
        cov = olru_covariance(None, pencil, r)
        fn = olr_mean if method == "OLR" else olru_mean
        errs = [_rel(fn(pencil, ctx["sys"], meas.schedule, meas, r, g=g), mu)
                for meas, g, mu in zip(ctx["measurements"], ctx["adjoints"], means)]
        return {"mean_rel_err": float(np.mean(errs)),
                "forstner_err": forstner_distance(post.cov, cov), "reduced_abscissa": None}
    bt = ctx["transforms"][method]
    try:
        red = bt.truncate(r)
    except OverTruncationError:
        return None
    errs = []
    cov = None
    for meas, mu in zip(ctx["measurements"], means):
        approx = bt_posterior(red, ctx["prior"], meas, ctx["fisher_mode"])
        cov = approx.cov
        errs.append(_rel(approx.mean, mu))
    return {"mean_rel_err": float(np.mean(errs)),
            "forstner_err": forstner_distance(post.cov, cov),
            "reduced_abscissa": red.reduced_abscissa}


def run_experiment(cfg, out_dir=None, write=True):
    """Run the full comparison pipeline described by ``cfg``."""
    with _stage("system"):
        sys = build_system(cfg)
        check_stable(sys.A)
        abscissa = sys.spectral_abscissa()
    with _stage("prior"):
        prior = build_prior(cfg, sys)
    with _stage("schedule"):
        s = cfg.schedule
        schedule = sample_schedule(s.get("kind", "equispaced"), s.get("h"), s.get("n"),
                                   s.get("seed", 0),
                                   _parse_times(s.get("times")))
    with _stage("noise"):
        sys = sys.replace(noise_cov=noise_cov_for(cfg, sys, schedule, prior))
    with _stage("gramians"):
        H = fisher_information(sys, schedule, cfg.fisher_mode)
        Q_m = noisy_observability_gramian(sys)
        rfd = rel_frob_diff(H, Q_m, schedule.h)
    with _stage("measurements"):
        measurements = []
        for j in range(cfg.n_replicates):
            x0 = draw_truth(prior, cfg.truth_seed + j)
            measurements.append(simulate_measurements(sys, schedule, x0, cfg.noise_seed + j))
    with _stage("posterior"):
        posts = [full_posterior(prior, sys, m, H=H) for m in measurements]
        adjoints = [adjoint_data(sys, schedule, m.values) for m in measurements]
    with _stage("pencils"):
        pencil = spantini_eigenpairs(H, prior)
        bt_q = bt_q_transform(sys, prior)
        transforms = {"BT-Q": bt_q}
        if "BT-H" in cfg.methods:
            use_H = H if schedule.n * sys.k > sys.d else None
            transforms["BT-H"] = bt_h_transform(sys, prior, schedule, H=use_H,
                                                mode=cfg.fisher_mode)
    with _stage("ranks"):
        ranks = parse_ranks(cfg.run.get("ranks", "default"), sys.d)
    ctx = {"sys": sys, "prior": prior, "posterior": posts[0], "means": [p.mean for p in posts],
           "measurements": measurements, "adjoints": adjoints, "pencil": pencil,
           "transforms": transforms, "fisher_mode": cfg.fisher_mode}
    jobs = [(r, m) for r in ranks for m in cfg.methods]
    with _stage("evaluate"):
        if cfg.workers > 1:
            with ThreadPoolExecutor(cfg.workers) as pool:
                scored = list(pool.map(lambda job: _score_rank(*job, ctx), jobs))
        else:
            scored = [_score_rank(r, m, ctx) for r, m in jobs]
    rows, unavailable = [], []
    for (r, m), res in zip(jobs, scored):
        if res is None:
            unavailable.append({"r": r, "method": m,
                                "usable_rank": transforms[m].usable_rank})
        else:
            rows.append({"r": r, "method": m, **res})
    tau = np.sqrt(pencil.tau_sq)
    delta = bt_q.s[:bt_q.usable_rank]
    manifest = {
        "config": cfg.as_dict(),
        "seeds": {"truth_seed": cfg.truth_seed, "noise_seed": cfg.noise_seed,
                  "schedule_seed": schedule.seed},
        "versions": {"btinfer": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "d": sys.d, "k": sys.k, "n": schedule.n, "h": schedule.h,
        "noise_cov": sys.noise_cov.tolist(),
        "rel_frob_diff": rfd,
        "spectral_abscissa": abscissa,
        "unavailable": unavailable,
    }
    result = ExperimentResult(rows, tau, delta, rfd, abscissa, unavailable, manifest)
    if write:
        with _stage("output"):
            out = cfg.output_dir(out_dir)
            out.mkdir(parents=True, exist_ok=True)
            result.paths = {"results": out / "results.csv", "spectra": out / "spectra.csv",
                            "manifest": out / "manifest.json", "plot": out / "plot_results.py"}
            write_results(result.paths["results"], rows)
            write_spectra(result.paths["spectra"], tau, delta)
            result.paths["manifest"].write_text(
                json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
            result.paths["plot"].write_text(PLOT_SCRIPT)
    return result


def _parse_times(text):
    if text is None:
        return None
    try:
        return np.array([float(v) for v in text.replace(";", ",").split(",") if v.strip()])
    except ValueError as exc:
        raise ConfigError(f"cannot parse times: {exc}") from exc
