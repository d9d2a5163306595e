"""Command-line interface: ``btinfer <command> [options]``.

Failures print one line ``error: <category>: <message>`` to stderr and exit
with status 1; usage errors exit with status 2.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ._version import __version__
from .bench import (
    export_reduction,
    export_system,
    gen_heat,
    load_exported,
    parse_noise_spec,
    read_matrix_market,
    write_matrix_market,
)
from .exceptions import BTInferError, ConfigError
from .experiment import ExperimentConfig, build_system, draw_truth, run_experiment
from .inference import (
    SCHEDULE_KINDS,
    MeasurementSet,
    fisher_information,
    full_posterior,
    sample_schedule,
    simulate_measurements,
)
from .lti import noisy_observability_gramian, reachability_gramian
from .optimal import olr_mean, olru_covariance, olru_mean, spantini_eigenpairs
from .prior import CompatiblePrior, make_compatible, spin_up_prior
from .reduction import bt_h_reduce, bt_posterior, bt_q_reduce


def _global_flags(suppress):
    p = argparse.ArgumentParser(add_help=False)
    default = argparse.SUPPRESS if suppress else None
    p.add_argument("--config", default=default, help="experiment/system config file")
    p.add_argument("--out", default=default, help="output directory")
    p.add_argument("--seed", type=int, default=default, help="master seed (u64)")
    p.add_argument("--threads", type=int, default=default, help="BLAS thread limit")
    return p


def _system_args(p):
    p.add_argument("--system", help="directory with A.mtx, C.mtx [, B.mtx, noise_cov.mtx]")
    p.add_argument("--noise", help="noise covariance: .mtx path or diagonal list")


def _schedule_args(p, required=False):
    p.add_argument("--kind", choices=SCHEDULE_KINDS[1:], default="equispaced")
    p.add_argument("--h", type=float, required=required, help="sampling interval")
    p.add_argument("--n", type=int, required=required, help="number of measurements")


def _prior_args(p):
    p.add_argument("--prior", help="prior covariance .mtx (checked for compatibility); "
                                   "spin-up prior when omitted")


def build_parser():
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="btinfer", parents=[_global_flags(suppress=False)],
        description="Balanced truncation for linear Gaussian initial-condition inference.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("gen-heat", parents=[common], help="write a heat-equation benchmark")
    p.add_argument("--d", type=int, default=200)
    p.add_argument("--output-fraction", type=float, default=2.0 / 3.0)
    p.add_argument("--target-abscissa", type=float, default=-0.1)

    p = sub.add_parser("gramian", parents=[common], help="compute P_inf, Q_m and H")
    _system_args(p)
    _schedule_args(p)
    p.add_argument("--which", default="P,Q,H", help="comma list of P, Q, H")
    p.add_argument("--fisher-mode", default="auto", choices=("auto", "direct", "doubling"))

    p = sub.add_parser("make-prior", parents=[common], help="spin-up or compatible prior")
    _system_args(p)
    p.add_argument("--gamma0", help="covariance to modify; spin-up prior when omitted")
    p.add_argument("--ridge", type=float, default=0.0)

    p = sub.add_parser("reduce", parents=[common], help="export a balanced reduction")
    _system_args(p)
    _schedule_args(p)
    _prior_args(p)
    p.add_argument("--method", choices=("BT-Q", "BT-H"), default="BT-Q")
    p.add_argument("--r", type=int, required=True)

    p = sub.add_parser("simulate", parents=[common], help="write a synthetic measurement CSV")
    _system_args(p)
    _schedule_args(p, required=True)
    _prior_args(p)

    p = sub.add_parser("infer", parents=[common], help="posterior from a measurement CSV")
    _system_args(p)
    _prior_args(p)
    p.add_argument("--measurements", required=True, help="CSV with header time,y_1,...")
    p.add_argument("--method", choices=("full", "BT-Q", "BT-H", "OLR", "OLRU"), default="full")
    p.add_argument("--r", type=int)

    sub.add_parser("experiment", parents=[common], help="run a configured experiment")
    return parser


def _out(args, default):
    out = Path(getattr(args, "out", None) or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_system(args):
    if getattr(args, "system", None):
        return load_exported(args.system, args.noise)
    if getattr(args, "config", None):
        sys_ = build_system(ExperimentConfig.from_file(args.config))
        if args.noise:
            sys_ = sys_.replace(noise_cov=parse_noise_spec(args.noise, sys_.k))
        return sys_
    raise ConfigError("need --system <dir> or --config <file>")


def _load_prior(args, sys_):
    if getattr(args, "prior", None):
        return CompatiblePrior.from_covariance(sys_.A, read_matrix_market(args.prior))
    B = sys_.B if sys_.B is not None else np.eye(sys_.d)
    return spin_up_prior(sys_.A, B)


def _schedule(args):
    if args.h is None or args.n is None:
        raise ConfigError("this command needs --h and --n")
    return sample_schedule(args.kind, args.h, args.n, args.seed or 0)


def _write_manifest(out, info):
    (out / "manifest.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def cmd_gen_heat(args):
    sys_ = gen_heat(args.d, args.output_fraction, args.target_abscissa)
    out = _out(args, "heat")
    export_system(sys_, out, {"generator": "heat", "output_fraction": args.output_fraction,
                              "target_abscissa": args.target_abscissa},
                  include_noise=False)
    print(f"wrote {out}")


def cmd_gramian(args):
    sys_ = _load_system(args)
    which = {w.strip().upper() for w in args.which.split(",") if w.strip()}
    out = _out(args, "gramians")
    info = {"d": sys_.d}
    if "P" in which:
        B = sys_.B if sys_.B is not None else np.eye(sys_.d)
        write_matrix_market(out / "P.mtx", reachability_gramian(sys_.replace(B=B)))
    if "Q" in which:
        write_matrix_market(out / "Q_m.mtx", noisy_observability_gramian(sys_))
    if "H" in which:
        schedule = _schedule(args)
        write_matrix_market(out / "H.mtx", fisher_information(sys_, schedule, args.fisher_mode))
        info.update(schedule.metadata())
    _write_manifest(out, info)
    print(f"wrote {out}")


def cmd_make_prior(args):
    sys_ = _load_system(args)
    out = _out(args, "prior")
    if args.gamma0:
        prior, Delta, _ = make_compatible(sys_.A, read_matrix_market(args.gamma0))
        write_matrix_market(out / "Delta.mtx", Delta)
    else:
        B = sys_.B if sys_.B is not None else np.eye(sys_.d)
        prior = spin_up_prior(sys_.A, B, args.ridge)
    write_matrix_market(out / "prior.mtx", prior.cov)
    write_matrix_market(out / "prior_factor.mtx", prior.factor.factor)
    _write_manifest(out, {"provenance": prior.provenance, "ridge": prior.ridge,
                          "residual_abscissa": prior.residual_abscissa})
    print(f"wrote {out}")


def cmd_reduce(args):
    sys_ = _load_system(args)
    prior = _load_prior(args, sys_)
    if args.method == "BT-Q":
        red = bt_q_reduce(sys_, prior, args.r)
        extra = {}
    else:
        schedule = _schedule(args)
        red = bt_h_reduce(sys_, prior, schedule, args.r)
        extra = schedule.metadata()
    out = _out(args, "reduction")
    export_reduction(red, out, extra)
    print(f"wrote {out}")


def cmd_simulate(args):
    sys_ = _load_system(args)
    prior = _load_prior(args, sys_)
    seed = args.seed or 0
    schedule = sample_schedule(args.kind, args.h, args.n, seed)
    meas = simulate_measurements(sys_, schedule, draw_truth(prior, seed), seed + 1)
    out = _out(args, "measurements")
    meas.write_csv(out / "measurements.csv")
    print(f"wrote {out / 'measurements.csv'}")


def cmd_infer(args):
    sys_ = _load_system(args)
    prior = _load_prior(args, sys_)
    meas = MeasurementSet.read_csv(args.measurements)
    if meas.values.shape[1] != sys_.k:
        raise ConfigError(f"measurements have {meas.values.shape[1]} channels, system {sys_.k}")
    if args.method != "full" and args.r is None:
        raise ConfigError(f"method {args.method} needs --r")
    schedule = meas.schedule
    if args.method == "full":
        post = full_posterior(prior, sys_, meas)
        mean, cov = post.mean, post.cov
    elif args.method in ("BT-Q", "BT-H"):
        red = (bt_q_reduce(sys_, prior, args.r) if args.method == "BT-Q"
               else bt_h_reduce(sys_, prior, schedule, args.r))
        post = bt_posterior(red, prior, meas)
        mean, cov = post.mean, post.cov
    else:
        pencil = spantini_eigenpairs(fisher_information(sys_, schedule), prior)
        cov = olru_covariance(prior, pencil, args.r)
        fn = olr_mean if args.method == "OLR" else olru_mean
        mean = fn(pencil, sys_, schedule, meas, args.r)
    out = _out(args, "posterior")
    write_matrix_market(out / "mean.mtx", mean[:, None])
    write_matrix_market(out / "cov.mtx", cov)
    _write_manifest(out, {"method": args.method, "r": args.r, "n": int(schedule.times.size)})
    print(f"wrote {out}")


def cmd_experiment(args):
    if not getattr(args, "config", None):
        raise ConfigError("experiment needs --config <file>")
    cfg = ExperimentConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.with_seed(args.seed)
    result = run_experiment(cfg, out_dir=getattr(args, "out", None))
    print(f"wrote {result.paths['results'].parent} (rel_frob_diff={result.rel_frob_diff:.6g})")


COMMANDS = {"gen-heat": cmd_gen_heat, "gramian": cmd_gramian, "make-prior": cmd_make_prior,
            "reduce": cmd_reduce, "simulate": cmd_simulate, "infer": cmd_infer,
            "experiment": cmd_experiment}


def cli_main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        print("error: invalid-input: --threads must be positive", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(limits=threads):
            COMMANDS[args.command](args)
    except BTInferError as exc:
        msg = " ".join(str(exc).split())
        print(f"error: {exc.category}: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
