"""Command-line entry point: ``dsmc {smooth,pgibbs,bench,check-oracle}``."""

import argparse
import csv
import json
import sys

import numpy as np

from .errors import ConfigurationError, DsmcError
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment, run_theta_logistic_chain
from .models import ThetaLogisticPrior


def _add_common(p):
    p.add_argument("--config", help="JSON file with ExperimentConfig fields; flags override it")
    p.add_argument("--experiment", choices=EXPERIMENTS)
    p.add_argument("--T", type=int, nargs="+")
    p.add_argument("--N", type=int, nargs="+")
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", nargs="+", choices=("dsmc", "dsmc-rs", "dsmc-mh", "ffbs"))
    p.add_argument("--resampler", choices=("multinomial", "systematic", "mh-lazy", "rejection-lazy"))
    p.add_argument("--mh-steps", type=int, dest="mh_steps")
    p.add_argument("--seed", type=int)
    p.add_argument("--data-seed", type=int, dest="data_seed")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.add_argument("--no-timing", action="store_true", help="leave wall_time_ms empty for byte-stable output")


def _config(args):
    data = {}
    if args.config:
        with open(args.config) as fh:
            data.update(json.load(fh))
    for key in ("experiment", "T", "N", "replicates", "methods", "mh_steps", "seed", "data_seed", "workers", "out"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    if args.resampler is not None:
        # lazy choices select the matching method; dense ones configure "dsmc"
        if args.resampler == "rejection-lazy":
            data.setdefault("methods", ["dsmc-rs"])
        elif args.resampler == "mh-lazy":
            data.setdefault("methods", ["dsmc-mh"])
        else:
            data["resampler"] = args.resampler
    if args.no_timing:
        data["record_timing"] = False
    return ExperimentConfig.from_dict(data)


def cmd_smooth(args):
    config = _config(args)
    rows = run_experiment(config, stream=None if config.out else sys.stdout)
    failed = [r for r in rows if r.error]
    for r in failed:
        print(f"replicate {r.replicate} ({r.method}, T={r.T}, N={r.N}) failed: {r.error}", file=sys.stderr)
    return 1 if failed else 0


_PGIBBS_DEFAULTS = {"sweeps": 200, "N": 64, "seed": 0, "burn_in": 0, "thin": 1, "rw_scale": 0.05,
                    "prior": {}, "stars": False, "out": None}


def _pgibbs_settings(args):
    settings = dict(_PGIBBS_DEFAULTS)
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        unknown = set(data) - set(settings)
        if unknown:
            raise ConfigurationError(f"unknown pgibbs config fields {sorted(unknown)}")
        settings.update(data)
    for key in ("sweeps", "N", "seed", "burn_in", "thin", "out"):
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    settings["stars"] = settings["stars"] or args.stars
    if settings["sweeps"] < 1 or settings["N"] < 2 or settings["thin"] < 1 or settings["burn_in"] < 0:
        raise ConfigurationError("need sweeps >= 1, N >= 2, thin >= 1 and burn_in >= 0")
    return settings


def cmd_pgibbs(args):
    cfg = _pgibbs_settings(args)
    prior = ThetaLogisticPrior(**cfg["prior"])
    chain = run_theta_logistic_chain(cfg["sweeps"], cfg["N"], cfg["seed"], prior=prior, rw_scale=cfg["rw_scale"])
    flags = chain.stars[1:] != chain.stars[:-1]
    burn = min(cfg["burn_in"], cfg["sweeps"] - 1)
    rate = flags[burn:].mean(axis=0)
    names = ("tau0", "tau1", "tau2", "sigma_x", "sigma_y")
    n_times = chain.stars.shape[1]
    header = ("sweep",) + names + ("changed_fraction", "changed_flags", "wall_time_ms")
    if cfg["stars"]:
        header += tuple(f"x{t}" for t in range(n_times))
    out = open(cfg["out"], "w", newline="") if cfg["out"] else sys.stdout
    try:
        writer = csv.writer(out)
        writer.writerow(header)
        for k in range(burn, cfg["sweeps"], cfg["thin"]):
            row = [k + 1, *map(repr, chain.thetas[k].tolist()), repr(float(flags[k].mean())),
                   "".join("1" if f else "0" for f in flags[k]), repr(float(chain.wall_time_ms[k]))]
            if cfg["stars"]:
                row += [repr(float(v)) for v in chain.stars[k + 1]]
            writer.writerow(row)
    finally:
        if cfg["out"]:
            out.close()
    print(f"update rate: mean {rate.mean():.3f}, sd {rate.std():.3f}, "
          f"tau acceptance {chain.accept_rate:.3f}", file=sys.stderr)
    return 0


def cmd_bench(args):
    from .bench import bench_combine_kernel, bench_smoother

    rows = bench_combine_kernel(tuple(args.N or (256, 1024, 4096)))
    rows += bench_smoother(T=args.T or 31, N=max(args.N or (1024,)))
    for r in rows:
        extra = f" T={r['T']}" if "T" in r else ""
        print(f"{r['kernel']:<17} N={r['N']:<5}{extra} {r['backend']:<6} {r['seconds'] * 1e3:9.2f} ms")
    return 0


def cmd_check_oracle(args):
    from .gaussian import kalman_smoother
    from .models import lgssm_fk, simulate_scalar_lgssm
    from .rng import replicate_seed
    from .smoother import run_dsmc

    lg, _ = simulate_scalar_lgssm(args.T, args.data_seed)
    exact, _ = kalman_smoother(lg)
    model = lgssm_fk(lg, "smoother")
    means = np.array([run_dsmc(model, args.N, "multinomial", replicate_seed(args.seed, r))[0].trajectories[..., 0].mean(axis=1)
                      for r in range(args.replicates)])
    se = means.std(axis=0, ddof=1) / np.sqrt(args.replicates) if args.replicates > 1 else np.sqrt(exact.covs[:, 0, 0] / args.N)
    z = np.abs(means.mean(axis=0) - exact.means[:, 0]) / se
    print(f"max |z| over t = {z.max():.2f} (T={args.T}, N={args.N}, replicates={args.replicates})")
    return 0 if z.max() < 3.0 else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="dsmc", description="Parallel-in-time particle smoothing experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("smooth", help="run an experiment grid and write CSV rows")
    _add_common(p)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("pgibbs", help="theta-logistic particle Gibbs on the nutria data")
    p.add_argument("--config", help="JSON with sweeps, N, seed, burn_in, thin, rw_scale, prior, stars, out")
    p.add_argument("--sweeps", type=int)
    p.add_argument("--N", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)
    p.add_argument("--stars", action="store_true", help="append the star trajectory to every row")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pgibbs)

    p = sub.add_parser("bench", help="time numba and numpy kernels")
    p.add_argument("--N", type=int, nargs="+")
    p.add_argument("--T", type=int)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("check-oracle", help="compare smoothed means with the Kalman smoother")
    p.add_argument("--T", type=int, default=15)
    p.add_argument("--N", type=int, default=1024)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=1, dest="data_seed")
    p.set_defaults(func=cmd_check_oracle)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DsmcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
