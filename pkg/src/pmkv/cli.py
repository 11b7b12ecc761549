"""Command line interface: simulate, metrics, rates, psi, experiment, catalog."""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import snapshots as snapio
from .coefficients import get_scenario, scenario_names
from .config import OUTPUT_ENV, ExperimentConfig, dumps, fill_defaults, load_config
from .engine import SimConfig, simulate
from .errors import PmkvError
from .experiment import build_psi, emit_report, run_experiment, scenario_rates
from .psi import build_psi_eigen, build_psi_example31
from .transport import (ot_exact, psi_cost, ratio_quasidistance, relative_entropy_knn,
                        weighted_cost)


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    return str(o)


def _print_json(obj):
    print(json.dumps(obj, indent=2, sort_keys=True, default=_json_default))


def _out_dir(args, fallback="pmkv-out"):
    return Path(args.out or os.environ.get(OUTPUT_ENV) or fallback)


def _scenario(args):
    params = {}
    if getattr(args, "dim", None) is not None:
        params["dim"] = args.dim
    return get_scenario(args.scenario, **params)


def cmd_catalog(args):
    rows = []
    for name in scenario_names():
        s = get_scenario(name)
        rows.append({"name": name, "dim": s.dim, "period": s.period, "domain": s.domain.to_dict(),
                     "oracle": s.oracle, "description": s.description, "declared": sorted(s.coeffs.constants)})
    _print_json(rows)


def cmd_simulate(args):
    scn = _scenario(args)
    steps = int(round(scn.period / args.dt)) if args.dt else 1000
    cfg = SimConfig(dt=scn.period / steps, steps_per_period=steps, periods=args.periods, n=args.n,
                    subsample=args.subsample, seed=args.seed, workers=args.workers)
    snaps = simulate(scn, cfg)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    if args.format == "binary":
        path = snapio.write_binary(out / "snapshots.bin", snaps)
    else:
        path = snapio.write_csv(out / "snapshots.csv", snaps)
    print(path)


def _cost_for(args, scn):
    cost = {"psi": args.psi} if args.psi else {}
    return build_psi(cost, scn)


def cmd_metrics(args):
    a_snaps = snapio.read_csv(args.a)
    b_snaps = snapio.read_csv(args.b)
    scn = get_scenario(args.scenario) if args.scenario else None
    rows = []
    for p, (a, b) in enumerate(zip(a_snaps, b_snaps)):
        if args.metric in ("w1", "w2"):
            v = ot_exact(a, b, args.metric).distance
        elif args.metric == "entropy":
            v = relative_entropy_knn(a, b, args.k)
        else:
            if scn is None:
                raise PmkvError(f"metric {args.metric} needs --scenario to supply psi, V and beta")
            psi = _cost_for(args, scn)
            V = scn.extras.get("V")
            beta = args.beta if args.beta is not None else (
                float(scn.coeffs.constants["beta"](0.0)) if "beta" in scn.coeffs.constants else None)
            if args.metric == "wpsi":
                v = ot_exact(a, b, psi_cost(psi)).distance
            elif args.metric == "wpsiv":
                v = ot_exact(a, b, weighted_cost(psi, V, beta)).distance
            else:
                v = ratio_quasidistance(a, b, psi, V, beta or 0.0)
        rows.append((p, v))
    w = csv.writer(sys.stdout)
    w.writerow(["period", args.metric])
    for p, v in rows:
        w.writerow([p, repr(float(v))])


def cmd_rates(args):
    _print_json(scenario_rates(_scenario(args)))


def cmd_psi(args):
    if args.kind == "example31":
        psi = build_psi_example31(args.theta1, args.theta2, args.R)
    else:
        psi = build_psi_eigen(args.D0, args.l)
    _print_json(psi.summary())
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "psi", "dpsi", "d2psi"])
            for row in zip(psi.grid, psi.values, psi.d1, psi.d2):
                w.writerow([repr(float(v)) for v in row])


def cmd_experiment(args):
    cfg = load_config(args.config) if args.config else fill_defaults(ExperimentConfig())
    for key in ("seed", "workers", "n", "dt"):
        v = getattr(args, key)
        if v is not None:
            setattr(cfg, key, v)
    if args.out:
        cfg.output_dir = args.out
    cfg = fill_defaults(cfg)
    report, snaps = run_experiment(cfg)
    out = cfg.resolved_output_dir()
    emit_report(report, out, snaps, cfg.snapshot_format)
    fit = report.fit
    print(f"scenario={report.scenario} metric={report.metric} predicted={report.predicted} "
          f"fitted={fit.get('rate')} r2={fit.get('r2')} verdict={report.verdict}")
    print(f"wrote {out}")


def build_parser():
    p = argparse.ArgumentParser(prog="pmkv", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("catalog", help="list built-in scenarios")
    c.set_defaults(func=cmd_catalog)

    s = sub.add_parser("simulate", help="simulate a scenario and write per-period snapshots")
    s.add_argument("scenario")
    s.add_argument("--dim", type=int)
    s.add_argument("--periods", type=int, default=5)
    s.add_argument("--n", type=int, default=4096)
    s.add_argument("--dt", type=float)
    s.add_argument("--subsample", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--format", choices=("csv", "binary"), default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("metrics", help="distances between two snapshot CSV files, period by period")
    m.add_argument("a")
    m.add_argument("b")
    m.add_argument("--metric", choices=("w1", "w2", "wpsi", "wpsiv", "ratio", "entropy"), default="w2")
    m.add_argument("--scenario")
    m.add_argument("--psi", choices=("example31", "eigen", "power"))
    m.add_argument("--beta", type=float)
    m.add_argument("--k", type=int, default=5)
    m.set_defaults(func=cmd_metrics)

    r = sub.add_parser("rates", help="print the closed-form constants of a scenario as JSON")
    r.add_argument("scenario")
    r.add_argument("--dim", type=int)
    r.set_defaults(func=cmd_rates)

    q = sub.add_parser("psi", help="build a cost function and print its constants")
    q.add_argument("kind", choices=("example31", "eigen"))
    q.add_argument("--theta1", type=float, default=1.0)
    q.add_argument("--theta2", type=float, default=1.0)
    q.add_argument("--R", type=float, default=1.0)
    q.add_argument("--D0", type=float, default=0.0)
    q.add_argument("--l", type=float, default=1.0)
    q.add_argument("--out", help="write the table (r, psi, psi', psi'') as CSV")
    q.set_defaults(func=cmd_psi)

    e = sub.add_parser("experiment", help="run a configured ergodicity experiment")
    e.add_argument("config", nargs="?")
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--n", type=int)
    e.add_argument("--dt", type=float)
    e.add_argument("--out")
    e.set_defaults(func=cmd_experiment)

    d = sub.add_parser("config", help="print the effective configuration with defaults filled in")
    d.add_argument("config", nargs="?")
    d.set_defaults(func=lambda a: sys.stdout.write(
        dumps(load_config(a.config) if a.config else fill_defaults(ExperimentConfig()))))
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except PmkvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
