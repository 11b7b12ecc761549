"""Predict, simulate, measure, fit, and judge.

An experiment approximates the periodic invariant measure by iterating the
one-period map, evolves a test law alongside a copy of that ensemble, measures
the selected distance at every period boundary (equal phase), fits
log d_n = c - rate * n after the burn-in, and compares the fitted rate with the
closed-form prediction.
"""

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .coefficients import get_scenario, scenario_from_dict
from .engine import (Ensemble, SimConfig, coupled_simulate, optimal_relabel, periodic_fixed_point,
                     sample_initial, simulate)
from .errors import ConfigError, FitError, NonConvergenceError
from .geometry import domain_from_dict
from .noise import NoisePolicy
from .psi import build_psi_eigen, build_psi_example31, power_psi
from .rates import (entropy_decay_constant, period_integral, rate_example31, rate_granular,
                    rate_inputs_from_scenario, rate_w2, rate_wpsi, rate_wpsiv)
from . import snapshots as snapio
from .transport import (MAX_EXACT, ot_exact, psi_cost, ratio_quasidistance, relative_entropy_knn,
                        weighted_cost)

STREAM_FIXED = 1
STREAM_TEST = 2
STREAM_REFERENCE = 3


def resolve_scenario(cfg):
    if isinstance(cfg.scenario, dict):
        return scenario_from_dict(cfg.scenario)
    return get_scenario(cfg.scenario, **(cfg.scenario_params or {}))


def resolve_domain(cfg, scn):
    return domain_from_dict(cfg.domain) if cfg.domain is not None else scn.domain


def sim_config(cfg, scn, periods=None):
    steps = int(round(scn.period / cfg.dt))
    return SimConfig(dt=scn.period / steps, steps_per_period=steps,
                     periods=cfg.periods if periods is None else periods, n=cfg.n,
                     subsample=cfg.subsample, domain=resolve_domain(cfg, scn), seed=cfg.seed,
                     workers=cfg.workers)


# ---------------------------------------------------------------------------
# fitting

@dataclass
class FitResult:
    rate: float
    intercept: float
    r2: float
    points: int


def fit_decay(d, burn_in=0, floor=0.0):
    """Least squares of log d_n on n over n >= burn_in with d_n > 0; rate = -slope.

    With ``floor`` > 0 the fit stops at the first point at or below it, so a plateau
    at the sampling floor does not flatten the slope.
    """
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise FitError("distances must be nonnegative")
    n = np.arange(len(d))
    use = (n >= burn_in) & (d > 0)
    if floor > 0:
        below = np.nonzero((n >= burn_in) & (d <= floor))[0]
        if below.size:
            use &= n < below[0]
    if use.sum() < 3:
        raise FitError(f"need at least 3 positive points after burn-in {burn_in}"
                       + (f" above the floor {floor:.4g}" if floor > 0 else "") + f", got {int(use.sum())}")
    x, y = n[use].astype(float), np.log(d[use])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return FitResult(float(-slope), float(intercept), float(r2), int(use.sum()))


# ---------------------------------------------------------------------------
# cost functions and predictions

def _const(scn, name, default=None):
    fn = scn.coeffs.constants.get(name)
    return default if fn is None else float(np.asarray(fn(0.0)))


def build_psi(cost, scn):
    kind = (cost or {}).get("psi")
    if kind is None:
        kind = "eigen" if "D0" in scn.coeffs.constants else "example31"
    if kind == "example31":
        return build_psi_example31(float(cost.get("theta1", _const(scn, "theta1", 1.0))),
                                   float(cost.get("theta2", _const(scn, "theta2", 1.0))),
                                   float(cost.get("R", _const(scn, "R", 1.0))))
    if kind == "eigen":
        D0 = cost.get("D0", _const(scn, "D0"))
        l = cost.get("l", _const(scn, "l"))
        if D0 is None or l is None:
            raise ConfigError(["cost: eigen psi needs D0 and l (from the cost block or the scenario)"])
        return build_psi_eigen(float(D0), float(l))
    if kind == "power":
        return power_psi()
    raise ConfigError([f"cost: unknown psi {kind!r}"])


def scenario_rates(scn, psi=None, window=None, wpsiv_points=33):
    """Every closed-form rate the scenario's declared constants allow, with notes on what is missing."""
    c = scn.coeffs.constants
    t0 = scn.period
    out = {"scenario": scn.name, "period": t0, "declared": sorted(c), "notes": []}
    if "K1" in c and "K2" in c:
        out["w2"] = {"rate": rate_w2(c["K1"], c["K2"], t0), "units": "W2^2 per period"}
    if "gamma" in c:
        g = rate_granular(c["gamma"], t0)
        out["granular"] = {"int_gamma": period_integral(c["gamma"], t0), "conservative": g.conservative,
                           "proof_implied": g.proof_implied, "flag": g.note}
    if all(k in c for k in ("lambda", "kappa1", "kappa2", "gamma", "A", "K1", "K2")):
        inp = rate_inputs_from_scenario(scn)
        e = entropy_decay_constant(inp, window or t0 / 2.0, t0)
        out["entropy"] = {"ls_constant": e.ls_constant, "phi": e.phi, "drift_factor": e.drift_factor,
                          "prefactor": e.value, "window": e.window}
    if all(k in c for k in ("theta1", "theta2", "R", "alpha", "interaction_norm")):
        p = psi if psi is not None and psi.tag == "example31" else build_psi(
            {"psi": "example31"}, scn)
        kappa = lambda t: 2.0 * c["alpha"](t) / p.c2
        theta = lambda t: 2.0 * c["interaction_norm"](t) / p.c1
        out["wpsi"] = {"rate": rate_wpsi(kappa, theta, p, t0), "example_display": rate_example31(
            c["alpha"], c["interaction_norm"], p, t0), "c1": p.c1, "c2": p.c2, "c_psi": p.c_psi,
            "monotone_constant": p.monotone_constant,
            "flag": "the general formula and the example display agree only when c2(psi) = 1"}
    if all(k in c for k in ("K0", "K1", "D0", "l", "beta")) and scn.extras.get("V") is not None:
        p = psi if psi is not None and psi.tag == "eigen" else build_psi({"psi": "eigen"}, scn)
        inp = rate_inputs_from_scenario(scn)
        r = rate_wpsiv(inp, p, t0, n=wpsiv_points)
        out["wpsiv"] = {"rate": r.rate, "D1": p.params["D1"], "l": p.params["l"], "D0": p.params["D0"],
                        "c_psi": p.c_psi, "min_kappa_branch": float(r.kappa_branch.min()),
                        "min_second_branch": float(r.second_branch.min()),
                        "max_alpha_lb": float(np.max(r.alpha_lb)),
                        "boundary_hits": {q: sum(1 for h in r.boundary_hits if h[0] == q)
                                          for q in ("kappa", "alpha")},
                        "box": inp.box}
        if "theta" not in c:
            out["wpsiv"]["flag"] = "theta_t is not quantified for this scenario; the rate uses theta = 0"
    return out


def _predicted(metric, rates):
    if metric in ("w2", "entropy"):
        return rates.get("w2", {}).get("rate")
    if metric == "w1":
        r = rates.get("w2", {}).get("rate")
        return None if r is None else r / 2.0
    if metric == "wpsi":
        return rates.get("wpsi", {}).get("rate")
    if metric == "wpsiv":
        return rates.get("wpsiv", {}).get("rate")
    return None


# ---------------------------------------------------------------------------
# report

@dataclass
class ErgodicityReport:
    scenario: str
    metric: str
    predicted: float
    rates: dict
    distances: list
    fit_quantity: str
    fit: dict
    verdict: str
    tolerance: dict
    fixed_point: dict
    environment: dict
    config: dict
    notes: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def _distance_fn(cfg, scn):
    metric = cfg.metric
    if metric in ("w2", "w1"):
        return lambda a, b: ot_exact(a, b, metric, solver=cfg.solver, n_proj=cfg.n_proj,
                                     noise=NoisePolicy(cfg.seed)).distance
    if metric == "entropy":
        return lambda a, b: relative_entropy_knn(a, b, cfg.k)
    psi = build_psi(cfg.cost, scn)
    if metric == "wpsi":
        return lambda a, b: ot_exact(a, b, psi_cost(psi), solver="assignment").distance
    V = scn.extras.get("V")
    beta = cfg.cost.get("beta", _const(scn, "beta"))
    if metric == "wpsiv":
        if V is None or beta is None:
            raise ConfigError([f"metric: wpsiv needs a Lyapunov function and beta; scenario {scn.name!r} "
                               "declares none"])
        return lambda a, b: ot_exact(a, b, weighted_cost(psi, V, beta), solver="assignment").distance
    if metric == "ratio":
        return lambda a, b: ratio_quasidistance(a, b, psi, V, beta or 0.0)
    raise ConfigError([f"metric: unknown metric {metric!r}"])


def _entropy_verdict(d, burn_in):
    steps = [d[i] <= d[i - 1] for i in range(max(burn_in, 0) + 1, len(d))]
    down = int(sum(steps))
    return down, len(steps)


def run_experiment(cfg):
    scn = resolve_scenario(cfg)
    scfg = sim_config(cfg, scn)
    rates = scenario_rates(scn)
    predicted = _predicted(cfg.metric, rates)
    tolerance = {"rate_fraction": cfg.rate_fraction, "r2_min": cfg.r2_min, "burn_in": cfg.burn_in,
                 "degenerate_tol": cfg.degenerate_tol, "eps_fix": cfg.eps_fix, "m_consec": cfg.m_consec,
                 "floor_factor": cfg.floor_factor}
    env = {"seed": cfg.seed, "n": cfg.n, "dt": scfg.dt, "steps_per_period": scfg.steps_per_period,
           "periods": cfg.periods, "version": __version__}
    base = dict(scenario=scn.name, metric=cfg.metric, predicted=predicted, rates=rates,
                tolerance=tolerance, environment=env, config=cfg.to_dict())
    try:
        fp = periodic_fixed_point(scn, scfg, cfg.eps_fix, cfg.m_consec, cfg.max_fixed_periods,
                                  noise=NoisePolicy(cfg.seed, STREAM_FIXED))
        inv, fixed = fp.ensemble, {"converged": True, "periods": fp.periods, "trace": fp.trace}
    except NonConvergenceError as exc:
        fixed = {"converged": False, "trace": exc.trace, "message": str(exc)}
        # without predicted contraction there may be no invariant law; compare against the last iterate
        if predicted is None or predicted > 0 or exc.last is None:
            return ErgodicityReport(distances=[], fit_quantity="", fit={}, verdict="inconclusive",
                                    fixed_point=fixed, **base), None
        inv = exc.last
    dom = resolve_domain(cfg, scn)
    if cfg.test_init.get("kind") == "invariant":
        test = inv.copy()
    else:
        t = sample_initial(cfg.test_init, cfg.n, scn.dim, dom, NoisePolicy(cfg.seed, STREAM_TEST))
        test = Ensemble(t.positions, inv.t, None, inv.step_index)
    notes = [] if fixed["converged"] else ["fixed point not reached; reference is the last iterate"]
    coupling = cfg.coupling
    if cfg.test_init.get("kind") == "invariant" and coupling != "synchronous":
        # identical laws: share the noise so the two chains coincide
        coupling = "synchronous"
        notes.append("test law is the invariant ensemble; synchronous coupling used")
    if coupling == "synchronous":
        if cfg.n <= MAX_EXACT and cfg.test_init.get("kind") != "invariant":
            test = optimal_relabel(inv, test)
        elif cfg.test_init.get("kind") != "invariant":
            notes.append("synchronous coupling without optimal relabelling")
        pairs = coupled_simulate(test, inv, scn, scfg, NoisePolicy(cfg.seed, STREAM_TEST))
        test_snaps = [p[0] for p in pairs]
        ref_snaps = [p[1] for p in pairs]
    else:
        test_snaps = simulate(scn, scfg, test, NoisePolicy(cfg.seed, STREAM_TEST))
        ref_snaps = simulate(scn, scfg, inv, NoisePolicy(cfg.seed, STREAM_REFERENCE))
    for a, b in zip(test_snaps, ref_snaps):
        if a.step_index % scfg.steps_per_period != b.step_index % scfg.steps_per_period:
            raise RuntimeError("snapshots compared at different phases")
    dist = _distance_fn(cfg, scn)
    d = [float(dist(a, b)) for a, b in zip(test_snaps, ref_snaps)]

    # independent noise leaves a sampling floor under the distances; synchronous coupling does not
    floor = 0.0
    if coupling == "independent" and cfg.floor_factor > 0 and cfg.metric != "entropy":
        floor = cfg.floor_factor * float(dist(inv.positions[0::2], inv.positions[1::2]))
        fixed["sampling_floor"] = floor
    if cfg.metric == "w2":
        quantity, fit_vals, fit_floor = "w2^2", np.square(d), floor ** 2
    else:
        quantity, fit_vals, fit_floor = cfg.metric, np.asarray(d), floor
    fit = {}
    if cfg.metric == "entropy":
        down, total = _entropy_verdict(d, cfg.burn_in)
        fit = {"nonincreasing_steps": down, "compared_steps": total}
        verdict = "pass-trend" if total and down >= math.ceil(0.8 * total) else "fail-trend"
    elif all(abs(v) <= cfg.degenerate_tol for v in d):
        verdict = "pass-degenerate"
    else:
        try:
            fr = fit_decay(fit_vals, cfg.burn_in, fit_floor)
            fit = asdict(fr)
        except FitError as exc:
            fit = {"error": str(exc)}
            fr = None
        if cfg.metric == "ratio" or predicted is None:
            verdict = "informational"
        elif predicted <= 0:
            verdict = "no-contraction-predicted"
        elif fr is None:
            verdict = "inconclusive"
        else:
            ok = fr.rate >= cfg.rate_fraction * predicted and fr.r2 >= cfg.r2_min
            verdict = "pass" if ok else "fail"
    report = ErgodicityReport(distances=d, fit_quantity=quantity, fit=fit, verdict=verdict,
                              fixed_point=fixed, notes=notes, **base)
    return report, (test_snaps, ref_snaps)


def emit_report(report, out_dir, snapshots=None, snapshot_format="csv"):
    """Write report.json, distances.csv, config.json and snapshots/ under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "config.json").write_text(json.dumps(report.config, indent=2, sort_keys=True) + "\n")
    with (out / "distances.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "distance"])
        for n, v in enumerate(report.distances):
            w.writerow([n, repr(float(v))])
    written = [out / "report.json", out / "config.json", out / "distances.csv"]
    if snapshots is not None and snapshot_format != "none":
        sd = out / "snapshots"
        sd.mkdir(exist_ok=True)
        for name, snaps in zip(("test", "invariant"), snapshots):
            if snapshot_format == "binary":
                written.append(snapio.write_binary(sd / f"{name}.bin", snaps))
            else:
                written.append(snapio.write_csv(sd / f"{name}.csv", snaps))
    return written
