"""Experiment configuration: a JSON document validated against a small schema.

Minimal config::

    {"scenario": "ou-periodic"}

Every key (with its default):

    scenario          name from the catalog, or an inline scenario object
    scenario_params   {}        keyword overrides for catalog scenarios (e.g. {"dim": 2})
    metric            "w2"      w2 | w1 | wpsi | wpsiv | entropy | ratio
    n                 4096      particles per ensemble
    dt                t0/1000   step size; t0/dt must be a whole number
    periods           12        periods of the test chain after the fixed point
    burn_in           2         leading periods excluded from the fit
    seed              0
    workers           1
    subsample         null      interaction subsample size
    domain            null      overrides the scenario domain ({"kind": "ball", ...})
    eps_fix           "auto"    fixed-point tolerance on successive W2; "auto" compares
                                against the W2 between the two halves of the snapshot
    m_consec          2         consecutive periods below eps_fix
    max_fixed_periods 60
    test_init         {"kind": "gaussian", "mean": [100, ...], "std": 0.5}
                      point | gaussian | uniform | invariant
    coupling          "independent"   or "synchronous"
    k                 5         neighbours for the entropy estimator
    cost              {}        {"psi": "example31" | "eigen" | "power", ...parameters, "beta", "l"}
    solver            "auto"    auto | assignment | sliced
    n_proj            256       directions for the sliced surrogate
    rate_fraction     0.75      pass if fitted rate >= rate_fraction * predicted
    r2_min            0.9
    floor_factor      2.0       with independent noise the fit stops once a distance reaches
                                floor_factor times the split-half distance of the invariant
                                ensemble; 0 disables
    degenerate_tol    1e-12     all distances at or below this give pass-degenerate
    output_dir        null      defaults to $PMKV_OUTPUT_DIR, then ./pmkv-out
    snapshot_format   "csv"     csv | binary | none
"""

import json
import os
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

METRICS = ("w2", "w1", "wpsi", "wpsiv", "entropy", "ratio")
COUPLINGS = ("independent", "synchronous")
SOLVERS = ("auto", "assignment", "sliced")
INIT_KINDS = ("point", "gaussian", "uniform", "invariant")
PSI_KINDS = ("example31", "eigen", "power")
FORMATS = ("csv", "binary", "none")
OUTPUT_ENV = "PMKV_OUTPUT_DIR"


@dataclass
class ExperimentConfig:
    scenario: object = "ou-periodic"
    scenario_params: dict = field(default_factory=dict)
    metric: str = "w2"
    n: int = 4096
    dt: float = None
    periods: int = 12
    burn_in: int = 2
    seed: int = 0
    workers: int = 1
    subsample: int = None
    domain: dict = None
    eps_fix: object = "auto"
    m_consec: int = 2
    max_fixed_periods: int = 60
    test_init: dict = None
    coupling: str = "independent"
    k: int = 5
    cost: dict = field(default_factory=dict)
    solver: str = "auto"
    n_proj: int = 256
    rate_fraction: float = 0.75
    r2_min: float = 0.9
    floor_factor: float = 2.0
    degenerate_tol: float = 1e-12
    output_dir: str = None
    snapshot_format: str = "csv"

    def to_dict(self):
        return asdict(self)

    def resolved_output_dir(self):
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or "pmkv-out")


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _line_of(text, key):
    if text is None:
        return None
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def validate(data, text=None):
    """Check a parsed config mapping; returns an ExperimentConfig or raises ConfigError listing every problem."""
    problems = []

    def bad(key, msg):
        line = _line_of(text, key)
        problems.append((f"line {line}: " if line else "") + f"{key}: {msg}")

    if not isinstance(data, dict):
        raise ConfigError(["top level: expected a JSON object"])
    for key in data:
        if key not in _FIELDS:
            bad(key, f"unknown key; valid keys: {', '.join(sorted(_FIELDS))}")

    def check(key, ok, msg):
        if key in data and data[key] is not None and not ok(data[key]):
            bad(key, msg)

    sc = data.get("scenario", "ou-periodic")
    if not isinstance(sc, (str, dict)):
        bad("scenario", "expected a catalog name or an inline scenario object")
    elif isinstance(sc, str):
        from .coefficients import scenario_names
        if sc not in scenario_names():
            bad("scenario", f"unknown scenario {sc!r}; valid names: {', '.join(scenario_names())}")
    check("scenario_params", lambda v: isinstance(v, dict), "expected an object")
    check("metric", lambda v: v in METRICS, f"unknown metric {data.get('metric')!r}; valid metrics: {', '.join(METRICS)}")
    for key in ("n", "periods", "workers", "m_consec", "max_fixed_periods", "k", "n_proj"):
        check(key, lambda v: _is_int(v) and v >= 1, "expected a positive integer")
    for key in ("burn_in", "seed"):
        check(key, lambda v: _is_int(v) and v >= 0, "expected a nonnegative integer")
    check("subsample", lambda v: _is_int(v) and v >= 1, "expected a positive integer or null")
    check("dt", lambda v: _is_num(v) and v > 0, "expected a positive number")
    check("eps_fix", lambda v: v == "auto" or (_is_num(v) and v > 0), 'expected a positive number or "auto"')
    check("rate_fraction", lambda v: _is_num(v) and 0 < v <= 1, "expected a number in (0, 1]")
    check("r2_min", lambda v: _is_num(v) and 0 <= v <= 1, "expected a number in [0, 1]")
    check("floor_factor", lambda v: _is_num(v) and v >= 0, "expected a nonnegative number")
    check("degenerate_tol", lambda v: _is_num(v) and v >= 0, "expected a nonnegative number")
    check("domain", lambda v: isinstance(v, dict) and v.get("kind") in ("whole", "ball", "box", "halfspaces"),
          "expected an object with kind whole | ball | box | halfspaces")
    check("test_init", lambda v: isinstance(v, dict) and v.get("kind") in INIT_KINDS,
          f"expected an object with kind {' | '.join(INIT_KINDS)}")
    check("coupling", lambda v: v in COUPLINGS, f"expected one of {', '.join(COUPLINGS)}")
    check("solver", lambda v: v in SOLVERS, f"expected one of {', '.join(SOLVERS)}")
    check("snapshot_format", lambda v: v in FORMATS, f"expected one of {', '.join(FORMATS)}")
    check("output_dir", lambda v: isinstance(v, str), "expected a path string")
    check("cost", lambda v: isinstance(v, dict) and v.get("psi", "example31") in PSI_KINDS,
          f"expected an object whose psi is one of {', '.join(PSI_KINDS)}")

    if _is_int(data.get("burn_in", 2)) and _is_int(data.get("periods", 12)):
        if data.get("periods", 12) - data.get("burn_in", 2) < 2:
            bad("burn_in", "at least three fitted periods are needed (periods - burn_in >= 2)")
    if problems:
        raise ConfigError(problems)
    return fill_defaults(ExperimentConfig(**{k: v for k, v in data.items()}))


def default_test_init(scn, domain):
    """Gaussian well away from the origin on the whole space; uniform on bounded domains."""
    if hasattr(domain, "radius") or hasattr(domain, "lower"):
        return {"kind": "uniform"}
    return {"kind": "gaussian", "mean": [100.0] * scn.dim, "std": 0.5}


def fill_defaults(cfg):
    """Resolve the scenario-dependent defaults (dt, test law) so the effective config is explicit."""
    from .experiment import resolve_domain, resolve_scenario
    try:
        scn = resolve_scenario(cfg)
    except Exception as exc:
        raise ConfigError([f"scenario: {exc}"]) from None
    if cfg.dt is None:
        cfg.dt = scn.period / 1000.0
    steps = scn.period / cfg.dt
    if abs(steps - round(steps)) > 1e-9 * steps:
        raise ConfigError([f"dt: the period {scn.period} is not a whole number of steps of {cfg.dt}"])
    if cfg.test_init is None:
        cfg.test_init = default_test_init(scn, resolve_domain(cfg, scn))
    return cfg


def loads(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"line {exc.lineno}: invalid JSON: {exc.msg}"]) from None
    return validate(data, text)


def load_config(path):
    return loads(Path(path).read_text(encoding="utf-8"))


def dumps(cfg):
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
