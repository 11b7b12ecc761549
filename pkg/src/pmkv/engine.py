"""Projected Euler-Maruyama for the N-particle mean-field system.

One step is X_i <- Pi_D(X_i + b_t(X_i, mu_n) dt + sigma_t(X_i) sqrt(dt) xi_{i,k}) where
mu_n is the frozen pre-step empirical measure. Time is always k * dt for the
global step index k, so period boundaries are exact grid points.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .coefficients import MeasureView
from .errors import BlowUpError, NonConvergenceError, ScenarioError, SimConfigError
from .geometry import WholeSpace
from .noise import STREAM_INITIAL, STREAM_SUBSAMPLE, NoisePolicy


@dataclass
class Ensemble:
    positions: np.ndarray
    t: float = 0.0
    reflection: np.ndarray = None
    step_index: int = 0

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim == 1:
            pos = pos[:, None]
        if pos.shape[0] < 1:
            raise SimConfigError("an ensemble needs at least one particle")
        if not np.all(np.isfinite(pos)):
            raise BlowUpError("ensemble contains non-finite positions")
        self.positions = pos
        if self.reflection is None:
            self.reflection = np.zeros(len(pos))
        else:
            self.reflection = np.asarray(self.reflection, dtype=float)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def dim(self):
        return self.positions.shape[1]

    def copy(self):
        return Ensemble(self.positions.copy(), self.t, self.reflection.copy(), self.step_index)


@dataclass
class SimConfig:
    dt: float
    steps_per_period: int
    periods: int = 12
    n: int = 4096
    subsample: int = None
    domain: object = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise SimConfigError(f"dt must be positive, got {self.dt}")
        if int(self.steps_per_period) < 1:
            raise SimConfigError("steps_per_period must be at least 1")
        if int(self.periods) < 0:
            raise SimConfigError("periods must be nonnegative")
        if int(self.n) < 1:
            raise SimConfigError("n must be at least 1")
        if self.subsample is not None and int(self.subsample) < 1:
            raise SimConfigError("subsample must be a positive count")
        if int(self.workers) < 1:
            raise SimConfigError("workers must be at least 1")

    @classmethod
    def for_period(cls, period, steps_per_period, **kw):
        return cls(dt=period / steps_per_period, steps_per_period=int(steps_per_period), **kw)

    def check_period(self, period):
        if abs(self.dt * self.steps_per_period - period) > 8 * np.finfo(float).eps * period:
            raise SimConfigError(
                f"dt * steps_per_period = {self.dt * self.steps_per_period!r} does not equal the period {period!r}")

    def noise(self):
        return NoisePolicy(self.seed)


def _chunks(n, workers):
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _subsample_index(n, size, noise, k):
    if size is None or size >= n:
        return None
    keys = noise.with_stream(STREAM_SUBSAMPLE).uniforms(np.arange(n), k, 1)[:, 0]
    return np.sort(np.argsort(keys, kind="stable")[:size])


def _apply_sigma(sigma, xi, d):
    # explicit column sums keep per-row results independent of the batch size
    if sigma.ndim == 2:
        out = np.zeros((xi.shape[0], d))
        for j in range(sigma.shape[1]):
            out += sigma[None, :, j] * xi[:, j, None]
        return out
    out = np.zeros((xi.shape[0], d))
    for j in range(sigma.shape[2]):
        out += sigma[:, :, j] * xi[:, j, None]
    return out


class _Stepper:
    """Shared state for many steps: coefficients, domain, noise, and the worker pool."""

    def __init__(self, coeffs, domain, dt, noise, subsample=None, workers=1, name=""):
        self.coeffs = coeffs
        self.domain = domain if domain is not None else WholeSpace()
        self.dt = float(dt)
        self.sqdt = math.sqrt(self.dt)
        self.noise = noise
        self.subsample = subsample
        self.workers = int(workers)
        self.name = name
        self.pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def _chunk(self, pos, view, t, k, lo, hi):
        x = pos[lo:hi]
        c = self.coeffs
        b = np.asarray(c.drift(c.phase(t), x, view), dtype=float)
        # overflow is caught below as a blow-up error
        with np.errstate(over="ignore", invalid="ignore"):
            y = x + b * self.dt
            if self.noise is not None:
                sig = np.asarray(c.diffusion(c.phase(t), x), dtype=float)
                if sig.ndim == 0:
                    if sig != 0.0:
                        xi = self.noise.normals(np.arange(lo, hi), k, c.dim)
                        y = y + (sig * self.sqdt) * xi
                elif np.any(sig != 0.0):
                    xi = self.noise.normals(np.arange(lo, hi), k, c.noise_dim)
                    y = y + self.sqdt * _apply_sigma(sig, xi, c.dim)
        bad = ~np.all(np.isfinite(y), axis=1)
        if bad.any():
            i = lo + int(np.flatnonzero(bad)[0])
            raise BlowUpError(f"particle {i} became non-finite at step {k} (t={t!r}) in scenario {self.name!r}")
        proj, disp = self.domain.project(y)
        return proj, disp

    def step(self, ens):
        k = ens.step_index
        t = k * self.dt
        pos = ens.positions
        view = MeasureView(pos, _subsample_index(len(pos), self.subsample,
                                                 self.noise or NoisePolicy(), k))
        chunks = _chunks(len(pos), self.workers)
        if self.pool is None or len(chunks) == 1:
            parts = [self._chunk(pos, view, t, k, lo, hi) for lo, hi in chunks]
        else:
            futs = [self.pool.submit(self._chunk, pos, view, t, k, lo, hi) for lo, hi in chunks]
            parts = [f.result() for f in futs]
        new = np.concatenate([p[0] for p in parts], axis=0)
        disp = np.concatenate([p[1] for p in parts])
        return Ensemble(new, (k + 1) * self.dt, ens.reflection + disp, k + 1)


def step(ens, coeffs, dom, dt, noise, k=None, subsample=None, workers=1):
    """One projected Euler-Maruyama step; ``noise=None`` sets every increment to zero."""
    if k is not None and k != ens.step_index:
        ens = Ensemble(ens.positions, k * dt, ens.reflection, k)
    stepper = _Stepper(coeffs, dom, dt, noise, subsample, workers)
    try:
        return stepper.step(ens)
    finally:
        stepper.close()


def sample_initial(initial, n, dim, domain=None, noise=None, max_rounds=1000):
    """Draw an initial ensemble from a descriptor: point, gaussian, or uniform-in-domain."""
    domain = domain if domain is not None else WholeSpace()
    noise = noise or NoisePolicy()
    # distinct streams give distinct initial draws
    noise = noise.with_stream((STREAM_INITIAL + 0x100 * int(noise.stream)) & 0xFFFFFFFF)
    kind = initial.get("kind", "point")
    idx = np.arange(n)
    if kind == "point":
        x = np.asarray(initial.get("x", [0.0] * dim), dtype=float)
        if x.shape != (dim,):
            raise ScenarioError(f"initial point has shape {x.shape}, expected ({dim},)")
        if not domain.contains(x):
            raise ScenarioError(f"initial point {x.tolist()} lies outside the domain")
        return Ensemble(np.tile(x, (n, 1)))
    if kind == "gaussian":
        mean = np.asarray(initial.get("mean", [0.0] * dim), dtype=float)
        std = np.asarray(initial.get("std", 1.0), dtype=float)
        out = np.empty((n, dim))
        todo = idx
        for r in range(max_rounds):
            z = mean + std * noise.normals(todo, r, dim)
            out[todo] = z
            todo = todo[~np.asarray(domain.contains(z))]
            if len(todo) == 0:
                return Ensemble(out)
        raise ScenarioError("gaussian initial law puts too little mass inside the domain")
    if kind == "uniform":
        if "lower" in initial:
            lo, hi = np.asarray(initial["lower"], float), np.asarray(initial["upper"], float)
        elif hasattr(domain, "radius"):
            c = np.asarray(domain.center)
            lo, hi = c - domain.radius, c + domain.radius
        elif hasattr(domain, "lower"):
            lo, hi = np.asarray(domain.lower), np.asarray(domain.upper)
        else:
            raise ScenarioError("uniform initial law needs a bounded domain or explicit lower/upper bounds")
        out = np.empty((n, dim))
        todo = idx
        for r in range(max_rounds):
            z = lo + (hi - lo) * noise.uniforms(todo, r, dim)
            out[todo] = z
            todo = todo[~np.asarray(domain.contains(z))]
            if len(todo) == 0:
                return Ensemble(out)
        raise ScenarioError("rejection sampling for the uniform initial law did not finish")
    raise ScenarioError(f"unknown initial law kind {kind!r}; expected point, gaussian or uniform")


def _check(scn, cfg, ens):
    cfg.check_period(scn.period)
    if ens.dim != scn.dim:
        raise SimConfigError(f"ensemble dimension {ens.dim} does not match scenario dimension {scn.dim}")


def _domain(scn, cfg):
    return cfg.domain if cfg.domain is not None else scn.domain


def evolve(ens, scn, cfg, steps, noise=None):
    """Advance an ensemble by a number of steps and return the final ensemble."""
    _check(scn, cfg, ens)
    noise = cfg.noise() if noise is None else noise
    stepper = _Stepper(scn.coeffs, _domain(scn, cfg), cfg.dt, noise, cfg.subsample, cfg.workers, scn.name)
    try:
        for _ in range(int(steps)):
            ens = stepper.step(ens)
    finally:
        stepper.close()
    return ens


def simulate(scn, cfg, initial=None, noise=None):
    """Per-period snapshots for n = 0..periods (n = 0 is the initial ensemble)."""
    ens = initial if initial is not None else sample_initial(scn.initial, cfg.n, scn.dim, _domain(scn, cfg),
                                                            cfg.noise())
    _check(scn, cfg, ens)
    noise = cfg.noise() if noise is None else noise
    stepper = _Stepper(scn.coeffs, _domain(scn, cfg), cfg.dt, noise, cfg.subsample, cfg.workers, scn.name)
    snaps = [ens]
    try:
        for _ in range(int(cfg.periods)):
            for _ in range(cfg.steps_per_period):
                ens = stepper.step(ens)
            snaps.append(ens)
    finally:
        stepper.close()
    return snaps


def coupled_simulate(init_a, init_b, scn, cfg, noise=None):
    """Synchronous coupling: particle i of both chains receives the same increments."""
    if init_a.n != init_b.n or init_a.dim != init_b.dim:
        raise SimConfigError(f"coupled ensembles differ in shape: {init_a.positions.shape} vs {init_b.positions.shape}")
    if init_a.step_index != init_b.step_index:
        raise SimConfigError("coupled ensembles must start at the same step index")
    _check(scn, cfg, init_a)
    noise = cfg.noise() if noise is None else noise
    dom = _domain(scn, cfg)
    sa = _Stepper(scn.coeffs, dom, cfg.dt, noise, cfg.subsample, cfg.workers, scn.name)
    sb = _Stepper(scn.coeffs, dom, cfg.dt, noise, cfg.subsample, cfg.workers, scn.name)
    a, b = init_a, init_b
    pairs = [(a, b)]
    try:
        for _ in range(int(cfg.periods)):
            for _ in range(cfg.steps_per_period):
                a = sa.step(a)
                b = sb.step(b)
            pairs.append((a, b))
    finally:
        sa.close()
        sb.close()
    return pairs


def optimal_relabel(a, b):
    """Reorder the particles of ``b`` so that particle i is matched to particle i of ``a`` optimally in W2."""
    from .transport import ot_exact

    res = ot_exact(a, b, "w2")
    return Ensemble(b.positions[res.assignment], b.t, b.reflection[res.assignment], b.step_index)


class FixedPointResult(NamedTuple):
    ensemble: Ensemble
    periods: int
    trace: list


def periodic_fixed_point(scn, cfg, eps_fix, m_consec=1, max_periods=None, initial=None, noise=None,
                         distance=None):
    """Iterate the one-period map until successive snapshots are within ``eps_fix`` (W2) ``m_consec`` times.

    ``eps_fix="auto"`` uses the sampling floor instead of a fixed number: a period counts
    as settled when its distance is at most the distance between the even- and
    odd-indexed halves of the new snapshot.
    """
    auto = isinstance(eps_fix, str)
    if auto and eps_fix != "auto":
        raise SimConfigError(f"eps_fix must be a positive number or 'auto', got {eps_fix!r}")
    if not auto and not eps_fix > 0:
        raise SimConfigError("eps_fix must be positive")
    if int(m_consec) < 1:
        raise SimConfigError("m_consec must be at least 1")
    if distance is None:
        from .transport import w2_auto
        distance = w2_auto
    max_periods = int(max_periods if max_periods is not None else max(cfg.periods, 1) * 5)
    ens = initial if initial is not None else sample_initial(scn.initial, cfg.n, scn.dim, _domain(scn, cfg),
                                                            cfg.noise())
    _check(scn, cfg, ens)
    noise = cfg.noise() if noise is None else noise
    stepper = _Stepper(scn.coeffs, _domain(scn, cfg), cfg.dt, noise, cfg.subsample, cfg.workers, scn.name)
    trace = []
    run = 0
    try:
        for period in range(1, max_periods + 1):
            prev = ens
            for _ in range(cfg.steps_per_period):
                ens = stepper.step(ens)
            d = float(distance(prev, ens))
            trace.append(d)
            tol = float(distance(ens.positions[0::2], ens.positions[1::2])) if auto else eps_fix
            run = run + 1 if d < tol else 0
            if run >= m_consec:
                return FixedPointResult(ens, period, trace)
    finally:
        stepper.close()
    raise NonConvergenceError(
        f"no periodic fixed point within {max_periods} periods (last distance {trace[-1]:.4g}, tolerance {eps_fix})",
        trace, ens)


def with_overrides(cfg, **kw):
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
