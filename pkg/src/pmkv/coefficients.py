"""Time-periodic drift/diffusion pairs, the empirical-measure view, and the scenario catalog.

Drift evaluators take ``(t, X, view)`` with ``X`` of shape (n, d) and return (n, d);
diffusion evaluators take ``(t, X)`` and return a scalar multiple of the identity,
a constant (d, m) matrix, or a per-particle (n, d, m) array. Evaluators are always
called with ``t`` already reduced to one period.

Declared constants (K0, K1, K2, kappa1, kappa2, theta, gamma, alpha, ...) are metadata:
nothing here differentiates user code.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ScenarioError
from .geometry import Ball, Box, WholeSpace, domain_from_dict

TWO_PI = 2.0 * math.pi


class Tabulation:
    """One period of samples on a uniform grid including both endpoints; linear interpolation."""

    def __init__(self, values, period):
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or v.size < 2:
            raise ScenarioError("a tabulation needs at least two samples")
        if not np.all(np.isfinite(v)):
            raise ScenarioError("tabulation contains non-finite values")
        self.values = v
        self.period = float(period)
        self.grid = np.linspace(0.0, self.period, v.size)

    def __call__(self, t):
        return np.interp(np.mod(t, self.period), self.grid, self.values)

    def to_list(self):
        return self.values.tolist()


def as_periodic(value, period):
    """Normalise a declared constant: scalar, list (tabulation) or callable of t."""
    if value is None:
        return None
    if callable(value):
        return value
    if np.ndim(value) == 0:
        c = float(value)
        return lambda t, c=c: np.full(np.shape(t), c) if np.ndim(t) else c
    return Tabulation(value, period)


def sample_period(fn, period, n=1025):
    """Values of a periodic function on the closed grid [0, period] with ``n`` points."""
    t = np.linspace(0.0, period, n)
    return t, np.broadcast_to(np.asarray(fn(t), dtype=float), t.shape).copy()


class MeasureView:
    """Read-only access to a frozen particle ensemble for mean-field terms.

    ``sample_index`` restricts all averages to a uniform subsample (the large-N
    accuracy/performance knob); by default every particle is used.
    """

    _BLOCK = 256

    def __init__(self, positions, sample_index=None):
        pos = np.array(positions, dtype=float, copy=True)
        if pos.ndim == 1:
            pos = pos[:, None]
        pos.setflags(write=False)
        self.positions = pos
        self._sample = pos if sample_index is None else pos[np.asarray(sample_index)]
        self._sample.setflags(write=False)
        self._cache = {}

    @property
    def n(self):
        return len(self.positions)

    @property
    def dim(self):
        return self.positions.shape[1]

    @property
    def sample(self):
        return self._sample

    def mean(self, f=None, key=None):
        """Mean of a point function over the (sub)sample; ``f=None`` gives the mean position."""
        if key is not None and key in self._cache:
            return self._cache[key]
        vals = self._sample if f is None else np.asarray(f(self._sample), dtype=float)
        out = vals.mean(axis=0)
        if key is not None:
            self._cache[key] = out
        return out

    def mean_position(self):
        return self.mean(None, key="__mean_position__")

    def interaction(self, x, kernel):
        """Row-wise averages (1/S) sum_j kernel(x_i, Y_j) over the (sub)sample Y.

        ``kernel(x[:, None, :], Y[None, :, :])`` must return shape (rows, S, k).
        The reduction runs over a contiguous last axis so each row's value does
        not depend on how the rows are blocked.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        y = self._sample[None, :, :]
        out = []
        for start in range(0, len(x), self._BLOCK):
            block = x[start:start + self._BLOCK, None, :]
            k = np.asarray(kernel(block, y), dtype=float)
            k = np.ascontiguousarray(np.moveaxis(k, 1, -1))
            out.append(k.sum(axis=-1) / y.shape[1])
        if not out:
            return np.zeros((0, x.shape[1]))
        return np.concatenate(out, axis=0)


@dataclass
class PeriodicCoefficients:
    period: float
    dim: int
    drift: object
    diffusion: object
    noise_dim: int = None
    constants: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.period > 0:
            raise ScenarioError(f"period must be positive, got {self.period}")
        if self.noise_dim is None:
            self.noise_dim = self.dim
        self.constants = {k: as_periodic(v, self.period) for k, v in self.constants.items()
                          if v is not None}

    def phase(self, t):
        return math.fmod(float(t), self.period)

    def constant(self, name, t):
        fn = self.constants.get(name)
        if fn is None:
            raise KeyError(f"constant {name!r} is not declared")
        return fn(np.mod(t, self.period))

    def has(self, *names):
        return all(n in self.constants for n in names)


def eval_drift(coeffs, t, x, view):
    """Drift at (t, x) against the frozen measure view; ``x`` is a point or an (n, d) batch."""
    if t < 0:
        raise ScenarioError(f"time must be nonnegative, got {t}")
    xa = np.asarray(x, dtype=float)
    single = xa.ndim == 1
    xb = xa[None, :] if single else xa
    if xb.shape[1] != coeffs.dim:
        raise ScenarioError(f"point has dimension {xb.shape[1]}, coefficients expect {coeffs.dim}")
    out = np.asarray(coeffs.drift(coeffs.phase(t), xb, view), dtype=float)
    if not np.all(np.isfinite(out)):
        bad = int(np.flatnonzero(~np.all(np.isfinite(out), axis=1))[0])
        raise ScenarioError(f"non-finite drift at t={t}, x={xb[bad].tolist()}")
    return out[0] if single else out


def sigma_matrix(coeffs, t, n=None, x=None):
    """Diffusion as an explicit array: (d, m) when x is None or constant, else (n, d, m)."""
    s = coeffs.diffusion(coeffs.phase(t), x)
    s = np.asarray(s, dtype=float)
    if s.ndim == 0:
        return s * np.eye(coeffs.dim, coeffs.noise_dim)
    return s


def eval_sigma(coeffs, t, x):
    """Diffusion matrix (d x m) at a single point."""
    if t < 0:
        raise ScenarioError(f"time must be nonnegative, got {t}")
    xa = np.asarray(x, dtype=float)
    s = np.asarray(coeffs.diffusion(coeffs.phase(t), xa[None, :]), dtype=float)
    if s.ndim == 0:
        s = s * np.eye(coeffs.dim, coeffs.noise_dim)
    elif s.ndim == 3:
        s = s[0]
    if s.shape != (coeffs.dim, coeffs.noise_dim):
        raise ScenarioError(f"diffusion has shape {s.shape}, expected {(coeffs.dim, coeffs.noise_dim)}")
    if not np.all(np.isfinite(s)):
        raise ScenarioError(f"non-finite diffusion at t={t}, x={xa.tolist()}")
    return s


@dataclass
class Scenario:
    name: str
    coeffs: PeriodicCoefficients
    domain: object = field(default_factory=WholeSpace)
    initial: dict = field(default_factory=lambda: {"kind": "point"})
    oracle: str = "none"
    description: str = ""
    params: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.coeffs.dim

    @property
    def period(self):
        return self.coeffs.period


# ---------------------------------------------------------------------------
# built-in scenarios

def _modulation(amplitude, period, mean=1.0):
    def a(t):
        return mean + amplitude * np.sin(TWO_PI * np.asarray(t) / period)
    return a


def ou_periodic(dim=1, amplitude=0.5, period=1.0, domain=None, name="ou-periodic"):
    """dX = -(1 + A sin(2 pi t / t0)) X dt + sqrt(2) dW."""
    a = _modulation(amplitude, period)

    def drift(t, x, view):
        return -a(t) * x

    def diffusion(t, x):
        return math.sqrt(2.0)

    consts = {
        "K1": lambda t: -2.0 * a(t),
        "K2": 0.0,
        "gamma": a,
        "kappa1": 0.0,
        "kappa2": 0.0,
        "lambda": 0.5,
        "A": math.sqrt(2.0),
        "alpha": 2.0,
        "confinement": a,
    }
    coeffs = PeriodicCoefficients(period, dim, drift, diffusion, dim, consts)
    dom = domain if domain is not None else WholeSpace()
    return Scenario(name, coeffs, dom, {"kind": "point", "x": [0.0] * dim}, "gaussian-moment-ode",
                    "periodic Ornstein-Uhlenbeck, no interaction",
                    {"dim": dim, "amplitude": amplitude, "period": period})


def granular_periodic(dim=2, eps=0.1, amplitude=0.5, period=1.0, domain=None,
                      name="granular-periodic"):
    """Granular media drift -grad(V_t + W_t * mu) with V_t = a_t|x|^2/2, W_t = eps|x-y|^2/2, sigma = sqrt(2) I.

    Hess(V_t + W_t(., z)) = (a_t + eps) I, so gamma_t = a_t meets the convexity
    hypothesis with equality and the mixed-derivative norm is eps.
    """
    a = _modulation(amplitude, period)

    def drift(t, x, view):
        m = view.mean_position()
        return -a(t) * x - eps * (x - m)

    def diffusion(t, x):
        return math.sqrt(2.0)

    consts = {
        "gamma": a,
        "interaction_norm": float(eps),
        "hess_lower": lambda t: a(t) + eps,
        "K1": lambda t: -2.0 * a(t) - eps,
        "K2": float(eps),
        "kappa1": lambda t: -2.0 * (a(t) + eps),
        "kappa2": 2.0 * eps,
        "lambda": 0.5,
        "A": math.sqrt(2.0),
        "alpha": 2.0,
        "confinement": a,
    }
    coeffs = PeriodicCoefficients(period, dim, drift, diffusion, dim, consts)
    dom = domain if domain is not None else WholeSpace()
    return Scenario(name, coeffs, dom, {"kind": "point", "x": [0.0] * dim}, "gaussian-moment-ode",
                    "quadratic granular media equation with periodic confinement",
                    {"dim": dim, "eps": eps, "amplitude": amplitude, "period": period})


def double_well_slope(x, theta1, theta2, R):
    """u'(x) for the 1-D potential with u'' = -theta1 on |x| <= R/2 and +theta2 outside."""
    x = np.asarray(x, dtype=float)
    ax = np.abs(x)
    inner = -theta1 * ax
    outer = -theta1 * R / 2.0 + theta2 * (ax - R / 2.0)
    return np.sign(x) * np.where(ax <= R / 2.0, inner, outer)


def example31(theta1=1.0, theta2=1.0, R=1.0, interaction=0.003, amplitude=0.5, period=1.0,
              name="example31-double-well"):
    """Partially dissipative 1-D model: V_t = alpha_t u, W_t = c alpha_t |x-y|^2/2, sigma = sqrt(alpha_t).

    u is concave on |x| <= R/2 and convex outside, so the Hessian bound holds with
    (theta1, theta2, R) and ||grad1 grad2 W_t|| = c alpha_t.
    """
    alpha = _modulation(amplitude, period)

    def drift(t, x, view):
        m = view.mean_position()
        return -alpha(t) * double_well_slope(x, theta1, theta2, R) - interaction * alpha(t) * (x - m)

    def diffusion(t, x):
        return np.sqrt(alpha(t))

    consts = {
        "alpha": alpha,
        "theta1": theta1,
        "theta2": theta2,
        "R": R,
        "interaction_norm": lambda t: interaction * alpha(t),
        "A": lambda t: np.sqrt(alpha(t)),
    }
    coeffs = PeriodicCoefficients(period, 1, drift, diffusion, 1, consts)
    return Scenario(name, coeffs, WholeSpace(), {"kind": "point", "x": [0.0]}, "none",
                    "double-well granular model (partially dissipative)",
                    {"theta1": theta1, "theta2": theta2, "R": R, "interaction": interaction,
                     "amplitude": amplitude, "period": period})


def _b0_factor(r, p):
    # b0(x) = -x h(|x|): h = r^(p-1) for r >= 1, C^1 quadratic continuation inside
    r = np.asarray(r, dtype=float)
    inner = 1.0 + (p - 1.0) * (r ** 2 - 1.0) / 2.0
    with np.errstate(divide="ignore", invalid="ignore"):
        outer = np.where(r > 0, r, 1.0) ** (p - 1.0)
    return np.where(r >= 1.0, outer, inner)


def b0_gradient_norm(p, r_max=50.0):
    """sup |grad b0| for b0(x) = -x h(|x|): the larger of |h| and |h + r h'| over the radius."""
    r = np.linspace(0.0, r_max, 200001)
    h = _b0_factor(r, p)
    with np.errstate(divide="ignore"):
        dh = (p - 1.0) * np.where(r >= 1.0, np.where(r > 0, r, 1.0) ** (p - 2.0), r)
    return float(np.max(np.maximum(np.abs(h), np.abs(h + r * dh))))


def _lyap_radial(r, p, smooth):
    # s(r) with V = exp(s); returns s, s', s''
    if smooth:
        q = 1.0 + r * r
        s = q ** (p / 2.0)
        s1 = p * r * q ** (p / 2.0 - 1.0)
        s2 = p * q ** (p / 2.0 - 1.0) + p * (p - 2.0) * r * r * q ** (p / 2.0 - 2.0)
        return s, s1, s2
    return r ** p, p * r ** (p - 1.0), p * (p - 1.0) * r ** (p - 2.0)


def lyapunov_exp(p, smooth=True):
    """V(x) = exp((1 + |x|^2)^(p/2)) (or exp(|x|^p) when not smooth) and its gradient, over (..., d).

    The smooth form has the same growth but no gradient jump at the origin.
    """

    def V(x):
        r = np.linalg.norm(np.asarray(x, dtype=float), axis=-1)
        return np.exp(_lyap_radial(r, p, smooth)[0]) if smooth else np.exp(r ** p)

    def grad(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        if smooth:
            q = 1.0 + r * r
            coef = p * q ** (p / 2.0 - 1.0) * np.exp(q ** (p / 2.0))
        else:
            with np.errstate(divide="ignore", invalid="ignore"):
                coef = np.where(r > 0, p * r ** (p - 2.0) * np.exp(r ** p), 0.0)
        return coef[..., None] * x

    return V, grad


def example41_lyapunov_constants(p=1.0, eps=0.1, theta1=1.0, dim=1, smooth=True, r_min=1e-3, r_max=60.0):
    """theta0 with L V <= alpha_t (theta0 - theta1 V), from a radial sup on a grid.

    The interaction term is bounded by (eps/2)|grad V|. For the non-smooth V the
    kink at the origin is skipped via ``r_min``.
    """
    lo = 0.0 if smooth else r_min
    # keep exp(s) finite; g is dominated by the drift term long before that radius
    r_max = min(r_max, math.sqrt(600.0 ** (2.0 / p) - 1.0) if smooth else 600.0 ** (1.0 / p))
    r = np.concatenate([np.linspace(lo, 1.0, 4001), np.linspace(1.0, r_max, 20001)[1:]])
    s, s1, s2 = _lyap_radial(r, p, smooth)
    V = np.exp(s)
    V1 = s1 * V
    V2 = (s2 + s1 * s1) * V
    with np.errstate(divide="ignore", invalid="ignore"):
        # V'/r at the origin equals V''(0) for the smooth V
        over_r = np.where(r > 0, V1 / np.where(r > 0, r, 1.0), V2)
    lap = V2 + (dim - 1) * over_r
    drift_dot = -r * _b0_factor(r, p) * V1
    g = 0.5 * lap + drift_dot + 0.5 * eps * V1 + theta1 * V
    return float(np.max(g))


def example41(p=1.0, eps=0.1, amplitude=0.5, period=1.0, dim=1, beta=0.05, l=None, smooth=True,
              name="example41-nondissipative"):
    """Fully non-dissipative model b_t = alpha_t b0(x) + mu(grad1 W_t(x, .)) / (1 + mu(V)), sigma = sqrt(alpha_t) I.

    W_t(x, y) = (eps alpha_t / 2) sqrt(1 + |x - y|^2) so that
    ||grad1 grad2 W_t|| + ||grad1 W_t|| <= eps alpha_t and ||grad1 grad1 W_t|| <= (eps/2) alpha_t.
    """
    alpha = _modulation(amplitude, period)
    V, gradV = lyapunov_exp(p, smooth)

    def drift(t, x, view):
        r = np.linalg.norm(x, axis=1)
        base = -x * _b0_factor(r, p)[:, None]
        if eps == 0.0:
            return alpha(t) * base
        scale = eps * alpha(t) / 2.0

        def kernel(xi, yj):
            diff = xi - yj
            return scale * diff / np.sqrt(1.0 + np.sum(diff * diff, axis=-1, keepdims=True))

        inter = view.interaction(x, kernel)
        muV = view.mean(V, key="V")
        return alpha(t) * base + inter / (1.0 + muV)

    def diffusion(t, x):
        return np.sqrt(alpha(t))

    theta1 = 1.0
    theta0 = example41_lyapunov_constants(p, eps, theta1, dim, smooth)
    if l is None:
        # kappa_{l,beta} > 0 needs 2 theta1 V > 2 theta0 on |x - y| >= l; V(l/2) = theta0 is the threshold
        l = 2.0 * math.log(theta0) ** (1.0 / p) + 1.0
        if smooth:
            l = 2.0 * math.sqrt(max(math.log(theta0) ** (2.0 / p) - 1.0, 0.0)) + 1.0
    grad_b0 = b0_gradient_norm(p)
    D0 = grad_b0 + eps / 2.0
    consts = {
        "alpha": alpha,
        "K0": lambda t: alpha(t) * theta0,
        "K1": lambda t: alpha(t) * theta1,
        "theta0": theta0,
        "theta1": theta1,
        "D0": D0,
        "l": l,
        "beta": beta,
        "p": p,
        "A": lambda t: np.sqrt(alpha(t)),
    }
    coeffs = PeriodicCoefficients(period, dim, drift, diffusion, dim, consts)
    return Scenario(name, coeffs, WholeSpace(), {"kind": "point", "x": [0.0] * dim}, "none",
                    "non-dissipative model with Lyapunov function exp((1+|x|^2)^(p/2))" if smooth
                    else "non-dissipative model with Lyapunov function exp(|x|^p)",
                    {"p": p, "eps": eps, "amplitude": amplitude, "period": period, "dim": dim,
                     "beta": beta, "l": l, "smooth": smooth},
                    {"V": V, "gradV": gradV, "sigma_hat": None, "radial": True})


def brownian_periodic(dim=1, amplitude=0.5, period=1.0, name="brownian-periodic"):
    """Zero drift with periodic noise intensity; K1 + K2 = 0 so no contraction is predicted."""
    s = _modulation(amplitude, period)

    def drift(t, x, view):
        return np.zeros_like(x)

    def diffusion(t, x):
        return np.sqrt(2.0 * s(t))

    consts = {"K1": 0.0, "K2": 0.0, "A": lambda t: np.sqrt(2.0 * s(t))}
    coeffs = PeriodicCoefficients(period, dim, drift, diffusion, dim, consts)
    return Scenario(name, coeffs, WholeSpace(), {"kind": "point", "x": [0.0] * dim}, "none",
                    "periodic Brownian motion (no predicted contraction)",
                    {"dim": dim, "amplitude": amplitude, "period": period})


def _ball(dim):
    return Ball(tuple([0.0] * dim), 1.0)


def _box(dim):
    return Box(tuple([-1.0] * dim), tuple([1.0] * dim))


_CATALOG = {
    "ou-periodic": lambda **kw: ou_periodic(**kw),
    "granular-periodic": lambda **kw: granular_periodic(**kw),
    "example31-double-well": lambda **kw: example31(**kw),
    "example41-nondissipative": lambda **kw: example41(**kw),
    "ou-periodic-ball": lambda dim=2, **kw: ou_periodic(dim=dim, domain=_ball(dim),
                                                        name="ou-periodic-ball", **kw),
    "ou-periodic-box": lambda dim=2, **kw: ou_periodic(dim=dim, domain=_box(dim),
                                                       name="ou-periodic-box", **kw),
    "granular-periodic-ball": lambda dim=2, **kw: granular_periodic(dim=dim, domain=_ball(dim),
                                                                    name="granular-periodic-ball", **kw),
    "granular-periodic-box": lambda dim=2, **kw: granular_periodic(dim=dim, domain=_box(dim),
                                                                   name="granular-periodic-box", **kw),
    "brownian-periodic": lambda **kw: brownian_periodic(**kw),
}


def scenario_names():
    return sorted(_CATALOG)


def get_scenario(name, **params):
    """Catalog lookup with optional keyword overrides (e.g. ``dim=2``, ``eps=0.0``)."""
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise ScenarioError(f"unknown scenario {name!r}; valid names: {', '.join(scenario_names())}") from None
    try:
        return factory(**params)
    except TypeError as exc:
        raise ScenarioError(f"bad parameters for scenario {name!r}: {exc}") from None


def builtin_scenarios():
    return [get_scenario(n) for n in scenario_names()]


# ---------------------------------------------------------------------------
# user scenarios from configuration

def _periodic_param(spec, period, what):
    if spec is None:
        return lambda t: 0.0 * np.asarray(t)
    if np.ndim(spec) == 0:
        c = float(spec)
        return lambda t: c + 0.0 * np.asarray(t)
    if isinstance(spec, (list, tuple)):
        return Tabulation(spec, period)
    raise ScenarioError(f"{what}: expected a number or a list of samples over one period")


def scenario_from_dict(spec):
    """Inline scenario of the quadratic mean-field family.

    drift  = -a(t) (x - center) - e(t) (x - mean(mu)),  sigma = s(t) I_d,
    with a, e, s each a constant or a one-period tabulation (uniform grid, both
    endpoints, linear interpolation). Declared constants are copied verbatim.
    """
    try:
        name = spec.get("name", "inline")
        period = float(spec.get("period", 1.0))
        dim = int(spec.get("dim", 1))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"inline scenario: {exc}") from None
    family = spec.get("family", "quadratic")
    if family != "quadratic":
        raise ScenarioError(f"inline scenario family {family!r} is not supported; use 'quadratic'")
    a = _periodic_param(spec.get("confinement", 1.0), period, "confinement")
    e = _periodic_param(spec.get("interaction", 0.0), period, "interaction")
    s = _periodic_param(spec.get("noise", math.sqrt(2.0)), period, "noise")
    center = np.asarray(spec.get("center", [0.0] * dim), dtype=float)

    def drift(t, x, view):
        out = -a(t) * (x - center)
        et = e(t)
        if np.any(et != 0):
            out = out - et * (x - view.mean_position())
        return out

    def diffusion(t, x):
        return s(t)

    consts = dict(spec.get("constants", {}))
    coeffs = PeriodicCoefficients(period, dim, drift, diffusion, dim, consts)
    dom = domain_from_dict(spec.get("domain"))
    initial = spec.get("initial", {"kind": "point", "x": [0.0] * dim})
    return Scenario(name, coeffs, dom, initial, spec.get("oracle", "none"), "inline scenario",
                    {"inline": True})
