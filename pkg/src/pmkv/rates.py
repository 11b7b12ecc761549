"""Closed-form rates and constants.

Period functions may be given as a scalar, a callable of t, a Tabulation, or a
1-D array of samples on the closed uniform grid over one period. Integrals use
the trapezoid rule on a dense grid (Simpson for the log-Sobolev constant).
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, simpson
from scipy.optimize import minimize

from .noise import NoisePolicy
from .psi import build_psi_eigen, build_psi_example31, power_psi  # noqa: F401  (re-exported)

DEFAULT_POINTS = 4097


def period_samples(f, t0, n=DEFAULT_POINTS):
    """Values of a period function on np.linspace(0, t0, n)."""
    t = np.linspace(0.0, t0, n)
    if f is None:
        return t, np.zeros(n)
    if callable(f):
        return t, np.broadcast_to(np.asarray(f(t), dtype=float), t.shape).astype(float)
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return t, np.full(n, float(arr))
    grid = np.linspace(0.0, t0, arr.size)
    return t, np.interp(t, grid, arr)


def period_integral(f, t0, n=DEFAULT_POINTS):
    t, y = period_samples(f, t0, n)
    return float(np.trapezoid(y, t))


def rate_w2(K1, K2, t0, n=DEFAULT_POINTS):
    """lambda = -int_0^t0 (K1 + K2): per-period W2^2 contraction factor exp(-lambda) when positive."""
    t, k1 = period_samples(K1, t0, n)
    _, k2 = period_samples(K2, t0, n)
    return float(-np.trapezoid(k1 + k2, t))


@dataclass
class GranularRate:
    conservative: float
    proof_implied: float
    note: str


def rate_granular(gamma, t0, n=DEFAULT_POINTS):
    """Both readings of the convex granular rate: int gamma as stated, and 2 int gamma from K1 + K2 = -2 gamma."""
    g = period_integral(gamma, t0, n)
    return GranularRate(g, 2.0 * g,
                        "stated rate is int gamma; the Wasserstein route with K1+K2=-2 gamma gives 2 int gamma")


def _kappa_ratio(k):
    # k / (1 - exp(-k)) with its limit 1 at k = 0
    if abs(k) < 1e-8:
        return 1.0 + k / 2.0
    return k / (-math.expm1(-k))


def entropy_constant_phi(lam, kappa1, kappa2, window):
    """phi = lam * (k1 / (1 - e^{-k1}) + (w k2^2 / 2) e^{2 w k1 + 2 k2}) for window w = t - s."""
    if not window > 0:
        raise ValueError(f"window must be positive, got {window}")
    return float(lam * (_kappa_ratio(kappa1) + window * kappa2 ** 2 / 2.0
                        * math.exp(2.0 * window * kappa1 + 2.0 * kappa2)))


def rate_wpsi(kappa, theta, psi, t0, n=DEFAULT_POINTS):
    """lambda = int_0^t0 (kappa_s - theta_s ||psi'||_inf) with ||psi'||_inf = c2(psi)."""
    t, k = period_samples(kappa, t0, n)
    _, th = period_samples(theta, t0, n)
    return float(np.trapezoid(k - th * psi.c2, t))


def rate_example31(alpha, interaction_norm, psi, t0, n=DEFAULT_POINTS):
    """The double-well example's displayed rate 2 int (alpha_t / c2 - ||grad grad W_t|| / c1)."""
    t, a = period_samples(alpha, t0, n)
    _, w = period_samples(interaction_norm, t0, n)
    return float(2.0 * np.trapezoid(a / psi.c2 - w / psi.c1, t))


# ---------------------------------------------------------------------------
# numerical inf / sup over pairs of points

@dataclass
class Extremum:
    value: float
    argument: tuple
    boundary_hit: bool
    evaluations: int = 0


def _radial_profile(V):
    return lambda r: np.asarray(V(np.asarray(r, float)[..., None]), dtype=float)


def kappa_l_beta(K0, K1, V, l, beta, box=10.0, dim=1, radial=True, grid=401, refine_iter=400):
    """inf over |x - y| >= l of (K1 V(x) + K1 V(y) - 2 K0) / (1/beta + V(x) + V(y)).

    For radial V the search reduces to radii (r1, r2) in [0, box]^2 with
    r1 + r2 >= l; in one dimension without radial symmetry it runs over
    (x, y) in [-box, box]^2. A minimiser on the edge of the box is flagged.
    """
    inv_b = 1.0 / beta

    if radial:
        v = _radial_profile(V)

        def f(u, w):
            s = v(u) + v(w)
            return (K1 * s - 2.0 * K0) / (inv_b + s)

        def feasible(u, w):
            return (u + w >= l) & (u >= 0) & (w >= 0) & (u <= box) & (w <= box)

        lo = 0.0
    elif dim == 1:

        def f(u, w):
            s = np.asarray(V(np.asarray(u)[..., None]), float) + np.asarray(V(np.asarray(w)[..., None]), float)
            return (K1 * s - 2.0 * K0) / (inv_b + s)

        def feasible(u, w):
            return (np.abs(u - w) >= l) & (np.abs(u) <= box) & (np.abs(w) <= box)

        lo = -box
    else:
        raise NotImplementedError("kappa_l_beta supports radial V or dimension one")

    axis = np.linspace(lo, box, int(grid))
    U, W = np.meshgrid(axis, axis, indexing="ij")
    F = np.where(feasible(U, W), f(U, W), np.inf)
    i = np.unravel_index(int(np.argmin(F)), F.shape)
    best = (float(F[i]), (float(U[i]), float(W[i])))

    def obj(z):
        u, w = z
        if not feasible(np.array(u), np.array(w)):
            return np.inf
        return float(f(np.array(u), np.array(w)))

    # put the start exactly on the constraint when it is active
    z0 = np.array(best[1])
    res = minimize(obj, z0, method="Nelder-Mead",
                   options={"maxiter": refine_iter, "xatol": 1e-12, "fatol": 1e-15})
    if np.isfinite(res.fun) and res.fun < best[0]:
        best = (float(res.fun), (float(res.x[0]), float(res.x[1])))
    if radial:
        # the constraint r1 + r2 >= l is usually active at the minimum: search along it too
        s = np.linspace(max(0.0, l - box), min(l, box), 2001)
        line = f(s, l - s)
        j = int(np.argmin(line))
        if line[j] < best[0]:
            best = (float(line[j]), (float(s[j]), float(l - s[j])))
    arg = best[1]
    hit = any(abs(abs(a) - box) <= 1e-9 * max(1.0, box) for a in arg)
    if hit:
        warnings.warn(f"kappa_l_beta minimiser {arg} lies on the search box edge {box}; enlarge the box")
    return Extremum(best[0], arg, hit, int(grid) ** 2 + res.nfev)


def alpha_l_beta(alpha_t, gradV, V, c_psi, l, beta, box=10.0, dim=1, sigma_hat=None, grid=401,
                 refine_iter=400, samples=20000, seed=0):
    """c_psi * sup over 0 < |x - y| < l of the gradient-difference and sigma-hat quotients.

    quotient = alpha_t |grad V(x) - grad V(y)| / (|x - y| (1/beta + V(x) + V(y)))
             + |(s(x) - s(y)) [(s^T grad V)(x) + (s^T grad V)(y)]| / (|x - y| (1/beta + V(x) + V(y)))
    with s = sigma_hat (zero when not given).
    """
    inv_b = 1.0 / beta

    def quotient(x, y):
        # x, y: (..., d)
        diff = np.linalg.norm(x - y, axis=-1)
        den = diff * (inv_b + np.asarray(V(x), float) + np.asarray(V(y), float))
        gx, gy = np.asarray(gradV(x), float), np.asarray(gradV(y), float)
        num = alpha_t * np.linalg.norm(gx - gy, axis=-1)
        if sigma_hat is not None:
            sx, sy = np.asarray(sigma_hat(x), float), np.asarray(sigma_hat(y), float)
            vx = np.einsum("...ji,...j->...i", sx, gx)
            vy = np.einsum("...ji,...j->...i", sy, gy)
            num = num + np.linalg.norm(np.einsum("...ij,...j->...i", sx - sy, vx + vy), axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = num / den
        return np.where((diff > 0) & (diff < l), q, -np.inf)

    if dim == 1:
        xs = np.linspace(-box, box, int(grid))
        hs = np.linspace(-l, l, int(grid) + 1)
        hs = hs[(hs != 0) & (np.abs(hs) < l)]
        hs = np.concatenate([hs, [-l * 1e-6, l * 1e-6]])
        X, H = np.meshgrid(xs, hs, indexing="ij")
        x = X[..., None]
        y = (X + H)[..., None]
        y = np.where(np.abs(y) <= box, y, np.nan)
        Q = np.nan_to_num(quotient(x, y), nan=-np.inf)
        i = np.unravel_index(int(np.argmax(Q)), Q.shape)
        start = np.array([X[i], H[i]])
        best = (float(Q[i]), start)
        to_pair = lambda z: (np.array([z[0]]), np.array([z[0] + z[1]]))
    else:
        noise = NoisePolicy(seed)
        u = noise.uniforms(np.arange(samples), 0, 2 * dim + 1)
        x = -box + 2 * box * u[:, :dim]
        dirs = noise.normals(np.arange(samples), 1, dim)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        h = l * u[:, -1:]
        y = x + h * dirs
        ok = np.all(np.abs(y) <= box, axis=1)
        Q = np.where(ok, quotient(x, y), -np.inf)
        i = int(np.argmax(Q))
        start = np.concatenate([x[i], y[i] - x[i]])
        best = (float(Q[i]), start)
        to_pair = lambda z: (z[:dim], z[:dim] + z[dim:])

    def obj(z):
        a, b = to_pair(z)
        if np.any(np.abs(a) > box) or np.any(np.abs(b) > box):
            return np.inf
        q = float(quotient(a, b))
        return -q if np.isfinite(q) else np.inf

    res = minimize(obj, best[1], method="Nelder-Mead",
                   options={"maxiter": refine_iter, "xatol": 1e-12, "fatol": 1e-15})
    if np.isfinite(res.fun) and -res.fun > best[0]:
        best = (float(-res.fun), res.x)
    a, b = to_pair(best[1])
    val = max(best[0], 0.0) * c_psi
    hit = val > 0 and bool(np.any(np.abs(np.concatenate([a, b])) >= box * (1 - 1e-6)))
    if hit:
        warnings.warn(f"alpha_l_beta: supremum found on the box boundary (box={box}); "
                      "the value depends on the truncation", RuntimeWarning, stacklevel=2)
    return Extremum(float(val), (a.tolist(), b.tolist()), hit)


# ---------------------------------------------------------------------------
# Lyapunov-weighted rate

@dataclass
class RateInputs:
    """Per-scenario constants; each period function is a scalar, callable of t, or sample array."""

    t0: float = 1.0
    K0: object = None
    K1: object = None
    K2: object = None
    kappa1: object = None
    kappa2: object = None
    lam: object = None
    theta: object = None
    gamma: object = None
    alpha: object = None
    u_l: object = None
    A: object = None
    beta: float = None
    l: float = None
    V: object = None
    gradV: object = None
    sigma_hat: object = None
    dim: int = 1
    radial: bool = True
    box: float = 10.0


@dataclass
class WpsivRate:
    rate: float
    times: np.ndarray
    kappa_branch: np.ndarray
    second_branch: np.ndarray
    lam: np.ndarray
    theta: np.ndarray
    alpha_lb: np.ndarray
    boundary_hits: list = field(default_factory=list)

    def to_dict(self):
        return {"rate": self.rate, "times": self.times.tolist(), "kappa_branch": self.kappa_branch.tolist(),
                "second_branch": self.second_branch.tolist(), "lambda_l_beta": self.lam.tolist(),
                "theta": self.theta.tolist(), "alpha_l_beta": self.alpha_lb.tolist(),
                "boundary_hits": list(self.boundary_hits)}


def value_at(f, t, t0):
    """Evaluate a period function at a single time."""
    if f is None:
        return 0.0
    if callable(f):
        return float(np.asarray(f(t)))
    arr = np.asarray(f, dtype=float)
    if arr.ndim == 0:
        return float(arr)
    return float(np.interp(math.fmod(t, t0), np.linspace(0.0, t0, arr.size), arr))


def rate_wpsiv(inputs, psi, t0=None, n=33):
    """lambda = int (min{kappa_{l,b}, u_l - 2 K0 b - alpha_{l,b}} - theta) over one period, both branches reported.

    u_l defaults to D1 alpha_t when psi carries the eigenvalue D1.
    """
    t0 = inputs.t0 if t0 is None else t0
    times = np.linspace(0.0, t0, int(n))
    _, K0 = period_samples(inputs.K0, t0, n)
    _, K1 = period_samples(inputs.K1, t0, n)
    _, th = period_samples(inputs.theta, t0, n)
    _, al = period_samples(inputs.alpha if inputs.alpha is not None else 1.0, t0, n)
    if inputs.u_l is not None:
        _, ul = period_samples(inputs.u_l, t0, n)
    elif "D1" in psi.params:
        ul = psi.params["D1"] * al
    else:
        raise ValueError("u_l is required when psi does not carry an eigenvalue D1")
    beta, l = inputs.beta, inputs.l
    kap = np.empty(n)
    alb = np.empty(n)
    hits = []
    cache = {}
    for j in range(n):
        key = (K0[j], K1[j])
        if key not in cache:
            cache[key] = kappa_l_beta(K0[j], K1[j], inputs.V, l, beta, inputs.box, inputs.dim, inputs.radial)
        ek = cache[key]
        ea = alpha_l_beta(al[j], inputs.gradV, inputs.V, psi.c_psi, l, beta, inputs.box, inputs.dim,
                          inputs.sigma_hat)
        kap[j] = ek.value
        alb[j] = ea.value
        if ek.boundary_hit:
            hits.append(("kappa", float(times[j])))
        if ea.boundary_hit:
            hits.append(("alpha", float(times[j])))
    second = ul - 2.0 * K0 * beta - alb
    lam = np.minimum(kap, second)
    rate = float(np.trapezoid(lam - th, times))
    return WpsivRate(rate, times, kap, second, lam, th, alb, hits)


# ---------------------------------------------------------------------------
# entropy constants

def ls_constant(gamma, A, s, r, t0, c_start=0.0, points_per_period=2049):
    """c(s, r) = c A_r^2 lam^2 e^{-2 int_s^r gamma} + 4 A_r^2 int_s^r e^{-2 int_tau^r gamma} dtau (lam taken as 1).

    ``c_start`` is the starting log-Sobolev constant c; the first term is absent when it is zero.
    """
    periods = max(1, int(math.ceil((r - s) / t0)))
    tau = np.linspace(s, r, periods * (points_per_period - 1) + 1)
    _, g = period_samples(gamma, t0, points_per_period)
    gv = np.interp(np.mod(tau, t0), np.linspace(0.0, t0, points_per_period), g)
    # G(tau) = int_s^tau gamma
    G = cumulative_simpson(gv, x=tau, initial=0.0)
    Ar = value_at(A, r, t0)
    tail = np.exp(-2.0 * (G[-1] - G))
    first = c_start * Ar ** 2 * math.exp(-2.0 * G[-1])
    return float(first + 4.0 * Ar ** 2 * simpson(tail, x=tau))


@dataclass
class EntropyConstant:
    ls_constant: float
    phi: float
    drift_factor: float
    value: float
    window: float


def entropy_decay_constant(inputs, window, t0=None, periods=60):
    """Prefactor pieces of the entropy bound: the periodic log-Sobolev constant c(0, n t0) for large n,
    phi over the final window, and exp(int_0^{t0 - window} (K1 + K2)). ``value`` is their product."""
    t0 = inputs.t0 if t0 is None else t0
    if not 0 < window < t0:
        raise ValueError("window must lie in (0, t0)")
    cls = ls_constant(inputs.gamma, inputs.A, 0.0, periods * t0, t0)
    t, lam = period_samples(inputs.lam, t0)
    _, k1 = period_samples(inputs.kappa1, t0)
    _, k2 = period_samples(inputs.kappa2, t0)
    w = t >= t0 - window
    phi = entropy_constant_phi(float(np.max(lam[w])), float(np.max(k1[w])), float(np.max(k2[w])), window)
    _, K1 = period_samples(inputs.K1, t0)
    _, K2 = period_samples(inputs.K2, t0)
    m = t <= t0 - window
    drift = math.exp(float(np.trapezoid((K1 + K2)[m], t[m])))
    return EntropyConstant(cls, phi, drift, cls * phi * drift, window)


def rate_inputs_from_scenario(scn):
    """Collect the declared constants of a scenario into RateInputs."""
    c = scn.coeffs.constants
    get = lambda k: c.get(k)
    scalar = lambda k: float(np.asarray(c[k](0.0))) if k in c else None
    return RateInputs(t0=scn.period, K0=get("K0"), K1=get("K1"), K2=get("K2"), kappa1=get("kappa1"),
                      kappa2=get("kappa2"), lam=get("lambda"), theta=get("theta"), gamma=get("gamma"),
                      alpha=get("alpha"), A=get("A"), beta=scalar("beta"), l=scalar("l"),
                      V=scn.extras.get("V"), gradV=scn.extras.get("gradV"),
                      sigma_hat=scn.extras.get("sigma_hat"), dim=scn.dim,
                      radial=bool(scn.extras.get("radial", True)))
