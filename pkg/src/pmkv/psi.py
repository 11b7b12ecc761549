"""Radial cost functions psi: the double-well construction, the mixed eigenfunction, and powers.

Two constructions are provided for the double-well family:

    psi'(r) = exp(-G(r)) * int_r^inf t exp(G(t)) dt,   G(r) = int_0^r gamma,
    gamma(r) = theta1 * min(r, R) - theta2 * max(r - R, 0).

"closed" evaluates the inner integral in closed form (erfcx beyond R, elementary
inside); "quadrature" truncates and integrates it numerically. psi itself is the
integral of psi' by per-interval Gauss-Legendre.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad, solve_ivp
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq
from scipy.special import erfcx

from .errors import EigenproblemError, NonConvergenceError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


@dataclass
class TabulatedCostFunction:
    grid: np.ndarray
    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    tag: str
    params: dict = field(default_factory=dict)
    flatten: float = None
    exact: tuple = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.d1 = np.asarray(self.d1, dtype=float)
        self.d2 = np.asarray(self.d2, dtype=float)
        self._v = CubicHermiteSpline(self.grid, self.values, self.d1, extrapolate=False)
        self._d = CubicHermiteSpline(self.grid, self.d1, self.d2, extrapolate=False)

    @property
    def r_max(self):
        return self.grid[-1]

    def _eval(self, r, which):
        r = np.asarray(r, dtype=float)
        if self.exact is not None:
            rr = r if self.flatten is None else np.minimum(r, self.flatten)
            out = np.asarray(self.exact[which](rr), dtype=float)
            if self.flatten is not None and which > 0:
                out = np.where(r >= self.flatten, 0.0, out)
            return out
        inside = r <= self.r_max
        rc = np.clip(r, 0.0, self.r_max)
        if which == 0:
            out = self._v(rc)
        elif which == 1:
            out = self._d(rc)
        else:
            out = np.interp(rc, self.grid, self.d2)
        if self.flatten is not None:
            # flat beyond the table end
            return np.where(inside, out, self.values[-1] if which == 0 else 0.0)
        # linear continuation with the last slope
        if which == 0:
            return np.where(inside, out, self.values[-1] + self.d1[-1] * (r - self.r_max))
        if which == 1:
            return np.where(inside, out, self.d1[-1])
        return np.where(inside, out, 0.0)

    def value(self, r):
        return self._eval(r, 0)

    def deriv(self, r):
        return self._eval(r, 1)

    def deriv2(self, r):
        return self._eval(r, 2)

    def _pre(self):
        if self.flatten is None:
            return slice(None)
        return self.grid < self.flatten

    @property
    def c1(self):
        return float(np.min(self.d1[self._pre()]))

    @property
    def c2(self):
        return float(np.max(self.d1[self._pre()]))

    @property
    def c_psi(self):
        pos = self.grid > 0
        return float(np.max(self.grid[pos] * self.d1[pos] / self.values[pos]))

    @property
    def monotone_constant(self):
        """Smallest C with psi'(t) <= C psi'(s) for all table points t >= s (pre-flatten range)."""
        d = self.d1[self._pre()]
        d = d[d > 0]
        if d.size == 0:
            return float("inf")
        return float(max(1.0, np.max(d / np.minimum.accumulate(d))))

    def summary(self):
        return {"tag": self.tag, "params": dict(self.params), "c1": self.c1, "c2": self.c2,
                "c_psi": self.c_psi, "monotone_constant": self.monotone_constant,
                "flatten": self.flatten, "r_max": float(self.r_max), "points": int(self.grid.size)}


def _integrate_derivative(grid, fprime):
    """psi(r_i) = int_0^{r_i} psi' by Gauss-Legendre on each grid interval."""
    a, b = grid[:-1], grid[1:]
    half = (b - a) / 2.0
    mid = (a + b) / 2.0
    nodes = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    pieces = half * (fprime(nodes) @ _GL_WEIGHTS)
    return np.concatenate([[0.0], np.cumsum(pieces)])


def power_psi(r_max=100.0):
    """psi(r) = r."""
    grid = np.linspace(0.0, r_max, 3)
    exact = (lambda r: np.asarray(r, float), lambda r: np.ones_like(np.asarray(r, float)),
             lambda r: np.zeros_like(np.asarray(r, float)))
    return TabulatedCostFunction(grid, grid.copy(), np.ones(3), np.zeros(3), "power", {"p": 1}, None, exact)


# ---------------------------------------------------------------------------
# double-well family

def gamma31(r, theta1, theta2, R):
    r = np.asarray(r, dtype=float)
    return theta1 * np.minimum(r, R) - theta2 * np.maximum(r - R, 0.0)


def _G31(r, theta1, theta2, R):
    r = np.asarray(r, dtype=float)
    inner = theta1 * r ** 2 / 2.0
    outer = theta1 * R * r - theta1 * R ** 2 / 2.0 - theta2 * (r - R) ** 2 / 2.0
    return np.where(r <= R, inner, outer)


def psi31_prime_closed(r, theta1, theta2, R):
    r = np.asarray(r, dtype=float)
    c = theta1 * R / theta2
    k = math.sqrt(math.pi / (2.0 * theta2))

    def outer(s):
        z = (s - R - c) * math.sqrt(theta2 / 2.0)
        return 1.0 / theta2 + (R + c) * k * erfcx(z)

    at_R = float(outer(np.array(R)))
    e = np.exp(theta1 * (R ** 2 - np.minimum(r, R) ** 2) / 2.0)
    inner = (e - 1.0) / theta1 + e * at_R
    return np.where(r <= R, inner, outer(np.maximum(r, R)))


def psi31_prime_quadrature(r, theta1, theta2, R, tol=1e-14, step=1.0, max_extent=1e4):
    """psi'(r) with the inner integral truncated where t exp(G(t) - G(r)) < tol * partial sum."""
    G = lambda s: float(_G31(s, theta1, theta2, R))
    out = []
    for ri in np.atleast_1d(np.asarray(r, dtype=float)):
        g0 = G(ri)
        f = lambda t: t * math.exp(G(t) - g0)
        total, a = 0.0, ri
        while True:
            piece = quad(f, a, a + step, epsabs=0.0, epsrel=1e-13, limit=200)[0]
            total += piece
            a += step
            if a > max(ri, R + theta1 * R / theta2) and f(a) < tol * max(total, 1e-300):
                break
            if a - ri > max_extent:
                raise NonConvergenceError(f"truncation search for psi'({ri}) did not terminate", [total])
        out.append(total)
    return np.asarray(out).reshape(np.shape(r))


def build_psi_example31(theta1=1.0, theta2=1.0, R=1.0, tol=1e-14, r_max=40.0, h=0.005, method="closed"):
    """Tabulate the double-well psi, psi', psi'' on [0, r_max]; linear continuation beyond."""
    for name, v in (("theta1", theta1), ("theta2", theta2), ("R", R), ("tol", tol)):
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")
    m = int(math.ceil(r_max / h))
    grid = np.linspace(0.0, m * h, m + 1)
    grid = np.union1d(grid, [R])
    if method == "closed":
        fprime = lambda r: psi31_prime_closed(r, theta1, theta2, R)
    elif method == "quadrature":
        # a dense quadrature table, interpolated for the outer integral
        d1_tab = psi31_prime_quadrature(grid, theta1, theta2, R, tol)
        d2_tab = -gamma31(grid, theta1, theta2, R) * d1_tab - grid
        spline = CubicHermiteSpline(grid, d1_tab, d2_tab)
        fprime = lambda r: spline(r)
    else:
        raise ValueError(f"unknown method {method!r}; expected 'closed' or 'quadrature'")
    d1 = fprime(grid)
    d2 = -gamma31(grid, theta1, theta2, R) * d1 - grid
    values = _integrate_derivative(grid, fprime)
    params = {"theta1": theta1, "theta2": theta2, "R": R, "tol": tol, "method": method}
    return TabulatedCostFunction(grid, values, d1, d2, "example31", params)


# ---------------------------------------------------------------------------
# mixed Dirichlet-Neumann eigenfunction of 2 d^2/dr^2 + D0 d/dr on [0, l]

@dataclass
class EigenSolution:
    D0: float
    l: float
    D1: float
    regime: str
    freq: float


def _eigen_closed(D0, l):
    x = D0 * l
    if D0 == 0.0:
        w = math.pi / (2.0 * l)
        return EigenSolution(D0, l, 2.0 * w * w, "oscillatory", w)
    if abs(x - 4.0) <= 1e-12:
        return EigenSolution(D0, l, D0 * D0 / 8.0, "critical", 0.0)
    if x < 4.0:
        g = lambda w: math.sin(w * l) * D0 - 4.0 * w * math.cos(w * l)
        hi = math.pi / (2.0 * l)
        lo = hi * 1e-9
        if not g(lo) < 0 < g(hi):
            raise EigenproblemError(f"no sign change for tan(w l) = 4 w / D0 on ({lo:.3g}, {hi:.3g}); "
                                    f"D0={D0}, l={l}")
        w = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
        return EigenSolution(D0, l, (16.0 * w * w + D0 * D0) / 8.0, "oscillatory", w)
    # tanh(k l) = 4 k / D0 written in delta = D0/4 - k, so that D1 = 2 delta (D0/2 - delta)
    # keeps full precision when D0 l is large and delta is tiny
    q = D0 / 4.0
    h = lambda d: d - 2.0 * q / (math.exp(2.0 * (q - d) * l) + 1.0)
    lo, hi = 0.0, q * (1.0 - 1e-9)
    if h(lo) == 0.0:
        delta = 0.0
    else:
        if not h(lo) < 0 < h(hi):
            raise EigenproblemError(f"no sign change for tanh(k l) = 4 k / D0 on k in ({q - hi:.3g}, {q:.3g}); "
                                    f"D0={D0}, l={l}")
        delta = brentq(h, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    return EigenSolution(D0, l, 2.0 * delta * (2.0 * q - delta), "monotone", q - delta)


def _eigen_functions(sol):
    """psi, psi', psi'' normalised so that psi'(0) = 1."""
    a = sol.D0 / 4.0
    w = sol.freq
    if sol.regime == "critical":
        f = lambda r: r * np.exp(-a * r)
        f1 = lambda r: np.exp(-a * r) * (1.0 - a * r)
        f2 = lambda r: np.exp(-a * r) * (a * a * r - 2.0 * a)
    elif sol.regime == "oscillatory":
        f = lambda r: np.exp(-a * r) * np.sin(w * r) / w
        f1 = lambda r: np.exp(-a * r) * (np.cos(w * r) - a * np.sin(w * r) / w)
        f2 = lambda r: np.exp(-a * r) * ((a * a - w * w) * np.sin(w * r) / w - 2.0 * a * np.cos(w * r))
    else:
        # exponentials e^{-d r} and e^{-(2a - d) r} with d = a - w = D1 / (2 (a + w)), free of cancellation
        d = sol.D1 / (2.0 * (a + w))
        e = 2.0 * a - d
        f = lambda r: -np.exp(-d * r) * np.expm1(-2.0 * w * r) / (2.0 * w)
        f1 = lambda r: (e * np.exp(-e * r) - d * np.exp(-d * r)) / (2.0 * w)
        f2 = lambda r: (d * d * np.exp(-d * r) - e * e * np.exp(-e * r)) / (2.0 * w)
    return f, f1, f2


def _eigen_shooting(D0, l):
    """Shooting on D1: integrate 2 y'' + D0 y' + D1 y = 0, y(0) = 0, y'(0) = 1 and zero y'(l)."""

    def end_slope(D1):
        sol = solve_ivp(lambda r, y: [y[1], -(D0 * y[1] + D1 * y[0]) / 2.0], (0.0, l), [0.0, 1.0],
                        rtol=1e-12, atol=1e-14)
        return sol.y[1, -1]

    lo, hi = 1e-12, max(D0 * D0 / 8.0, 1.0)
    while end_slope(hi) > 0:
        hi *= 2.0
        if hi > 1e8:
            raise EigenproblemError(f"shooting bracket search failed for D0={D0}, l={l}")
    if end_slope(lo) <= 0:
        raise EigenproblemError(f"shooting bracket has no sign change for D0={D0}, l={l}")
    D1 = brentq(end_slope, lo, hi, xtol=1e-14)
    disc = 8.0 * D1 - D0 * D0
    if disc > 0:
        return EigenSolution(D0, l, D1, "oscillatory", math.sqrt(disc) / 4.0)
    if disc < 0:
        return EigenSolution(D0, l, D1, "monotone", math.sqrt(-disc) / 4.0)
    return EigenSolution(D0, l, D1, "critical", 0.0)


def solve_eigen(D0, l):
    if not l > 0:
        raise ValueError(f"l must be positive, got {l}")
    if D0 < 0:
        raise ValueError(f"D0 must be nonnegative, got {D0}")
    try:
        return _eigen_closed(float(D0), float(l))
    except EigenproblemError:
        return _eigen_shooting(float(D0), float(l))


def build_psi_eigen(D0, l, points=4001):
    """First mixed eigenfunction on [0, l] (Dirichlet at 0, Neumann at l), flat beyond l."""
    sol = solve_eigen(D0, l)
    f, f1, f2 = _eigen_functions(sol)
    grid = np.linspace(0.0, l, int(points))
    d1 = f1(grid)
    params = {"D0": float(D0), "l": float(l), "D1": sol.D1, "regime": sol.regime, "freq": sol.freq}
    return TabulatedCostFunction(grid, f(grid), d1, f2(grid), "eigen", params, float(l), (f, f1, f2))
