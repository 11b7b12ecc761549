"""Transport distances between equal-weight empirical measures and a k-NN entropy estimate.

Equal-size empirical measures admit a permutation as optimal coupling, so exact
distances reduce to a linear assignment problem. One-dimensional power costs
are solved exactly by sorting.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import CostError, EstimatorError, NonConvergenceError, TransportError
from .noise import STREAM_DIRECTIONS, NoisePolicy

MAX_EXACT = 4096
JITTER = 1e-12


def _points(x):
    pos = getattr(x, "positions", x)
    pos = np.asarray(pos, dtype=float)
    return pos[:, None] if pos.ndim == 1 else pos


@dataclass(frozen=True)
class CostSpec:
    """Power cost |x-y|^p (p in {1, 2}), radial cost psi(|x-y|), or psi weighted by 1 + beta V(x) + beta V(y)."""

    kind: str = "power"
    p: int = 2
    psi: object = None
    V: object = None
    beta: float = 0.0

    def __post_init__(self):
        if self.kind == "power" and self.p not in (1, 2):
            raise CostError(f"power cost needs p in {{1, 2}}, got {self.p}")
        if self.kind in ("psi", "weighted") and self.psi is None:
            raise CostError(f"{self.kind} cost needs a psi")
        if self.kind == "weighted" and (self.V is None or not self.beta > 0):
            raise CostError("weighted cost needs a Lyapunov function V and beta > 0")
        if self.kind not in ("power", "psi", "weighted"):
            raise CostError(f"unknown cost kind {self.kind!r}")


def as_cost(cost):
    if isinstance(cost, CostSpec):
        return cost
    if cost in ("w1", 1):
        return CostSpec("power", 1)
    if cost in ("w2", 2):
        return CostSpec("power", 2)
    if hasattr(cost, "value") and hasattr(cost, "deriv"):
        return CostSpec("psi", psi=cost)
    raise CostError(f"cannot interpret {cost!r} as a cost")


def psi_cost(psi):
    return CostSpec("psi", psi=psi)


def weighted_cost(psi, V, beta):
    return CostSpec("weighted", psi=psi, V=V, beta=float(beta))


@dataclass
class TransportPlanResult:
    distance: float
    assignment: np.ndarray = None
    diagnostics: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.distance)


def lyapunov_weights(V, pos, which="A"):
    with np.errstate(over="ignore", invalid="ignore"):
        v = np.asarray(V(pos), dtype=float).reshape(len(pos))
    bad = ~np.isfinite(v)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise TransportError(f"Lyapunov weight V overflowed at particle {i} of ensemble {which} "
                             f"(x={pos[i].tolist()})")
    return v


def cost_matrix(A, B, cost):
    """Pairwise cost matrix C[i, j] = c(a_i, b_j) for the given cost spec."""
    a, b = _points(A), _points(B)
    cost = as_cost(cost)
    if cost.kind == "power":
        return cdist(a, b, "sqeuclidean") if cost.p == 2 else cdist(a, b, "euclidean")
    r = cdist(a, b, "euclidean")
    c = np.asarray(cost.psi.value(r), dtype=float)
    if cost.kind == "weighted":
        va = lyapunov_weights(cost.V, a, "A")
        vb = lyapunov_weights(cost.V, b, "B")
        c = c * (1.0 + cost.beta * va[:, None] + cost.beta * vb[None, :])
    return c


def _finish(cost, mean_cost):
    if cost.kind == "power" and cost.p == 2:
        return math.sqrt(max(mean_cost, 0.0))
    return mean_cost


def _w_1d_sorted(a, b, p):
    ia = np.argsort(a, kind="stable")
    ib = np.argsort(b, kind="stable")
    perm = np.empty(len(a), dtype=int)
    perm[ia] = ib
    diff = np.abs(a - b[perm])
    return float(np.mean(diff ** p)), perm


def ot_exact(A, B, cost="w2", solver="auto", max_exact=MAX_EXACT, n_proj=256, noise=None):
    """Optimal transport between equal-size empirical measures.

    ``solver``: "auto" (sorting for 1-D power costs, assignment up to ``max_exact``
    particles, sliced surrogate above), "assignment", or "sliced".
    """
    a, b = _points(A), _points(B)
    if a.shape != b.shape:
        raise TransportError(f"ensembles must have equal size and dimension, got {a.shape} and {b.shape}")
    cost = as_cost(cost)
    n, d = a.shape
    if solver == "auto":
        if cost.kind == "power" and d == 1:
            solver = "sorted"
        elif n <= max_exact:
            solver = "assignment"
        else:
            solver = "sliced"
    if solver == "sorted":
        if not (cost.kind == "power" and d == 1):
            raise TransportError("sorting is exact only for one-dimensional power costs")
        mean, perm = _w_1d_sorted(a[:, 0], b[:, 0], cost.p)
        return TransportPlanResult(_finish(cost, mean), perm, {"solver": "sorted", "optimal": True})
    if solver == "assignment":
        C = cost_matrix(a, b, cost)
        rows, cols = linear_sum_assignment(C)
        perm = np.empty(n, dtype=int)
        perm[rows] = cols
        mean = float(np.mean(C[np.arange(n), perm]))
        return TransportPlanResult(_finish(cost, mean), perm, {"solver": "assignment", "optimal": True})
    if solver == "sliced":
        if cost.kind != "power":
            raise TransportError("the sliced surrogate supports power costs only")
        val = ot_sliced(a, b, cost.p, n_proj, noise or NoisePolicy())
        return TransportPlanResult(val, None, {"solver": "sliced", "optimal": False, "n_proj": n_proj})
    raise TransportError(f"unknown solver {solver!r}")


def w2_auto(A, B):
    return ot_exact(A, B, "w2").distance


def _quantile_wpp(x, y, p):
    """Exact W_p^p between two 1-D empirical measures of possibly different sizes."""
    x = np.sort(x)
    y = np.sort(y)
    if len(x) == len(y):
        return float(np.mean(np.abs(x - y) ** p))
    u = np.union1d(np.arange(1, len(x) + 1) / len(x), np.arange(1, len(y) + 1) / len(y))
    u[-1] = 1.0
    w = np.diff(np.concatenate([[0.0], u]))
    mid = u - w / 2.0
    qx = x[np.minimum((mid * len(x)).astype(int), len(x) - 1)]
    qy = y[np.minimum((mid * len(y)).astype(int), len(y) - 1)]
    return float(np.sum(w * np.abs(qx - qy) ** p))


def directions(d, n_proj, noise):
    z = noise.with_stream(STREAM_DIRECTIONS).normals(np.arange(n_proj), 0, d)
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def ot_sliced(A, B, p=2, n_proj=256, noise=None):
    """Sliced W_p: (mean over random unit directions of the 1-D W_p^p) ** (1/p)."""
    a, b = _points(A), _points(B)
    if a.shape[1] != b.shape[1]:
        raise TransportError("ensembles must have the same dimension")
    if a.shape[1] == 1:
        return _quantile_wpp(a[:, 0], b[:, 0], p) ** (1.0 / p)
    dirs = directions(a.shape[1], int(n_proj), noise or NoisePolicy())
    pa = a @ dirs.T
    pb = b @ dirs.T
    vals = [_quantile_wpp(pa[:, j], pb[:, j], p) for j in range(dirs.shape[0])]
    return float(np.mean(vals)) ** (1.0 / p)


def ratio_quasidistance(A, B, psi, V=None, beta=0.0, tol=1e-10, max_iter=200):
    """inf over permutation couplings of sum psi(r) w / sum psi'(r) w, w = 1 + beta V(x) + beta V(y), by Dinkelbach."""
    a, b = _points(A), _points(B)
    if a.shape != b.shape:
        raise TransportError(f"ensembles must have equal size and dimension, got {a.shape} and {b.shape}")
    r = cdist(a, b, "euclidean")
    num = np.asarray(psi.value(r), dtype=float)
    den = np.asarray(psi.deriv(r), dtype=float)
    if np.any(den <= 0):
        i, j = np.unravel_index(int(np.argmin(den)), den.shape)
        raise CostError(f"psi' must be positive on the data range; psi'({r[i, j]:.6g}) = {den[i, j]:.3g}")
    if V is not None and beta > 0:
        w = (1.0 + beta * lyapunov_weights(V, a, "A")[:, None] + beta * lyapunov_weights(V, b, "B")[None, :])
        num = num * w
        den = den * w
    n = len(a)
    idx = np.arange(n)
    perm = idx
    q = float(num[idx, perm].sum() / den[idx, perm].sum())
    for _ in range(max_iter):
        rows, cols = linear_sum_assignment(num - q * den)
        perm = np.empty(n, dtype=int)
        perm[rows] = cols
        N = float(num[idx, perm].sum())
        D = float(den[idx, perm].sum())
        F = N - q * D
        if abs(F) < tol * max(1.0, abs(N)):
            return q
        q_new = N / D
        if q_new >= q:
            # rounding only: the parametric optimum cannot raise the ratio
            return q
        q = q_new
    raise NonConvergenceError("Dinkelbach iteration did not converge", [q])


def relative_entropy_knn(A, B, k=5, noise=None):
    """k-NN estimate of H(law(A) | law(B)) (Wang-Kulkarni-Verdu); consistent but biased at finite N.

    Zero neighbour radii trigger one retry with 1e-12 jitter, then an error.
    """
    a, b = _points(A), _points(B)
    if a.shape[1] != b.shape[1]:
        raise EstimatorError("samples must have the same dimension")
    k = int(k)
    if k < 1:
        raise EstimatorError("k must be at least 1")
    n, d = a.shape
    m = len(b)
    if n < k + 1 or m < k:
        raise EstimatorError(f"k = {k} needs at least {k + 1} samples in A and {k} in B (got {n} and {m})")
    noise = noise or NoisePolicy()
    for attempt in range(2):
        rho = cKDTree(a).query(a, k=k + 1, workers=1)[0][:, k]
        nu = cKDTree(b).query(a, k=k, workers=1)[0]
        nu = nu[:, k - 1] if nu.ndim == 2 else nu
        if np.all(rho > 0) and np.all(nu > 0):
            return float(d * np.mean(np.log(nu / rho)) + math.log(m / (n - 1)))
        if attempt == 0:
            jit = noise.with_stream(STREAM_DIRECTIONS + 1)
            a = a + JITTER * jit.normals(np.arange(n), 0, d)
            b = b + JITTER * jit.normals(np.arange(n, n + m), 0, d)
    raise EstimatorError("duplicate points give zero nearest-neighbour radii even after jitter")


def dump_cost_matrix(path, A, B, cost="w2"):
    """Write the pairwise cost matrix as CSV (for inspecting small instances)."""
    C = cost_matrix(A, B, cost)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i"] + [f"b{j}" for j in range(C.shape[1])])
        for i, row in enumerate(C):
            w.writerow([f"a{i}"] + [repr(float(v)) for v in row])
    return path
