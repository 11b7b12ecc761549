"""Convex domains: membership, metric projection and inward normals.

Reflection in the engine is realised by projecting onto the closed domain after
each Euler step, so ``project`` is the operation that matters most here. Every
function accepts a single point of shape (d,) or a batch of shape (n, d).
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, GeometryError

BOUNDARY_TOL = 1e-9


def _as_batch(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


class ConvexDomain:
    dim = None

    def contains(self, x):
        raise NotImplementedError

    def project(self, x):
        raise NotImplementedError

    def inward_normal(self, x):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError


@dataclass(frozen=True)
class WholeSpace(ConvexDomain):
    dim: int = None

    def contains(self, x):
        xb, single = _as_batch(x)
        out = np.ones(len(xb), dtype=bool)
        return bool(out[0]) if single else out

    def project(self, x):
        xb, single = _as_batch(x)
        disp = np.zeros(len(xb))
        return (xb[0].copy(), 0.0) if single else (xb.copy(), disp)

    def inward_normal(self, x):
        raise DomainError("the whole space has no boundary")

    def to_dict(self):
        return {"kind": "whole"}


@dataclass(frozen=True)
class Ball(ConvexDomain):
    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if not self.radius > 0:
            raise GeometryError(f"ball radius must be positive, got {self.radius}")

    @property
    def dim(self):
        return len(self.center)

    def contains(self, x):
        xb, single = _as_batch(x)
        c = np.asarray(self.center)
        r2 = np.einsum("ij,ij->i", xb - c, xb - c)
        out = r2 <= self.radius ** 2
        return bool(out[0]) if single else out

    def project(self, x):
        xb, single = _as_batch(x)
        c = np.asarray(self.center)
        diff = xb - c
        norm = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        outside = norm > self.radius
        proj = xb.copy()
        if outside.any():
            scale = self.radius / norm[outside]
            proj[outside] = c + diff[outside] * scale[:, None]
            # rounding can leave |proj - c| a hair above the radius
            shrink = 1.0
            for _ in range(8):
                d = proj[outside] - c
                bad = np.einsum("ij,ij->i", d, d) > self.radius ** 2
                if not bad.any():
                    break
                shrink -= 2.0 ** -52
                rows = np.flatnonzero(outside)[bad]
                proj[rows] = c + (diff[rows] * scale[bad][:, None]) * shrink
        disp = np.sqrt(np.einsum("ij,ij->i", xb - proj, xb - proj))
        return (proj[0], float(disp[0])) if single else (proj, disp)

    def inward_normal(self, x):
        x = np.asarray(x, dtype=float)
        diff = x - np.asarray(self.center)
        norm = np.linalg.norm(diff)
        if abs(norm - self.radius) > BOUNDARY_TOL:
            raise DomainError(f"point {x.tolist()} is not on the sphere of radius {self.radius}")
        return -diff / norm

    def to_dict(self):
        return {"kind": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box(ConvexDomain):
    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi):
            raise GeometryError("box bounds have different lengths")
        if not all(a < b for a, b in zip(lo, hi)):
            raise GeometryError(f"box requires lower < upper componentwise, got {lo} and {hi}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self):
        return len(self.lower)

    def contains(self, x):
        xb, single = _as_batch(x)
        out = np.all((xb >= np.asarray(self.lower)) & (xb <= np.asarray(self.upper)), axis=1)
        return bool(out[0]) if single else out

    def project(self, x):
        xb, single = _as_batch(x)
        proj = np.clip(xb, np.asarray(self.lower), np.asarray(self.upper))
        disp = np.sqrt(np.einsum("ij,ij->i", xb - proj, xb - proj))
        return (proj[0], float(disp[0])) if single else (proj, disp)

    def inward_normal(self, x):
        """Face normal; at a corner, the normalised sum of the active face normals."""
        x = np.asarray(x, dtype=float)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        if not np.all((x >= lo - BOUNDARY_TOL) & (x <= hi + BOUNDARY_TOL)):
            raise DomainError(f"point {x.tolist()} lies outside the box")
        n = np.zeros_like(x)
        n[np.abs(x - lo) <= BOUNDARY_TOL] += 1.0
        n[np.abs(x - hi) <= BOUNDARY_TOL] -= 1.0
        norm = np.linalg.norm(n)
        if norm == 0:
            raise DomainError(f"point {x.tolist()} is not on the box boundary")
        return n / norm

    def to_dict(self):
        return {"kind": "box", "lower": list(self.lower), "upper": list(self.upper)}


@dataclass(frozen=True)
class HalfSpaces(ConvexDomain):
    """Intersection of half-spaces <a_k, x> <= c_k with unit normals a_k."""

    normals: tuple
    offsets: tuple
    max_iter: int = 10_000
    tol: float = 1e-13

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.normals, dtype=float))
        c = np.atleast_1d(np.asarray(self.offsets, dtype=float))
        if a.shape[0] != c.shape[0]:
            raise GeometryError("need one offset per half-space normal")
        if not np.allclose(np.linalg.norm(a, axis=1), 1.0, atol=1e-12):
            raise GeometryError("half-space normals must be unit vectors")
        object.__setattr__(self, "normals", tuple(tuple(row) for row in a))
        object.__setattr__(self, "offsets", tuple(c))

    @property
    def dim(self):
        return len(self.normals[0])

    def _ac(self):
        return np.asarray(self.normals), np.asarray(self.offsets)

    def contains(self, x):
        xb, single = _as_batch(x)
        a, c = self._ac()
        out = np.all(xb @ a.T <= c, axis=1)
        return bool(out[0]) if single else out

    def _project_one_face(self, x, a, c):
        viol = x @ a - c
        return np.where(viol[:, None] > 0, x - viol[:, None] * a, x)

    def project(self, x):
        xb, single = _as_batch(x)
        a, c = self._ac()
        if len(c) == 1:
            proj = self._project_one_face(xb, a[0], c[0])
        else:
            proj = self._dykstra(xb, a, c)
        proj = self._snap(proj, a, c)
        disp = np.sqrt(np.einsum("ij,ij->i", xb - proj, xb - proj))
        return (proj[0], float(disp[0])) if single else (proj, disp)

    def _snap(self, proj, a, c):
        # remove round-off overshoot so the closed-set membership test is exact
        for _ in range(32):
            if not (proj @ a.T - c > 0).any():
                break
            for k in range(len(c)):
                viol = proj @ a[k] - c[k]
                bad = viol > 0
                if bad.any():
                    margin = 4.0 * np.finfo(float).eps * np.maximum(1.0, np.abs(proj[bad]).max(axis=1))
                    proj[bad] = proj[bad] - (viol[bad] + margin)[:, None] * a[k]
        return proj

    def _dykstra(self, xb, a, c):
        y = xb.copy()
        incr = np.zeros((len(c),) + xb.shape)
        for _ in range(self.max_iter):
            prev = y.copy()
            for k in range(len(c)):
                z = y + incr[k]
                y = self._project_one_face(z, a[k], c[k])
                incr[k] = z - y
            if np.max(np.abs(y - prev)) <= self.tol and np.all(y @ a.T <= c + 1e-12):
                return y
        raise GeometryError(f"Dykstra projection did not converge in {self.max_iter} sweeps")

    def inward_normal(self, x):
        x = np.asarray(x, dtype=float)
        a, c = self._ac()
        viol = x @ a.T - c
        if np.any(viol > BOUNDARY_TOL):
            raise DomainError(f"point {x.tolist()} lies outside the polyhedron")
        active = np.abs(viol) <= BOUNDARY_TOL
        if not active.any():
            raise DomainError(f"point {x.tolist()} is not on the boundary")
        n = -a[active].sum(axis=0)
        return n / np.linalg.norm(n)

    def to_dict(self):
        return {"kind": "halfspaces", "normals": [list(r) for r in self.normals],
                "offsets": list(self.offsets)}


def contains(dom, x):
    return dom.contains(x)


def project(dom, x):
    return dom.project(x)


def inward_normal(dom, x):
    return dom.inward_normal(x)


def domain_from_dict(spec):
    """Build a domain from a config descriptor ``{"kind": ..., ...}``; ``None`` means whole space."""
    if spec is None:
        return WholeSpace()
    kind = spec.get("kind")
    if kind in ("whole", "whole-space", None):
        return WholeSpace()
    if kind == "ball":
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    if kind == "box":
        return Box(tuple(spec["lower"]), tuple(spec["upper"]))
    if kind == "halfspaces":
        return HalfSpaces(tuple(map(tuple, spec["normals"])), tuple(spec["offsets"]))
    raise GeometryError(f"unknown domain kind {kind!r}; expected whole, ball, box or halfspaces")
