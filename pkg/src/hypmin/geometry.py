"""Convex planar domains with corners.

Every domain is an immutable value object exposing a positive-inside level
function, an exact (or sampling-refined) signed distance, ray/boundary
intersections for cut-cell stencils, and the corner metadata needed by the
cone comparisons.  Point arguments accept a single ``(2,)`` point or an
``(N, 2)`` array; single points give scalar results.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import ClassVar, Sequence

import numpy as np

from .errors import (
    BallTooLarge,
    DegenerateLens,
    NonConvexDomain,
    NotACorner,
    NotSmooth,
)

BOUNDARY_SAMPLES = 4096


def _points(p):
    arr = np.asarray(p, dtype=float)
    single = arr.ndim == 1
    return np.atleast_2d(arr), single


def _unpack(values, single):
    return float(values[0]) if single else values


def _unit(angle):
    return np.array([math.cos(angle), math.sin(angle)])


def _rotate(v, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


@dataclass(frozen=True)
class ConeSpec:
    """Infinite planar cone (times R^{n-2}) with vertex, opening and bisector angle."""

    vertex: tuple[float, float]
    opening: float
    axis_angle: float = 0.0
    n: int = 2

    def __post_init__(self):
        if not 0.0 < self.opening < math.pi:
            raise ValueError(f"cone opening must lie in (0, pi), got {self.opening}")
        if self.n < 2:
            raise ValueError("dimension n must be >= 2")

    @property
    def mu(self) -> float:
        return self.opening / math.pi

    @property
    def first_edge_angle(self) -> float:
        return self.axis_angle - 0.5 * self.opening

    def polar(self, pts):
        """Return ``(r, theta)`` about the vertex, theta measured from the first edge."""
        p, _ = _points(pts)
        d = p - np.asarray(self.vertex, dtype=float)
        r = np.hypot(d[:, 0], d[:, 1])
        theta = np.arctan2(d[:, 1], d[:, 0]) - self.first_edge_angle
        theta = (theta + math.pi) % (2 * math.pi) - math.pi
        return r, theta

    def point(self, r, theta):
        """Inverse of :meth:`polar`."""
        r = np.asarray(r, dtype=float)
        ang = np.asarray(theta, dtype=float) + self.first_edge_angle
        v = np.asarray(self.vertex, dtype=float)
        return np.stack([v[0] + r * np.cos(ang), v[1] + r * np.sin(ang)], axis=-1)


class DomainSpec:
    """Base class of the declarative convex domains.

    Subclasses are frozen dataclasses; the parameters fully determine the
    region, so instances can be shared freely between threads.
    """

    kind: ClassVar[str] = ""

    # --- interface implemented by subclasses -------------------------------
    def level(self, pts) -> np.ndarray:
        """Positive inside, zero on the boundary, negative outside."""
        raise NotImplementedError

    def signed_distance(self, pts):
        raise NotImplementedError

    def boundary_samples(self, n: int = BOUNDARY_SAMPLES) -> np.ndarray:
        raise NotImplementedError

    def boundary_frame(self, pts):
        """Inward unit normals and curvature at smooth boundary points."""
        raise NotImplementedError

    @property
    def corner_points(self) -> tuple:
        return ()

    def corner_normals(self, vertex):
        raise NotACorner(f"{self.kind} domain has no corners")

    def curve_samples(self, vertex, index: int, radius: float, n: int = BOUNDARY_SAMPLES):
        raise NotACorner(f"{self.kind} domain has no corners")

    def corner_arcs(self, vertex) -> tuple:
        """The two boundary curves through a corner as maps ``t -> x(t) - vertex``.

        ``t >= 0`` is an angle-like parameter, zero at the vertex.  The
        displacements are evaluated without cancellation so they stay
        accurate at any distance from the vertex.
        """
        raise NotACorner(f"{self.kind} domain has no corners")

    def params(self) -> dict:
        raise NotImplementedError

    # --- shared behaviour ---------------------------------------------------
    def contains(self, pts):
        p, single = _points(pts)
        inside = self.level(p) > 0
        return bool(inside[0]) if single else inside

    def ray_exit(self, pts, dirs, tmax):
        """Distance along unit directions ``dirs`` from interior ``pts`` to the boundary.

        Returns ``inf`` where the segment of length ``tmax`` stays inside.
        """
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        tmax = np.broadcast_to(np.asarray(tmax, dtype=float), (p.shape[0],)).copy()
        out = np.full(p.shape[0], np.inf)
        crosses = self.level(p + tmax[:, None] * d) <= 0
        lo = np.zeros(crosses.sum())
        hi = tmax[crosses]
        pc, dc = p[crosses], d[crosses]
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            inside = self.level(pc + mid[:, None] * dc) > 0
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        out[crosses] = 0.5 * (lo + hi)
        return out

    @cached_property
    def _hull(self) -> np.ndarray:
        return self.boundary_samples(1024)

    def bbox(self) -> tuple[float, float, float, float]:
        pts = self.boundary_samples()
        return (float(pts[:, 0].min()), float(pts[:, 1].min()),
                float(pts[:, 0].max()), float(pts[:, 1].max()))

    @cached_property
    def diameter(self) -> float:
        pts = self._hull
        diff = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    def inradius(self) -> float:
        x0, y0, x1, y1 = self.bbox()
        g = np.linspace(0, 1, 81)
        xx, yy = np.meshgrid(x0 + (x1 - x0) * g, y0 + (y1 - y0) * g)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        pts = pts[self.level(pts) > 0]
        d = self.signed_distance(pts)
        best = pts[np.argmax(d)]
        # local refinement around the coarse maximiser
        span = max(x1 - x0, y1 - y0) / 40
        g = np.linspace(-1, 1, 41) * span
        xx, yy = np.meshgrid(best[0] + g, best[1] + g)
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        pts = pts[self.level(pts) > 0]
        return float(np.max(self.signed_distance(pts)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}

    @property
    def domain_hash(self) -> str:
        blob = json.dumps(_as_floats(self.to_dict()), sort_keys=True, default=_json_default)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def find_corner(self, vertex, tol: float | None = None) -> np.ndarray:
        v = np.asarray(vertex, dtype=float)
        tol = 1e-9 * self.diameter if tol is None else tol
        for c in self.corner_points:
            if np.hypot(*(np.asarray(c) - v)) <= tol:
                return np.asarray(c, dtype=float)
        raise NotACorner(f"{tuple(v)} is not a registered corner of the {self.kind} domain")


def _as_floats(obj):
    # 1 and 1.0 must hash alike
    if isinstance(obj, dict):
        return {k: _as_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_as_floats(v) for v in obj]
    if isinstance(obj, (int, float, np.integer, np.floating)) and not isinstance(obj, bool):
        return float(obj)
    return obj


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(type(obj))


# ---------------------------------------------------------------------------
# disks and ellipses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Disk(DomainSpec):
    center: tuple[float, float] = (0.0, 0.0)
    radius: float = 1.0
    kind: ClassVar[str] = "disk"

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("disk radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def level(self, pts):
        p, single = _points(pts)
        out = self.radius - np.hypot(p[:, 0] - self.center[0], p[:, 1] - self.center[1])
        return _unpack(out, single)

    signed_distance = level

    def ray_exit(self, pts, dirs, tmax):
        p = np.atleast_2d(np.asarray(pts, dtype=float)) - np.asarray(self.center)
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        b = (p * d).sum(1)
        c = (p * p).sum(1) - self.radius ** 2
        t = -b + np.sqrt(np.maximum(b * b - c, 0.0))
        return np.where(t <= tmax, t, np.inf)

    def boundary_samples(self, n=BOUNDARY_SAMPLES):
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.column_stack([self.center[0] + self.radius * np.cos(t),
                                self.center[1] + self.radius * np.sin(t)])

    def bbox(self):
        cx, cy = self.center
        r = self.radius
        return (cx - r, cy - r, cx + r, cy + r)

    @property
    def diameter(self):
        return 2.0 * self.radius

    def inradius(self):
        return self.radius

    def boundary_frame(self, pts):
        p, single = _points(pts)
        d = np.asarray(self.center) - p
        nrm = d / np.hypot(d[:, 0], d[:, 1])[:, None]
        kappa = np.full(len(p), 1.0 / self.radius)
        return (nrm[0], float(kappa[0])) if single else (nrm, kappa)

    def params(self):
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Ellipse(DomainSpec):
    """Axis-aligned ellipse with semi-axes ``a`` (x) and ``b`` (y)."""

    a: float = 1.0
    b: float = 1.0
    center: tuple[float, float] = (0.0, 0.0)
    kind: ClassVar[str] = "ellipse"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("ellipse semi-axes must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def level(self, pts):
        p, single = _points(pts)
        x = (p[:, 0] - self.center[0]) / self.a
        y = (p[:, 1] - self.center[1]) / self.b
        return _unpack(1.0 - x * x - y * y, single)

    def signed_distance(self, pts):
        p, single = _points(pts)
        q = p - np.asarray(self.center)
        foot = self._nearest(q)
        dist = np.hypot(*(foot - q).T)
        sign = np.where(self.level(p) >= 0, 1.0, -1.0)
        return _unpack(sign * dist, single)

    def _nearest(self, q):
        # Eberly's bisection for the closest point, done in the first quadrant.
        swap = self.a < self.b
        e0, e1 = (self.b, self.a) if swap else (self.a, self.b)
        y = np.abs(q[:, ::-1] if swap else q)
        y0, y1 = y[:, 0], y[:, 1]
        x0 = np.empty_like(y0)
        x1 = np.empty_like(y1)

        gen = (y0 > 0) & (y1 > 0)
        z0 = y0[gen] / e0
        z1 = y1[gen] / e1
        r0 = (e0 / e1) ** 2
        g = z0 * z0 + z1 * z1 - 1.0
        n0 = r0 * z0
        s0 = z1 - 1.0
        s1 = np.where(g < 0, 0.0, np.hypot(n0, z1) - 1.0)
        for _ in range(120):
            s = 0.5 * (s0 + s1)
            val = (n0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0
            s0 = np.where(val > 0, s, s0)
            s1 = np.where(val > 0, s1, s)
        s = 0.5 * (s0 + s1)
        x0[gen] = r0 * y0[gen] / (s + r0)
        x1[gen] = y1[gen] / (s + 1.0)

        on_y = (y0 <= 0) & (y1 > 0)
        x0[on_y] = 0.0
        x1[on_y] = e1

        on_x = y1 <= 0
        numer = e0 * y0[on_x]
        denom = e0 * e0 - e1 * e1
        inner = numer < denom
        xde = np.where(inner, numer / denom if denom > 0 else 1.0, 1.0)
        x0[on_x] = np.where(inner, e0 * xde, e0)
        x1[on_x] = np.where(inner, e1 * np.sqrt(np.maximum(1 - xde * xde, 0.0)), 0.0)

        foot = np.column_stack([x0, x1])
        if swap:
            foot = foot[:, ::-1]
        return foot * np.sign(np.where(q == 0, 1.0, q))

    def ray_exit(self, pts, dirs, tmax):
        p = np.atleast_2d(np.asarray(pts, dtype=float)) - np.asarray(self.center)
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        s = np.array([1 / self.a ** 2, 1 / self.b ** 2])
        qa = (d * d * s).sum(1)
        qb = (p * d * s).sum(1)
        qc = (p * p * s).sum(1) - 1.0
        t = (-qb + np.sqrt(np.maximum(qb * qb - qa * qc, 0.0))) / qa
        return np.where(t <= tmax, t, np.inf)

    def boundary_samples(self, n=BOUNDARY_SAMPLES):
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return np.column_stack([self.center[0] + self.a * np.cos(t),
                                self.center[1] + self.b * np.sin(t)])

    def bbox(self):
        cx, cy = self.center
        return (cx - self.a, cy - self.b, cx + self.a, cy + self.b)

    @property
    def diameter(self):
        return 2.0 * max(self.a, self.b)

    def inradius(self):
        return min(self.a, self.b)

    def boundary_frame(self, pts):
        p, single = _points(pts)
        q = p - np.asarray(self.center)
        t = np.arctan2(q[:, 1] / self.b, q[:, 0] / self.a)
        grad = np.column_stack([np.cos(t) / self.a, np.sin(t) / self.b])
        nrm = -grad / np.hypot(grad[:, 0], grad[:, 1])[:, None]
        kappa = self.a * self.b / (self.a ** 2 * np.sin(t) ** 2
                                   + self.b ** 2 * np.cos(t) ** 2) ** 1.5
        return (nrm[0], float(kappa[0])) if single else (nrm, kappa)

    def params(self):
        return {"a": self.a, "b": self.b, "center": list(self.center)}


# ---------------------------------------------------------------------------
# intersections of disks (lenses included)
# ---------------------------------------------------------------------------

class _CircleIntersection(DomainSpec):
    """Shared machinery for domains that are intersections of disks."""

    @property
    def disks(self) -> tuple:
        raise NotImplementedError

    @cached_property
    def _centers(self):
        return np.array([c for c, _ in self.disks], dtype=float)

    @cached_property
    def _radii(self):
        return np.array([r for _, r in self.disks], dtype=float)

    def _circle_levels(self, p):
        d = p[:, None, :] - self._centers[None, :, :]
        return self._radii[None, :] - np.sqrt((d ** 2).sum(-1))

    def level(self, pts):
        p, single = _points(pts)
        return _unpack(self._circle_levels(p).min(1), single)

    def signed_distance(self, pts):
        p, single = _points(pts)
        lev = self._circle_levels(p).min(1)
        out = lev.copy()
        outside = lev < 0
        if outside.any():
            q = p[outside]
            best = np.full(len(q), np.inf)
            tol = 1e-12 * self._scale
            for i, (c, r) in enumerate(zip(self._centers, self._radii)):
                d = q - c
                foot = c + r * d / np.hypot(d[:, 0], d[:, 1])[:, None]
                ok = np.ones(len(q), dtype=bool)
                for j, (cj, rj) in enumerate(zip(self._centers, self._radii)):
                    if j != i:
                        ok &= rj - np.hypot(*(foot - cj).T) >= -tol
                dist = np.hypot(*(foot - q).T)
                best = np.where(ok, np.minimum(best, dist), best)
            for c in self.corner_points:
                best = np.minimum(best, np.hypot(*(q - np.asarray(c)).T))
            out[outside] = -best
        return _unpack(out, single)

    @cached_property
    def _scale(self):
        return float(self._radii.min())

    def ray_exit(self, pts, dirs, tmax):
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        d = np.atleast_2d(np.asarray(dirs, dtype=float))
        t = np.full(len(p), np.inf)
        for c, r in zip(self._centers, self._radii):
            q = p - c
            b = (q * d).sum(1)
            cc = (q * q).sum(1) - r * r
            t = np.minimum(t, -b + np.sqrt(np.maximum(b * b - cc, 0.0)))
        return np.where(t <= tmax, t, np.inf)

    @cached_property
    def _corner_cache(self):
        pts = []
        tol = 1e-10 * self._scale
        k = len(self.disks)
        for i in range(k):
            for j in range(i + 1, k):
                for x in _circle_circle(self._centers[i], self._radii[i],
                                        self._centers[j], self._radii[j]):
                    others = [m for m in range(k) if m not in (i, j)]
                    if all(self._radii[m] - np.hypot(*(x - self._centers[m])) >= -tol
                           for m in others):
                        pts.append(tuple(float(v) for v in x))
        return tuple(pts)

    @property
    def corner_points(self):
        return self._corner_cache

    def _arc_points(self, i, n):
        t = np.linspace(0, 2 * np.pi, n, endpoint=False)
        return self._centers[i] + self._radii[i] * np.column_stack([np.cos(t), np.sin(t)])

    def boundary_samples(self, n=BOUNDARY_SAMPLES):
        tol = 1e-12 * self._scale
        out = []
        for i in range(len(self.disks)):
            pts = self._arc_points(i, n)
            lev = self._circle_levels(pts)
            lev[:, i] = np.inf
            out.append(pts[lev.min(1) >= -tol])
        out.append(np.array(self.corner_points).reshape(-1, 2))
        return np.vstack(out)

    def _on_circles(self, p):
        lev = np.abs(self._circle_levels(p))
        return lev <= 1e-9 * self._scale

    def boundary_frame(self, pts):
        p, single = _points(pts)
        on = self._on_circles(p)
        if (on.sum(1) >= 2).any():
            raise NotSmooth("boundary is not C^2 at a corner point")
        if (on.sum(1) == 0).any():
            raise ValueError("point is not on the boundary")
        idx = on.argmax(1)
        d = self._centers[idx] - p
        nrm = d / np.hypot(d[:, 0], d[:, 1])[:, None]
        kappa = 1.0 / self._radii[idx]
        return (nrm[0], float(kappa[0])) if single else (nrm, kappa)

    def _active(self, vertex):
        v = self.find_corner(vertex)
        on = np.abs(self._circle_levels(v[None, :])[0]) <= 1e-9 * self._scale
        return v, np.flatnonzero(on)

    def corner_normals(self, vertex):
        v, idx = self._active(vertex)
        return tuple((self._centers[i] - v) / self._radii[i] for i in idx[:2])

    def curve_samples(self, vertex, index, radius, n=BOUNDARY_SAMPLES):
        v, idx = self._active(vertex)
        i = idx[index]
        pts = self._arc_points(i, n)
        return pts[np.hypot(*(pts - v).T) <= radius]

    def corner_arcs(self, vertex):
        v, idx = self._active(vertex)
        return tuple(_oriented_arc(self, v, self._centers[i], self._radii[i]) for i in idx[:2])


def _arc_map(center, radius, vertex, sign, bump=None):
    c = np.asarray(center, dtype=float)
    a0 = math.atan2(vertex[1] - c[1], vertex[0] - c[0])

    def disp(t):
        t = np.asarray(t, dtype=float)
        # e(a0 + s t) - e(a0) written as a product to avoid cancellation
        ang = a0 + sign * (0.5 * t + 0.5 * math.pi)
        out = (2 * radius * np.sin(0.5 * t))[..., None] * np.stack([np.cos(ang), np.sin(ang)], -1)
        if bump is not None:
            b = bump(t)
            out = out - b[..., None] * np.stack([np.cos(a0 + sign * t), np.sin(a0 + sign * t)], -1)
        return out
    return disp


def _oriented_arc(domain, vertex, center, radius, bump=None):
    # keep the orientation that runs along the boundary
    best = None
    t = 1e-3 * min(1.0, domain.diameter / radius)
    for sign in (1.0, -1.0):
        disp = _arc_map(center, radius, vertex, sign, bump)
        lev = float(domain.level(np.asarray(vertex) + disp(np.array([t]))[0]))
        if best is None or lev > best[0]:
            best = (lev, disp)
    return best[1]


def _circle_circle(c1, r1, c2, r2):
    d = float(np.hypot(*(c2 - c1)))
    if d == 0 or d > r1 + r2 or d < abs(r1 - r2):
        return []
    a = (r1 * r1 - r2 * r2 + d * d) / (2 * d)
    h = math.sqrt(max(r1 * r1 - a * a, 0.0))
    u = (c2 - c1) / d
    mid = c1 + a * u
    perp = np.array([-u[1], u[0]])
    return [mid + h * perp, mid - h * perp]


@dataclass(frozen=True)
class DiskIntersection(_CircleIntersection):
    """Intersection of finitely many disks, each given as ``((cx, cy), radius)``."""

    disk_list: tuple = ()
    kind: ClassVar[str] = "disk_intersection"

    def __post_init__(self):
        disks = tuple((tuple(float(v) for v in c), float(r)) for c, r in self.disk_list)
        if not disks:
            raise ValueError("need at least one disk")
        if any(r <= 0 for _, r in disks):
            raise ValueError("disk radii must be positive")
        object.__setattr__(self, "disk_list", disks)
        if not (self.level(self._interior_guess()) > 0):
            raise ValueError("disks have empty common interior")

    def _interior_guess(self):
        # maximise the level function over a sample of candidate points
        cand = np.vstack([self._centers] + [self._arc_points(i, 256) for i in range(len(self.disks))])
        cand = np.vstack([cand, (cand[:, None, :] + self._centers[None, :, :]).reshape(-1, 2) / 2])
        lev = self._circle_levels(cand).min(1)
        return cand[np.argmax(lev)]

    @property
    def disks(self):
        return self.disk_list

    def params(self):
        return {"disks": [{"center": list(c), "radius": r} for c, r in self.disk_list]}


@dataclass(frozen=True)
class Lens(_CircleIntersection):
    """Intersection of two disks whose circles meet at ``x0`` with interior angle ``mu*pi``."""

    x0: tuple[float, float] = (0.0, 0.0)
    mu: float = 0.5
    kappa1: float = 1.0
    kappa2: float = 1.0
    axis_angle: float = 0.0
    kind: ClassVar[str] = "lens"

    def __post_init__(self):
        if not 0.0 < self.mu < 1.0:
            raise DegenerateLens(f"opening fraction mu must lie in (0, 1), got {self.mu}")
        if not (self.kappa1 > 0 and self.kappa2 > 0):
            raise DegenerateLens("lens curvatures must be positive")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        far = self._far_corner()
        width = np.hypot(*(far - np.asarray(self.x0)))
        if not np.isfinite(width) or width <= 1e-12 * max(1 / self.kappa1, 1 / self.kappa2):
            raise DegenerateLens("disk intersection has empty interior")

    @property
    def normals(self):
        a = 0.5 * self.mu * math.pi
        nu1 = _rotate(np.array([math.sin(a), -math.cos(a)]), self.axis_angle)
        nu2 = _rotate(np.array([math.sin(a), math.cos(a)]), self.axis_angle)
        return nu1, nu2

    @property
    def disks(self):
        nu1, nu2 = self.normals
        x0 = np.asarray(self.x0)
        r1, r2 = 1.0 / self.kappa1, 1.0 / self.kappa2
        return ((tuple(x0 + r1 * nu1), r1), (tuple(x0 + r2 * nu2), r2))

    def _far_corner(self):
        (c1, _), (c2, _) = self.disks
        c1, c2 = np.asarray(c1), np.asarray(c2)
        x0 = np.asarray(self.x0)
        u = (c2 - c1) / np.hypot(*(c2 - c1))
        foot = c1 + np.dot(x0 - c1, u) * u
        return 2 * foot - x0

    @property
    def corner_points(self):
        return (self.x0, tuple(float(v) for v in self._far_corner()))

    @property
    def _scale(self):
        return min(1 / self.kappa1, 1 / self.kappa2)

    def bbox(self):
        pts = self.boundary_samples()
        return (float(pts[:, 0].min()), float(pts[:, 1].min()),
                float(pts[:, 0].max()), float(pts[:, 1].max()))

    def params(self):
        return {"x0": list(self.x0), "mu": self.mu, "kappa1": self.kappa1,
                "kappa2": self.kappa2, "axis_angle": self.axis_angle}


def lens_domain(x0: Sequence[float], mu: float, kappa1: float, kappa2: float,
                axis_angle: float = 0.0) -> Lens:
    """Intersection of the two disks osculating the corner curves at ``x0``.

    The disks have radii ``1/kappa_i`` and centres ``x0 + nu_i/kappa_i`` where
    the inward normals ``nu_i`` make the two tangent lines meet at ``mu*pi``.
    The lens opens along ``axis_angle``.

    Raises
    ------
    DegenerateLens
        If ``mu`` is outside (0, 1), a curvature is non-positive, or the
        intersection has empty interior.
    """
    return Lens(x0=tuple(x0), mu=mu, kappa1=kappa1, kappa2=kappa2, axis_angle=axis_angle)


# ---------------------------------------------------------------------------
# perturbed lens
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PerturbedLens(DomainSpec):
    """Lens whose two corner curves are pushed inward by ``c_p * s**(2+alpha)``.

    Each curve is the osculating circle in polar form about its centre with
    radius ``R - c_p * s**(2+alpha) * chi(s)``, where ``s`` is the arc length
    from ``x0`` and ``chi = (1 - (s/blend)**2)**3`` cuts the bump off at
    ``s = blend``.  The curvature at ``x0`` stays ``kappa_i`` and the curve is
    C^{2,alpha} there.
    """

    x0: tuple[float, float] = (0.0, 0.0)
    mu: float = 0.25
    kappa1: float = 1.0
    kappa2: float = 1.0
    c_p: float = 0.5
    alpha: float = 0.5
    axis_angle: float = 0.0
    blend: float = 0.2
    kind: ClassVar[str] = "perturbed_lens"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("Hoelder exponent alpha must lie in (0, 1)")
        if self.c_p < 0:
            raise ValueError("perturbation amplitude must be nonnegative")
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))
        lens = self.osculating
        far = np.asarray(lens.corner_points[1])
        for i, (c, r) in enumerate(lens.disks):
            phi_far = abs(self._rel_angle(i, far[None, :])[0])
            if r * phi_far <= self.blend:
                raise ValueError("perturbation support reaches the far corner")
        phi = np.linspace(-math.pi, math.pi, 20001)
        for i in range(2):
            if self._polar_curvature(i, phi).min() <= 0:
                raise NonConvexDomain(f"c_p={self.c_p} breaks convexity of curve {i + 1}")

    @cached_property
    def osculating(self) -> Lens:
        return Lens(self.x0, self.mu, self.kappa1, self.kappa2, self.axis_angle)

    @cached_property
    def _geom(self):
        lens = self.osculating
        x0 = np.asarray(self.x0)
        out = []
        for c, r in lens.disks:
            c = np.asarray(c)
            out.append((c, r, math.atan2(*(x0 - c)[::-1])))
        return out

    def _rel_angle(self, i, p):
        c, _, phi0 = self._geom[i]
        ang = np.arctan2(p[:, 1] - c[1], p[:, 0] - c[0]) - phi0
        return (ang + math.pi) % (2 * math.pi) - math.pi

    def _bump(self, s, order=0):
        b = self.blend
        pw = 2.0 + self.alpha
        s = np.abs(s)
        inside = s < b
        u = np.where(inside, 1 - (s / b) ** 2, 0.0)
        chi = u ** 3
        if order == 0:
            return np.where(inside, s ** pw * chi, 0.0)
        du = -2 * s / b ** 2
        dchi = 3 * u ** 2 * du
        if order == 1:
            return np.where(inside, pw * s ** (pw - 1) * chi + s ** pw * dchi, 0.0)
        ddchi = 6 * u * du ** 2 + 3 * u ** 2 * (-2 / b ** 2)
        with np.errstate(divide="ignore", invalid="ignore"):
            q2 = (pw * (pw - 1) * s ** (pw - 2) * chi + 2 * pw * s ** (pw - 1) * dchi
                  + s ** pw * ddchi)
        return np.where(inside, q2, 0.0)

    def _radius(self, i, phi, order=0):
        _, r, _ = self._geom[i]
        s = r * phi
        if order == 0:
            return r - self.c_p * self._bump(s)
        if order == 1:
            return -self.c_p * self._bump(s, 1) * r * np.sign(phi)
        return -self.c_p * self._bump(s, 2) * r * r

    def _polar_curvature(self, i, phi):
        r0 = self._radius(i, phi)
        r1 = self._radius(i, phi, 1)
        r2 = self._radius(i, phi, 2)
        return (r0 ** 2 + 2 * r1 ** 2 - r0 * r2) / (r0 ** 2 + r1 ** 2) ** 1.5

    def _curve(self, i, phi):
        c, _, phi0 = self._geom[i]
        rr = self._radius(i, phi)
        return c + rr[:, None] * np.column_stack([np.cos(phi + phi0), np.sin(phi + phi0)])

    def _curve_levels(self, p):
        cols = []
        for i in range(2):
            c, _, _ = self._geom[i]
            phi = self._rel_angle(i, p)
            cols.append(self._radius(i, phi) - np.hypot(*(p - c).T))
        return np.column_stack(cols)

    def level(self, pts):
        p, single = _points(pts)
        return _unpack(self._curve_levels(p).min(1), single)

    def _curve_distance(self, i, q, n=BOUNDARY_SAMPLES):
        """Distance from points ``q`` to closed curve ``i`` (sampling + golden refinement)."""
        phi = np.linspace(-math.pi, math.pi, n, endpoint=False)
        # extra resolution where the bump lives
        _, r, _ = self._geom[i]
        span = self.blend / r
        phi = np.sort(np.concatenate([phi, np.linspace(-span, span, n // 4)]))
        curve = self._curve(i, phi)
        best = np.empty(len(q))
        for start in range(0, len(q), 512):
            qq = q[start:start + 512]
            d2 = ((qq[:, None, :] - curve[None, :, :]) ** 2).sum(-1)
            k = d2.argmin(1)
            lo = phi[np.maximum(k - 1, 0)]
            hi = phi[np.minimum(k + 1, len(phi) - 1)]
            invphi = (math.sqrt(5) - 1) / 2
            for _ in range(80):
                a = hi - invphi * (hi - lo)
                b = lo + invphi * (hi - lo)
                fa = ((self._curve(i, a) - qq) ** 2).sum(1)
                fb = ((self._curve(i, b) - qq) ** 2).sum(1)
                left = fa < fb
                hi = np.where(left, b, hi)
                lo = np.where(left, lo, a)
            mid = 0.5 * (lo + hi)
            best[start:start + 512] = np.sqrt(np.minimum(((self._curve(i, mid) - qq) ** 2).sum(1),
                                                         d2.min(1)))
        return best

    def signed_distance(self, pts):
        p, single = _points(pts)
        lev = self._curve_levels(p)
        inside = lev.min(1) >= 0
        out = np.empty(len(p))
        if inside.any():
            q = p[inside]
            out[inside] = np.minimum(self._curve_distance(0, q), self._curve_distance(1, q))
        if (~inside).any():
            q = p[~inside]
            bnd = self.boundary_samples()
            d2 = ((q[:, None, :] - bnd[None, :, :]) ** 2).sum(-1)
            out[~inside] = -np.sqrt(d2.min(1))
        return _unpack(out, single)

    @property
    def corner_points(self):
        return self.osculating.corner_points

    def boundary_samples(self, n=BOUNDARY_SAMPLES):
        out = []
        for i in range(2):
            phi = np.linspace(-math.pi, math.pi, n, endpoint=False)
            pts = self._curve(i, phi)
            lev = self._curve_levels(pts)[:, 1 - i]
            out.append(pts[lev >= -1e-12])
        out.append(np.array(self.corner_points))
        return np.vstack(out)

    def _curve_index(self, p):
        lev = np.abs(self._curve_levels(p))
        return lev <= 1e-9 * min(1 / self.kappa1, 1 / self.kappa2)

    def boundary_frame(self, pts):
        p, single = _points(pts)
        on = self._curve_index(p)
        if (on.sum(1) >= 2).any():
            raise NotSmooth("boundary is not C^2 at a corner point")
        if (on.sum(1) == 0).any():
            raise ValueError("point is not on the boundary")
        nrm = np.empty_like(p)
        kappa = np.empty(len(p))
        for i in range(2):
            sel = on[:, i]
            if not sel.any():
                continue
            phi = self._rel_angle(i, p[sel])
            _, _, phi0 = self._geom[i]
            r0 = self._radius(i, phi)
            r1 = self._radius(i, phi, 1)
            er = np.column_stack([np.cos(phi + phi0), np.sin(phi + phi0)])
            et = np.column_stack([-np.sin(phi + phi0), np.cos(phi + phi0)])
            tangent = r1[:, None] * er + r0[:, None] * et
            tangent /= np.hypot(*tangent.T)[:, None]
            # inward normal: tangent rotated towards the centre
            nn = np.column_stack([-tangent[:, 1], tangent[:, 0]])
            flip = (nn * er).sum(1) > 0
            nn[flip] *= -1
            nrm[sel] = nn
            kappa[sel] = self._polar_curvature(i, phi)
        return (nrm[0], float(kappa[0])) if single else (nrm, kappa)

    def corner_normals(self, vertex):
        v = self.find_corner(vertex)
        if np.allclose(v, self.x0):
            return self.osculating.normals
        return self.osculating.corner_normals(v)

    def corner_arcs(self, vertex):
        v = self.find_corner(vertex)
        if not np.allclose(v, self.x0):
            return self.osculating.corner_arcs(v)
        out = []
        for i in range(2):
            c, r, _ = self._geom[i]
            out.append(_oriented_arc(self, v, c, r,
                                     bump=lambda t, r=r: self.c_p * self._bump(r * t)))
        return tuple(out)

    def curve_samples(self, vertex, index, radius, n=BOUNDARY_SAMPLES):
        v = self.find_corner(vertex)
        phi = np.linspace(-math.pi, math.pi, n, endpoint=False)
        pts = self._curve(index, phi)
        return pts[np.hypot(*(pts - v).T) <= radius]

    def params(self):
        return {"x0": list(self.x0), "mu": self.mu, "kappa1": self.kappa1,
                "kappa2": self.kappa2, "c_p": self.c_p, "alpha": self.alpha,
                "axis_angle": self.axis_angle, "blend": self.blend}


# ---------------------------------------------------------------------------
# construction from dictionaries
# ---------------------------------------------------------------------------

def domain_from_dict(cfg: dict) -> DomainSpec:
    """Build a domain from its configuration mapping (the JSON domain file layout)."""
    cfg = dict(cfg)
    kind = cfg.pop("kind", None)
    if kind == "disk":
        return Disk(center=tuple(cfg.get("center", (0.0, 0.0))), radius=float(cfg["radius"]))
    if kind == "ellipse":
        return Ellipse(a=float(cfg["a"]), b=float(cfg["b"]),
                       center=tuple(cfg.get("center", (0.0, 0.0))))
    if kind == "lens":
        return lens_domain(cfg.get("x0", (0.0, 0.0)), float(cfg["mu"]), float(cfg["kappa1"]),
                           float(cfg["kappa2"]), float(cfg.get("axis_angle", 0.0)))
    if kind == "perturbed_lens":
        # missing parameters take the class defaults
        kw = {k: float(cfg[k]) for k in ("mu", "kappa1", "kappa2", "c_p", "alpha", "axis_angle",
                                         "blend") if k in cfg}
        return PerturbedLens(x0=tuple(cfg.get("x0", (0.0, 0.0))), **kw)
    if kind == "disk_intersection":
        disks = tuple((tuple(d["center"]), float(d["radius"])) for d in cfg["disks"])
        return DiskIntersection(disk_list=disks)
    raise ValueError(f"unknown domain kind {kind!r}")


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def signed_distance(domain: DomainSpec, point):
    """Distance to the boundary, positive inside and negative outside."""
    return domain.signed_distance(point)


def tangent_cone_at(domain: DomainSpec, vertex) -> ConeSpec:
    """Tangent cone of ``domain`` at a registered corner.

    The edges are the one-sided tangent rays of the two boundary curves; the
    opening is ``pi`` minus the angle between their inward normals.
    """
    v = domain.find_corner(vertex)
    nu1, nu2 = domain.corner_normals(v)
    cosang = float(np.clip(np.dot(nu1, nu2), -1.0, 1.0))
    opening = math.pi - math.acos(cosang)
    axis = nu1 + nu2
    return ConeSpec(vertex=(float(v[0]), float(v[1])), opening=opening,
                    axis_angle=math.atan2(axis[1], axis[0]))


def interior_cone(domain: DomainSpec, vertex, samples: int = 64) -> tuple[float, float]:
    """Half-angle and height of a large finite circular cone at ``vertex`` inside the closure.

    Among cones around the tangent-cone bisector, the one of largest area is
    returned; its height is limited by the boundary along every ray it spans.
    """
    cone = tangent_cone_at(domain, vertex)
    v = np.asarray(cone.vertex)
    tmax = 2.0 * domain.diameter
    best = (0.0, 0.0, -1.0)
    for theta0 in np.linspace(0, 0.5 * cone.opening, samples + 2)[1:-1]:
        psi = np.linspace(-theta0, theta0, 129)
        dirs = np.column_stack([np.cos(cone.axis_angle + psi), np.sin(cone.axis_angle + psi)])
        # start slightly inside to avoid the vertex itself
        start = v + 1e-9 * domain.diameter * _unit(cone.axis_angle)
        exits = domain.ray_exit(np.repeat(start[None, :], len(psi), 0), dirs, tmax)
        height = float(np.min(exits * np.cos(psi)))
        area = height ** 2 * math.tan(theta0)
        if area > best[2]:
            best = (float(theta0), height, area)
    return best[0], best[1]


def tangent_balls(domain: DomainSpec, vertex, L: float) -> list[tuple[np.ndarray, float]]:
    """Disks tangent to each corner curve at ``vertex`` passing through ``vertex + L*e``.

    ``e`` is the bisector of the tangent cone.  Each disk has radius
    ``(L/2)/<nu_i, e>`` and is centred on the inward normal ``nu_i``.

    Raises
    ------
    BallTooLarge
        If a sampled point of the corresponding boundary curve lies strictly
        inside its disk.
    """
    if L <= 0:
        raise ValueError("L must be positive")
    cone = tangent_cone_at(domain, vertex)
    v = np.asarray(cone.vertex)
    e = _unit(cone.axis_angle)
    balls = []
    for i, nu in enumerate(domain.corner_normals(v)):
        rho = 0.5 * L / float(np.dot(nu, e))
        center = v + rho * nu
        pts = domain.curve_samples(v, i, 2.5 * rho)
        if len(pts):
            depth = rho - np.hypot(*(pts - center).T)
            if depth.max() > 1e-9 * rho:
                raise BallTooLarge(f"curve {i + 1} enters tangent ball of radius {rho:.4g}")
        balls.append((center, rho))
    return balls


def in_delta_sector(x, x0, delta: float, domain: DomainSpec):
    """True where ``dist(x, boundary) >= delta * |x - x0|``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    p, single = _points(x)
    d = np.atleast_1d(domain.signed_distance(p))
    r = np.hypot(*(p - np.asarray(x0, dtype=float)).T)
    ok = d >= delta * r
    return bool(ok[0]) if single else ok


def boundary_curvature(domain: DomainSpec, point):
    """Curvature of the boundary at a smooth boundary point (inward normal convention)."""
    p, single = _points(point)
    for c in domain.corner_points:
        if np.any(np.hypot(*(p - np.asarray(c)).T) <= 1e-9 * domain.diameter):
            raise NotSmooth(f"boundary is not C^2 at corner {c}")
    _, kappa = domain.boundary_frame(p)
    kappa = np.atleast_1d(kappa)
    return float(kappa[0]) if single else kappa
