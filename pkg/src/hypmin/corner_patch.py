"""Boundary-fitted refinement of the graph solution around a corner.

Near a vertex the solution is close to a homogeneous cone solution and
vanishes along both edges, so a Cartesian lattice resolves it poorly.  The
patch uses coordinates ``(s, xi)`` with

    x = vertex + exp(s) * (cos phi, sin phi),
    phi = phi_1(s) + g(xi) * (phi_2(s) - phi_1(s)),

where ``phi_1, phi_2`` are the polar angles at which the circle of radius
``exp(s)`` meets the two boundary curves and ``g(xi) = xi^3 / (xi^3 + (1-xi)^3)``
clusters nodes towards both edges.  A uniform step in ``s`` is a geometric
grading towards the vertex.  The unknown is ``w = f**2``; with the cubic
clustering it is a smooth function of ``xi`` both where ``f`` behaves like
``dist**(1/3)`` and where it behaves like ``sqrt(dist)``.

Boundary data: ``w = 0`` on the edges and on a small arc at
``exp(-span) * radius``, and the outer field on the arc at ``radius``.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.interpolate import RectBivariateSpline

from .errors import NewtonStalled
from .geometry import DomainSpec, tangent_cone_at

# 9-point neighbourhood in (s, xi): centre, +-s, +-xi, the two diagonals
_OFFSETS = ((0, 0), (1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (-1, -1), (1, -1), (-1, 1))


def grading(xi):
    """``g(xi) = xi^3 / (xi^3 + (1 - xi)^3)`` and its first two derivatives."""
    xi = np.asarray(xi, dtype=float)
    t = xi ** 3
    u = (1 - xi) ** 3
    D = t + u
    A = 3 * xi ** 2 * (1 - xi) ** 2
    A1 = 6 * xi * (1 - xi) * (1 - 2 * xi)
    D1 = 3 * xi ** 2 - 3 * (1 - xi) ** 2
    return t / D, A / D ** 2, (A1 * D - 2 * A * D1) / D ** 3


def inverse_grading(g):
    g = np.clip(np.asarray(g, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.cbrt(g / (1 - g))
        return np.where(g >= 1, 1.0, t / (1 + t))


def edge_angles(domain: DomainSpec, vertex, s, axis: float) -> np.ndarray:
    """Polar angles ``(phi_1, phi_2)`` where the circle of radius ``exp(s)`` meets the corner curves.

    Bisection in the log of the curve parameter, so tiny radii keep full
    relative accuracy.  Columns are ordered by angle.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    r = np.exp(s)
    out = np.empty((len(s), 2))
    for k, arc in enumerate(domain.corner_arcs(vertex)):
        lo = np.full(len(s), -60.0)
        hi = np.full(len(s), math.log(math.pi))
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            d = arc(np.exp(mid))
            far = np.hypot(d[:, 0], d[:, 1]) > r
            hi = np.where(far, mid, hi)
            lo = np.where(far, lo, mid)
        d = arc(np.exp(0.5 * (lo + hi)))
        ang = np.arctan2(d[:, 1], d[:, 0]) - axis
        out[:, k] = axis + (ang + math.pi) % (2 * math.pi) - math.pi
    if out[0, 0] > out[0, 1]:
        out = out[:, ::-1]
    return out


class _Map:
    """Geometry of the patch coordinates on a fixed ``s`` grid."""

    def __init__(self, domain, vertex, s, axis, step=1e-3):
        self.vertex = np.asarray(vertex, dtype=float)
        self.phi = edge_angles(domain, vertex, s, axis)
        plus = edge_angles(domain, vertex, s + step, axis)
        minus = edge_angles(domain, vertex, s - step, axis)
        self.dphi = (plus - minus) / (2 * step)
        self.ddphi = (plus - 2 * self.phi + minus) / step ** 2
        self.s = s

    def points(self, j, xi):
        """Positions and first/second coordinate derivatives at nodes ``(s[j], xi)``."""
        p1, p2 = self.phi[j, 0], self.phi[j, 1]
        D = p2 - p1
        Ds = self.dphi[j, 1] - self.dphi[j, 0]
        Dss = self.ddphi[j, 1] - self.ddphi[j, 0]
        g, g1, g2 = grading(xi)
        phi = p1 + g * D
        ps = self.dphi[j, 0] + g * Ds
        pss = self.ddphi[j, 0] + g * Dss
        px, pxx, psx = g1 * D, g2 * D, g1 * Ds
        er = np.exp(self.s[j])[:, None]
        E = np.column_stack([np.cos(phi), np.sin(phi)])
        N = np.column_stack([-np.sin(phi), np.cos(phi)])
        X = self.vertex + er * E
        Xs = er * (E + ps[:, None] * N)
        Xx = er * (px[:, None] * N)
        Xss = er * ((1 - ps ** 2)[:, None] * E + (2 * ps + pss)[:, None] * N)
        Xsx = er * ((px + psx)[:, None] * N - (ps * px)[:, None] * E)
        Xxx = er * (pxx[:, None] * N - (px ** 2)[:, None] * E)
        return X, Xs, Xx, Xss, Xsx, Xxx


@dataclass
class CornerPatch:
    """Converged patch solution; call it (or :meth:`evaluate`) on points near the vertex."""

    vertex: tuple
    radius: float
    s: np.ndarray
    xi: np.ndarray
    w: np.ndarray          # f**2 on the full (s, xi) node array, boundaries included
    axis: float
    domain: DomainSpec
    meta: dict = field(default_factory=dict)

    @property
    def valid_radius(self) -> float:
        """Points closer than this to the vertex are served by the patch."""
        return 0.9 * self.radius

    def covers(self, pts) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        r = np.hypot(*(p - np.asarray(self.vertex)).T)
        return (r < self.valid_radius) & (r > math.exp(self.s[0] + 2.0))

    def _spline(self):
        spl = self.__dict__.get("_spl")
        if spl is None:
            # f^2 / r^2 is O(1) over the whole patch
            spl = RectBivariateSpline(self.s, self.xi, self.w * np.exp(-2 * self.s)[:, None],
                                      kx=3, ky=3)
            self.__dict__["_spl"] = spl
        return spl

    def evaluate(self, pts) -> np.ndarray:
        p = np.atleast_2d(np.asarray(pts, dtype=float))
        d = p - np.asarray(self.vertex)
        r = np.hypot(d[:, 0], d[:, 1])
        s = np.log(r)
        ang = np.arctan2(d[:, 1], d[:, 0]) - self.axis
        ang = self.axis + (ang + math.pi) % (2 * math.pi) - math.pi
        phi = edge_angles(self.domain, self.vertex, s, self.axis)
        xi = inverse_grading((ang - phi[:, 0]) / (phi[:, 1] - phi[:, 0]))
        w = self._spline().ev(s, xi) * r * r
        return np.sqrt(np.maximum(w, 0.0))

    __call__ = evaluate


def default_patch_radius(domain: DomainSpec, vertex) -> float:
    """``0.3 diam``, kept below ``0.45`` times the distance to the nearest other corner."""
    radius = 0.3 * domain.diameter
    v = np.asarray(vertex, dtype=float)
    for c in domain.corner_points:
        gap = float(np.hypot(*(np.asarray(c) - v)))
        if gap > 1e-9 * domain.diameter:
            radius = min(radius, 0.45 * gap)
    return radius


def solve_corner_patch(domain: DomainSpec, vertex, outer: Callable, radius: float | None = None,
                       span: float = 23.0, ds: float = 0.04, nxi: int = 64, n: int = 2,
                       tol: float = 1e-12, max_iter: int = 40, init: Callable | None = None,
                       outer_margin: float = 0.0) -> CornerPatch:
    """Solve the graph equation on the corner patch of ``domain`` at ``vertex``.

    ``outer`` maps ``(M, 2)`` points on the arc ``|x - vertex| = radius`` to
    values of ``f``.  Arc nodes closer than ``outer_margin`` to the boundary
    use ``f**2`` proportional to the boundary distance instead, scaled to the
    nearest trusted value (lattice data are unreliable there).  ``init`` optionally gives a starting ``f``; by default
    the homogeneous solution of the tangent cone is used.  The stopping test
    is on the residual of each row relative to the sum of the magnitudes of
    its terms.

    Raises
    ------
    ValueError
        If the patch leaves the domain (radius too large).
    NewtonStalled
        If Newton fails to reach ``tol``.
    """
    t0 = time.perf_counter()
    v = domain.find_corner(vertex)
    cone = tangent_cone_at(domain, v)
    radius = default_patch_radius(domain, v) if radius is None else float(radius)
    ns = max(8, int(round(span / ds)))
    s = math.log(radius) - span + (span / ns) * np.arange(ns + 1)
    xi = np.arange(nxi + 1) / nxi
    geo = _Map(domain, v, s, cone.axis_angle)
    hs, hx = s[1] - s[0], xi[1] - xi[0]

    jj, ii = np.meshgrid(np.arange(1, ns), np.arange(1, nxi), indexing="ij")
    jj, ii = jj.ravel(), ii.ravel()
    index = -np.ones((ns + 1, nxi + 1), dtype=np.int64)
    index[jj, ii] = np.arange(len(jj))
    X, Xs, Xx, Xss, Xsx, Xxx = geo.points(jj, xi[ii])
    # near the vertex the nodes hug the edges closer than the level function resolves
    probe = s[jj] > math.log(radius) - 7.0
    if np.any(np.asarray(domain.level(X[probe])) <= 0):
        raise ValueError(f"corner patch of radius {radius:.3g} leaves the domain")
    Jinv = np.linalg.inv(np.stack([Xs, Xx], axis=2))      # [node, coordinate a, x_i]
    H = np.stack([np.stack([Xss, Xsx], 2), np.stack([Xsx, Xxx], 2)], 2)   # [node, i, a, b]

    from .cone_profile import solve_cone_profile
    prof = solve_cone_profile(cone.mu, n)

    def cone_shape(x):
        # cone solution at the mapped angle: vanishes on the actual edges
        return prof.h(np.clip(grading(x)[0], 1e-300, 1 - 1e-16) * cone.opening)

    W = np.zeros((ns + 1, nxi + 1))
    Xo = geo.points(np.full(nxi - 1, ns), xi[1:-1])[0]
    fo = np.asarray(outer(Xo), dtype=float)
    if outer_margin > 0:
        dist = np.asarray(domain.signed_distance(Xo))
        trusted = dist >= outer_margin
        if not trusted.any():
            raise ValueError("no outer arc node is farther than outer_margin from the boundary")
        k = np.flatnonzero(trusted)
        near = np.clip(np.searchsorted(k, np.arange(len(fo))), 0, len(k) - 1)
        lo = k[np.maximum(near - 1, 0)]
        hi = k[near]
        pick = np.where(np.abs(np.arange(len(fo)) - lo) < np.abs(hi - np.arange(len(fo))), lo, hi)
        # away from the vertex the arc meets smooth boundary, where f**2 ~ 2 dist / kappa
        fo = np.where(trusted, fo, fo[pick] * np.sqrt(np.maximum(dist, 0.0) / dist[pick]))
    W[ns, 1:-1] = fo ** 2

    nbr = np.empty((len(jj), 9), dtype=np.int64)
    bval = np.empty((len(jj), 9))
    for k, (a, b) in enumerate(_OFFSETS):
        nbr[:, k] = index[jj + a, ii + b]
        bval[:, k] = W[jj + a, ii + b]
    cut = nbr < 0
    ops = {key: np.zeros(9) for key in ("s", "x", "ss", "sx", "xx")}
    ops["s"][[1, 2]] = 1 / (2 * hs), -1 / (2 * hs)
    ops["x"][[3, 4]] = 1 / (2 * hx), -1 / (2 * hx)
    ops["ss"][[0, 1, 2]] = -2 / hs ** 2, 1 / hs ** 2, 1 / hs ** 2
    ops["xx"][[0, 3, 4]] = -2 / hx ** 2, 1 / hx ** 2, 1 / hx ** 2
    ops["sx"][[5, 6, 7, 8]] = 1, 1, -1, -1
    ops["sx"] /= 4 * hs * hx

    def derivs(w):
        U = np.where(cut, bval, w[np.maximum(nbr, 0)])
        return [(ops[key] * U).sum(1) for key in ("s", "x", "ss", "sx", "xx")]

    def local(w, Ws, Wx, Wss, Wsx, Wxx):
        gx = Jinv[:, 0, 0] * Ws + Jinv[:, 1, 0] * Wx
        gy = Jinv[:, 0, 1] * Ws + Jinv[:, 1, 1] * Wx
        Mss = Wss - gx * H[:, 0, 0, 0] - gy * H[:, 1, 0, 0]
        Msx = Wsx - gx * H[:, 0, 0, 1] - gy * H[:, 1, 0, 1]
        Mxx = Wxx - gx * H[:, 0, 1, 1] - gy * H[:, 1, 1, 1]

        def hess(i, j):
            return (Jinv[:, 0, i] * Mss * Jinv[:, 0, j] + Jinv[:, 1, i] * Mxx * Jinv[:, 1, j]
                    + (Jinv[:, 0, i] * Jinv[:, 1, j] + Jinv[:, 1, i] * Jinv[:, 0, j]) * Msx)

        wxx, wyy, wxy = hess(0, 0), hess(1, 1), hess(0, 1)
        G = gx * gx + gy * gy
        quad = gx * gx * wxx + 2 * gx * gy * wxy + gy * gy * wyy
        lap = (4 * w + G) * (wxx + wyy)
        r = lap - quad - 2 * G + 2 * n * (4 * w + G)
        # size of the individual terms, for a scale-free relative residual
        size = abs(lap) + abs(quad) + 2 * G + 2 * n * (4 * w + G)
        return r, size

    if init is None:
        f0 = np.exp(s[jj]) * cone_shape(xi[ii])
    else:
        f0 = np.asarray(init(X), dtype=float)
    w = np.maximum(f0 ** 2, 1e-300)

    rows = np.repeat(np.arange(len(w)), 9).reshape(-1, 9)
    keep = ~cut
    step_c = 1e-30
    d = derivs(w)
    r, size = local(w, *d)
    history = [float(np.max(np.abs(r) / size.real))]
    for it in range(max_iter):
        if history[-1] <= tol:
            break
        # complex-step linearisation of the pointwise residual
        args = [w] + d
        co = []
        for k in range(6):
            a = [x.astype(complex) for x in args]
            a[k] = a[k] + 1j * step_c
            co.append(local(*a)[0].imag / step_c)
        coef = sum(c[:, None] * ops[key] for c, key in zip(co[1:], ("s", "x", "ss", "sx", "xx")))
        coef[:, 0] += co[0]
        J = sp.csc_matrix((coef[keep], (rows[keep], nbr[keep])), shape=(len(w), len(w)))
        dw = spla.splu(J).solve(-r)
        # merit: rows scaled by their term sizes, frozen for this step
        merit0 = np.linalg.norm(r / size)
        t = 1.0
        while True:
            w_new = np.maximum(w + t * dw, 1e-300)
            d_new = derivs(w_new)
            r_new, size_new = local(w_new, *d_new)
            if np.all(np.isfinite(r_new)) and np.linalg.norm(r_new / size) < (1 - 1e-4 * t) * merit0:
                break
            t *= 0.5
            if t < 2.0 ** -20:
                break
        if t < 2.0 ** -20:
            # no further decrease available: the residual sits at its rounding floor
            break
        w, d, r, size = w_new, d_new, r_new, size_new
        history.append(float(np.max(np.abs(r) / size)))
    if history[-1] > 100 * tol:
        raise NewtonStalled("corner patch Newton did not converge", residual=history[-1])
    W[jj, ii] = w
    meta = {"span": span, "ds": float(hs), "nxi": nxi, "unknowns": int(len(w)),
            "newton_iterations": len(history) - 1, "residual_history": history,
            "final_residual": history[-1], "seconds": time.perf_counter() - t0}
    return CornerPatch(vertex=(float(v[0]), float(v[1])), radius=radius, s=s, xi=xi, w=W,
                       axis=cone.axis_angle, domain=domain, meta=meta)
