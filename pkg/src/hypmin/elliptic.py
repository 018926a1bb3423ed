"""Finite-difference solver for minimal graphs over convex planar domains.

The unknown is ``w = f**2``.  With ``G = |grad w|^2`` the equation

    Delta f - f_i f_j f_ij / (1 + |grad f|^2) + n / f = 0

multiplied by ``2 sqrt(w) (4w + G)`` becomes the polynomial equation

    (4w + G) Delta w - w_i w_j w_ij - 2G + 2n (4w + G) = 0,

which is regular up to the boundary (``w`` vanishes linearly on smooth
boundary arcs) and reproduces hemispheres exactly.

Discretisation: three-point non-uniform (Shortley-Weller) stencils along
the two axes and the two diagonals, with cut fractions from exact
ray/boundary intersections.  The mixed derivative comes from the diagonal
second derivatives, so every node uses at most its eight neighbours.

Corners are handled by a separate boundary-fitted solve in a disk around
each vertex (see :mod:`hypmin.corner_patch`); :func:`evaluate` defers to it
there.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    NewtonStalled,
    NonPositiveValue,
    NotNested,
    OutOfDomain,
    TooCloseToBoundary,
)
from .geometry import DomainSpec

OUTSIDE, INTERIOR, NEAR_BOUNDARY = 0, 1, 2
RESOLUTIONS = (128, 256, 512, 1024)

# slot layout of the 9-point neighbourhood: centre, then (+, -) pairs per line
_LINES = (
    (1, 0, 1.0),   # x
    (0, 1, 1.0),   # y
    (1, 1, math.sqrt(2.0)),   # first diagonal
    (1, -1, math.sqrt(2.0)),  # second diagonal
)
_OFFSETS = [(0, 0)]
for _dx, _dy, _ in _LINES:
    _OFFSETS += [(_dx, _dy), (-_dx, -_dy)]


@dataclass
class GridField:
    """Solution values on a Cartesian lattice masked to the domain.

    ``values[j, i]`` is ``f`` at ``origin + (i, j) * spacing``; outside nodes
    hold 0.  ``mask`` marks OUTSIDE (0), INTERIOR (1) and NEAR_BOUNDARY (2,
    interior nodes with at least one cut stencil arm).
    """

    domain: DomainSpec
    origin: tuple[float, float]
    spacing: float
    values: np.ndarray
    mask: np.ndarray
    eps: float = 0.0
    n: int = 2
    solver_meta: dict = field(default_factory=dict)
    patches: tuple = ()

    @property
    def shape(self):
        return self.values.shape

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.origin[0] + self.spacing * np.arange(self.nx)

    @property
    def y(self) -> np.ndarray:
        return self.origin[1] + self.spacing * np.arange(self.ny)

    def interior_nodes(self):
        """Coordinates ``(N, 2)`` and values of all interior nodes."""
        jj, ii = np.nonzero(self.mask > 0)
        pts = np.column_stack([self.origin[0] + ii * self.spacing,
                               self.origin[1] + jj * self.spacing])
        return pts, self.values[jj, ii]

    def freeze(self) -> "GridField":
        self.values.setflags(write=False)
        self.mask.setflags(write=False)
        return self

    def __call__(self, pts):
        return evaluate(self, pts)


def make_grid(domain: DomainSpec, resolution: int):
    """Lattice with ``resolution`` nodes across the longer side of the bounding box."""
    if resolution < 8:
        raise ValueError("resolution must be at least 8")
    x0, y0, x1, y1 = domain.bbox()
    span = max(x1 - x0, y1 - y0)
    h = span / (resolution - 1)
    nx = int(math.floor((x1 - x0) / h + 1e-9)) + 1
    ny = int(math.floor((y1 - y0) / h + 1e-9)) + 1
    # centre the lattice on the box so both sides see the same margin
    ox = 0.5 * (x0 + x1) - 0.5 * (nx - 1) * h
    oy = 0.5 * (y0 + y1) - 0.5 * (ny - 1) * h
    return (ox, oy), h, nx, ny


class Stencil:
    """Cut-cell difference operators for one lattice.

    Each operator is a ``(N, 9)`` coefficient array over the neighbourhood
    slots; ``nbr`` holds the unknown index of each slot (``-1`` where the
    arm is cut by the boundary, in which case ``bpts`` holds the boundary
    point the coefficient refers to).
    """

    def __init__(self, domain: DomainSpec, origin, h, nx, ny):
        self.domain = domain
        self.origin = origin
        self.h = h
        xs = origin[0] + h * np.arange(nx)
        ys = origin[1] + h * np.arange(ny)
        X, Y = np.meshgrid(xs, ys)
        inside = domain.level(np.column_stack([X.ravel(), Y.ravel()])).reshape(ny, nx) > 0
        # nodes sitting on the boundary up to rounding give zero-length arms; they
        # are boundary nodes, so drop them and rebuild
        for _ in range(3):
            self._cut_cells(domain, inside, xs, ys, h)
            tiny = (self.frac < 1e-8).any(1)
            if not tiny.any():
                break
            inside[self.jj[tiny], self.ii[tiny]] = False
        cut = self.nbr < 0
        jj, ii = self.jj, self.ii
        self.cut = cut
        mask = np.zeros((ny, nx), dtype=np.int8)
        mask[jj, ii] = np.where(cut.any(1), NEAR_BOUNDARY, INTERIOR)
        self.mask = mask

        self.ops = self._build()

    def _cut_cells(self, domain, inside, xs, ys, h):
        ny, nx = inside.shape
        index = -np.ones((ny, nx), dtype=np.int64)
        jj, ii = np.nonzero(inside)
        index[jj, ii] = np.arange(len(jj))
        self.index = index
        self.jj, self.ii = jj, ii
        self.pts = np.column_stack([xs[ii], ys[jj]])
        npts = len(jj)

        nbr = np.empty((npts, 9), dtype=np.int64)
        for s, (dx, dy) in enumerate(_OFFSETS):
            j2, i2 = jj + dy, ii + dx
            ok = (j2 >= 0) & (j2 < ny) & (i2 >= 0) & (i2 < nx)
            col = np.full(npts, -1, dtype=np.int64)
            col[ok] = index[j2[ok], i2[ok]]
            nbr[:, s] = col
        self.nbr = nbr
        self.frac = np.ones((npts, 9))
        self.bpts = np.full((npts, 9, 2), np.nan)
        cut = nbr < 0
        for s in range(1, 9):
            sel = np.nonzero(cut[:, s])[0]
            if not len(sel):
                continue
            dx, dy = _OFFSETS[s]
            length = h * math.hypot(dx, dy)
            d = np.array([dx, dy]) / math.hypot(dx, dy)
            t = domain.ray_exit(self.pts[sel], np.tile(d, (len(sel), 1)), length)
            t = np.minimum(t, length)
            self.frac[sel, s] = t / length
            self.bpts[sel, s] = self.pts[sel] + t[:, None] * d

    def _line(self, k):
        """First and second derivative coefficients along line ``k``."""
        sp_, sm = 1 + 2 * k, 2 + 2 * k
        H = self.h * _LINES[k][2]
        b = self.frac[:, sp_]
        a = self.frac[:, sm]
        d1 = np.zeros((len(a), 9))
        d2 = np.zeros((len(a), 9))
        d1[:, sm] = -b / (a * (a + b)) / H
        d1[:, 0] = (b - a) / (a * b) / H
        d1[:, sp_] = a / (b * (a + b)) / H
        d2[:, sm] = 2.0 / (a * (a + b)) / H ** 2
        d2[:, 0] = -2.0 / (a * b) / H ** 2
        d2[:, sp_] = 2.0 / (b * (a + b)) / H ** 2
        return d1, d2

    def _build(self):
        dx, dxx = self._line(0)
        dy, dyy = self._line(1)
        _, dpp = self._line(2)
        _, dmm = self._line(3)
        return {"x": dx, "y": dy, "xx": dxx, "yy": dyy, "xy": 0.5 * (dpp - dmm)}

    @property
    def size(self) -> int:
        return len(self.jj)

    def neighbour_values(self, u, g):
        """``(N, 9)`` array of slot values; cut arms take boundary values ``g``."""
        U = np.where(self.cut, 0.0, u[np.maximum(self.nbr, 0)])
        if np.isscalar(g):
            U[self.cut] = g
        else:
            U[self.cut] = g(self.bpts[self.cut])
        return U

    def derivatives(self, u, g):
        U = self.neighbour_values(u, g)
        return {k: (c * U).sum(1) for k, c in self.ops.items()}

    def matrix(self, coef):
        """Sparse matrix of the slot coefficients restricted to unknowns."""
        rows = np.repeat(np.arange(self.size), 9).reshape(-1, 9)
        keep = ~self.cut
        return sp.csr_matrix((coef[keep], (rows[keep], self.nbr[keep])),
                             shape=(self.size, self.size))


class _Equation:
    """Residual of the graph equation in ``w = f**2`` with its linearisation.

    ``residual`` returns ``r`` (the polynomial form Newton drives to zero)
    and ``q`` (the residual of the equation for ``f``, used for stopping).
    """

    def __init__(self, st: Stencil, n: int):
        self.st = st
        self.n = n

    def residual(self, w, d):
        n = self.n
        G = d["x"] ** 2 + d["y"] ** 2
        lap = d["xx"] + d["yy"]
        quad = d["x"] ** 2 * d["xx"] + 2 * d["x"] * d["y"] * d["xy"] + d["y"] ** 2 * d["yy"]
        r = (4 * w + G) * lap - quad - 2 * G + 2 * n * (4 * w + G)
        return r, r / (2 * np.sqrt(w) * (4 * w + G))

    def coefficients(self, w, d):
        n = self.n
        wx, wy = d["x"], d["y"]
        G = wx ** 2 + wy ** 2
        lap = d["xx"] + d["yy"]
        return {
            "w": 4 * lap + 8 * n,
            "x": 2 * wx * lap - 2 * wx * d["xx"] - 2 * wy * d["xy"] + (4 * n - 4) * wx,
            "y": 2 * wy * lap - 2 * wy * d["yy"] - 2 * wx * d["xy"] + (4 * n - 4) * wy,
            "xx": 4 * w + G - wx ** 2,
            "yy": 4 * w + G - wy ** 2,
            "xy": -2 * wx * wy,
        }

    def jacobian(self, w, d):
        c = self.coefficients(w, d)
        ops = self.st.ops
        coef = sum(c[key][:, None] * ops[key] for key in ("x", "y", "xx", "yy", "xy"))
        coef[:, 0] += c["w"]
        return self.st.matrix(coef)


class _EquationF(_Equation):
    """The same equation with ``f`` itself as unknown, multiplied by ``1 + |grad f|**2``.

    Used for positive boundary data, where ``f >= eps`` keeps ``n/f``
    bounded but ``f**2`` loses its regularity at the boundary.
    """

    def residual(self, f, d):
        fx, fy = d["x"], d["y"]
        G = fx ** 2 + fy ** 2
        quad = fx ** 2 * d["xx"] + 2 * fx * fy * d["xy"] + fy ** 2 * d["yy"]
        r = (1 + G) * (d["xx"] + d["yy"]) - quad + self.n * (1 + G) / f
        return r, r / (1 + G)

    def coefficients(self, f, d):
        n = self.n
        fx, fy = d["x"], d["y"]
        G = fx ** 2 + fy ** 2
        lap = d["xx"] + d["yy"]
        return {
            "w": -n * (1 + G) / f ** 2,
            "x": 2 * fx * lap - 2 * fx * d["xx"] - 2 * fy * d["xy"] + 2 * n * fx / f,
            "y": 2 * fy * lap - 2 * fy * d["yy"] - 2 * fx * d["xy"] + 2 * n * fy / f,
            "xx": 1 + G - fx ** 2,
            "yy": 1 + G - fy ** 2,
            "xy": -2 * fx * fy,
        }


def _linear_solve(J, rhs, method):
    if method == "direct":
        return spla.splu(J.tocsc(), permc_spec="COLAMD").solve(rhs)
    if method == "krylov":
        diag = J.diagonal()
        M = spla.LinearOperator(J.shape, matvec=lambda v: v / diag)
        sol, info = spla.gmres(J, rhs, M=M, rtol=1e-10, restart=200, maxiter=50)
        if info < 0:
            raise NewtonStalled("Krylov solve broke down", residual=float("nan"))
        return sol
    raise ValueError(f"unknown linear solver {method!r}")


def assemble_residual(field: GridField, boundary_value=None) -> np.ndarray:
    """Residual ``Q(f) = (delta_ij - f_i f_j/(1+|grad f|^2)) f_ij + n/f`` on the lattice.

    ``boundary_value`` is a constant or a callable on ``(M, 2)`` boundary
    points; by default the field's own boundary offset ``eps`` is used.
    Returns a lattice-shaped array with NaN at outside nodes.

    Raises
    ------
    NonPositiveValue
        If an interior node holds ``f <= 0``.
    """
    st = _stencil_for(field)
    f = field.values[st.jj, st.ii].astype(float)
    bad = np.nonzero(~(f > 0))[0]
    if len(bad):
        k = int(bad[0])
        raise NonPositiveValue(f"f = {f[k]:.3g} at node ({st.ii[k]}, {st.jj[k]})",
                               node=(int(st.ii[k]), int(st.jj[k])))
    g = field.eps if boundary_value is None else boundary_value
    d = st.derivatives(f, g)
    fx, fy = d["x"], d["y"]
    quad = fx ** 2 * d["xx"] + 2 * fx * fy * d["xy"] + fy ** 2 * d["yy"]
    q = d["xx"] + d["yy"] - quad / (1 + fx ** 2 + fy ** 2) + field.n / f
    out = np.full(field.shape, np.nan)
    out[st.jj, st.ii] = q
    return out


_STENCIL_CACHE: dict = {}


def _stencil_for(field: GridField) -> Stencil:
    key = (field.domain.domain_hash, field.origin, field.spacing, field.nx, field.ny)
    st = _STENCIL_CACHE.get(key)
    if st is None:
        st = Stencil(field.domain, field.origin, field.spacing, field.nx, field.ny)
        _STENCIL_CACHE[key] = st
    return st


def initial_guess(domain: DomainSpec, st: Stencil, n: int = 2, centres: int = 20) -> np.ndarray:
    """Starting iterate for ``f**2``.

    Pointwise maximum of two positive functions: the solution of
    ``Delta u = -2n`` with zero boundary data (exact for disks, and vanishing
    linearly at the boundary like the true ``f**2`` on smooth boundaries) and
    the inscribed-disk hemispheres ``d(z)^2 - |x - z|^2`` centred on a coarse
    sub-lattice.
    """
    lap = st.matrix(st.ops["xx"] + st.ops["yy"])
    w = spla.splu(lap.tocsc()).solve(np.full(st.size, -2.0 * n))
    stride = max(1, int(round(max(st.index.shape) / centres)))
    sel = (st.ii % stride == 0) & (st.jj % stride == 0)
    z = st.pts[sel]
    r = np.maximum(np.asarray(domain.signed_distance(z)), 0.0)
    for start in range(0, len(z), 256):
        zz, rr = z[start:start + 256], r[start:start + 256]
        d2 = ((st.pts[:, None, :] - zz[None, :, :]) ** 2).sum(-1)
        w = np.maximum(w, (rr[None, :] ** 2 - d2).max(1))
    return w


def _wfield(domain, st, w, eps, n, meta):
    vals = np.zeros(st.index.shape)
    vals[st.jj, st.ii] = np.sqrt(w)
    return GridField(domain=domain, origin=st.origin, spacing=st.h, values=vals,
                     mask=st.mask.copy(), eps=eps, n=n, solver_meta=meta)


def _stencil(domain, resolution):
    origin, h, nx, ny = make_grid(domain, resolution)
    key = (domain.domain_hash, origin, h, nx, ny)
    st = _STENCIL_CACHE.get(key)
    if st is None:
        st = Stencil(domain, origin, h, nx, ny)
        if len(_STENCIL_CACHE) > 8:
            _STENCIL_CACHE.clear()
        _STENCIL_CACHE[key] = st
    return st


def newton_solve(domain: DomainSpec, resolution: int, eps: float,
                 init: Optional[GridField] = None, tol: float = 1e-9, n: int = 2,
                 max_iter: int = 100, linear_solver: str = "direct",
                 boundary_value: Optional[Callable] = None) -> GridField:
    """Damped Newton iteration for boundary data ``f = eps`` (``eps >= 0``).

    The stopping test is on the residual of the equation for ``f``,
    maximised over all interior nodes.  Iterates are clipped below at
    ``f = 1e-8 diam``; the line search halves the step down to ``2**-20``.
    ``boundary_value`` optionally replaces the constant ``eps`` by a callable
    on boundary points.  Zero data are solved for ``f**2``; positive data
    for ``f``, starting from ``sqrt(w0 + eps**2)`` (exact on disks).

    Raises
    ------
    NewtonStalled
        If the line search fails or the iteration limit is reached.
    """
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    st = _stencil(domain, resolution)
    if init is None:
        # on the disk this is exactly the solution with boundary value eps
        f0 = np.sqrt(initial_guess(domain, st, n) + eps * eps)
    else:
        if (init.spacing != st.h or init.origin != st.origin
                or init.shape != st.index.shape):
            raise ValueError("init field lives on a different lattice")
        f0 = init.values[st.jj, st.ii].astype(float)
        bad = np.nonzero(~(f0 > 0))[0]
        if len(bad):
            k = int(bad[0])
            raise NonPositiveValue("initial field must be positive",
                                   node=(int(st.ii[k]), int(st.jj[k])))
        if init.eps != eps:
            # move the guess to the new boundary value
            f0 = np.sqrt(np.maximum(f0 * f0 - init.eps ** 2, 0.0) + eps * eps)
    return _newton(domain, st, f0, eps, tol, n, max_iter, linear_solver, boundary_value)


def _newton(domain, st, f0, eps, tol, n, max_iter=100, linear_solver="direct",
            boundary_value=None, unknown=None):
    # zero data: unknown w = f**2; positive data: unknown f unless told otherwise
    if unknown is None:
        unknown = "f" if eps > 0 or boundary_value is not None else "w"
    in_f = unknown == "f"
    if in_f:
        eq = _EquationF(st, n)
        floor = 1e-8 * domain.diameter
        g = eps if boundary_value is None else boundary_value
        w = np.maximum(f0, floor)
    else:
        eq = _Equation(st, n)
        floor = (1e-8 * domain.diameter) ** 2
        g = eps * eps if boundary_value is None else (lambda p: boundary_value(p) ** 2)
        w = np.maximum(f0 ** 2, floor)

    def evaluate_res(w):
        d = st.derivatives(w, g)
        r, q = eq.residual(w, d)
        return r, d, q

    r, d, q = evaluate_res(w)
    history = [float(np.max(np.abs(q)))]
    t0 = time.perf_counter()
    for it in range(max_iter):
        if history[-1] <= tol:
            break
        J = eq.jacobian(w, d)
        dw = _linear_solve(J, -r, linear_solver)
        # Newton directions descend the raw residual norm, so that is the merit
        norm0 = np.linalg.norm(r)
        step = 1.0
        while True:
            w_new = np.maximum(w + step * dw, floor)
            r_new, d_new, q_new = evaluate_res(w_new)
            if np.all(np.isfinite(q_new)) and np.linalg.norm(r_new) < (1 - 1e-4 * step) * norm0:
                break
            step *= 0.5
            if step < 2.0 ** -20:
                # a step at rounding level means the iteration has converged as far as it can
                if np.max(np.abs(dw)) <= 1e-12 * np.max(w):
                    w_new, r_new, d_new, q_new = w, r, d, q
                    break
                raise NewtonStalled(f"line search failed at iteration {it}",
                                    residual=history[-1])
        converged_step = np.max(np.abs(step * dw)) <= 1e-13 * np.max(w)
        w, r, d, q = w_new, r_new, d_new, q_new
        history.append(float(np.max(np.abs(q))))
        if converged_step:
            break
    else:
        if history[-1] > tol:
            raise NewtonStalled(f"no convergence in {max_iter} iterations", residual=history[-1])
    meta = {"eps": eps, "tol": tol, "newton_iterations": len(history) - 1,
            "residual_history": history, "final_residual": history[-1],
            "linear_solver": linear_solver, "unknown": "f" if in_f else "w",
            "seconds": time.perf_counter() - t0}
    return _wfield(domain, st, w * w if in_f else w, eps, n, meta)


def solve_domain(domain: DomainSpec, resolution: int = 256, tol: float = 1e-9, n: int = 2,
                 linear_solver: str = "direct", eps_schedule=None, corner_patches=True,
                 patch_radius: Optional[float] = None) -> GridField:
    """Solve the zero-boundary problem on ``domain``.

    The ``w`` formulation is regular at the boundary, so the zero-data problem
    is attacked directly.  If Newton stalls from the initial guess, the
    boundary offset is continued geometrically from ``0.05 * diam`` (ratio
    1/2) down to ``h**2`` and then to zero, each level warm-starting the
    next.  If that stalls as well, the continuation is repeated with ``f``
    as unknown, and failing the final zero-data step the last two levels
    are extrapolated linearly to ``eps = 0``
    (``solver_meta["extrapolated_from"]``).  The schedule actually used is
    recorded in ``solver_meta``.

    ``corner_patches`` (True for all corners, or a list of vertices) adds a
    boundary-fitted solve on a disk around each selected corner, fed with
    the lattice solution on its outer arc.  ``patch_radius`` fixes the disk
    radius; by default it is chosen per corner.  Use a common explicit
    radius when the fields of two domains are to be compared near a vertex.
    """
    if resolution not in RESOLUTIONS:
        raise ValueError(f"resolution must be one of {RESOLUTIONS}")
    if n != 2:
        raise ValueError("the planar solver handles n = 2 only")
    t0 = time.perf_counter()
    st = _stencil(domain, resolution)
    w0 = initial_guess(domain, st, n)
    f0 = np.sqrt(w0)
    if eps_schedule is None:
        try:
            fld = _newton(domain, st, f0, 0.0, tol, n, 100, linear_solver)
            schedule = [0.0]
        except NewtonStalled:
            eps_schedule = _default_schedule(domain, st.h)
    if eps_schedule is not None:
        schedule = list(eps_schedule)
        if schedule[-1] != 0.0:
            schedule.append(0.0)
        try:
            for eps in schedule:
                fld = _newton(domain, st, np.maximum(f0, eps), eps, tol, n, 100, linear_solver,
                              unknown="w")
                f0 = fld.values[st.jj, st.ii]
        except NewtonStalled:
            fld = _continue_in_f(domain, st, w0, schedule, tol, n, linear_solver)
            schedule = fld.solver_meta["eps_schedule"]
    fld.solver_meta.update({"eps_schedule": schedule, "resolution": resolution,
                            "spacing": st.h, "unknowns": st.size,
                            "domain_hash": domain.domain_hash})
    if corner_patches is True:
        corner_patches = domain.corner_points
    if corner_patches:
        from .corner_patch import solve_corner_patch

        def outer(pts):
            return evaluate(fld, pts, strict=False)

        fld.patches = tuple(solve_corner_patch(domain, c, outer, radius=patch_radius, n=n,
                                               outer_margin=2 * st.h)
                            for c in corner_patches)
        fld.solver_meta["corner_patches"] = [
            {"vertex": list(p.vertex), "radius": p.radius,
             **{k: p.meta[k] for k in ("unknowns", "newton_iterations", "final_residual")}}
            for p in fld.patches]
    fld.solver_meta["total_seconds"] = time.perf_counter() - t0
    return fld.freeze()


def _continue_in_f(domain, st, w0, schedule, tol, n, linear_solver):
    """Offset continuation with ``f`` as unknown, then the zero-data solve.

    Warm starts carry ``f**2 - eps**2``, which does not depend on eps for
    disks.  If the final zero-data solve stalls too, the last two levels are
    extrapolated linearly to ``eps = 0``.
    """
    schedule = [e for e in schedule if e > 0]
    levels = []
    for eps in schedule:
        f0 = np.sqrt(np.maximum(w0, 0.0) + eps * eps)
        levels.append(_newton(domain, st, f0, eps, tol, n, 100, linear_solver, unknown="f"))
        w0 = levels[-1].values[st.jj, st.ii] ** 2 - eps * eps
    try:
        fld = _newton(domain, st, np.sqrt(np.maximum(w0, 0.0)), 0.0, tol, n, 100, linear_solver)
        schedule.append(0.0)
    except NewtonStalled:
        fld = _extrapolate(levels, schedule)
    fld.solver_meta["eps_schedule"] = schedule
    fld.solver_meta["continuation_unknown"] = "f"
    return fld


def _extrapolate(levels, schedule):
    """First-order Richardson extrapolation to eps = 0 over the last two levels."""
    if len(levels) < 2:
        raise NewtonStalled("zero-data solve failed and there is nothing to extrapolate",
                            residual=levels[-1].solver_meta["final_residual"] if levels else None)
    a, b = levels[-2], levels[-1]
    e1, e2 = schedule[-2], schedule[-1]
    vals = (e1 * b.values - e2 * a.values) / (e1 - e2)
    m = b.mask > 0
    vals[m] = np.maximum(vals[m], 1e-8 * b.domain.diameter)
    meta = dict(b.solver_meta, extrapolated_from=[e1, e2])
    return GridField(domain=b.domain, origin=b.origin, spacing=b.spacing, values=vals,
                     mask=b.mask.copy(), eps=0.0, n=b.n, solver_meta=meta)


def _default_schedule(domain, h):
    eps = 0.05 * domain.diameter
    out = []
    while eps > h * h:
        out.append(eps)
        eps *= 0.5
    out.append(h * h)
    return out


def evaluate(field: GridField, pts, strict=True):
    """Value of the solution at ``pts``.

    Points inside a corner patch are served by the patch.  Elsewhere ``w =
    f**2`` is interpolated bilinearly on the enclosing cell and the root
    taken; cell corners outside the domain get the ghost value ``s * c``
    with ``s`` their signed distance and ``c`` the mean ``w/d`` ratio of the
    cell's interior corners.  ``strict=False`` lifts the distance check,
    which applies to lattice points only.

    Raises
    ------
    OutOfDomain
        For points outside the domain.
    TooCloseToBoundary
        For lattice points closer than one grid spacing to the boundary.
    """
    p = np.asarray(pts, dtype=float)
    single = p.ndim == 1
    p = np.atleast_2d(p)
    dom = field.domain
    h = field.spacing
    dist = np.asarray(dom.signed_distance(p))
    if np.any(dist < 0):
        raise OutOfDomain("evaluation point outside the domain")
    out = np.empty(len(p))
    todo = np.ones(len(p), dtype=bool)
    for patch in field.patches:
        sel = todo & patch.covers(p)
        if sel.any():
            out[sel] = patch.evaluate(p[sel])
            todo &= ~sel
    if strict and np.any(dist[todo] < h * (1 - 1e-9)):
        raise TooCloseToBoundary(f"evaluation point within {h:.3g} of the boundary")
    if todo.any():
        out[todo] = _lattice_value(field, p[todo])
    return float(out[0]) if single else out


def _lattice_value(field, p):
    dom = field.domain
    h = field.spacing
    fx = (p[:, 0] - field.origin[0]) / h
    fy = (p[:, 1] - field.origin[1]) / h
    i0 = np.clip(np.floor(fx).astype(int), 0, field.nx - 2)
    j0 = np.clip(np.floor(fy).astype(int), 0, field.ny - 2)
    tx = fx - i0
    ty = fy - j0
    corners = [(0, 0), (1, 0), (0, 1), (1, 1)]
    W = np.empty((len(p), 4))
    inside = np.empty((len(p), 4), dtype=bool)
    for k, (di, dj) in enumerate(corners):
        W[:, k] = field.values[j0 + dj, i0 + di].astype(float) ** 2
        inside[:, k] = field.mask[j0 + dj, i0 + di] > 0
    if not inside.all():
        rows = np.nonzero(~inside.all(1))[0]
        cpts = np.stack([np.column_stack([field.origin[0] + (i0[rows] + di) * h,
                                          field.origin[1] + (j0[rows] + dj) * h])
                         for di, dj in corners], axis=1)
        sd = np.asarray(dom.signed_distance(cpts.reshape(-1, 2))).reshape(-1, 4)
        ok = inside[rows]
        ratio = np.where(ok, W[rows] / np.where(ok, np.maximum(sd, 1e-300), 1.0), 0.0)
        c = ratio.sum(1) / np.maximum(ok.sum(1), 1)
        W[rows] = np.where(ok, W[rows], sd * c[:, None])
    wv = (W[:, 0] * (1 - tx) * (1 - ty) + W[:, 1] * tx * (1 - ty)
          + W[:, 2] * (1 - tx) * ty + W[:, 3] * tx * ty)
    out = np.sqrt(np.maximum(wv, 0.0))
    # node-coincident points get the stored value, not sqrt(f**2)
    ri, rj = np.rint(fx).astype(int), np.rint(fy).astype(int)
    on = (np.abs(fx - ri) < 1e-9) & (np.abs(fy - rj) < 1e-9)
    on &= (ri >= 0) & (ri < field.nx) & (rj >= 0) & (rj < field.ny)
    if on.any():
        on[on] = field.mask[rj[on], ri[on]] > 0
        out[on] = field.values[rj[on], ri[on]]
    return out


@dataclass(frozen=True)
class ComparisonReport:
    passed: bool
    max_violation: float
    points: int
    tol: float

    def __bool__(self):
        return self.passed


def comparison_test(inner: GridField, outer: GridField, tol: float = 0.0) -> ComparisonReport:
    """Check ``f_inner <= f_outer + tol`` on the inner lattice away from its boundary.

    Raises
    ------
    NotNested
        If sampled boundary points of the inner domain lie outside the outer one.
    """
    bnd = inner.domain.boundary_samples()
    slack = 1e-9 * outer.domain.diameter
    if np.any(np.asarray(outer.domain.level(bnd)) < -slack):
        if np.any(np.asarray(outer.domain.signed_distance(bnd)) < -slack):
            raise NotNested("inner domain is not contained in the outer domain")
    pts, f1 = inner.interior_nodes()
    d1 = np.asarray(inner.domain.signed_distance(pts))
    d2 = np.asarray(outer.domain.signed_distance(pts))
    keep = (d1 >= 2 * inner.spacing) & (d2 >= outer.spacing)
    same_lattice = (inner.domain.domain_hash == outer.domain.domain_hash
                    and inner.shape == outer.shape and inner.spacing == outer.spacing
                    and tuple(inner.origin) == tuple(outer.origin))
    if same_lattice:
        f2 = outer.values[outer.mask > 0][keep]
    else:
        f2 = evaluate(outer, pts[keep])
    diff = f1[keep] - f2
    worst = float(diff.max()) if len(diff) else -math.inf
    return ComparisonReport(passed=bool(worst <= tol), max_violation=worst,
                            points=int(keep.sum()), tol=tol)


@dataclass(frozen=True)
class ConcavityReport:
    worst: float
    tol: float
    passed: bool

    def __bool__(self):
        return self.passed


def check_concavity(field: GridField, tol: Optional[float] = None) -> ConcavityReport:
    """Largest centred second difference ``f(x+e) - 2f(x) + f(x-e)``.

    Directions are the two axes and the two diagonals; only nodes whose
    eight neighbours are all interior take part.  Default tolerance is
    ``10 h**2``.
    """
    tol = 10 * field.spacing ** 2 if tol is None else tol
    f = field.values.astype(float)
    m = field.mask > 0
    c = (slice(1, -1), slice(1, -1))
    ok = m[c].copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            ok &= m[1 + dy:m.shape[0] - 1 + dy, 1 + dx:m.shape[1] - 1 + dx]
    worst = -math.inf
    for dx, dy in ((1, 0), (0, 1), (1, 1), (1, -1)):
        plus = f[1 + dy:f.shape[0] - 1 + dy, 1 + dx:f.shape[1] - 1 + dx]
        minus = f[1 - dy:f.shape[0] - 1 - dy, 1 - dx:f.shape[1] - 1 - dx]
        sd = plus - 2 * f[c] + minus
        if ok.any():
            worst = max(worst, float(sd[ok].max()))
    return ConcavityReport(worst=worst, tol=tol, passed=bool(worst <= tol))
