"""The inversion-type isometry T_L of the upper half-space model.

Points of H^{n+1} are arrays ``(x_1, ..., x_{n+1})`` with ``x_{n+1} >= 0``.
``T_L`` sends ``(L, 0, ..., 0)`` to infinity, fixes ``(0, ..., 0, L)`` and
maps ``(-L, 0, ..., 0)`` to the origin with derivative ``I/2``.  Spheres
through the pole become affine hyperplanes, so an intersection of balls
whose boundaries pass through ``(-L, 0)`` and ``(L, 0)`` is carried onto a
cone with vertex at the origin.
"""
from __future__ import annotations

import math

import numpy as np

from .errors import AtInfinity, BoundaryPoint, NotThroughPole
from .geometry import ConeSpec


class _AtInfinity:
    """Marker for the image of the pole."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "AT_INFINITY"


AT_INFINITY = _AtInfinity()


def _check_L(L):
    if not L > 0:
        raise ValueError("L must be positive")


def _pole_distance2(L, x):
    d = x.copy()
    d[..., 0] -= L
    return (d * d).sum(-1)


def apply_T(L: float, p, on_pole: str = "raise"):
    """``T_L(x) = L / |x - L e_1|^2 * (L^2 - |x|^2, 2 L x_2, ..., 2 L x_{n+1})``.

    ``p`` is one point or an ``(N, n+1)`` array.  At the pole the result is
    :data:`AT_INFINITY` when ``on_pole="marker"`` (single points only);
    otherwise :class:`AtInfinity` is raised.
    """
    _check_L(L)
    x = np.asarray(p, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    D = _pole_distance2(L, x)
    if np.any(D <= (1e-15 * L) ** 2):
        if on_pole == "marker" and single:
            return AT_INFINITY
        raise AtInfinity(f"T_{L:g} sends (L, 0, ..., 0) to infinity")
    P = L / D
    out = np.empty_like(x)
    out[:, 0] = P * (L * L - (x * x).sum(1))
    out[:, 1:] = 2 * L * P[:, None] * x[:, 1:]
    return out[0] if single else out


def jacobian_T(L: float, p) -> np.ndarray:
    """Analytic derivative of :func:`apply_T`; ``(n+1, n+1)`` or ``(N, n+1, n+1)``."""
    _check_L(L)
    x = np.asarray(p, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    D = _pole_distance2(L, x)
    if np.any(D <= (1e-15 * L) ** 2):
        raise AtInfinity(f"T_{L:g} sends (L, 0, ..., 0) to infinity")
    P = L / D
    u = x.copy()
    u[:, 0] -= L
    dP = -2 * P[:, None] * u / D[:, None]          # dP/dx_j
    m = x.shape[1]
    J = np.empty((len(x), m, m))
    J[:, 0, :] = dP * (L * L - (x * x).sum(1))[:, None] - 2 * P[:, None] * x
    J[:, 1:, :] = 2 * L * x[:, 1:, None] * dP[:, None, :]
    J[:, 1:, 1:] += 2 * L * P[:, None, None] * np.eye(m - 1)[None]
    return J[0] if single else J


def isometry_defect(L: float, p, transform=None, jacobian=None) -> float:
    """``max |(x_{n+1}/y_{n+1})^2 J^T J - I|`` with ``y = T_L(x)``.

    Zero for an isometry of the metric ``|dx|^2 / x_{n+1}^2``.  ``transform``
    and ``jacobian`` replace ``T_L`` (useful as a null test).
    """
    x = np.atleast_2d(np.asarray(p, dtype=float))
    if np.any(x[:, -1] <= 0):
        raise BoundaryPoint("isometry defect needs points with positive last coordinate")
    y = np.atleast_2d(apply_T(L, x) if transform is None else transform(x))
    J = jacobian_T(L, x) if jacobian is None else jacobian(x)
    J = J.reshape(len(x), x.shape[1], x.shape[1])
    scale = (x[:, -1] / y[:, -1]) ** 2
    G = scale[:, None, None] * np.einsum("kij,kil->kjl", J, J)
    return float(np.abs(G - np.eye(x.shape[1])[None]).max())


def plane_jacobian(L: float, p) -> np.ndarray:
    """Derivative of ``T_L`` restricted to the boundary plane ``x_{n+1} = 0``."""
    x = np.asarray(p, dtype=float)
    if abs(x[-1]) > 0:
        raise ValueError("point must lie on the boundary plane")
    return jacobian_T(L, x)[:-1, :-1]


def conformal_factor_on_plane(L: float, p, tol: float = 1e-10) -> float:
    """Stretch factor of ``T_L`` on the boundary plane at ``p``.

    Every tangent direction is stretched by the same amount; an anisotropy
    above ``tol`` (relative spread of the singular values) raises ValueError.
    """
    sv = np.linalg.svd(plane_jacobian(L, p), compute_uv=False)
    if sv.max() - sv.min() > tol * sv.max():
        raise ValueError(f"restricted map is not conformal at {p}: singular values {sv}")
    return float(sv.mean())


def plane_anisotropy(L: float, p) -> float:
    sv = np.linalg.svd(plane_jacobian(L, p), compute_uv=False)
    return float((sv.max() - sv.min()) / sv.max())


def image_of_ball_intersection(balls, L: float, tol: float = 1e-10) -> ConeSpec:
    """Cone onto which ``T_L`` maps the intersection of planar disks through ``(-L, 0)`` and ``(L, 0)``.

    Each bounding circle becomes a line through the origin, the image of
    ``(-L, 0)``; the cone is the intersection of the image half-planes.
    Since the derivative at ``(-L, 0)`` is ``I/2`` the result is the tangent
    cone there translated by ``(L, 0)``.

    Raises
    ------
    NotThroughPole
        If some circle misses ``(-L, 0)`` or ``(L, 0)``.
    """
    _check_L(L)
    x0 = np.array([-L, 0.0])
    q = np.array([L, 0.0])
    normals = []
    for c, r in balls:
        c = np.asarray(c, dtype=float)
        for pt, name in ((x0, "x0"), (q, "q")):
            if abs(np.hypot(*(pt - c)) - r) > tol * max(1.0, r):
                raise NotThroughPole(f"circle ({tuple(c)}, {r}) does not pass through {name}")
        # the image line through 0 has the tangent direction at x0; the disk side maps to
        # the side containing the image of the centre-ward normal
        nu = (c - x0) / r
        inside = apply_T(L, np.array([*(x0 + 1e-3 * L * nu), 0.0]))[:2]
        normals.append(nu if np.dot(nu, inside) > 0 else -nu)
    if len(normals) == 1:
        raise ValueError("a single disk maps to a half-plane, not a cone")
    # the cone is bounded by the two extreme normals
    best = None
    for i in range(len(normals)):
        for j in range(i + 1, len(normals)):
            cosang = float(np.clip(np.dot(normals[i], normals[j]), -1, 1))
            opening = math.pi - math.acos(cosang)
            if best is None or opening < best[0]:
                best = (opening, normals[i] + normals[j])
    opening, axis = best
    for v in normals:
        # every other half-plane must contain the cone
        if np.dot(v, axis) < -1e-12:
            raise ValueError("disk intersection has no interior near x0")
    return ConeSpec(vertex=(0.0, 0.0), opening=opening, axis_angle=math.atan2(axis[1], axis[0]))


def transport_graph(field, L: float, points=None):
    """Map samples ``(x, f(x))`` of a planar graph through ``T_L``.

    ``points`` default to the interior lattice nodes of ``field``; returns
    ``(y, g)`` with ``y`` the image base points ``(N, 2)`` and ``g`` the image
    heights.  The pole is never a graph point, since ``f > 0`` there is not
    sampled on the boundary.
    """
    if points is None:
        pts, vals = field.interior_nodes()
    else:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if len(pts) == 0:
            return np.empty((0, 2)), np.empty(0)
        vals = np.asarray(field(pts), dtype=float)
    if len(pts) == 0:
        return np.empty((0, 2)), np.empty(0)
    img = apply_T(L, np.column_stack([pts, vals]))
    return img[:, :2], img[:, 2]
