"""Homogeneous solutions ``f = r*h(theta)`` in infinite planar cones.

Substituting the ansatz into the minimal-graph equation gives the profile
operator

    L h = h (1 + h^2) (h'' + h) + n (1 + h^2 + h'^2),

and the cone solution's profile solves ``L h = 0`` on ``(0, mu*pi)`` with
``h = 0`` at both edges.  Near an edge ``h ~ c * theta**(1/(n+1))``.

The profile is computed by symmetric shooting from the midpoint.  The first
leg integrates ``(h, dh/du)`` in the distance ``u`` from the midpoint until
the slope reaches one; the second leg switches to ``log h`` as independent
variable with ``q = log(dtheta/dh)`` as state, which is smooth all the way
to the edge.  The edge is then matched to the one-term power model below
``h_cut``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .errors import (
    CertificationFailed,
    InsufficientRange,
    NoBracket,
    OutsideCone,
    SearchExhausted,
    StiffnessFailure,
)
from .geometry import ConeSpec

H_CUT = 1e-5
GRID_SIZE = 4096
TAIL_PER_DECADE = 16


def L_operator(h, h1, h2, n):
    """Profile operator ``h(1+h^2)(h''+h) + n(1+h^2+h'^2)``."""
    h = np.asarray(h, dtype=float)
    h1 = np.asarray(h1, dtype=float)
    h2 = np.asarray(h2, dtype=float)
    out = h * (1 + h * h) * (h2 + h) + n * (1 + h * h + h1 * h1)
    return float(out) if out.ndim == 0 else out


def chebyshev_grid(mu: float, size: int) -> np.ndarray:
    """Chebyshev-clustered points of ``(0, mu*pi)``, symmetric about the midpoint."""
    k = np.arange(size)
    return 0.5 * mu * math.pi * (1 - np.cos(math.pi * (k + 0.5) / size))


def _power_sine(theta, mu, expo):
    """``sin(theta/mu)**expo`` and its first two derivatives in closed form."""
    s = np.sin(theta / mu)
    c = np.cos(theta / mu)
    val = s ** expo
    d1 = expo * s ** (expo - 1) * c / mu
    d2 = expo * ((expo - 1) * s ** (expo - 2) * c * c - s ** expo) / mu ** 2
    return val, d1, d2


def supersolution(theta, mu, A, B, alpha, beta):
    """``A*phi + B*psi`` and its derivatives, ``phi = sin(theta/mu)**(1/(1+alpha))``."""
    p, p1, p2 = _power_sine(theta, mu, 1.0 / (1.0 + alpha))
    if B == 0:
        return A * p, A * p1, A * p2
    q, q1, q2 = _power_sine(theta, mu, 1.0 / (1.0 + beta))
    return A * p + B * q, A * p1 + B * q1, A * p2 + B * q2


@dataclass(frozen=True)
class SupersolutionCertificate:
    mu: float
    n: int
    A: float
    B: float
    alpha: float
    beta: float
    grid_size: int
    max_residual: float

    def __call__(self, theta):
        return supersolution(np.asarray(theta, dtype=float), self.mu, self.A, self.B,
                             self.alpha, self.beta)[0]

    @property
    def upper_bound(self) -> float:
        """Maximum of the supersolution, attained at the midpoint."""
        return self.A + self.B


def certify_supersolution(mu, n, A, B, alpha, beta, grid_size=100_000) -> SupersolutionCertificate:
    """Check ``L(A*phi + B*psi) <= 0`` on Chebyshev points of ``(0, mu*pi)``.

    Raises
    ------
    CertificationFailed
        With the worst grid point and value when the maximum is positive.
    """
    if grid_size < 1000:
        raise ValueError("grid_size must be at least 1000")
    theta = chebyshev_grid(mu, grid_size)
    h, h1, h2 = supersolution(theta, mu, A, B, alpha, beta)
    res = L_operator(h, h1, h2, n)
    k = int(np.argmax(res))
    worst = float(res[k])
    if not worst <= 0.0:
        raise CertificationFailed(
            f"L(A phi + B psi) = {worst:.3e} > 0 at theta = {theta[k]:.6g} "
            f"(mu={mu}, n={n}, A={A}, B={B})", theta=float(theta[k]), value=worst)
    return SupersolutionCertificate(mu=mu, n=n, A=A, B=B, alpha=alpha, beta=beta,
                                    grid_size=grid_size, max_residual=worst)


def supersolution_params(mu: float, n: int) -> tuple[float, float, float, float]:
    """Constants ``(A, B, alpha, beta)`` for which the supersolution certifies.

    For ``mu <= 1/(1+n)`` the closed form ``A = sqrt((1+n) mu)``, ``B = 0``,
    ``alpha = n`` is used.  Otherwise ``alpha = n + 1``,
    ``beta = min((1/mu - 1)/2, 1/100)`` and ``A``, ``B = C*A`` are the first
    powers of two (A outer, C inner, both ascending) that certify on a 10^4
    grid and again on 10^5 points.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must lie in (0, 1)")
    if n < 2:
        raise ValueError("n must be >= 2")
    beta = min(0.5 * (1.0 / mu - 1.0), 0.01)
    if mu <= 1.0 / (1.0 + n) * (1 + 1e-14):
        return math.sqrt((1 + n) * mu), 0.0, float(n), beta
    alpha = float(n + 1)
    for ka in range(11):
        A = 2.0 ** ka
        for kc in range(21):
            B = A * 2.0 ** kc
            try:
                certify_supersolution(mu, n, A, B, alpha, beta, 10_000)
                certify_supersolution(mu, n, A, B, alpha, beta, 100_000)
            except CertificationFailed:
                continue
            return A, B, alpha, beta
    raise SearchExhausted(f"no power-of-two constants certify for mu={mu}, n={n}")


# ---------------------------------------------------------------------------
# shooting
# ---------------------------------------------------------------------------

def _rhs_midleg(n):
    def rhs(u, y):
        h, g = y
        return [g, -h - n * (1 + h * h + g * g) / (h * (1 + h * h))]
    return rhs


def _rhs_edgeleg(n):
    # s = log h, q = log(dtheta/dh); second state accumulates theta
    def rhs(s, y):
        q = y[0]
        h = math.exp(s)
        p = math.exp(q)
        return [p * p * (h * h + n) + n / (1 + h * h), math.exp(s + q)]
    return rhs


@dataclass
class _Shot:
    width: float
    mid: object = None
    u_switch: float = 0.0
    h_switch: float = 0.0
    slope_switch: float = 0.0
    q_cut: float = 0.0
    theta_cut: float = 0.0


def _shoot(m, mu, n, h_cut, rtol, dense=False) -> _Shot:
    """Half-width reached by the trajectory started at ``h(mid)=m, h'(mid)=0``."""
    ev_slope = lambda u, y: y[1] + 1.0
    ev_slope.terminal = True
    ev_low = lambda u, y: y[0] - h_cut
    ev_low.terminal = True
    leg1 = solve_ivp(_rhs_midleg(n), (0.0, 10.0 * mu * math.pi + 10.0), [m, 0.0],
                     method="DOP853", rtol=rtol, atol=1e-15, events=[ev_slope, ev_low],
                     dense_output=dense)
    if leg1.status < 0:
        raise StiffnessFailure(f"midpoint leg failed: {leg1.message}")
    u_s = float(leg1.t[-1])
    h_s, g_s = (float(v) for v in leg1.y[:, -1])
    if h_s <= h_cut * (1 + 1e-9) or g_s >= 0:
        # reached the cut before the slope switch; trajectory is too short to matter
        return _Shot(width=u_s, mid=leg1, u_switch=u_s, h_switch=h_s, slope_switch=g_s,
                     q_cut=-math.inf, theta_cut=0.0)
    leg2 = solve_ivp(_rhs_edgeleg(n), (math.log(h_s), math.log(h_cut)),
                     [math.log(-1.0 / g_s), 0.0], method="DOP853", rtol=rtol, atol=1e-15)
    if leg2.status < 0:
        raise StiffnessFailure(f"edge leg failed: {leg2.message}")
    q_cut = float(leg2.y[0, -1])
    swept = -float(leg2.y[1, -1])
    theta_cut = h_cut * math.exp(q_cut) / (n + 1)
    return _Shot(width=u_s + swept + theta_cut, mid=leg1, u_switch=u_s, h_switch=h_s,
                 slope_switch=g_s, q_cut=q_cut, theta_cut=theta_cut)


class _HalfSolution:
    """Evaluates the solved half profile as a function of distance to the nearer edge."""

    def __init__(self, shot: _Shot, mu, n, h_cut, rtol):
        self.mu = mu
        self.n = n
        self.h_cut = h_cut
        self.mid = shot.mid.sol
        self.half = 0.5 * mu * math.pi
        self.theta_switch = self.half - shot.u_switch
        self.theta_cut = shot.theta_cut
        self.coeff = h_cut / shot.theta_cut ** (1.0 / (n + 1))
        # re-integrate the edge leg outward from the cut so theta keeps relative accuracy
        tail = solve_ivp(_rhs_edgeleg(n), (math.log(h_cut), math.log(shot.h_switch)),
                         [shot.q_cut, shot.theta_cut], method="DOP853", rtol=rtol,
                         atol=1e-300, dense_output=True)
        if tail.status < 0:
            raise StiffnessFailure(f"tail re-integration failed: {tail.message}")
        self.tail = tail.sol
        self.tail_s = tail.t
        self.tail_logtheta = np.log(tail.y[1])

    def _tail_s_of(self, theta):
        logt = np.log(theta)
        s = np.interp(logt, self.tail_logtheta, self.tail_s)
        for _ in range(30):
            q, th = self.tail(s)
            step = (np.log(th) - logt) / (np.exp(s + q) / th)
            s = np.clip(s - step, self.tail_s[0], self.tail_s[-1])
            if np.max(np.abs(step)) < 1e-15:
                break
        return s

    def evaluate(self, e, derivatives=False):
        """``h`` (and optionally ``h'``, ``h''``) at edge distances ``e``.

        Derivatives are taken with respect to the edge distance; they come
        from the integrator state and the equation, never from differencing.
        """
        e = np.asarray(e, dtype=float)
        h = np.empty_like(e)
        h1 = np.empty_like(e)
        h2 = np.empty_like(e)
        n = self.n
        mid = e >= self.theta_switch
        if mid.any():
            h_m, g_m = self.mid(self.half - e[mid])
            h[mid] = h_m
            h1[mid] = -g_m
            h2[mid] = -h_m - n * (1 + h_m ** 2 + g_m ** 2) / (h_m * (1 + h_m ** 2))
        tail = (~mid) & (e >= self.theta_cut)
        if tail.any():
            s = self._tail_s_of(e[tail])
            q, _ = self.tail(s)
            hh = np.exp(s)
            p = np.exp(q)
            qs = p * p * (hh * hh + n) + n / (1 + hh * hh)
            h[tail] = hh
            h1[tail] = 1.0 / p
            h2[tail] = -qs / (hh * p * p)
        model = ~(mid | tail)
        if model.any():
            g = 1.0 / (n + 1)
            em = np.maximum(e[model], 0.0)
            h[model] = self.coeff * em ** g
            with np.errstate(divide="ignore", invalid="ignore"):
                h1[model] = g * self.coeff * em ** (g - 1)
                h2[model] = g * (g - 1) * self.coeff * em ** (g - 2)
        if derivatives:
            return h, h1, h2
        return h


@dataclass(frozen=True)
class ConeProfile:
    """Solved profile ``h`` on ``(0, mu*pi)``.

    ``theta_grid``/``h_values`` are the Chebyshev-clustered export grid;
    ``tail_theta``/``tail_h`` sample the resolved region just above the edge
    cut on a geometric grid.  ``residual_norm`` is the relative residual
    ``max |L h| / (n (1 + h^2 + h'^2))`` over the export grid.
    """

    mu: float
    n: int
    theta_grid: np.ndarray
    h_values: np.ndarray
    midpoint_value: float
    endpoint_coeff: float
    residual_norm: float
    theta_cut: float = 0.0
    h_cut: float = H_CUT
    tail_theta: np.ndarray = field(default_factory=lambda: np.empty(0))
    tail_h: np.ndarray = field(default_factory=lambda: np.empty(0))
    tol: float = 1e-12
    _half: Optional[_HalfSolution] = field(default=None, repr=False, compare=False)

    @classmethod
    def from_samples(cls, theta, h, mu, n, theta_cut=None, **meta) -> "ConeProfile":
        """Profile built from tabulated samples (loaded files, synthetic data)."""
        theta = np.asarray(theta, dtype=float)
        h = np.asarray(h, dtype=float)
        if theta_cut is None:
            theta_cut = float(theta[0])
        mid = 0.5 * mu * math.pi
        m = meta.pop("midpoint_value", float(np.interp(mid, theta, h)))
        return cls(mu=mu, n=n, theta_grid=theta, h_values=h, midpoint_value=m,
                   endpoint_coeff=meta.pop("endpoint_coeff", float("nan")),
                   residual_norm=meta.pop("residual_norm", float("nan")),
                   theta_cut=theta_cut, **meta)

    @property
    def opening(self) -> float:
        return self.mu * math.pi

    def h(self, theta):
        """Profile value at arbitrary angles in ``[0, mu*pi]``."""
        theta = np.asarray(theta, dtype=float)
        e = np.minimum(theta, self.opening - theta)
        if self._half is not None:
            return self._half.evaluate(e)
        # tabulated fallback: cubic in (log theta, log h), where h ~ c theta^(1/(n+1))
        # is nearly linear
        spl, th0, h0 = self._table()
        out = np.empty_like(e)
        low = e < th0
        out[~low] = np.exp(spl(np.log(e[~low])))
        if low.any():
            out[low] = h0 * (np.maximum(e[low], 0.0) / th0) ** (1.0 / (self.n + 1))
        return out

    def _table(self):
        tab = self.__dict__.get("_tab")
        if tab is None:
            half = self.theta_grid <= 0.5 * self.opening
            th = self.theta_grid[half]
            hv = self.h_values[half]
            if len(self.tail_theta):
                keep = self.tail_theta < th[0]
                th = np.concatenate([self.tail_theta[keep], th])
                hv = np.concatenate([self.tail_h[keep], hv])
            ok = (th > 0) & (hv > 0)
            th, hv = th[ok], hv[ok]
            tab = (CubicSpline(np.log(th), np.log(hv)), th[0], hv[0])
            object.__setattr__(self, "_tab", tab)
        return tab

    @property
    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.h_values - self.h_values[::-1])))


def solve_cone_profile(mu: float, n: int = 2, tol: float = 1e-12,
                       grid_size: int = GRID_SIZE, h_cut: float = H_CUT) -> ConeProfile:
    """Solve ``L h = 0`` on ``(0, mu*pi)`` with zero edge values by symmetric shooting.

    The midpoint value ``m`` is bisected (at most 60 steps) inside the bracket
    ``(0, A+B]`` given by the certified supersolution, until the trajectory
    started at ``h = m, h' = 0`` reaches the edge exactly at ``theta = 0``.

    Raises
    ------
    NoBracket
        If the supersolution bracket does not straddle the target width.
    StiffnessFailure
        If an integration leg fails.
    """
    if not 0.0 < mu < 1.0:
        raise ValueError("mu must lie in (0, 1)")
    if n < 2:
        raise ValueError("n must be >= 2")
    if tol < 1e-12:
        raise ValueError("tol must be >= 1e-12")
    A, B, _, _ = supersolution_params(mu, n)
    target = 0.5 * mu * math.pi
    rtol = max(tol, 2.5e-14)

    lo = 10.0 * h_cut
    hi = A + B
    w_lo = _shoot(lo, mu, n, h_cut, rtol).width
    w_hi = _shoot(hi, mu, n, h_cut, rtol).width
    if not (w_lo < target <= w_hi):
        raise NoBracket(f"half widths {w_lo:.6g}, {w_hi:.6g} do not bracket {target:.6g}")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _shoot(mid, mu, n, h_cut, rtol).width < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * hi:
            break
    m = 0.5 * (lo + hi)
    shot = _shoot(m, mu, n, h_cut, rtol, dense=True)
    half = _HalfSolution(shot, mu, n, h_cut, rtol)

    theta = chebyshev_grid(mu, grid_size)
    e = np.minimum(theta, mu * math.pi - theta)
    h, h1, h2 = half.evaluate(e, derivatives=True)
    resolved = e >= half.theta_cut
    rel = np.abs(L_operator(h, h1, h2, n)) / (n * (1 + h * h + h1 * h1))
    residual = float(rel[resolved].max())

    upper = min(float(theta[0]), half.theta_switch)
    decades = max(math.log10(upper / half.theta_cut), 1.0)
    tail_theta = np.geomspace(half.theta_cut, upper, int(TAIL_PER_DECADE * decades) + 1)
    tail_theta = tail_theta[tail_theta < upper]
    tail_h = half.evaluate(tail_theta)

    return ConeProfile(mu=mu, n=n, theta_grid=theta, h_values=h,
                       midpoint_value=float(half.evaluate(np.array([target]))[0]),
                       endpoint_coeff=half.coeff, residual_norm=residual,
                       theta_cut=half.theta_cut, h_cut=h_cut, tail_theta=tail_theta,
                       tail_h=tail_h, tol=tol, _half=half)


def endpoint_exponent(profile: ConeProfile) -> float:
    """Log-log slope of ``h`` against ``theta`` over the decade above the edge cut."""
    th = profile.tail_theta if len(profile.tail_theta) else profile.theta_grid
    hv = profile.tail_h if len(profile.tail_theta) else profile.h_values
    lo = profile.theta_cut
    sel = (th >= lo * (1 - 1e-12)) & (th <= 10 * lo * (1 + 1e-12))
    if sel.sum() < 10:
        raise InsufficientRange(f"only {int(sel.sum())} samples in [{lo:.3g}, {10 * lo:.3g}]")
    slope, _ = np.polyfit(np.log(th[sel]), np.log(hv[sel]), 1)
    return float(slope)


def eval_cone_solution(profile: ConeProfile, cone: ConeSpec, x):
    """Homogeneous cone solution ``r * h(theta)`` about the cone vertex.

    Points on an edge (or the vertex) give 0; points outside raise
    :class:`OutsideCone`.
    """
    if abs(profile.mu - cone.mu) > 1e-9:
        raise ValueError(f"profile opening {profile.mu} does not match cone {cone.mu}")
    pts = np.asarray(x, dtype=float)
    single = pts.ndim == 1
    r, theta = cone.polar(np.atleast_2d(pts))
    eps = 1e-14
    if np.any((theta < -eps) | (theta > cone.opening + eps)) and np.any(r > 0):
        bad = (theta < -eps) | (theta > cone.opening + eps)
        if np.any(bad & (r > 0)):
            raise OutsideCone("point lies outside the cone")
    theta = np.clip(theta, 0.0, cone.opening)
    val = r * profile.h(theta)
    val = np.where((theta <= eps) | (theta >= cone.opening - eps) | (r == 0), 0.0, val)
    return float(val[0]) if single else val
