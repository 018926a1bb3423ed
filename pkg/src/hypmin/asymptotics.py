"""Corner and boundary asymptotics experiments.

Each experiment solves the relevant problems, samples an error quantity on
arcs ``|x - x0| = r`` restricted to the sector ``dist(x, boundary) >= delta
|x - x0|``, fits a log-log slope and returns an :class:`AsymptoticsReport`.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .cone_profile import eval_cone_solution, solve_cone_profile
from .elliptic import evaluate, solve_domain
from .errors import (
    DomainsDisagreeNearVertex,
    EmptyDeltaSector,
    NonPositiveData,
    OutOfDomain,
    PreconditionError,
)
from .geometry import DomainSpec, PerturbedLens, boundary_curvature, in_delta_sector, tangent_cone_at

RAYS = 32
MIN_POINTS = 5
THEOREM1_RADII = (0.2, 0.14, 0.1, 0.07, 0.05, 0.035, 0.02)


def max_workers() -> int:
    """Worker cap from ``HYPMIN_THREADS`` (default: available cores)."""
    env = os.environ.get("HYPMIN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"HYPMIN_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def _solve_all(jobs):
    """Run independent solver jobs (zero-argument callables) under the worker cap."""
    nw = min(max_workers(), len(jobs))
    if nw <= 1:
        return [job() for job in jobs]
    with ThreadPoolExecutor(max_workers=nw) as pool:
        return [fut.result() for fut in [pool.submit(job) for job in jobs]]


def slope_fit(r, e) -> tuple[float, float]:
    """Least-squares line through ``(log r, log e)``; returns ``(slope, intercept)``."""
    r = np.asarray(r, dtype=float)
    e = np.asarray(e, dtype=float)
    if r.shape != e.shape or r.size < 2:
        raise ValueError("need at least two (r, e) pairs")
    if np.any(~(r > 0)) or np.any(~(e > 0)):
        raise NonPositiveData("log-log fit needs strictly positive r and e")
    slope, intercept = np.polyfit(np.log(r), np.log(e), 1)
    return float(slope), float(intercept)


@dataclass
class AsymptoticsReport:
    """Outcome of one experiment.

    ``series`` holds ``(r, e)`` pairs with ``r`` strictly decreasing; ``slope``
    and ``intercept`` fit ``log e`` against ``log r``.  ``checks`` carries the
    auxiliary quantities each experiment inspects.
    """

    experiment: str
    domain_hash: str
    params: dict
    series: list
    slope: float
    intercept: float
    threshold: float
    verdict: bool
    checks: dict = field(default_factory=dict)

    def __post_init__(self):
        r = np.array([p[0] for p in self.series], dtype=float)
        e = np.array([p[1] for p in self.series], dtype=float)
        if len(r) > 1 and np.any(np.diff(r) >= 0):
            raise ValueError("radii must be strictly decreasing")
        if np.any(~np.isfinite(e)) or np.any(e < 0):
            raise ValueError("errors must be finite and nonnegative")

    @property
    def radii(self) -> np.ndarray:
        return np.array([p[0] for p in self.series], dtype=float)

    @property
    def errors(self) -> np.ndarray:
        return np.array([p[1] for p in self.series], dtype=float)

    def __bool__(self):
        return bool(self.verdict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["series"] = [{"r": float(r), "e": float(e)} for r, e in self.series]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AsymptoticsReport":
        d = dict(d)
        d["series"] = [(float(p["r"]), float(p["e"])) for p in d["series"]]
        for k in ("slope", "intercept", "threshold"):
            d[k] = float(d[k]) if d[k] is not None else math.nan
        return cls(**d)


def _fit_or_nan(r, e):
    try:
        return slope_fit(r, e)
    except NonPositiveData:
        # identical problems give exact zeros; there is nothing to fit
        return math.nan, math.nan


def _check_radii(radii, at_least=MIN_POINTS):
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or len(radii) < at_least:
        raise PreconditionError(f"need at least {at_least} radii")
    if np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise PreconditionError("radii must be positive and strictly decreasing")
    return radii


def sector_points(domain: DomainSpec, vertex, r: float, delta: float, rays: int = RAYS,
                  cone=None) -> np.ndarray:
    """``rays`` points on the arc of radius ``r`` about ``vertex`` inside the delta-sector.

    The rays are spread uniformly over the admissible angular window, found
    on a fine angular grid; every returned point passes :func:`in_delta_sector`.
    """
    cone = tangent_cone_at(domain, vertex) if cone is None else cone
    fine = np.linspace(0.0, cone.opening, 4097)[1:-1]
    ok = np.asarray(in_delta_sector(cone.point(r, fine), cone.vertex, delta, domain))
    if not ok.any():
        raise EmptyDeltaSector(f"no point at radius {r:.4g} has dist >= {delta:g} * r")
    th = np.linspace(fine[ok].min(), fine[ok].max(), rays)
    pts = cone.point(r, th)
    keep = np.asarray(in_delta_sector(pts, cone.vertex, delta, domain))
    if not keep.any():
        raise EmptyDeltaSector(f"no admissible ray at radius {r:.4g}")
    return pts[keep]


def _check_patch_reach(field, radii, max_fraction=None):
    """Radii must sit at least ten grid spacings out unless a corner patch serves them."""
    h = field.spacing
    dom = field.domain
    bad = []
    for r in radii:
        if max_fraction is not None and r > max_fraction * dom.diameter:
            bad.append(r)
        elif r < 10 * h and not any(p.valid_radius > r for p in field.patches):
            bad.append(r)
    if bad:
        raise PreconditionError(f"radii {bad} outside the resolvable window "
                                f"with h = {h:.3g}")


# ---------------------------------------------------------------------------
# cone asymptotics
# ---------------------------------------------------------------------------

def theorem1_experiment(domain: DomainSpec, vertex=(0.0, 0.0), delta: float = 0.3, radii=None,
                        resolution: int = 256, field=None, profile=None,
                        ratio_tol: float = 1e-6, rays: int = RAYS) -> AsymptoticsReport:
    """Compare the solution with the homogeneous solution of the tangent cone.

    The series is ``sup |f/f_V - 1|`` over the sector samples at each radius;
    its slope must reach 0.8 and ``sup |f - f_V| / (f r)`` must stay within a
    factor 10 over the series.  ``checks`` also records the largest ratio
    ``f/f_V`` (bounded by one from the comparison principle) and the ratio
    on the bisector at the smallest radius.
    """
    v = domain.find_corner(vertex)
    radii = _check_radii(THEOREM1_RADII if radii is None else radii)
    cone = tangent_cone_at(domain, v)
    samples = [sector_points(domain, v, r, delta, rays, cone) for r in radii]
    if field is None:
        field = solve_domain(domain, resolution)
    _check_patch_reach(field, radii, 0.3)
    if profile is None:
        profile = solve_cone_profile(cone.mu, 2)
    defect, scaled, top = [], [], []
    for r, pts in zip(radii, samples):
        f = evaluate(field, pts)
        fv = eval_cone_solution(profile, cone, pts)
        q = f / fv
        defect.append(float(np.max(np.abs(q - 1))))
        scaled.append(float(np.max(np.abs(f - fv) / (f * r))))
        top.append(float(q.max()))
    rmin = float(radii[-1])
    mid = cone.point(rmin, 0.5 * cone.opening)
    bis = float(evaluate(field, mid) / eval_cone_solution(profile, cone, mid))
    slope, icpt = slope_fit(radii, defect)
    spread = max(scaled) / min(scaled)
    checks = {
        "scaled_series": scaled,
        "scaled_spread": spread,
        "max_ratio": max(top),
        "one_sided": bool(max(top) <= 1 + ratio_tol),
        "bisector_ratio": bis,
        "bisector_ok": bool(1 - 10 * rmin <= bis <= 1 + ratio_tol),
    }
    return AsymptoticsReport(
        experiment="theorem1", domain_hash=domain.domain_hash,
        params={"delta": delta, "mu": cone.mu, "resolution": field.solver_meta.get("resolution"),
                "vertex": list(v), "rays": rays, "domain": domain.to_dict()},
        series=list(zip(map(float, radii), defect)), slope=slope, intercept=icpt,
        threshold=0.8, verdict=bool(spread <= 10 and slope >= 0.8), checks=checks)


def theorem2_experiment(domain: PerturbedLens, alpha: float | None = None, eps: float = 0.2,
                        delta: float = 0.3, radii=None, resolution: int = 256,
                        patch_radius: float = 0.22, mu_max: float = 0.3,
                        fields=None, rays: int = RAYS) -> AsymptoticsReport:
    """Compare the perturbed-lens solution with the osculating-lens solution.

    The series is ``sup |f - f_*| / f``.  The same samples give the cone
    error ``sup |f - f_V| / f``; the verdict asks the lens comparison to decay
    at least 0.2 faster, and at rate 1.1 or more.  Both domains share the
    corner patch radius so their discretisations agree near the vertex.
    """
    alpha = domain.alpha if alpha is None else alpha
    if not 0 < eps < alpha:
        raise PreconditionError(f"need 0 < eps < alpha, got eps={eps}, alpha={alpha}")
    if domain.mu > mu_max:
        raise PreconditionError(f"mu = {domain.mu} exceeds the small-angle bound {mu_max}")
    radii = _check_radii(np.geomspace(0.02, 0.002, 7) if radii is None else radii)
    v = np.asarray(domain.x0, dtype=float)
    ref = domain.osculating
    cone = tangent_cone_at(domain, v)
    samples = [sector_points(domain, v, r, delta, rays, cone) for r in radii]
    if fields is None:
        fields = _solve_all([
            lambda: solve_domain(domain, resolution, corner_patches=[tuple(v)],
                                 patch_radius=patch_radius),
            lambda: solve_domain(ref, resolution, corner_patches=[tuple(v)],
                                 patch_radius=patch_radius)])
    F, Fs = fields
    _check_patch_reach(F, radii)
    profile = solve_cone_profile(cone.mu, 2)
    e2, e1 = [], []
    for pts in samples:
        f = evaluate(F, pts)
        fs = evaluate(Fs, pts)
        fv = eval_cone_solution(profile, cone, pts)
        e2.append(float(np.max(np.abs(f - fs) / f)))
        e1.append(float(np.max(np.abs(f - fv) / f)))
    slope, icpt = _fit_or_nan(radii, e2)
    slope1, _ = _fit_or_nan(radii, e1)
    verdict = bool(slope >= slope1 + 0.2 and slope >= 1.1)
    return AsymptoticsReport(
        experiment="theorem2", domain_hash=domain.domain_hash,
        params={"delta": delta, "mu": domain.mu, "alpha": alpha, "eps": eps, "c_p": domain.c_p,
                "resolution": F.solver_meta.get("resolution"), "patch_radius": patch_radius,
                "rays": rays, "reference_hash": ref.domain_hash, "domain": domain.to_dict()},
        series=list(zip(map(float, radii), e2)), slope=slope, intercept=icpt, threshold=1.1,
        verdict=verdict,
        checks={"cone_series": e1, "cone_slope": slope1, "predicted_exponent": 1 + alpha - eps,
                "solver_tol": 1e-9})


def domains_agree_near(a: DomainSpec, b: DomainSpec, vertex, R0: float, tol: float | None = None,
                       samples: int = 4096) -> bool:
    """True if the boundaries of ``a`` and ``b`` coincide inside the ball ``B_R0(vertex)``."""
    v = np.asarray(vertex, dtype=float)
    tol = 1e-9 * max(a.diameter, b.diameter) if tol is None else tol
    for p, q in ((a, b), (b, a)):
        pts = p.boundary_samples(samples)
        near = np.hypot(*(pts - v).T) < R0
        if near.any() and np.max(np.abs(q.signed_distance(pts[near]))) > tol:
            return False
        # interior points near the vertex must agree as well
        g = v + R0 * np.random.default_rng(0).uniform(-1, 1, (2000, 2))
        g = g[np.hypot(*(g - v).T) < R0]
        if np.any((p.level(g) > 0) != (q.level(g) > 0)):
            return False
    return True


def localization_experiment(domain: DomainSpec, reference: DomainSpec, vertex, R0: float,
                            delta: float = 0.3, radii=None, resolution: int = 256,
                            patch_radius: float | None = None, mu_max: float = 0.2,
                            fields=None, rays: int = RAYS) -> AsymptoticsReport:
    """Effect of a far-away change of the domain on the solution near a corner.

    ``domain`` and ``reference`` must coincide inside ``B_R0(vertex)``.  The
    series is ``sup |f - f_*| / f``; the verdict asks for slope >= 1.8.
    """
    v = domain.find_corner(vertex)
    reference.find_corner(v)
    if not domains_agree_near(domain, reference, v, R0):
        raise DomainsDisagreeNearVertex(f"domains differ inside the ball of radius {R0:g}")
    cone = tangent_cone_at(domain, v)
    if cone.mu > mu_max:
        raise PreconditionError(f"mu = {cone.mu:.4g} exceeds the small-angle bound {mu_max}")
    radii = _check_radii(np.geomspace(0.4 * R0, 0.04 * R0, 7) if radii is None else radii)
    if np.any(radii >= R0):
        raise PreconditionError("radii must lie inside the ball where the domains agree")
    samples = [sector_points(domain, v, r, delta, rays, cone) for r in radii]
    patch_radius = 0.5 * R0 if patch_radius is None else patch_radius
    if fields is None:
        if domain.domain_hash == reference.domain_hash:
            F = solve_domain(domain, resolution, corner_patches=[tuple(v)],
                             patch_radius=patch_radius)
            fields = (F, F)
        else:
            fields = _solve_all([
                lambda: solve_domain(domain, resolution, corner_patches=[tuple(v)],
                                     patch_radius=patch_radius),
                lambda: solve_domain(reference, resolution, corner_patches=[tuple(v)],
                                     patch_radius=patch_radius)])
    F, Fs = fields
    _check_patch_reach(F, radii)
    e = []
    for pts in samples:
        f = evaluate(F, pts)
        fs = evaluate(Fs, pts)
        e.append(float(np.max(np.abs(f - fs) / f)))
    slope, icpt = _fit_or_nan(radii, e)
    return AsymptoticsReport(
        experiment="localization", domain_hash=domain.domain_hash,
        params={"delta": delta, "mu": cone.mu, "R0": R0, "patch_radius": patch_radius,
                "resolution": F.solver_meta.get("resolution"), "rays": rays,
                "reference_hash": reference.domain_hash, "domain": domain.to_dict(),
                "reference": reference.to_dict()},
        series=list(zip(map(float, radii), e)), slope=slope, intercept=icpt, threshold=1.8,
        verdict=bool(slope >= 1.8), checks={"solver_tol": 1e-9})


# ---------------------------------------------------------------------------
# smooth boundary expansion
# ---------------------------------------------------------------------------

def smooth_expansion_experiment(domain: DomainSpec, foot_points=None,
                                depths=(0.2, 0.1, 0.05, 0.025), resolution: int = 256,
                                field=None) -> AsymptoticsReport:
    """Check ``f ~ sqrt(2d / kappa)`` at depth ``d`` along inward normals.

    The series is ``max_p |(kappa(p)/(2d))^{1/2} f(p + d nu(p)) - 1|``; the
    verdict asks it to shrink with ``d`` at slope 0.3 or more.

    Raises
    ------
    NotSmooth
        If a foot point is a corner.
    OutOfDomain
        If a depth exceeds the inradius.
    """
    depths = _check_radii(depths, at_least=4)
    if foot_points is None:
        foot_points = domain.boundary_samples(16)
        if domain.corner_points:
            far = np.min([np.hypot(*(foot_points - np.asarray(c)).T) for c in domain.corner_points],
                         axis=0)
            foot_points = foot_points[far > 0.1 * domain.diameter]
    foot = np.atleast_2d(np.asarray(foot_points, dtype=float))
    kappa = np.atleast_1d(boundary_curvature(domain, foot))
    nrm, _ = domain.boundary_frame(foot)
    nrm = np.atleast_2d(nrm)
    if depths[0] > domain.inradius():
        raise OutOfDomain(f"depth {depths[0]:g} exceeds the inradius {domain.inradius():.4g}")
    if field is None:
        field = solve_domain(domain, resolution)
    e = []
    for d in depths:
        f = evaluate(field, foot + d * nrm)
        e.append(float(np.max(np.abs(np.sqrt(kappa / (2 * d)) * f - 1))))
    slope, icpt = _fit_or_nan(depths, e)
    decreasing = bool(np.all(np.diff(e) < 0))
    return AsymptoticsReport(
        experiment="smooth", domain_hash=domain.domain_hash,
        params={"depths": list(map(float, depths)), "foot_points": foot.tolist(),
                "resolution": field.solver_meta.get("resolution"), "domain": domain.to_dict()},
        series=list(zip(map(float, depths), e)), slope=slope, intercept=icpt, threshold=0.3,
        verdict=bool(decreasing and slope >= 0.3), checks={"decreasing": decreasing})
