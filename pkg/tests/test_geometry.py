import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hypmin.errors import BallTooLarge, DegenerateLens, NotACorner, NotSmooth
from hypmin.geometry import (
    ConeSpec,
    Disk,
    DiskIntersection,
    Ellipse,
    PerturbedLens,
    boundary_curvature,
    domain_from_dict,
    in_delta_sector,
    interior_cone,
    lens_domain,
    signed_distance,
    tangent_balls,
    tangent_cone_at,
)


def test_disk_distance(unit_disk):
    assert signed_distance(unit_disk, (0.5, 0.0)) == pytest.approx(0.5, abs=1e-12)
    assert signed_distance(unit_disk, (0.0, 0.0)) == pytest.approx(1.0, abs=1e-12)
    assert signed_distance(unit_disk, (2.0, 0.0)) == pytest.approx(-1.0, abs=1e-12)


def test_lens_vertex_on_boundary(half_lens):
    assert abs(signed_distance(half_lens, (0.0, 0.0))) <= 1e-12


def test_ellipse_distance_against_dense_boundary():
    ell = Ellipse(a=1.0, b=0.8)
    t = np.linspace(0, 2 * np.pi, 200001)
    bd = np.column_stack([np.cos(t), 0.8 * np.sin(t)])
    for p in [(0.2, 0.1), (0.9, 0.0), (0.0, 0.7), (-0.5, -0.5)]:
        ref = np.min(np.hypot(*(bd - p).T))
        assert signed_distance(ell, p) == pytest.approx(ref, abs=1e-9)


@pytest.mark.parametrize("mu,k1,k2", [(0.5, 1, 1), (0.25, 2, 3), (0.75, 1, 0.5), (0.1, 1, 1)])
def test_tangent_cone_opening(mu, k1, k2):
    lens = lens_domain((0.0, 0.0), mu, k1, k2)
    cone = tangent_cone_at(lens, (0.0, 0.0))
    assert cone.opening == pytest.approx(mu * math.pi, abs=1e-12)
    assert cone.mu == pytest.approx(mu, abs=1e-12)


def test_lens_corners_and_far_angle(half_lens):
    c0, c1 = half_lens.corner_points
    assert np.allclose(c0, (0, 0))
    assert c1[0] == pytest.approx(math.sqrt(2), abs=1e-12)
    for c in half_lens.corner_points:
        assert abs(signed_distance(half_lens, c)) < 1e-12
    assert tangent_cone_at(half_lens, c1).opening == pytest.approx(math.pi / 2, abs=1e-12)


def test_not_a_corner(unit_disk, half_lens):
    with pytest.raises(NotACorner):
        tangent_cone_at(unit_disk, (1.0, 0.0))
    with pytest.raises(NotACorner):
        tangent_cone_at(half_lens, (0.3, 0.0))


def test_degenerate_lens():
    with pytest.raises(DegenerateLens):
        lens_domain((0, 0), 1.2, 1, 1)
    with pytest.raises(DegenerateLens):
        lens_domain((0, 0), 0.5, -1, 1)


def test_huge_lens_is_valid_or_degenerate():
    try:
        lens = lens_domain((0, 0), 0.99, 1e-6, 1e-6)
    except DegenerateLens:
        return
    c0, c1 = lens.corner_points
    # x0 sits R sin(mu pi / 2) from the line of centres; the far corner is its mirror image
    width = 2e6 * math.sin(0.5 * math.pi * 0.99)
    assert math.hypot(c1[0] - c0[0], c1[1] - c0[1]) == pytest.approx(width, rel=1e-9)


def test_tangent_balls_meet_at_vertex_and_q(half_lens):
    L = 0.1
    balls = tangent_balls(half_lens, (0, 0), L)
    q = np.array([L, 0.0])
    for c, r in balls:
        assert math.hypot(*c) == pytest.approx(r, abs=1e-12)
        assert math.hypot(*(q - c)) == pytest.approx(r, abs=1e-12)
    # circle-circle intersection computed independently
    (c1, r1), (c2, r2) = balls
    d = math.hypot(*(np.subtract(c2, c1)))
    a = (r1 ** 2 - r2 ** 2 + d ** 2) / (2 * d)
    hgt = math.sqrt(r1 ** 2 - a ** 2)
    mid = np.asarray(c1) + a * (np.subtract(c2, c1)) / d
    perp = np.array([-(c2[1] - c1[1]), c2[0] - c1[0]]) / d
    pts = sorted([tuple(mid + hgt * perp), tuple(mid - hgt * perp)])
    assert np.allclose(pts, sorted([(0.0, 0.0), (L, 0.0)]), atol=1e-12)


@pytest.mark.parametrize("mu", [0.25, 0.5, 0.75])
def test_tangent_ball_radius_bracket(mu):
    lens = lens_domain((0, 0), mu, 1, 1)
    theta0, _ = interior_cone(lens, (0, 0))
    L = 0.05
    for _, r in tangent_balls(lens, (0, 0), L):
        assert L / 2 - 1e-12 <= r <= (L / 2) / math.sin(theta0) + 1e-12


def test_tangent_balls_too_large():
    # curvature 1 curves cannot hold balls of radius (L/2)/sin(pi/4) > 1
    lens = lens_domain((0, 0), 0.5, 1, 1)
    with pytest.raises(BallTooLarge):
        tangent_balls(lens, (0, 0), 2.5)


def test_tangent_balls_disk_raises(unit_disk):
    with pytest.raises(NotACorner):
        tangent_balls(unit_disk, (1.0, 0.0), 0.1)


def test_in_delta_sector():
    disk = Disk(radius=1.0)
    assert in_delta_sector((0.0, 0.5), (0.0, 1.0), 0.5, disk)
    assert not in_delta_sector((1.0, 0.0), (0.0, 1.0), 0.1, disk)
    assert in_delta_sector((0.0, 1.0), (0.0, 1.0), 0.3, disk)


def test_boundary_curvature(unit_disk, half_lens):
    assert boundary_curvature(unit_disk, (0.0, 1.0)) == pytest.approx(1.0)
    assert boundary_curvature(Ellipse(a=1.0, b=0.8), (1.0, 0.0)) == pytest.approx(1.5625, rel=1e-9)
    with pytest.raises(NotSmooth):
        boundary_curvature(half_lens, (0.0, 0.0))


def test_convexity_midpoints(rng):
    for dom in (Ellipse(a=1.0, b=0.8), lens_domain((0, 0), 0.3, 1, 2),
                PerturbedLens(mu=0.25, c_p=0.5, alpha=0.5)):
        x0, y0, x1, y1 = dom.bbox()
        pts = rng.uniform((x0, y0), (x1, y1), (60000, 2))
        pts = pts[dom.level(pts) > 0][:20000]
        a, b = pts[:10000], pts[10000:20000]
        assert np.all(dom.level(0.5 * (a + b)) > 0)


def test_distance_matches_boundary_samples(rng, half_lens):
    for dom in (Ellipse(a=1.0, b=0.8), half_lens):
        bd = dom.boundary_samples(1000)
        spacing = np.max(np.hypot(*np.diff(np.vstack([bd, bd[:1]]), axis=0).T))
        x0, y0, x1, y1 = dom.bbox()
        pts = rng.uniform((x0, y0), (x1, y1), (300, 2))
        d = np.abs(dom.signed_distance(pts))
        ref = np.min(np.hypot(pts[:, None, 0] - bd[None, :, 0], pts[:, None, 1] - bd[None, :, 1]), 1)
        assert np.all(np.abs(d - ref) <= 2 * spacing)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(0.3, 3.0),
       st.floats(-1, 1), st.floats(-1, 1))
def test_lens_mirror_symmetry(mu, kappa, px, py):
    lens = lens_domain((0.0, 0.0), mu, kappa, kappa)
    p = np.array([px, py]) / kappa
    q = p * np.array([1, -1])
    assert signed_distance(lens, p) == pytest.approx(signed_distance(lens, q), abs=1e-12)


def test_cone_spec_validation():
    with pytest.raises(ValueError):
        ConeSpec(vertex=(0, 0), opening=math.pi)
    cone = ConeSpec(vertex=(1.0, 2.0), opening=1.0, axis_angle=0.3)
    r, th = cone.polar(cone.point(np.array([0.5, 2.0]), np.array([0.2, 0.9])))
    assert np.allclose(r, [0.5, 2.0]) and np.allclose(th, [0.2, 0.9])


def test_perturbed_lens_matches_osculating_far_from_vertex():
    P = PerturbedLens(mu=0.25, c_p=0.5, alpha=0.5)
    O = P.osculating
    c = tangent_cone_at(P, (0, 0))
    assert c.opening == pytest.approx(tangent_cone_at(O, (0, 0)).opening, abs=1e-12)
    # the bump lives within the blend radius of the vertex
    bd = O.boundary_samples(4000)
    far = np.hypot(*bd.T) > 0.25
    assert np.max(np.abs(P.signed_distance(bd[far]))) < 1e-9


@pytest.mark.parametrize("dom", [
    Disk(radius=1.5, center=(0.2, -0.1)),
    Ellipse(a=1.0, b=0.8),
    lens_domain((0.0, 0.0), 0.4, 1.0, 2.0),
    PerturbedLens(mu=0.25, c_p=0.5, alpha=0.5),
    DiskIntersection(disk_list=(((0.0, 1.0), 1.5), ((0.0, -1.0), 1.5), ((1.0, 0.0), 1.2))),
])
def test_config_round_trip(dom):
    again = domain_from_dict(dom.to_dict())
    assert again.domain_hash == dom.domain_hash
    pts = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    assert np.array_equal(again.level(pts), dom.level(pts))


def test_hash_ignores_int_float_spelling():
    a = domain_from_dict({"kind": "lens", "mu": 0.5, "kappa1": 1, "kappa2": 1})
    b = domain_from_dict({"kind": "lens", "mu": 0.5, "kappa1": 1.0, "kappa2": 1.0})
    assert a.domain_hash == b.domain_hash
