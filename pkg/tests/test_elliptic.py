import dataclasses
import math

import numpy as np
import pytest

from hypmin.elliptic import (
    INTERIOR,
    NEAR_BOUNDARY,
    assemble_residual,
    check_concavity,
    comparison_test,
    evaluate,
    newton_solve,
    solve_domain,
)
from hypmin.errors import (
    NewtonStalled,
    NonPositiveValue,
    NotNested,
    OutOfDomain,
    TooCloseToBoundary,
)
from hypmin.geometry import Disk, Ellipse, lens_domain


def hemisphere(field, R=1.0, c=(0.0, 0.0)):
    X, Y = np.meshgrid(field.x - c[0], field.y - c[1])
    return np.sqrt(np.maximum(R * R - X ** 2 - Y ** 2, 0.0))


def with_values(field, values):
    return dataclasses.replace(field, values=np.asarray(values, dtype=float), patches=())


# ---------------------------------------------------------------- residual

def test_constant_field_residual_is_n_over_c(disk128):
    c = 0.7
    res = assemble_residual(with_values(disk128, np.where(disk128.mask > 0, c, 0.0)))
    inner = disk128.mask == INTERIOR
    assert np.allclose(res[inner], 2 / c, rtol=0, atol=1e-12)
    assert np.all(np.isnan(res[disk128.mask == 0]))


def test_linear_field_residual_is_n_over_y():
    dom = Disk(center=(0.0, 2.0), radius=1.0)
    fld = solve_domain(dom, 128)
    Y = np.meshgrid(fld.x, fld.y)[1]
    res = assemble_residual(with_values(fld, np.where(fld.mask > 0, Y, 0.0)),
                            boundary_value=lambda p: p[:, 1])
    m = fld.mask > 0
    assert np.allclose(res[m], 2 / Y[m], rtol=1e-10, atol=1e-10)


def test_hemisphere_residual_is_second_order(disk128, disk256):
    errs = []
    for fld in (disk128, disk256):
        res = assemble_residual(with_values(fld, hemisphere(fld)))
        pts, _ = fld.interior_nodes()
        far = np.zeros(fld.shape, dtype=bool)
        far[fld.mask > 0] = np.hypot(*pts.T) < 0.5
        errs.append(np.abs(res[far]).max())
    assert errs[0] < 1e-3
    assert math.log2(errs[0] / errs[1]) > 1.8


def test_non_positive_node_is_reported(disk128):
    vals = disk128.values.copy()
    j, i = np.argwhere(disk128.mask == INTERIOR)[10]
    vals[j, i] = 0.0
    with pytest.raises(NonPositiveValue) as exc:
        assemble_residual(with_values(disk128, vals))
    assert exc.value.node == (i, j)


def test_mask_flags_cut_stencils(disk128):
    pts, _ = disk128.interior_nodes()
    d = 1 - np.hypot(*pts.T)
    near = disk128.mask[disk128.mask > 0] == NEAR_BOUNDARY
    assert near.any() and (~near).any()
    # a node with a cut arm is within a diagonal step of the boundary
    assert d[near].max() <= math.sqrt(2) * disk128.spacing + 1e-12
    assert d[~near].min() > 0


# ---------------------------------------------------------------- solver

def test_disk_matches_hemisphere(disk128, disk256):
    for fld in (disk128, disk256):
        m = fld.mask > 0
        ref = hemisphere(fld)[m]
        assert np.max(np.abs(fld.values[m] - ref) / ref) < 1e-10
        assert fld.solver_meta["eps_schedule"] == [0.0]


@pytest.mark.parametrize("R", [0.5, 2.0])
def test_centre_value_is_radius(R):
    fld = solve_domain(Disk(radius=R), 128)
    # the centre is not a node; bilinear interpolation of f**2 costs O(h**2)
    assert evaluate(fld, [0.0, 0.0]) == pytest.approx(R, rel=1e-4)


def test_scaling_invariance():
    a = solve_domain(Ellipse(a=1.0, b=0.8), 128)
    b = solve_domain(Ellipse(a=2.0, b=1.6), 128)
    m = a.mask > 0
    assert np.array_equal(m, b.mask > 0)
    assert np.allclose(b.values[m], 2 * a.values[m], rtol=1e-10, atol=0)


def test_lens_scaling_invariance(rng):
    small = solve_domain(lens_domain((0, 0), 0.5, 1.0, 1.0), 128)
    big = solve_domain(lens_domain((0, 0), 0.5, 0.5, 0.5), 128)
    pts, _ = small.interior_nodes()
    pts = pts[small.domain.signed_distance(pts) > 3 * small.spacing]
    pts = pts[rng.choice(len(pts), 200, replace=False)]
    assert np.allclose(evaluate(big, 2 * pts), 2 * evaluate(small, pts), rtol=1e-9)


def test_ball_bounds(lens128):
    # hemispheres over an inscribed and a circumscribed disk bracket the solution
    pts, f = lens128.interior_nodes()
    c_out = np.array([math.sqrt(2) / 2, 0.0])
    R_out = math.sqrt(2) / 2
    upper = np.sqrt(np.maximum(R_out ** 2 - ((pts - c_out) ** 2).sum(1), 0))
    assert np.all(f <= upper + 1e-4)
    rho = lens128.domain.inradius()
    c_in = np.array([R_out, 0.0])
    lower = np.sqrt(np.maximum(rho ** 2 - ((pts - c_in) ** 2).sum(1), 0))
    assert np.all(f >= lower - 1e-4)


@pytest.mark.slow
def test_ellipse_self_convergence(rng):
    dom = Ellipse(a=1.0, b=0.8)
    pts = rng.uniform(-1, 1, (4000, 2))
    pts = pts[dom.signed_distance(pts) >= 0.05][:500]
    vals = [evaluate(solve_domain(dom, res), pts) for res in (128, 256, 512)]
    d1 = np.abs(vals[0] - vals[1]).max()
    d2 = np.abs(vals[1] - vals[2]).max()
    assert d2 < 3e-4
    # observed order is about 1.5, not 2: w = f**2 is not smooth up to the boundary
    assert math.log2(d1 / d2) > 1.3


# ---------------------------------------------------------------- newton

def test_monotone_in_boundary_offset():
    dom = Ellipse(a=1.0, b=0.8)
    f0 = solve_domain(dom, 128, corner_patches=False)
    f1 = newton_solve(dom, 128, 0.05)
    f2 = newton_solve(dom, 128, 0.1, init=f1)
    m = f0.mask > 0
    pts, _ = f0.interior_nodes()
    deep = dom.signed_distance(pts) > 3 * f0.spacing
    # the offset problems are solved for f, which under-resolves the boundary layer
    assert np.all(f0.values[m] <= f1.values[m] + 1e-2)
    assert np.all(f0.values[m][deep] <= f1.values[m][deep])
    assert np.all(f1.values[m] <= f2.values[m] + 1e-12)
    assert np.all(f1.values[m] >= 0.05 - 1e-12)
    assert f1.eps == 0.05 and f1.solver_meta["unknown"] == "f"


def test_offset_disk_is_larger_hemisphere():
    fld = newton_solve(Disk(radius=1.0), 128, 0.1)
    pts, f = fld.interior_nodes()
    exact = np.sqrt(1.01 - (pts ** 2).sum(1))
    assert np.abs(f - exact).max() < 2e-2
    inner = np.hypot(*pts.T) < 0.8
    assert np.abs(f - exact)[inner].max() < 1e-3


def test_continuation_fallback_matches_direct_solve():
    dom = Ellipse(a=1.0, b=0.8)
    direct = solve_domain(dom, 128)
    cont = solve_domain(dom, 128, eps_schedule=[0.05, 0.025, 0.0125, 0.00625])
    pts, f = direct.interior_nodes()
    deep = dom.signed_distance(pts) > 0.05
    assert np.abs(cont.values[direct.mask > 0] - f)[deep].max() < 1e-2


def test_newton_stalls_with_too_few_iterations():
    with pytest.raises(NewtonStalled):
        newton_solve(Ellipse(a=1.0, b=0.5), 128, 0.0, max_iter=1)


def test_newton_rejects_negative_offset(unit_disk):
    with pytest.raises(ValueError):
        newton_solve(unit_disk, 128, -0.1)


def test_resolution_whitelist(unit_disk):
    with pytest.raises(ValueError):
        solve_domain(unit_disk, 100)


# ---------------------------------------------------------------- evaluate

def test_evaluate_at_node_is_exact(disk128):
    j, i = np.argwhere(disk128.mask == INTERIOR)[len(np.argwhere(disk128.mask == INTERIOR)) // 2]
    p = [disk128.x[i], disk128.y[j]]
    assert evaluate(disk128, p) == disk128.values[j, i]


def test_evaluate_off_node(disk256):
    assert evaluate(disk256, [0.3, 0.4]) == pytest.approx(math.sqrt(0.75), abs=1e-4)
    out = disk256([[0.3, 0.4], [0.0, 0.5]])
    assert out.shape == (2,)


def test_evaluate_errors(disk128):
    with pytest.raises(OutOfDomain):
        evaluate(disk128, [1.2, 0.0])
    with pytest.raises(TooCloseToBoundary):
        evaluate(disk128, [1 - 0.25 * disk128.spacing, 0.0])
    v = evaluate(disk128, [1 - 0.25 * disk128.spacing, 0.0], strict=False)
    assert 0 < v < 0.1


def test_field_is_read_only(disk128):
    with pytest.raises(ValueError):
        disk128.values[0, 0] = 1.0


# ---------------------------------------------------------------- comparison

def test_comparison_small_disk_below_unit_disk(disk128):
    small = solve_domain(Disk(radius=0.5), 128)
    rep = comparison_test(small, disk128)
    assert rep.passed and rep.points > 1000
    assert rep.max_violation < 0


def test_comparison_lens_below_circumscribed_disk(lens128):
    c = math.sqrt(2) / 2
    outer = solve_domain(Disk(center=(c, 0.0), radius=c), 128)
    assert comparison_test(lens128, outer)


def test_comparison_identical_domains(lens128):
    rep = comparison_test(lens128, lens128, tol=0.0)
    assert rep.passed and rep.max_violation == 0.0


def test_comparison_not_nested(disk128):
    shifted = solve_domain(Disk(center=(0.5, 0.0), radius=1.0), 128)
    with pytest.raises(NotNested):
        comparison_test(shifted, disk128)


# ---------------------------------------------------------------- concavity

def test_concavity(disk128, lens128):
    assert check_concavity(disk128)
    assert check_concavity(lens128)
    X, Y = np.meshgrid(disk128.x, disk128.y)
    bowl = with_values(disk128, np.where(disk128.mask > 0, 10 * (X ** 2 + Y ** 2) + 0.1, 0.0))
    rep = check_concavity(bowl)
    assert not rep
    # the diagonal difference of |x|**2 is 4 h**2
    assert rep.worst == pytest.approx(40 * disk128.spacing ** 2, rel=1e-6)
