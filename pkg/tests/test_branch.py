import numpy as np
import pytest

from bubble_hjb.branch import (distance_to_eigenfunction, extrapolated_vanishing_point,
                               find_critical_lambda, norm_matched_lambda, trace_branch,
                               vanishing_point)
from bubble_hjb.elliptic import solve_positive
from bubble_hjb.branch import coupled_problem
from bubble_hjb.errors import InvalidParameterError
from bubble_hjb.grid import constant, field_from, make_grid, sup_norm
from bubble_hjb.spectral import critical_lambda

NU = 0.1


@pytest.fixture(scope="module")
def profile():
    g = make_grid(257)
    return field_from(g, lambda x: 1 - np.cos(2 * np.pi * x))


@pytest.fixture(scope="module")
def lam_c(profile):
    return find_critical_lambda(NU, profile)


@pytest.fixture(scope="module")
def branches(profile, lam_c):
    grid = lam_c + np.arange(1, 31) / 30
    return trace_branch(NU, profile, [0.5, 1.0, 2.0], grid, lam_c)


def test_doubling_search_agrees_with_bracketed_root(profile, lam_c):
    assert lam_c == pytest.approx(critical_lambda(NU, profile, (0.0, 10.0)), abs=1e-9)


def test_below_critical_coupling_is_zero(profile, lam_c):
    data = trace_branch(NU, profile, [1.0], [0.5 * lam_c, 0.99 * lam_c], lam_c)
    assert [pt.sup_norm for pt in data.branch(1.0)] == [0.0, 0.0]


def test_doubling_eps_halves_the_solution(branches):
    for p1, p2 in zip(branches.branch(1.0), branches.branch(2.0)):
        np.testing.assert_allclose(p2.u.values, 0.5 * p1.u.values, atol=1e-8)


def test_branch_invariants(branches, lam_c):
    step = 1 / 30
    for eps, pts in branches.points.items():
        norms = np.array([pt.sup_norm for pt in pts])
        assert np.all(np.diff(norms) > -1e-10)
        assert all(pt.sup_norm == sup_norm(pt.u) and pt.u.values.min() >= 0 for pt in pts)
        # the first branch point is already close to zero, on the scale of the branch
        assert norms[0] <= norms[-1] / 10
        assert abs(extrapolated_vanishing_point(pts) - lam_c) <= 2 * step
        assert abs(vanishing_point(pts) - lam_c) <= 2 * step
        # no jumps: second differences stay well below first differences
        d1 = np.diff(norms)
        assert np.max(np.abs(np.diff(d1))) <= 0.5 * np.max(d1)
    eps_sorted = sorted(branches.points)
    for small, big in zip(eps_sorted, eps_sorted[1:]):
        for ps, pb in zip(branches.branch(small), branches.branch(big)):
            assert np.all(ps.u.values >= pb.u.values - 1e-8)


def test_rows_layout(branches):
    rows = branches.rows()
    assert len(rows) == 90
    assert rows[0][0] == 0.5 and rows[-1][0] == 2.0


def test_profile_must_be_admissible():
    g = make_grid(33)
    with pytest.raises(InvalidParameterError):
        trace_branch(NU, constant(g, 1.0), [1.0], [1.0])
    with pytest.raises(InvalidParameterError):
        trace_branch(NU, field_from(g, lambda x: x - 0.5), [1.0], [1.0])
    with pytest.raises(InvalidParameterError):
        trace_branch(NU, field_from(g, lambda x: 1 + x), [1.0], [1.0])


def test_norm_matched_round_trip(profile, lam_c):
    lam_star = lam_c + 0.37
    target = sup_norm(solve_positive(coupled_problem(NU, profile, 0.8, lam_star)).u)
    lam, u = norm_matched_lambda(NU, profile, 0.8, target, lam_c)
    assert lam == pytest.approx(lam_star, abs=1e-6)
    assert abs(sup_norm(u) - target) <= 1e-8


def test_norm_matched_scaling_invariance(profile, lam_c):
    lam1, _ = norm_matched_lambda(NU, profile, 0.3, 1.0, lam_c)
    lam2, _ = norm_matched_lambda(NU, profile, 0.6, 0.5, lam_c)
    assert lam1 == pytest.approx(lam2, abs=1e-6)


def test_norm_matched_rejects_bad_target(profile):
    with pytest.raises(InvalidParameterError):
        norm_matched_lambda(NU, profile, 1.0, 0.0)


def test_norm_matched_branch_approaches_eigenfunction(profile, lam_c):
    dists, lams = [], []
    for eps in (0.4, 0.2, 0.1, 0.05):
        lam, u = norm_matched_lambda(NU, profile, eps, 1.0, lam_c)
        dists.append(distance_to_eigenfunction(NU, profile, lam_c, u))
        lams.append(lam)
    assert np.all(np.diff(dists) < 0)
    assert np.all(np.diff(np.abs(np.array(lams) - lam_c)) < 0)


def test_quadratic_coefficient_limits(profile, lam_c):
    # u shrinks to zero like 1/eps as the quadratic coefficient grows, and blows
    # up as it vanishes (the coefficient-to-infinity reading of the decay limit)
    eps = np.array([0.01, 0.1, 1.0, 10.0, 100.0])
    norms = np.array([sup_norm(solve_positive(coupled_problem(NU, profile, e, lam_c + 0.5)).u)
                      for e in eps])
    assert np.all(np.diff(norms) < 0)
    np.testing.assert_allclose(norms * eps, norms[2], rtol=1e-6)
