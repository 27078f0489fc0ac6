import csv

import numpy as np
import pytest

from edgesponsor.derived import build_catalog
from edgesponsor.harness import Context
from edgesponsor.model import Budgets, ModelParams, sample_population
from edgesponsor.stage1 import (
    BestResponseCurve,
    best_budget_1d,
    compare_schemes,
    cp_revenue,
    find_intersections,
    optimize_budgets,
)
from edgesponsor.stage2 import solve_fixedpoint

LOSS = dict(U=300, v=0.05)


def test_zero_budgets_earn_nothing(default_ctx):
    c = default_ctx
    for solver in ("fixedpoint", "agents"):
        rev = cp_revenue(Budgets(0.0, 0.0), c.params, c.catalog, c.population, solver)
        assert rev.total == 0.0 and rev.u_c == 0.0 and rev.u_e == 0.0


def test_loss_making_market_is_pure_cost():
    c = Context.build(LOSS)
    b = Budgets(120.0, 40.0)
    rev = cp_revenue(b, c.params, c.catalog, c.population, "agents")
    assert rev.total == pytest.approx(-b.alpha1 * c.params.h1 - b.alpha2 * c.params.h2)


def test_revenue_identity(default_ctx):
    c = default_ctx
    p = c.params
    for b in (Budgets(500.0, 100.0), Budgets(3000.0, 600.0), Budgets(9000.0, 1000.0)):
        rev = cp_revenue(b, p, c.catalog, c.population)
        fp = solve_fixedpoint(b, p, c.catalog, population=c.population)
        expected = p.u * fp.p_star * fp.n_c + p.u * fp.n_e - b.alpha1 * p.h1 - b.alpha2 * p.h2
        assert rev.total == pytest.approx(expected, rel=1e-12)
        assert rev.total == pytest.approx(rev.u_c + rev.u_e, rel=1e-12)


def test_bounds_checked(default_ctx):
    c = default_ctx
    with pytest.raises(ValueError):
        cp_revenue(Budgets(0.0, 1500.0), c.params, c.catalog, c.population)


def test_1d_constant_picks_lower_bound():
    assert best_budget_1d(lambda a1, a2: 5.0, 1, 0.0, 10.0, 200.0, 20) == (10.0, 5.0)


def test_1d_unimodal_stub():
    peak = 37.3
    lo, hi, n = 0.0, 100.0, 50
    a, value = best_budget_1d(lambda a1, a2: -((a1 - peak) ** 2), 2, 0.0, lo, hi, n)
    assert abs(a - peak) <= (hi - lo) / (n - 1)
    b, _ = best_budget_1d(lambda a1, a2: -((a2 - peak) ** 2) + a1, 1, 3.0, lo, hi, n)
    assert abs(b - peak) <= (hi - lo) / (n - 1)


def test_constant_curves_intersect_once():
    xs = np.linspace(0, 1000, 50)
    found = find_intersections(BestResponseCurve(xs, np.full(50, 300.0)), BestResponseCurve(xs, np.full(50, 700.0)))
    assert found == [Budgets(300.0, 700.0)]


def test_linear_curves_intersect_at_known_point():
    xs = np.linspace(0, 1000, 50)
    step = xs[1] - xs[0]
    curve_a1 = BestResponseCurve(xs, 0.5 * xs + 100)     # alpha1 given alpha2
    curve_a2 = BestResponseCurve(xs, -0.8 * xs + 900)    # alpha2 given alpha1
    (b,) = find_intersections(curve_a1, curve_a2)
    # a1 = 0.5 (900 - 0.8 a1) + 100 solves to a1 = 550 / 1.4.
    assert abs(b.alpha1 - 550 / 1.4) <= step
    assert abs(b.alpha2 - (900 - 0.8 * 550 / 1.4)) <= step


def test_loss_making_market_optimum_and_comparison():
    c = Context.build(LOSS)
    rep = optimize_budgets(c.params, c.catalog, c.population, grid_resolution=12, agents_check=False)
    assert rep.best[0] == Budgets(0.0, 0.0)
    cmp = compare_schemes(c.params, c.catalog, c.population, grid_resolution=12, report=rep)
    for _, rev in (cmp.joint, cmp.pure_cellular, cmp.pure_edge):
        assert rev.total <= 0
    assert cmp.gains == (None, None)


def test_free_sponsoring_prefers_large_cellular_budgets():
    c = Context.build(dict(U=1000, h1=0, h2=0))
    rep = optimize_budgets(c.params, c.catalog, c.population, grid_resolution=15, agents_check=False)
    # Sponsored cellular traffic never falls as alpha1 grows.
    assert np.all(np.diff(rep.grid, axis=0) >= -1e-9)
    j = int(np.argmax(rep.grid.max(axis=0)))
    assert rep.grid[-1, j] == pytest.approx(rep.grid.max())


def test_default_optimum(default_report, default_ctx, tmp_path):
    rep = default_report
    b, rev = rep.best
    assert rev.total > 0
    assert rev.total >= rep.grid.max() - 1e-9
    assert rep.intersections
    assert rep.intersection_distance() <= 1.0
    assert rep.agents_check is not None
    assert rep.agents_check.total == pytest.approx(rev.total, rel=0.02)
    # A single interior peak: the maximum is not on the box edge.
    i, j = np.unravel_index(np.argmax(rep.grid), rep.grid.shape)
    assert 0 < i < rep.grid.shape[0] - 1 and 0 < j < rep.grid.shape[1] - 1
    path = rep.write_contour_csv(tmp_path / "contour.csv")
    rows = list(csv.DictReader(open(path)))
    assert list(rows[0]) == ["alpha1", "alpha2", "u_c", "u_e", "total"]
    assert len(rows) == 50 * 50


def test_default_comparison(default_comparison, default_ctx, tmp_path):
    cmp = default_comparison
    joint = cmp.joint[1].total
    assert joint > cmp.pure_cellular[1].total and joint > cmp.pure_edge[1].total
    assert all(g is not None and g > 0 for g in cmp.gains)
    assert cmp.pure_cellular[0].alpha2 == 0.0 and cmp.pure_edge[0].alpha1 == 0.0
    # The pure-cellular optimum is the 1-D search with alpha2 pinned at zero.
    c = default_ctx

    def revenue(a1, a2):
        return cp_revenue(Budgets(a1, a2), c.params, c.catalog, c.population, check_bounds=False).total

    a1, total = best_budget_1d(revenue, 2, 0.0, *c.params.alpha1_bounds(), 50)
    assert (a1, total) == pytest.approx((cmp.pure_cellular[0].alpha1, cmp.pure_cellular[1].total))
    rows = list(csv.reader(open(cmp.write_csv(tmp_path / "s.csv"))))
    assert rows[0] == ["scheme", "alpha1", "alpha2", "total"]
    assert [r[0] for r in rows[1:]] == ["joint", "pure_cellular", "pure_edge"]


@pytest.mark.parametrize("overrides", [dict(v=2.5), dict(c1=2.0, h2=1.0), dict(gamma=1.2, S=400)])
def test_joint_dominates(overrides):
    params = ModelParams(U=1000, **overrides)
    pop = sample_population(params, 11)
    cat = build_catalog(params.S, params.gamma)
    cmp = compare_schemes(params, cat, pop, grid_resolution=15)
    joint = cmp.joint[1].total
    assert joint >= cmp.pure_cellular[1].total and joint >= cmp.pure_edge[1].total


def test_agents_solver_needs_population(default_ctx):
    c = default_ctx
    with pytest.raises(ValueError):
        cp_revenue(Budgets(10.0, 10.0), c.params, c.catalog, None, "agents")
