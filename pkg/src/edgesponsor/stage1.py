"""Stage I: the CP's budget choice.

The CP revenue at equilibrium is non-convex in the budget pair, so a full
grid search is the ground truth. The sequential one-dimensional best
responses and their intersections are computed alongside as a cross-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional

import numpy as np

from .derived import ZipfCatalog, cache_hit_prob
from .model import Budgets, ModelParams, Population
from .stage2 import DemandCurve, solve_dynamics, solve_fixedpoint

Solver = Literal["fixedpoint", "agents"]


@dataclass(frozen=True)
class RevenueBreakdown:
    u_c: float
    u_e: float
    total: float
    converged: bool = True
    p: float = 0.0
    n_c: float = 0.0
    n_e: float = 0.0

    @classmethod
    def from_equilibrium(
        cls, budgets: Budgets, params: ModelParams, p: float, n_c: float, n_e: float, converged: bool = True
    ) -> "RevenueBreakdown":
        u_c = params.u * p * n_c - budgets.alpha1 * params.h1
        u_e = params.u * n_e - budgets.alpha2 * params.h2
        return cls(u_c, u_e, u_c + u_e, converged, p, n_c, n_e)


def cp_revenue(
    budgets: Budgets,
    params: ModelParams,
    catalog: ZipfCatalog,
    population: Optional[Population] = None,
    solver: Solver = "fixedpoint",
    curve: Optional[DemandCurve] = None,
    check_bounds: bool = True,
) -> RevenueBreakdown:
    """CP revenue once the users have settled at the Stage-II equilibrium.

    A non-converged agent run still yields a value, computed at the final
    iterate and flagged through ``converged``. ``check_bounds=False`` admits
    a zero budget below ``alpha_min``, as the single-scheme restrictions need.
    """
    if check_bounds:
        budgets.validate(params)
    if solver == "agents":
        if population is None:
            raise ValueError("the agent-based solver needs a population")
        res = solve_dynamics(population, budgets, params, catalog)
        st = res.state
        return RevenueBreakdown.from_equilibrium(budgets, params, st.p, st.n_c, st.n_e, res.converged)
    if solver != "fixedpoint":
        raise ValueError(f"unknown solver {solver!r}")
    fp = solve_fixedpoint(budgets, params, catalog, population=population, curve=curve)
    return RevenueBreakdown.from_equilibrium(budgets, params, fp.p_star, fp.n_c, fp.n_e)


def best_budget_1d(
    revenue: Callable[[float, float], float],
    fixed_axis: Literal[1, 2],
    fixed_value: float,
    lo: float,
    hi: float,
    resolution: int = 50,
) -> tuple[float, float]:
    """Grid scan of the free budget with the other one held fixed.

    ``revenue(alpha1, alpha2)`` returns the total CP revenue. Returns the
    maximising budget and its revenue; ties go to the smaller budget.
    """
    if fixed_axis not in (1, 2):
        raise ValueError("fixed_axis must be 1 or 2")
    grid = np.linspace(lo, hi, resolution)
    values = np.array(
        [revenue(fixed_value, a) if fixed_axis == 1 else revenue(a, fixed_value) for a in grid]
    )
    k = int(np.argmax(values))
    return float(grid[k]), float(values[k])


@dataclass(frozen=True, eq=False)
class BestResponseCurve:
    """Sampled best response: ``y[k]`` maximises revenue given the other budget ``x[k]``."""

    x: np.ndarray
    y: np.ndarray

    def __call__(self, at) -> np.ndarray:
        return np.interp(at, self.x, self.y)

    @property
    def step(self) -> float:
        return float(self.x[1] - self.x[0]) if self.x.size > 1 else 0.0


def find_intersections(
    curve_a1: BestResponseCurve,
    curve_a2: BestResponseCurve,
    step1: Optional[float] = None,
    step2: Optional[float] = None,
) -> list[Budgets]:
    """Budget pairs where the two best-response curves cross.

    ``curve_a1`` maps alpha2 to the best alpha1 and ``curve_a2`` maps alpha1
    to the best alpha2. Crossings are located by the zeros and sign changes
    of ``curve_a1(curve_a2(a1)) - a1`` over the samples of ``curve_a2`` and
    kept if both curve equations hold within one grid step.
    """
    step1 = curve_a2.step if step1 is None else step1
    step2 = curve_a1.step if step2 is None else step2
    xs = curve_a2.x
    gap = curve_a1(curve_a2(xs)) - xs
    candidates: list[float] = []
    for k in range(xs.size):
        if gap[k] == 0:
            candidates.append(float(xs[k]))
        elif k + 1 < xs.size and gap[k] * gap[k + 1] < 0:
            t = gap[k] / (gap[k] - gap[k + 1])
            candidates.append(float(xs[k] + t * (xs[k + 1] - xs[k])))
    if xs.size == 1 and gap[0] == 0:
        candidates = [float(xs[0])]

    found: list[Budgets] = []
    for a1 in candidates:
        a2 = float(curve_a2(a1))
        ok = abs(float(curve_a1(a2)) - a1) <= step1 + 1e-9 and abs(float(curve_a2(a1)) - a2) <= step2 + 1e-9
        duplicate = any(abs(b.alpha1 - a1) <= step1 and abs(b.alpha2 - a2) <= step2 for b in found)
        if ok and not duplicate:
            found.append(Budgets(a1, a2))
    return found


@dataclass
class OptimizationReport:
    best: tuple[Budgets, RevenueBreakdown]
    alpha1_grid: np.ndarray
    alpha2_grid: np.ndarray
    grid: np.ndarray  # totals, indexed [alpha1, alpha2]
    u_c: np.ndarray
    u_e: np.ndarray
    curve_a1: BestResponseCurve
    curve_a2: BestResponseCurve
    intersections: list[Budgets]
    grid_best: tuple[Budgets, float]
    agents_check: Optional[RevenueBreakdown] = None
    intersection_revenues: list[float] = field(default_factory=list)

    @property
    def steps(self) -> tuple[float, float]:
        return self.curve_a2.step, self.curve_a1.step

    def intersection_distance(self) -> float:
        """Distance, in grid steps, from the grid optimum to the nearest intersection."""
        if not self.intersections:
            return float("inf")
        b, _ = self.grid_best
        s1, s2 = self.steps
        return min(
            max(abs(x.alpha1 - b.alpha1) / (s1 or 1.0), abs(x.alpha2 - b.alpha2) / (s2 or 1.0))
            for x in self.intersections
        )

    def write_contour_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha1", "alpha2", "u_c", "u_e", "total"])
            for i, a1 in enumerate(self.alpha1_grid):
                for j, a2 in enumerate(self.alpha2_grid):
                    writer.writerow(
                        [repr(float(a1)), repr(float(a2)), repr(float(self.u_c[i, j])),
                         repr(float(self.u_e[i, j])), repr(float(self.grid[i, j]))]
                    )
        return path


def revenue_surface(
    alpha1_grid: np.ndarray,
    alpha2_grid: np.ndarray,
    params: ModelParams,
    catalog: ZipfCatalog,
    population: Optional[Population] = None,
    solver: Solver = "fixedpoint",
) -> tuple[np.ndarray, np.ndarray]:
    """Cellular and edge revenue on the grid, indexed ``[alpha1, alpha2]``."""
    u_c = np.empty((alpha1_grid.size, alpha2_grid.size))
    u_e = np.empty_like(u_c)
    for j, a2 in enumerate(alpha2_grid):
        curve = None
        if solver == "fixedpoint" and population is not None:
            # The demand curve depends on alpha2 only; share it down the column.
            rho = cache_hit_prob(catalog, float(a2))
            curve = DemandCurve(population.f, population.r, rho, params)
        for i, a1 in enumerate(alpha1_grid):
            rev = cp_revenue(Budgets(float(a1), float(a2)), params, catalog, population, solver, curve)
            u_c[i, j] = rev.u_c
            u_e[i, j] = rev.u_e
    return u_c, u_e


def optimize_budgets(
    params: ModelParams,
    catalog: ZipfCatalog,
    population: Optional[Population] = None,
    grid_resolution: int = 50,
    solver: Solver = "fixedpoint",
    agents_check: bool = True,
) -> OptimizationReport:
    """Grid search over the budget box plus the best-response intersections.

    The reported optimum is the best of the grid and the intersections.
    With ``agents_check`` it is re-evaluated with the agent-based solver.
    """
    if grid_resolution < 10:
        raise ValueError("grid_resolution must be >= 10")
    a1_grid = np.linspace(*params.alpha1_bounds(), grid_resolution)
    a2_grid = np.linspace(*params.alpha2_bounds(), grid_resolution)
    u_c, u_e = revenue_surface(a1_grid, a2_grid, params, catalog, population, solver)
    total = u_c + u_e

    # np.argmax picks the first maximum, i.e. the smaller budget on ties.
    curve_a1 = BestResponseCurve(a2_grid, a1_grid[np.argmax(total, axis=0)])
    curve_a2 = BestResponseCurve(a1_grid, a2_grid[np.argmax(total, axis=1)])
    intersections = find_intersections(curve_a1, curve_a2)

    i, j = np.unravel_index(int(np.argmax(total)), total.shape)
    grid_budgets = Budgets(float(a1_grid[i]), float(a2_grid[j]))
    best_budgets = grid_budgets
    best_rev = cp_revenue(grid_budgets, params, catalog, population, solver)
    inter_revs = []
    for b in intersections:
        rev = cp_revenue(b, params, catalog, population, solver)
        inter_revs.append(rev.total)
        if rev.total > best_rev.total:
            best_budgets, best_rev = b, rev

    check = None
    if agents_check and population is not None:
        check = cp_revenue(best_budgets, params, catalog, population, "agents")
    return OptimizationReport(
        best=(best_budgets, best_rev),
        alpha1_grid=a1_grid,
        alpha2_grid=a2_grid,
        grid=total,
        u_c=u_c,
        u_e=u_e,
        curve_a1=curve_a1,
        curve_a2=curve_a2,
        intersections=intersections,
        grid_best=(grid_budgets, float(total[i, j])),
        agents_check=check,
        intersection_revenues=inter_revs,
    )


@dataclass(frozen=True)
class SchemeComparison:
    joint: tuple[Budgets, RevenueBreakdown]
    pure_cellular: tuple[Budgets, RevenueBreakdown]
    pure_edge: tuple[Budgets, RevenueBreakdown]
    gains: tuple[Optional[float], Optional[float]]

    def write_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["scheme", "alpha1", "alpha2", "total"])
            for name, (b, rev) in (
                ("joint", self.joint),
                ("pure_cellular", self.pure_cellular),
                ("pure_edge", self.pure_edge),
            ):
                writer.writerow([name, repr(b.alpha1), repr(b.alpha2), repr(rev.total)])
        return path


def _gain(joint: float, pure: float) -> Optional[float]:
    return joint / pure - 1.0 if pure > 0 else None


def compare_schemes(
    params: ModelParams,
    catalog: ZipfCatalog,
    population: Optional[Population] = None,
    grid_resolution: int = 50,
    solver: Solver = "fixedpoint",
    report: Optional[OptimizationReport] = None,
) -> SchemeComparison:
    """Optimal joint sponsoring against the two single-scheme restrictions.

    Pure cellular fixes ``alpha2 = 0``, pure edge fixes ``alpha1 = 0``.
    Both are feasible for the joint problem, so the joint optimum is taken
    over the grid, the intersections and the two pure optima. A gain is
    ``None`` when the pure revenue is not positive.
    """
    if report is None:
        report = optimize_budgets(params, catalog, population, grid_resolution, solver, agents_check=False)

    def revenue(a1: float, a2: float) -> float:
        return cp_revenue(Budgets(a1, a2), params, catalog, population, solver, check_bounds=False).total

    a1_star, _ = best_budget_1d(revenue, 2, 0.0, *params.alpha1_bounds(), grid_resolution)
    a2_star, _ = best_budget_1d(revenue, 1, 0.0, *params.alpha2_bounds(), grid_resolution)
    cell = (Budgets(a1_star, 0.0), cp_revenue(Budgets(a1_star, 0.0), params, catalog, population, solver, check_bounds=False))
    edge = (Budgets(0.0, a2_star), cp_revenue(Budgets(0.0, a2_star), params, catalog, population, solver, check_bounds=False))
    joint = max([report.best, cell, edge], key=lambda item: item[1].total)
    gains = (_gain(joint[1].total, cell[1].total), _gain(joint[1].total, edge[1].total))
    return SchemeComparison(joint, cell, edge, gains)
