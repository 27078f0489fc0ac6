"""Experiment runner and command-line entry point.

Each experiment is described by an ``ExperimentSpec``, builds its own
parameters, population and catalog from scratch, and writes CSV files to
its output directory. Runs are deterministic given the configuration and
seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
from .derived import MarketState, ZipfCatalog, build_catalog, cache_hit_prob, sponsor_prob
from .model import (
    Budgets,
    ConfigError,
    ModelParams,
    Population,
    PopulationSpec,
    config_from_mapping,
    dump_config,
    read_config_mapping,
)
from .payoffs import (
    BOUNDARY_TOL,
    MEMBERSHIPS,
    Membership,
    best_membership,
    classify_region,
    indifferent_points,
    payoff_table,
    user_payoff,
)
from .stage1 import OptimizationReport, SchemeComparison, compare_schemes, optimize_budgets
from .stage2 import (
    best_response_step,
    solve_dynamics,
    solve_fixedpoint,
    write_trace_csv,
)

KINDS = ("region-map", "sweep", "sweep-v", "sweep-c1", "dynamics", "contour", "compare", "oracle", "equilibrium")
# Reference equilibrium shares (N, C, E, H) targeted by the calibration.
REFERENCE_SHARES = (0.09, 0.28, 0.21, 0.42)
CALIBRATION_GAMMAS = (0.6, 0.8, 1.0, 1.2)
V_SWEEP = ("v", 2.0, 4.0, 9)
C1_SWEEP = ("c1", 1.0, 3.5, 11)
ORACLE_MAX_USERS = 500
SOLVER_TOL = 0.02


@dataclass(frozen=True)
class Sweep:
    param: str
    start: float
    stop: float
    steps: int

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    overrides: dict[str, Any] = field(default_factory=dict)
    sweep: Optional[Sweep] = None
    output_dir: Path = Path(".")
    base: dict[str, Any] = field(default_factory=dict)
    solver: Optional[str] = None
    resolution: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind (expected one of {', '.join(KINDS)})", "kind", self.kind)
        if self.kind.startswith("sweep"):
            if self.sweep is None:
                raise ConfigError("sweep experiments need a sweep range", "sweep", None)
            if self.sweep.steps < 2:
                raise ConfigError("needs at least 2 steps", "steps", self.sweep.steps)
        if self.solver not in (None, "agents", "fixedpoint"):
            raise ConfigError("expected agents or fixedpoint", "solver", self.solver)
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def mapping(self, **extra: Any) -> dict[str, Any]:
        data = dict(self.base)
        data.update(self.overrides)
        data.update(extra)
        return data


@dataclass(frozen=True)
class Context:
    params: ModelParams
    budgets: Budgets
    pop_spec: PopulationSpec
    population: Population
    catalog: ZipfCatalog

    @classmethod
    def build(cls, mapping: dict[str, Any]) -> "Context":
        params, budgets, pop_spec = config_from_mapping(mapping)
        return cls(params, budgets, pop_spec, pop_spec.build(params), build_catalog(params.S, params.gamma))

    def reproduction(self) -> str:
        return dump_config(self.params, self.budgets, self.pop_spec)


@dataclass(frozen=True)
class Stage2Outcome:
    mu: tuple[float, float, float, float]
    state: MarketState
    converged: bool
    iterations: int


def solve_stage2(ctx: Context, solver: Optional[str] = None) -> Stage2Outcome:
    if solver in (None, "agents"):
        res = solve_dynamics(ctx.population, ctx.budgets, ctx.params, ctx.catalog)
        return Stage2Outcome(res.mu, res.state, res.converged, res.iterations)
    fp = solve_fixedpoint(ctx.budgets, ctx.params, ctx.catalog, population=ctx.population)
    return Stage2Outcome(fp.mu, fp.state, fp.bracketed, 0)


def _out(spec: ExperimentSpec, name: str) -> Path:
    spec.output_dir.mkdir(parents=True, exist_ok=True)
    return spec.output_dir / name


def _fmt(x: float) -> str:
    return repr(float(x))


# --- experiments -----------------------------------------------------------


def run_region_map(spec: ExperimentSpec, grid: Optional[int] = None) -> Path:
    """Classify a grid of user types at the equilibrium market state.

    Writes ``region_map.csv`` (f, r, membership) and
    ``indifferent_points.csv``; returns the path of the former.
    """
    ctx = Context.build(spec.mapping())
    g = grid or spec.resolution or 101
    outcome = solve_stage2(ctx, spec.solver)
    st = outcome.state
    ticks = np.linspace(0.0, 1.0, g)
    f, r = np.meshgrid(ticks, ticks, indexing="ij")
    table = payoff_table(f.ravel(), r.ravel(), st.p, st.rho, ctx.params)
    labels = np.argmax(table, axis=0)
    path = _out(spec, "region_map.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["f", "r", "membership"])
        for a, b, m in zip(f.ravel(), r.ravel(), labels):
            writer.writerow([_fmt(a), _fmt(b), MEMBERSHIPS[m].label])
    with open(_out(spec, "indifferent_points.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["point", "f", "r", "in_domain"])
        if ctx.params.phi_equal:
            pts = indifferent_points(st.delta1, st.delta2, st.rho, ctx.params.phi1)
            for name, pt, ok in (("N1", pts.n1, pts.n1_in_domain), ("N2", pts.n2, pts.n2_in_domain)):
                if pt is not None:
                    writer.writerow([name, _fmt(pt[0]), _fmt(pt[1]), int(ok)])
    return path


def sweep_rows(spec: ExperimentSpec) -> list[tuple[float, tuple[float, float, float, float], bool]]:
    assert spec.sweep is not None
    rows = []
    for value in spec.sweep.values():
        ctx = Context.build(spec.mapping(**{spec.sweep.param: float(value)}))
        outcome = solve_stage2(ctx, spec.solver)
        rows.append((float(value), outcome.mu, outcome.converged))
    return rows


def run_sweep(spec: ExperimentSpec) -> Path:
    """Equilibrium membership percentages across a parameter range."""
    rows = sweep_rows(spec)
    path = _out(spec, f"sweep_{spec.sweep.param}.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "mu_N", "mu_C", "mu_E", "mu_H"])
        for value, mu, _ in rows:
            writer.writerow([_fmt(value), *(_fmt(x) for x in mu)])
    return path


def run_dynamics(spec: ExperimentSpec, max_iters: int = 500):
    ctx = Context.build(spec.mapping())
    result = solve_dynamics(ctx.population, ctx.budgets, ctx.params, ctx.catalog, max_iters=max_iters)
    path = write_trace_csv(result, _out(spec, "dynamics.csv"))
    return result, path


@dataclass(frozen=True)
class CalibrationReport:
    rows: list[dict[str, Any]]
    best_gamma: float
    best_distance: float
    target: tuple[float, float, float, float]

    @property
    def within(self) -> bool:
        return self.best_distance <= 0.08


def run_calibration(
    spec: ExperimentSpec,
    gammas: Sequence[float] = CALIBRATION_GAMMAS,
    target: Sequence[float] = REFERENCE_SHARES,
) -> CalibrationReport:
    """Sweep the Zipf exponent and report the best match to the target percentages."""
    rows = []
    for gamma in gammas:
        ctx = Context.build(spec.mapping(gamma=float(gamma)))
        res = solve_dynamics(ctx.population, ctx.budgets, ctx.params, ctx.catalog)
        dist = max(abs(a - b) for a, b in zip(res.mu, target))
        rows.append(
            dict(gamma=float(gamma), mu=res.mu, rho=res.state.rho, distance=dist,
                 converged=res.converged, iterations=res.iterations)
        )
    best = min(rows, key=lambda row: row["distance"])
    with open(_out(spec, "calibration.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma", "mu_N", "mu_C", "mu_E", "mu_H", "rho", "max_abs_gap", "converged", "iterations"])
        for row in rows:
            writer.writerow(
                [_fmt(row["gamma"]), *(_fmt(x) for x in row["mu"]), _fmt(row["rho"]),
                 _fmt(row["distance"]), int(row["converged"]), row["iterations"]]
            )
    return CalibrationReport(rows, best["gamma"], best["distance"], tuple(target))


def run_optimize(spec: ExperimentSpec) -> OptimizationReport:
    """Contour grid plus best-response intersections.

    A grid optimum farther than one step from every intersection is
    written to ``intersection_counterexample.csv``.
    """
    ctx = Context.build(spec.mapping())
    report = optimize_budgets(
        ctx.params, ctx.catalog, ctx.population, spec.resolution or 50, spec.solver or "fixedpoint"
    )
    report.write_contour_csv(_out(spec, "contour.csv"))
    with open(_out(spec, "intersections.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha1", "alpha2", "total"])
        for b, total in zip(report.intersections, report.intersection_revenues):
            writer.writerow([_fmt(b.alpha1), _fmt(b.alpha2), _fmt(total)])
    if report.intersection_distance() > 1.0:
        b, total = report.grid_best
        with open(_out(spec, "intersection_counterexample.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha1", "alpha2", "total", "steps_to_nearest_intersection"])
            writer.writerow([_fmt(b.alpha1), _fmt(b.alpha2), _fmt(total), _fmt(report.intersection_distance())])
        (spec.output_dir / "intersection_counterexample.yaml").write_text(ctx.reproduction())
    return report


def run_compare(spec: ExperimentSpec) -> SchemeComparison:
    ctx = Context.build(spec.mapping())
    cmp = compare_schemes(
        ctx.params, ctx.catalog, ctx.population, spec.resolution or 50, spec.solver or "fixedpoint"
    )
    cmp.write_csv(_out(spec, "schemes.csv"))
    return cmp


# --- brute-force oracle ----------------------------------------------------


def _slow_state(population: Population, labels, budgets: Budgets, params: ModelParams, catalog: ZipfCatalog) -> MarketState:
    """Market state by plain loops over users, independent of the vectorised path."""
    rho = cache_hit_prob(catalog, budgets.alpha2)
    n_c = n_e = 0.0
    for f, r, m in zip(population.f.tolist(), population.r.tolist(), labels):
        if m == Membership.C:
            n_c += f
        elif m == Membership.E:
            n_e += r * f * rho
        elif m == Membership.H:
            n_c += f - r * f * rho
            n_e += r * f * rho
    return MarketState.build(params, rho, sponsor_prob(budgets.alpha1, n_c), n_c, n_e)


def deviation_violations(
    population: Population,
    labels,
    budgets: Budgets,
    params: ModelParams,
    catalog: ZipfCatalog,
    epsilon: float = 1e-9,
) -> list[dict[str, Any]]:
    """Exhaustively try all four memberships for every user.

    Each user is a price taker: the deviation payoff is evaluated at the
    market state of the given assignment.
    """
    labels = [Membership(int(x)) for x in labels]
    state = _slow_state(population, labels, budgets, params, catalog)
    out = []
    for i, (user, current) in enumerate(zip(population.users, labels)):
        here = user_payoff(user, current, state, params)
        for alt in MEMBERSHIPS:
            gain = user_payoff(user, alt, state, params) - here
            if gain > epsilon:
                out.append(dict(check="deviation", user=i, current=current.label, alternative=alt.label, gain=gain))
    return out


@dataclass
class OracleReport:
    populations: int
    users: int
    violations: list[dict[str, Any]]
    converged: int

    @property
    def ok(self) -> bool:
        return not self.violations


def run_oracle(
    spec: ExperimentSpec,
    populations: int = 20,
    epsilon: float = 1e-9,
    solver_tol: float = SOLVER_TOL,
) -> OracleReport:
    """Independent checks on small seeded populations.

    Per population: solve the dynamics, brute-force every unilateral
    deviation, check one more synchronous round is the identity, compare
    the threshold policy with the payoff argmax for every user, and compare
    the agent-based and fixed-point percentages.
    """
    mapping = spec.mapping()
    mapping.setdefault("U", 100)
    base_seed = int(mapping.get("seed", 0))
    if int(mapping["U"]) > ORACLE_MAX_USERS:
        raise ConfigError(f"oracle populations are limited to {ORACLE_MAX_USERS} users", "U", mapping["U"])
    violations: list[dict[str, Any]] = []
    converged = 0
    for k in range(populations):
        ctx = Context.build({**mapping, "seed": base_seed + k})
        p, b, cat, pop = ctx.params, ctx.budgets, ctx.catalog, ctx.population
        found: list[dict[str, Any]] = []
        res = solve_dynamics(pop, b, p, cat)
        converged += res.converged
        if not res.converged:
            found.append(dict(check="converged", iterations=res.iterations))
        found += deviation_violations(pop, res.assignment.labels, b, p, cat, epsilon)

        nxt, _ = best_response_step(pop, res.assignment, b, p, cat)
        moved = int(np.count_nonzero(nxt.labels != res.assignment.labels))
        if moved:
            found.append(dict(check="fixed_point", moved=moved))

        if p.phi_equal:
            st = res.state
            for i, user in enumerate(pop.users):
                vals = [user_payoff(user, m, st, p) for m in MEMBERSHIPS]
                top = sorted(vals, reverse=True)
                if top[0] - top[1] < BOUNDARY_TOL:
                    continue
                a = classify_region(user, st.delta1, st.delta2, st.rho, p.phi1)
                bm = best_membership(user, st, p)
                if a != bm:
                    found.append(dict(check="classifier", user=i, region=a.label, argmax=bm.label))

        fp = solve_fixedpoint(b, p, cat, population=pop)
        gap = max(abs(x - y) for x, y in zip(fp.mu, res.mu))
        if gap > solver_tol:
            found.append(dict(check="solvers", gap=gap))

        for item in found:
            item.update(seed=ctx.pop_spec.seed, config=ctx.reproduction())
        violations += found
    report = OracleReport(populations, int(mapping["U"]), violations, converged)
    with open(_out(spec, "oracle.json"), "w") as fh:
        json.dump(asdict(report), fh, indent=2)
    return report


# --- CLI -------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = (lambda value: argparse.SUPPRESS) if suppress else (lambda value: value)
    parser.add_argument("--config", default=default(None), help="YAML configuration file")
    parser.add_argument("--seed", type=int, default=default(None), help="population seed")
    parser.add_argument("--out", default=default("."), help="output directory")
    parser.add_argument("--resolution", type=int, default=default(None), help="grid resolution")
    parser.add_argument("--solver", choices=("agents", "fixedpoint"), default=default(None))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="edgesponsor", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)

    sub.add_parser("equilibrium", parents=[common], help="solve Stage II at the configured budgets")
    sub.add_parser("optimize", parents=[common], help="optimise the CP budgets on a grid")
    sw = sub.add_parser("sweep", parents=[common], help="equilibrium percentages over a parameter range")
    sw.add_argument("--param", default="v")
    sw.add_argument("--start", type=float, default=2.0)
    sw.add_argument("--stop", type=float, default=4.0)
    sw.add_argument("--steps", type=int, default=9)
    dyn = sub.add_parser("dynamics", parents=[common], help="best-response trace")
    dyn.add_argument("--max-iters", type=int, default=500)
    dyn.add_argument("--calibrate", action="store_true", help="also sweep the Zipf exponent")
    sub.add_parser("region-map", parents=[common], help="membership regions over user types")
    sub.add_parser("compare", parents=[common], help="joint against single-scheme sponsoring")
    orc = sub.add_parser("oracle", parents=[common], help="brute-force checks on small populations")
    orc.add_argument("--populations", type=int, default=20)
    orc.add_argument("--users", type=int, default=100)
    orc.add_argument("--epsilon", type=float, default=1e-9)
    return parser


def _load_base(args: argparse.Namespace) -> dict[str, Any]:
    base: dict[str, Any] = {}
    if args.config:
        base.update(read_config_mapping(Path(args.config).read_text()))
    if args.seed is not None:
        base["seed"] = args.seed
    config_from_mapping(base)  # fail early on bad input
    return base


def _dispatch(args: argparse.Namespace) -> int:
    base = _load_base(args)
    common = dict(base=base, output_dir=Path(args.out), solver=args.solver, resolution=args.resolution)
    cmd = args.command
    if cmd == "equilibrium":
        ctx = Context.build(base)
        outcome = solve_stage2(ctx, args.solver)
        summary = dict(mu=dict(zip("NCEH", outcome.mu)), converged=outcome.converged,
                       iterations=outcome.iterations, state=asdict(outcome.state))
        print(json.dumps(summary, indent=2))
    elif cmd == "optimize":
        rep = run_optimize(ExperimentSpec("contour", **common))
        b, rev = rep.best
        print(f"best alpha1={b.alpha1:.6g} alpha2={b.alpha2:.6g} revenue={rev.total:.6g}")
        print(f"normalised alpha1={b.alpha1 / rep.alpha1_grid[-1]:.4g} alpha2={b.alpha2 / rep.alpha2_grid[-1]:.4g}")
        print(f"intersections={len(rep.intersections)} grid-steps-to-nearest={rep.intersection_distance():.3g}")
    elif cmd == "sweep":
        spec = ExperimentSpec("sweep", sweep=Sweep(args.param, args.start, args.stop, args.steps), **common)
        print(run_sweep(spec))
    elif cmd == "dynamics":
        spec = ExperimentSpec("dynamics", **common)
        result, path = run_dynamics(spec, args.max_iters)
        print(f"{path}: converged={result.converged} iterations={result.iterations} "
              f"mu={tuple(round(x, 4) for x in result.mu)}")
        if args.calibrate:
            cal = run_calibration(spec)
            print(f"calibration: best gamma={cal.best_gamma} max gap={cal.best_distance:.4f} "
                  f"(target {cal.target}, within 0.08: {cal.within})")
    elif cmd == "region-map":
        print(run_region_map(ExperimentSpec("region-map", **common)))
    elif cmd == "compare":
        cmp = run_compare(ExperimentSpec("compare", **common))
        for name, (b, rev) in (("joint", cmp.joint), ("pure_cellular", cmp.pure_cellular), ("pure_edge", cmp.pure_edge)):
            print(f"{name}: alpha1={b.alpha1:.6g} alpha2={b.alpha2:.6g} total={rev.total:.6g}")
        print("gains: " + ", ".join("undefined" if g is None else f"{100 * g:.1f}%" for g in cmp.gains))
    elif cmd == "oracle":
        spec = ExperimentSpec("oracle", overrides={"U": args.users}, **common)
        report = run_oracle(spec, args.populations, args.epsilon)
        print(f"oracle: {report.populations} populations x {report.users} users, "
              f"{report.converged} converged, {len(report.violations)} violations")
        if not report.ok:
            return 2
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
