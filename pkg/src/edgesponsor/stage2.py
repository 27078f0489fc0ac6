"""Stage II: the users' membership selection equilibrium.

Two solvers are provided. ``solve_dynamics`` plays synchronous best
responses over the finite population, switching to asynchronous updates
in a seeded random order if the synchronous map cycles. ``solve_fixedpoint``
exploits that the cache-hit probability is fixed by the caching budget,
so the only coupling left is the sponsor probability ``P``; it bisects
``P - min(alpha1 / N_C(P), 1)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .derived import (
    CELLSP,
    HYBRIDSP,
    MarketState,
    ZipfCatalog,
    _request_sums,
    cache_hit_prob,
    sponsor_prob,
)
from .model import Budgets, ModelParams, Population
from .payoffs import MEMBERSHIPS, Membership, best_memberships, payoff_table

DEFAULT_MAX_ITERS = 500


@dataclass(frozen=True, eq=False)
class MembershipAssignment:
    labels: np.ndarray
    mu: tuple[float, float, float, float]

    @classmethod
    def from_labels(cls, labels, mass: Optional[np.ndarray] = None) -> "MembershipAssignment":
        labels = np.array(labels, dtype=np.int8)
        if labels.size and (labels.min() < 0 or labels.max() > 3):
            raise ValueError("labels must be membership codes 0..3")
        labels.flags.writeable = False
        if mass is None:
            counts = np.bincount(labels, minlength=4).astype(float)
            total = float(labels.size)
        else:
            counts = np.bincount(labels, weights=mass, minlength=4)
            total = float(np.sum(mass))
        mu = tuple(float(c / total) for c in counts)
        return cls(labels, mu)

    @classmethod
    def uniform(cls, n: int, m: Membership = Membership.N) -> "MembershipAssignment":
        return cls.from_labels(np.full(n, int(m), dtype=np.int8))

    @classmethod
    def random(cls, n: int, seed: int) -> "MembershipAssignment":
        rng = np.random.default_rng(seed)
        return cls.from_labels(rng.integers(0, 4, size=n))

    def __len__(self) -> int:
        return self.labels.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MembershipAssignment):
            return NotImplemented
        return np.array_equal(self.labels, other.labels)

    def memberships(self) -> list[Membership]:
        return [Membership(int(x)) for x in self.labels]


@dataclass
class EquilibriumResult:
    assignment: MembershipAssignment
    state: MarketState
    trace: list[tuple[float, float, float, float]]
    iterations: int
    converged: bool
    cycle_broken: bool
    trace_states: list[MarketState] = field(default_factory=list, repr=False)

    @property
    def mu(self) -> tuple[float, float, float, float]:
        return self.assignment.mu


def _check_sizes(population: Population, labels: np.ndarray) -> None:
    if labels.shape != population.f.shape:
        raise ValueError(f"assignment covers {labels.size} users, population has {len(population)}")


def _state(population: Population, labels: np.ndarray, alpha1: float, rho: float, params: ModelParams) -> MarketState:
    n_c, n_e = _request_sums(population.f, population.r, labels, rho)
    return MarketState.build(params, rho, sponsor_prob(alpha1, n_c), n_c, n_e)


def best_response_step(
    population: Population,
    assignment: MembershipAssignment,
    budgets: Budgets,
    params: ModelParams,
    catalog: ZipfCatalog,
) -> tuple[MembershipAssignment, MarketState]:
    """One synchronous round.

    The state is computed from the current assignment; every user then
    switches to their best membership under that state. The returned state
    is the one the users responded to.
    """
    labels = np.asarray(assignment.labels)
    _check_sizes(population, labels)
    rho = cache_hit_prob(catalog, budgets.alpha2)
    state = _state(population, labels, budgets.alpha1, rho, params)
    new = best_memberships(population.f, population.r, state.p, rho, params)
    return MembershipAssignment.from_labels(new), state


def _async_phase(
    population: Population,
    labels: np.ndarray,
    alpha1: float,
    rho: float,
    params: ModelParams,
    rng: np.random.Generator,
    max_updates: int,
    on_sweep,
) -> tuple[np.ndarray, bool]:
    """Single-user best responses in random order until no user moves.

    Equivalent to visiting users one by one, but users who would keep
    their label are skipped in bulk: their best response only changes
    when somebody else switches.
    """
    labels = labels.copy()
    n = labels.size
    updates = 0
    while updates < max_updates:
        perm = rng.permutation(n)
        pos = 0
        moved = False
        complete = False
        while updates < max_updates:
            state = _state(population, labels, alpha1, rho, params)
            best = best_memberships(population.f, population.r, state.p, rho, params)
            unhappy = np.flatnonzero(best[perm[pos:]] != labels[perm[pos:]])
            if unhappy.size == 0:
                updates += n - pos
                complete = True
                break
            step = int(unhappy[0])
            if updates + step + 1 > max_updates:
                updates = max_updates
                break
            updates += step + 1
            user = perm[pos + step]
            labels[user] = best[user]
            moved = True
            pos += step + 1
        on_sweep(labels)
        if complete and not moved:
            return labels, True
    return labels, False


def solve_dynamics(
    population: Population,
    budgets: Budgets,
    params: ModelParams,
    catalog: ZipfCatalog,
    init: Optional[MembershipAssignment] = None,
    max_iters: int = DEFAULT_MAX_ITERS,
    seed: int = 0,
) -> EquilibriumResult:
    """Iterate best responses to a membership selection equilibrium.

    Non-convergence is reported through ``converged``; it never raises.
    ``trace`` holds the membership percentages of the initial assignment
    followed by one entry per iteration.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    n = len(population)
    current = init if init is not None else MembershipAssignment.uniform(n)
    labels = np.array(current.labels, dtype=np.int8)
    _check_sizes(population, labels)
    rho = cache_hit_prob(catalog, budgets.alpha2)

    trace = [current.mu]
    states = [_state(population, labels, budgets.alpha1, rho, params)]
    seen = {labels.tobytes(): 0}
    iterations = 0
    converged = False
    cycled = False
    while iterations < max_iters:
        state = states[-1]
        new = best_memberships(population.f, population.r, state.p, rho, params)
        iterations += 1
        unchanged = np.array_equal(new, labels)
        labels = new
        trace.append(MembershipAssignment.from_labels(labels).mu)
        states.append(_state(population, labels, budgets.alpha1, rho, params))
        if unchanged:
            converged = True
            break
        key = labels.tobytes()
        if key in seen:
            cycled = True
            break
        seen[key] = iterations

    if cycled:
        rng = np.random.default_rng(seed)

        def record(lab: np.ndarray) -> None:
            nonlocal iterations
            iterations += 1
            trace.append(MembershipAssignment.from_labels(lab).mu)
            states.append(_state(population, lab, budgets.alpha1, rho, params))

        labels, converged = _async_phase(
            population, labels, budgets.alpha1, rho, params, rng, n * max_iters, record
        )

    assignment = MembershipAssignment.from_labels(labels)
    return EquilibriumResult(
        assignment=assignment,
        state=states[-1],
        trace=trace,
        iterations=iterations,
        converged=converged,
        cycle_broken=cycled,
        trace_states=states,
    )


def write_trace_csv(result: EquilibriumResult, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "mu_N", "mu_C", "mu_E", "mu_H", "P", "rho", "N_C", "N_E"])
        for i, (mu, st) in enumerate(zip(result.trace, result.trace_states)):
            writer.writerow([i, *(repr(x) for x in mu), repr(st.p), repr(st.rho), repr(st.n_c), repr(st.n_e)])
    return path


# --- reduced fixed-point solver -------------------------------------------


def grid_types(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Cell midpoints of a ``resolution`` x ``resolution`` grid on the unit square."""
    ticks = (np.arange(resolution) + 0.5) / resolution
    f, r = np.meshgrid(ticks, ticks, indexing="ij")
    return f.ravel(), r.ravel()


class DemandCurve:
    """Exact cellular demand ``N_C`` as a step function of ``P``.

    With the cache-hit probability fixed, each payoff is an affine function
    of ``P``, so a user's best membership can only change where two payoff
    lines cross. Every user's crossings in (0, 1) are collected, the best
    membership is evaluated once per interval between them, and the jumps in
    cellular weight are merged into one sorted event list.
    """

    def __init__(self, f, r, rho: float, params: ModelParams, mass: Optional[np.ndarray] = None):
        f = np.asarray(f, dtype=float)
        r = np.asarray(r, dtype=float)
        self.rho = rho
        a_c = (params.v - params.c1) * f
        a_h = a_c * (1.0 - rho * r)
        e = (params.v - params.c2) * rho * f * r
        # (slope, intercept) per membership, in code order N, C, E, H.
        lines = [
            (np.zeros_like(f), np.zeros_like(f)),
            (a_c, np.full_like(f, -params.phi1)),
            (np.zeros_like(f), e - params.phi2),
            (a_h, e - params.phi1 - params.phi2),
        ]
        crossings = []
        with np.errstate(divide="ignore", invalid="ignore"):
            for i in range(4):
                for j in range(i + 1, 4):
                    ds = lines[i][0] - lines[j][0]
                    x = (lines[j][1] - lines[i][1]) / ds
                    crossings.append(np.where((ds != 0) & (x > 0) & (x < 1), x, 1.0))
        points = np.sort(np.column_stack([np.zeros_like(f), *crossings, np.ones_like(f)]), axis=1)
        mids = 0.5 * (points[:, :-1] + points[:, 1:])
        labels = best_memberships(f[:, None], r[:, None], mids, rho, params)
        weight = np.where(labels == CELLSP, f[:, None], 0.0) + np.where(
            labels == HYBRIDSP, (f * (1.0 - rho * r))[:, None], 0.0
        )
        if mass is not None:
            weight = weight * np.asarray(mass, dtype=float)[:, None]
        jumps = np.diff(weight, axis=1)
        where = points[:, 1:-1]
        keep = jumps != 0
        order = np.argsort(where[keep], kind="stable")
        self.positions = where[keep][order]
        self.cumulative = np.cumsum(jumps[keep][order])
        self.base = float(weight[:, 0].sum())

    def __call__(self, p: float) -> float:
        """``N_C`` at sponsor probability ``p`` (left limit at a jump)."""
        k = int(np.searchsorted(self.positions, p, side="left"))
        return self.base + (float(self.cumulative[k - 1]) if k > 0 else 0.0)


@dataclass(frozen=True)
class FixedPointResult:
    p_star: float
    mu: tuple[float, float, float, float]
    n_c: float
    n_e: float
    labels: np.ndarray = field(repr=False)
    state: MarketState = field(repr=False)
    bracketed: bool = True

    @property
    def residual(self) -> float:
        """Gap between ``p_star`` and the sponsor probability its assignment induces."""
        return abs(self.p_star - self.state.p)


def bisect_sponsor_prob(alpha1: float, demand, tol: float = 1e-13, max_iter: int = 200) -> tuple[float, bool]:
    """Root of ``h(P) = P - min(alpha1 / N_C(P), 1)`` on [0, 1].

    ``h`` is non-decreasing when ``N_C`` is. Returns ``(P, bracketed)``;
    without a sign change the endpoint that satisfies the equation, or
    failing that the one with the smaller ``|h|``, is returned.
    """

    def h(p: float) -> float:
        return p - sponsor_prob(alpha1, demand(p))

    h_lo, h_hi = h(0.0), h(1.0)
    if h_lo >= 0 or h_hi <= 0:
        if h_lo == 0 or (h_hi != 0 and abs(h_lo) <= abs(h_hi)):
            return 0.0, False
        return 1.0, False
    lo, hi = 0.0, 1.0
    for _ in range(max_iter):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if h(mid) > 0:
            hi = mid
        else:
            lo = mid
    return hi, True


def solve_fixedpoint(
    budgets: Budgets,
    params: ModelParams,
    catalog: ZipfCatalog,
    grid_resolution: int = 400,
    population: Optional[Population] = None,
    curve: Optional[DemandCurve] = None,
) -> FixedPointResult:
    """Equilibrium sponsor probability and the memberships it induces.

    With ``population`` the demand is summed over its users; otherwise the
    user types are taken uniform on the unit square, integrated by the
    midpoint rule at ``grid_resolution`` cells per axis and scaled to
    ``params.U`` users. A prebuilt ``curve`` for the same inputs may be
    passed to skip its construction.
    """
    rho = cache_hit_prob(catalog, budgets.alpha2)
    if population is not None:
        f, r, mass = population.f, population.r, None
    else:
        if grid_resolution < 100:
            raise ValueError("grid_resolution must be >= 100")
        f, r = grid_types(grid_resolution)
        mass = np.full(f.size, params.U / f.size)
    if curve is None:
        curve = DemandCurve(f, r, rho, params, mass)
    p_star, bracketed = bisect_sponsor_prob(budgets.alpha1, curve)
    labels = best_memberships(f, r, p_star, rho, params)
    n_c, n_e = _request_sums(f, r, labels, rho, mass)
    assignment = MembershipAssignment.from_labels(labels, mass)
    state = MarketState.build(params, rho, sponsor_prob(budgets.alpha1, n_c), n_c, n_e)
    return FixedPointResult(p_star, assignment.mu, n_c, n_e, labels, state, bracketed)


# --- verification ----------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    user: int
    current: Membership
    best: Membership
    gain: float


@dataclass(frozen=True)
class VerificationReport:
    state: MarketState
    epsilon: float
    violations: list[Violation]

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_gain(self) -> float:
        return max((v.gain for v in self.violations), default=0.0)


def verify_equilibrium(
    population: Population,
    assignment: MembershipAssignment,
    budgets: Budgets,
    params: ModelParams,
    catalog: ZipfCatalog,
    epsilon: float = 1e-9,
) -> VerificationReport:
    """List users whose payoff is more than ``epsilon`` below their best option."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    labels = np.asarray(assignment.labels)
    _check_sizes(population, labels)
    rho = cache_hit_prob(catalog, budgets.alpha2)
    state = _state(population, labels, budgets.alpha1, rho, params)
    table = payoff_table(population.f, population.r, state.p, rho, params)
    current = np.take_along_axis(table, labels[None, :].astype(np.intp), axis=0)[0]
    best = np.argmax(table, axis=0)
    gain = table.max(axis=0) - current
    bad = np.flatnonzero(gain > epsilon)
    violations = [
        Violation(int(i), MEMBERSHIPS[labels[i]], MEMBERSHIPS[best[i]], float(gain[i])) for i in bad
    ]
    return VerificationReport(state, epsilon, violations)
