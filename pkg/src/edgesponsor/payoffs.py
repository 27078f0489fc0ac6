"""User payoffs and membership selection.

Two independent routes decide a user's membership: ``best_membership``
takes the argmax of the four payoffs, ``classify_region`` applies the
closed-form threshold policy that holds when both subscription fees are
equal. They must agree everywhere except on the measure-zero boundaries
between regions.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from .derived import CELLSP, EDGESP, HYBRIDSP, NOSP, MarketState
from .model import ModelParams, UserType


class Membership(IntEnum):
    """Sponsorship membership. Lower values win payoff ties."""

    N = NOSP
    C = CELLSP
    E = EDGESP
    H = HYBRIDSP

    @property
    def label(self) -> str:
        return self.name


MEMBERSHIPS = tuple(Membership)
BOUNDARY_TOL = 1e-9


def payoff_table(f, r, p, rho, params: ModelParams) -> np.ndarray:
    """Payoffs of every membership, stacked along a new leading axis.

    ``f``, ``r`` and ``p`` broadcast against each other; row ``m`` of the
    result is the payoff of ``Membership(m)``.
    """
    f = np.asarray(f, dtype=float)
    r = np.asarray(r, dtype=float)
    cell = (params.v - params.c1) * np.asarray(p, dtype=float) * f
    edge = (params.v - params.c2) * rho * f * r
    # Hybrid users only go cellular when the edge cache misses.
    hybrid_cell = cell * (1.0 - rho * r)
    shape = np.broadcast_shapes(f.shape, r.shape, np.shape(p))
    return np.stack(
        [
            np.zeros(shape),
            np.broadcast_to(cell - params.phi1, shape),
            np.broadcast_to(edge - params.phi2, shape),
            np.broadcast_to(hybrid_cell + edge - params.phi1 - params.phi2, shape),
        ]
    )


def user_payoff(user: UserType, m: Membership, state: MarketState, params: ModelParams) -> float:
    f, r, p, rho = user.f, user.r, state.p, state.rho
    if m == Membership.N:
        return 0.0
    if m == Membership.C:
        return (params.v - params.c1) * p * f - params.phi1
    if m == Membership.E:
        return (params.v - params.c2) * rho * f * r - params.phi2
    return (
        (params.v - params.c2) * rho * f * r
        + (params.v - params.c1) * p * f
        - (params.v - params.c1) * p * rho * f * r
        - params.phi1
        - params.phi2
    )


def best_memberships(f, r, p, rho, params: ModelParams) -> np.ndarray:
    """Vectorised argmax membership; ties resolve to N, then C, E, H."""
    # np.argmax returns the first maximal row, which is the tie-break order.
    return np.argmax(payoff_table(f, r, p, rho, params), axis=0).astype(np.int8)


def best_membership(user: UserType, state: MarketState, params: ModelParams) -> Membership:
    values = [user_payoff(user, m, state, params) for m in MEMBERSHIPS]
    best = max(values)
    return MEMBERSHIPS[values.index(best)]


def _region_conditions(f, r, delta1, delta2, rho, phi):
    """Strict selection-policy inequalities, written without divisions.

    Multiplying through by the instant payoffs keeps the conditions
    well-defined when ``delta1`` or ``delta2`` is zero.
    """
    fr = f * r
    gain_c = delta1 * f - phi              # V(C)
    gain_e = delta2 * fr - phi             # V(E)
    h_over_c = (delta2 - delta1 * rho) * fr - phi   # V(H) - V(C)
    h_over_e = delta1 * f - delta1 * rho * fr - phi  # V(H) - V(E)
    c_over_e = (delta1 - delta2 * r) * f   # V(C) - V(E)
    gain_h = (delta2 - delta1 * rho) * fr + delta1 * f - 2 * phi
    regions = np.stack(
        [
            (gain_c < 0) & (gain_e < 0),
            (gain_c > 0) & (c_over_e > 0) & (h_over_c < 0),
            (gain_e > 0) & (c_over_e < 0) & (h_over_e < 0),
            (h_over_c > 0) & (h_over_e > 0) & (gain_h > 0),
        ]
    )
    return regions


def classify_regions(f, r, delta1: float, delta2: float, rho: float, phi: float) -> np.ndarray:
    """Vectorised threshold policy.

    Returns -1 where the strict conditions do not single out one region
    (region boundaries); callers resolve those with the argmax.
    """
    regions = _region_conditions(np.asarray(f, float), np.asarray(r, float), delta1, delta2, rho, phi)
    hits = regions.sum(axis=0)
    label = np.argmax(regions, axis=0).astype(np.int8)
    return np.where(hits == 1, label, np.int8(-1)).astype(np.int8)


def classify_region(
    user: UserType,
    delta1: float,
    delta2: float,
    rho: float,
    phi: float,
    params: Optional[ModelParams] = None,
) -> Membership:
    """Membership from the closed-form threshold policy (equal fees).

    ``params`` is only used to check the equal-fee requirement and to
    resolve boundary points by the payoff argmax.
    """
    if params is not None and not params.phi_equal:
        raise ValueError(f"threshold policy needs phi1 == phi2, got {params.phi1} and {params.phi2}")
    code = int(classify_regions(user.f, user.r, delta1, delta2, rho, phi))
    if code >= 0:
        return Membership(code)
    # Boundary: fall back to the argmax with its tie-break.
    values = [
        0.0,
        delta1 * user.f - phi,
        delta2 * user.f * user.r - phi,
        (delta2 - delta1 * rho) * user.f * user.r + delta1 * user.f - 2 * phi,
    ]
    return MEMBERSHIPS[values.index(max(values))]


@dataclass(frozen=True)
class IndifferentPoints:
    n1: Optional[tuple[float, float]]
    n1_in_domain: bool
    n2: Optional[tuple[float, float]]
    n2_in_domain: bool


def _in_unit_square(point: tuple[float, float]) -> bool:
    return all(0.0 <= x <= 1.0 for x in point)


def indifferent_points(delta1: float, delta2: float, rho: float, phi: float) -> IndifferentPoints:
    """Types where three memberships tie.

    ``n1`` equalises N, C and E; ``n2`` equalises C, E and H. Both are
    undefined (``None``) unless ``delta1`` and ``delta2`` are positive.
    """
    if delta1 <= 0 or delta2 <= 0:
        return IndifferentPoints(None, False, None, False)
    f_star = phi / delta1
    r_star = delta1 / delta2
    n1 = (f_star, r_star)
    denom = 1.0 - rho * r_star
    if denom <= 0:
        return IndifferentPoints(n1, _in_unit_square(n1), None, False)
    n2 = (f_star / denom, r_star)
    return IndifferentPoints(n1, _in_unit_square(n1), n2, _in_unit_square(n2))
