"""Coupling quantities shared by users and the CP.

``rho`` is the chance that a request targets a cached content, ``n_c`` and
``n_e`` are the expected sponsored request loads on the cellular and edge
paths, and ``p`` is the chance that a cellular request gets sponsored.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import Budgets, ModelParams, Population

# Membership codes; the integer order doubles as the tie-break preference.
NOSP, CELLSP, EDGESP, HYBRIDSP = 0, 1, 2, 3


@dataclass(frozen=True, eq=False)
class ZipfCatalog:
    S: int
    gamma: float
    pmf: np.ndarray
    cdf: np.ndarray


def build_catalog(S: int, gamma: float) -> ZipfCatalog:
    """Zipf popularity over ``S`` contents with exponent ``gamma``."""
    if isinstance(S, bool) or int(S) != S or S < 1:
        raise ValueError(f"S must be a positive integer, got {S!r}")
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma!r}")
    S = int(S)
    weights = np.arange(1, S + 1, dtype=float) ** (-float(gamma))
    pmf = weights / math.fsum(weights)
    cdf = np.cumsum(pmf)
    pmf.flags.writeable = False
    cdf.flags.writeable = False
    return ZipfCatalog(S, float(gamma), pmf, cdf)


def catalog_for(params: ModelParams) -> ZipfCatalog:
    return build_catalog(params.S, params.gamma)


def cache_hit_prob(catalog: ZipfCatalog, alpha2: float) -> float:
    """Probability mass of the ``alpha2`` most popular contents.

    Fractional budgets interpolate linearly between consecutive integer
    cache sizes, so the result is continuous in ``alpha2``.
    """
    if not 0 <= alpha2 <= catalog.S:
        raise ValueError(f"alpha2={alpha2!r} outside [0, {catalog.S}]")
    k = int(math.floor(alpha2))
    head = catalog.cdf[k - 1] if k > 0 else 0.0
    if k == catalog.S:
        return float(min(head, 1.0))
    return float(min(head + (alpha2 - k) * catalog.pmf[k], 1.0))


def sponsor_prob(alpha1: float, n_c: float) -> float:
    """Chance that a cellular request is covered by the budget.

    A zero budget sponsors nothing. Positive budgets fully cover zero demand.
    """
    if alpha1 < 0 or n_c < 0:
        raise ValueError(f"negative input: alpha1={alpha1!r}, n_c={n_c!r}")
    if alpha1 == 0:
        return 0.0
    if n_c == 0:
        return 1.0
    return min(alpha1 / n_c, 1.0)


def _request_sums(
    f: np.ndarray,
    r: np.ndarray,
    labels: np.ndarray,
    rho: float,
    mass: Optional[np.ndarray] = None,
) -> tuple[float, float]:
    edge = r * f * rho
    cell = np.where(labels == CELLSP, f, 0.0) + np.where(labels == HYBRIDSP, f - edge, 0.0)
    on_edge = np.where((labels == EDGESP) | (labels == HYBRIDSP), edge, 0.0)
    if mass is not None:
        cell = cell * mass
        on_edge = on_edge * mass
    return float(cell.sum()), float(on_edge.sum())


def expected_requests(population: Population, labels, rho: float) -> tuple[float, float]:
    """Expected cellular-sponsored and edge-sponsored requests per slot.

    ``labels`` is a per-user membership array or a ``MembershipAssignment``.
    """
    labels = np.asarray(getattr(labels, "labels", labels))
    if labels.shape != population.f.shape:
        raise ValueError(f"assignment covers {labels.size} users, population has {len(population)}")
    return _request_sums(population.f, population.r, labels, rho)


@dataclass(frozen=True)
class MarketState:
    rho: float
    n_c: float
    n_e: float
    p: float
    delta1: float
    delta2: float

    @classmethod
    def build(cls, params: ModelParams, rho: float, p: float, n_c: float = 0.0, n_e: float = 0.0) -> "MarketState":
        return cls(
            rho=rho,
            n_c=n_c,
            n_e=n_e,
            p=p,
            delta1=(params.v - params.c1) * p,
            delta2=(params.v - params.c2) * rho,
        )


def market_state(
    population: Population,
    labels,
    budgets: Budgets,
    params: ModelParams,
    catalog: ZipfCatalog,
) -> MarketState:
    """Market state induced by an assignment at the given budgets."""
    rho = cache_hit_prob(catalog, budgets.alpha2)
    n_c, n_e = expected_requests(population, labels, rho)
    return MarketState.build(params, rho, sponsor_prob(budgets.alpha1, n_c), n_c, n_e)
