"""Two-stage sponsoring game: a content provider sets cellular-sponsoring and
edge-caching budgets, users pick a sponsorship membership in response."""

from .derived import (
    MarketState,
    ZipfCatalog,
    build_catalog,
    cache_hit_prob,
    catalog_for,
    expected_requests,
    market_state,
    sponsor_prob,
)
from .model import (
    Budgets,
    ConfigError,
    ModelParams,
    Population,
    PopulationSpec,
    UserType,
    dump_config,
    load_config,
    parse_config,
    sample_population,
)
from .payoffs import (
    IndifferentPoints,
    Membership,
    best_membership,
    classify_region,
    indifferent_points,
    user_payoff,
)
from .stage1 import (
    OptimizationReport,
    RevenueBreakdown,
    best_budget_1d,
    compare_schemes,
    cp_revenue,
    find_intersections,
    optimize_budgets,
)
from .stage2 import (
    EquilibriumResult,
    MembershipAssignment,
    best_response_step,
    solve_dynamics,
    solve_fixedpoint,
    verify_equilibrium,
)

__version__ = "0.1.0"
