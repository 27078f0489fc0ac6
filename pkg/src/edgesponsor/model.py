"""Market parameters, budgets and user populations.

Everything here is immutable once built. Configuration is a flat YAML
mapping whose keys match the dataclass field names; see ``parse_config``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

DEFAULT_SEED = 42
# Budget the CP announces for both schemes in the reference setup.
REFERENCE_BUDGET = 2000.0


class ConfigError(ValueError):
    """Raised for malformed configuration or violated parameter invariants."""

    def __init__(self, message: str, field_name: Optional[str] = None, value: Any = None):
        if field_name is not None:
            message = f"{field_name}={value!r}: {message}"
        super().__init__(message)
        self.field_name = field_name
        self.value = value


def _check_real(name: str, value: Any, *, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a real number", name, value)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError("must be finite", name, value)
    if positive and value <= 0:
        raise ConfigError("must be > 0", name, value)
    if value < 0:
        raise ConfigError("must be >= 0", name, value)
    return value


def _check_count(name: str, value: Any) -> int:
    if isinstance(value, bool):
        raise ConfigError("expected a positive integer", name, value)
    if isinstance(value, float) and value.is_integer():
        value = int(value)
    if not isinstance(value, int) or value < 1:
        raise ConfigError("expected a positive integer", name, value)
    return value


@dataclass(frozen=True)
class ModelParams:
    """Scalar market parameters.

    Defaults are the reference values used for the numerical study
    (10,000 users, 1,000 contents). ``alpha_max=None`` means each budget
    saturates naturally: ``U`` for the cellular budget (it cannot sponsor
    more requests than users can make) and ``S`` for the caching budget.
    """

    v: float = 3.0
    c1: float = 1.5
    c2: float = 1.0
    phi1: float = 0.1
    phi2: float = 0.1
    u: float = 3.0
    h1: float = 1.5
    h2: float = 2.0
    S: int = 1000
    gamma: float = 0.8
    U: int = 10000
    alpha_min: float = 0.0
    alpha_max: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ("v", "c1", "c2", "phi1", "phi2", "u", "h1", "h2", "alpha_min"):
            object.__setattr__(self, name, _check_real(name, getattr(self, name)))
        object.__setattr__(self, "gamma", _check_real("gamma", self.gamma, positive=True))
        object.__setattr__(self, "S", _check_count("S", self.S))
        object.__setattr__(self, "U", _check_count("U", self.U))
        if self.alpha_max is not None:
            amax = _check_real("alpha_max", self.alpha_max)
            if amax < self.alpha_min:
                raise ConfigError("must be >= alpha_min", "alpha_max", amax)
            object.__setattr__(self, "alpha_max", amax)
        if self.alpha_min > min(self.U, self.S):
            raise ConfigError("exceeds the natural budget saturation min(U, S)", "alpha_min", self.alpha_min)

    @property
    def phi_equal(self) -> bool:
        return self.phi1 == self.phi2

    def alpha1_bounds(self) -> tuple[float, float]:
        hi = float(self.U) if self.alpha_max is None else self.alpha_max
        return self.alpha_min, hi

    def alpha2_bounds(self) -> tuple[float, float]:
        hi = float(self.S) if self.alpha_max is None else min(self.alpha_max, float(self.S))
        return self.alpha_min, hi

    def replace(self, **changes: Any) -> "ModelParams":
        data = asdict(self)
        data.update(changes)
        return ModelParams(**data)


@dataclass(frozen=True)
class UserType:
    """A user's request probability ``f`` and edge-coverage probability ``r``."""

    f: float
    r: float

    def __post_init__(self) -> None:
        for name in ("f", "r"):
            x = getattr(self, name)
            if not (0.0 <= x <= 1.0):
                raise ValueError(f"{name}={x!r} outside [0, 1]")


@dataclass(frozen=True)
class Budgets:
    """Stage-I decision: cellular budget ``alpha1`` and cached-content count ``alpha2``."""

    alpha1: float
    alpha2: float

    def validate(self, params: ModelParams) -> "Budgets":
        lo1, hi1 = params.alpha1_bounds()
        lo2, hi2 = params.alpha2_bounds()
        a1 = _check_real("alpha1", self.alpha1)
        a2 = _check_real("alpha2", self.alpha2)
        if not lo1 <= a1 <= hi1:
            raise ConfigError(f"outside budget bounds [{lo1}, {hi1}]", "alpha1", a1)
        if not lo2 <= a2 <= hi2:
            raise ConfigError(f"outside budget bounds [{lo2}, {hi2}] (alpha2 <= S)", "alpha2", a2)
        return self

    @classmethod
    def reference(cls, params: ModelParams) -> "Budgets":
        """The reference budget pair, clipped to each axis' bounds."""
        _, hi1 = params.alpha1_bounds()
        _, hi2 = params.alpha2_bounds()
        return cls(min(REFERENCE_BUDGET, hi1), min(REFERENCE_BUDGET, hi2))


@dataclass(frozen=True, eq=False)
class Population:
    """Ordered user types stored column-wise as read-only arrays."""

    f: np.ndarray
    r: np.ndarray
    seed: int = 0

    def __post_init__(self) -> None:
        f = np.array(self.f, dtype=float)
        r = np.array(self.r, dtype=float)
        if f.ndim != 1 or f.shape != r.shape:
            raise ValueError("f and r must be 1-D arrays of equal length")
        if len(f) == 0:
            raise ValueError("population must be non-empty")
        if np.any((f < 0) | (f > 1) | (r < 0) | (r > 1)) or not np.all(np.isfinite(f + r)):
            raise ValueError("user types must lie in the unit square")
        f.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "r", r)

    def __len__(self) -> int:
        return len(self.f)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Population):
            return NotImplemented
        return (
            self.seed == other.seed
            and np.array_equal(self.f, other.f)
            and np.array_equal(self.r, other.r)
        )

    @property
    def users(self) -> list[UserType]:
        return [UserType(float(a), float(b)) for a, b in zip(self.f, self.r)]

    @classmethod
    def from_users(cls, users: list[UserType], seed: int = 0) -> "Population":
        return cls(np.array([x.f for x in users]), np.array([x.r for x in users]), seed)

    def check_size(self, params: ModelParams) -> None:
        if len(self) != params.U:
            raise ConfigError(f"population has {len(self)} users", "U", params.U)


def sample_population(params: ModelParams, seed: int) -> Population:
    """Draw ``params.U`` user types i.i.d. uniform on the unit square."""
    rng = np.random.default_rng(seed)
    f = rng.random(params.U)
    r = rng.random(params.U)
    return Population(f, r, seed=seed)


def load_population(path: str | Path) -> Population:
    """Read a CSV with header ``f,r``; the resulting seed is 0."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"f", "r"} <= set(reader.fieldnames):
            raise ConfigError("population file needs columns f,r", "population", str(path))
        rows = [(float(row["f"]), float(row["r"])) for row in reader]
    if not rows:
        raise ConfigError("population file is empty", "population", str(path))
    arr = np.array(rows)
    return Population(arr[:, 0], arr[:, 1], seed=0)


def save_population(pop: Population, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["f", "r"])
        for a, b in zip(pop.f, pop.r):
            writer.writerow([repr(float(a)), repr(float(b))])


@dataclass(frozen=True)
class PopulationSpec:
    """How to obtain the population: a file, or a seeded uniform sample."""

    seed: int = DEFAULT_SEED
    path: Optional[str] = None

    def build(self, params: ModelParams) -> Population:
        if self.path is not None:
            pop = load_population(self.path)
            pop.check_size(params)
            return pop
        return sample_population(params, self.seed)


_PARAM_KEYS = {f.name for f in fields(ModelParams)}
_BUDGET_KEYS = {"alpha1", "alpha2"}
_POP_KEYS = {"seed", "population"}


def config_from_mapping(data: dict[str, Any]) -> tuple[ModelParams, Budgets, PopulationSpec]:
    unknown = set(data) - _PARAM_KEYS - _BUDGET_KEYS - _POP_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise ConfigError("unknown configuration key", key, data[key])
    params = ModelParams(**{k: v for k, v in data.items() if k in _PARAM_KEYS})
    ref = Budgets.reference(params)
    budgets = Budgets(
        data.get("alpha1", ref.alpha1),
        data.get("alpha2", ref.alpha2),
    ).validate(params)
    seed = data.get("seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError("expected a non-negative integer", "seed", seed)
    path = data.get("population")
    if path is not None and not isinstance(path, str):
        raise ConfigError("expected a file path", "population", path)
    return params, budgets, PopulationSpec(seed=seed, path=path)


def read_config_mapping(text: str) -> dict[str, Any]:
    """Parse a YAML document into a flat key/value mapping, unvalidated."""
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed configuration document: {exc}") from exc
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a key/value mapping")
    if any(isinstance(v, (dict, list)) for v in data.values()):
        raise ConfigError("configuration must be flat (no nested values)")
    return data


def parse_config(text: str) -> tuple[ModelParams, Budgets, PopulationSpec]:
    """Parse a flat YAML document into validated parameters.

    Missing keys take the reference defaults. Raises ``ConfigError`` naming
    the offending field on any invariant violation.
    """
    return config_from_mapping(read_config_mapping(text))


def load_config(path: str | Path) -> tuple[ModelParams, Budgets, PopulationSpec]:
    return parse_config(Path(path).read_text())


def dump_config(
    params: ModelParams,
    budgets: Optional[Budgets] = None,
    pop_spec: Optional[PopulationSpec] = None,
) -> str:
    data: dict[str, Any] = asdict(params)
    if budgets is not None:
        data.update(alpha1=budgets.alpha1, alpha2=budgets.alpha2)
    if pop_spec is not None:
        data["seed"] = pop_spec.seed
        if pop_spec.path is not None:
            data["population"] = pop_spec.path
    return yaml.safe_dump(data, sort_keys=False)
