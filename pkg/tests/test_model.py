import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesponsor.model import (
    Budgets,
    ConfigError,
    ModelParams,
    PopulationSpec,
    dump_config,
    load_population,
    parse_config,
    sample_population,
    save_population,
)


def test_empty_document_gives_reference_defaults():
    params, budgets, pop = parse_config("")
    assert (params.v, params.c1, params.c2) == (3.0, 1.5, 1.0)
    assert params.phi1 == params.phi2 == 0.1
    assert (params.u, params.h1, params.h2) == (3.0, 1.5, 2.0)
    assert (params.S, params.U) == (1000, 10000)
    assert budgets == Budgets(2000.0, 1000.0)
    assert pop == PopulationSpec(seed=42)


def test_negative_cost_names_the_field():
    with pytest.raises(ConfigError, match="c1") as err:
        parse_config("c1: -1\n")
    assert err.value.field_name == "c1"


def test_values_pass_through():
    params, _, _ = parse_config("S: 3\ngamma: 1.0\n")
    assert params.S == 3 and params.gamma == 1.0


@pytest.mark.parametrize(
    "text, name",
    [
        ("bogus: 1\n", "bogus"),
        ("gamma: 0\n", "gamma"),
        ("S: 2.5\n", "S"),
        ("U: 0\n", "U"),
        ("v: true\n", "v"),
        ("S: 10\nalpha2: 11\n", "alpha2"),
        ("U: 10\nalpha1: 20\n", "alpha1"),
        ("seed: -3\n", "seed"),
    ],
)
def test_invariant_violations(text, name):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.field_name == name


@pytest.mark.parametrize("text", ["[1, 2]\n", "v: {a: 1}\n", "v: [\n"])
def test_malformed_documents(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_dump_round_trips():
    params = ModelParams(v=2.5, S=30, U=200, gamma=1.1, alpha_max=25.0)
    budgets = Budgets(12.0, 7.5)
    spec = PopulationSpec(seed=7)
    assert parse_config(dump_config(params, budgets, spec)) == (params, budgets, spec)


def test_sampling_is_deterministic():
    params = ModelParams()
    a = sample_population(params, 42)
    b = sample_population(params, 42)
    assert a == b
    assert a != sample_population(params, 43)


def test_sample_mean_near_half():
    pop = sample_population(ModelParams(), 42)
    assert len(pop) == 10000
    assert abs(pop.f.mean() - 0.5) < 0.01


@given(st.integers(0, 2**32 - 1))
@settings(max_examples=25)
def test_single_user_in_unit_square(seed):
    pop = sample_population(ModelParams(U=1), seed)
    assert len(pop) == 1
    assert 0 <= pop.f[0] <= 1 and 0 <= pop.r[0] <= 1


def test_population_is_read_only():
    pop = sample_population(ModelParams(U=5), 0)
    with pytest.raises(ValueError):
        pop.f[0] = 0.5


def test_population_file_round_trip(tmp_path):
    params = ModelParams(U=20)
    pop = sample_population(params, 3)
    path = tmp_path / "pop.csv"
    save_population(pop, path)
    loaded = load_population(path)
    assert np.array_equal(loaded.f, pop.f) and np.array_equal(loaded.r, pop.r)
    assert PopulationSpec(path=str(path)).build(params).f.tolist() == pop.f.tolist()
    with pytest.raises(ConfigError):
        PopulationSpec(path=str(path)).build(ModelParams(U=21))


def test_budget_bounds_default_to_natural_saturation():
    params = ModelParams()
    assert params.alpha1_bounds() == (0.0, 10000.0)
    assert params.alpha2_bounds() == (0.0, 1000.0)
    capped = ModelParams(alpha_max=5000.0)
    assert capped.alpha2_bounds() == (0.0, 1000.0)
    assert Budgets.reference(ModelParams(U=100)) == Budgets(100.0, 1000.0)
