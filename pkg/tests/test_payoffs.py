import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from edgesponsor.derived import MarketState
from edgesponsor.model import ModelParams, UserType
from edgesponsor.payoffs import (
    MEMBERSHIPS,
    Membership as M,
    best_membership,
    best_memberships,
    classify_region,
    classify_regions,
    indifferent_points,
    payoff_table,
    user_payoff,
)

PARAMS = ModelParams()
unit = st.floats(0, 1)


def state(p=0.5, rho=0.6, params=PARAMS):
    return MarketState.build(params, rho, p)


def test_payoff_examples():
    s = state()
    assert user_payoff(UserType(0.3, 0.7), M.N, s, PARAMS) == 0.0
    assert user_payoff(UserType(0.4, 0.0), M.C, s, PARAMS) == pytest.approx(0.2, abs=1e-15)
    assert user_payoff(UserType(0.5, 0.8), M.E, s, PARAMS) == pytest.approx(0.38, abs=1e-15)
    assert user_payoff(UserType(0.5, 0.8), M.H, s, PARAMS) == pytest.approx(0.475, abs=1e-15)


@given(unit, unit, unit, unit)
def test_table_matches_scalar(f, r, p, rho):
    s = state(p, rho)
    table = payoff_table(f, r, p, rho, PARAMS)
    for m in MEMBERSHIPS:
        assert table[m] == pytest.approx(user_payoff(UserType(f, r), m, s, PARAMS), abs=1e-14)


def test_hybrid_identity_on_random_inputs():
    rng = np.random.default_rng(0)
    f, r, p, rho = rng.random((4, 100_000))
    table = payoff_table(f, r, p, rho, PARAMS)
    delta1 = (PARAMS.v - PARAMS.c1) * p
    assert np.max(np.abs(table[M.H] - (table[M.C] + table[M.E] - delta1 * rho * f * r))) <= 1e-12


def test_best_membership_examples():
    s = state(p=0.5, rho=0.5)
    assert best_membership(UserType(0, 0), s, PARAMS) == M.N
    assert best_membership(UserType(1, 0), s, PARAMS) == M.C
    # At N1 the payoffs of N, C and E all vanish: the tie goes to N.
    pts = indifferent_points(s.delta1, s.delta2, s.rho, PARAMS.phi1)
    f, r = pts.n1
    vals = [user_payoff(UserType(f, r), m, s, PARAMS) for m in (M.N, M.C, M.E)]
    assert max(vals) - min(vals) < 1e-12
    assert best_membership(UserType(f, r), s, PARAMS) == M.N


def test_classify_region_examples():
    assert classify_region(UserType(0.05, 0.5), 0.75, 1.0, 0.3, 0.1) == M.N
    assert classify_region(UserType(0.9, 0.1), 0.75, 1.0, 0.3, 0.1) == M.C
    assert classify_region(UserType(0.9, 0.9), 0.75, 1.0, 0.3, 0.1) == M.H
    assert classify_region(UserType(0.3, 0.9), 0.1, 1.5, 0.5, 0.1) == M.E
    with pytest.raises(ValueError):
        classify_region(UserType(0.5, 0.5), 0.75, 1.0, 0.3, 0.1, params=ModelParams(phi2=0.2))


def test_classifier_matches_argmax_off_boundary():
    rng = np.random.default_rng(1)
    n = 100_000
    f, r, p, rho = rng.random((4, n))
    phi = rng.uniform(0.01, 0.5, n)
    params_v, c1, c2 = 3.0, 1.5, 1.0
    d1 = (params_v - c1) * p
    d2 = (params_v - c2) * rho
    table = np.stack([
        np.zeros(n), d1 * f - phi, d2 * f * r - phi, (d2 - d1 * rho) * f * r + d1 * f - 2 * phi
    ])
    top = np.sort(table, axis=0)
    off = top[-1] - top[-2] > 1e-9
    argmax = np.argmax(table, axis=0)
    regions = classify_regions(f, r, d1, d2, rho, phi)
    assert off.sum() > 0.99 * n
    assert np.array_equal(regions[off], argmax[off])


@given(unit, unit, st.floats(0, 1.5), st.floats(0, 2), unit)
@settings(max_examples=300)
def test_scalar_classifier_matches_argmax(f, r, d1, d2, rho):
    phi = 0.1
    user = UserType(f, r)
    vals = [0.0, d1 * f - phi, d2 * f * r - phi, (d2 - d1 * rho) * f * r + d1 * f - 2 * phi]
    got = classify_region(user, d1, d2, rho, phi)
    # Off the boundaries both routes agree; on them the tie-break decides.
    assert vals[got] == pytest.approx(max(vals), abs=1e-12)
    if sorted(vals)[-1] - sorted(vals)[-2] > 1e-9:
        assert got == int(np.argmax(vals))


def test_indifferent_point_values():
    pts = indifferent_points(0.75, 1.5, 0.5, 0.1)
    assert pts.n1 == pytest.approx((0.1 / 0.75, 0.5))
    assert pts.n2 == pytest.approx((0.1 / 0.75 / 0.75, 0.5))
    assert pts.n1_in_domain and pts.n2_in_domain
    far = indifferent_points(1.5, 0.75, 0.5, 0.1)
    assert far.n1[1] == 2.0 and not far.n1_in_domain
    flat = indifferent_points(1.0, 1.0, 0.0, 0.1)
    assert flat.n1 == pytest.approx((0.1, 1.0)) and flat.n2 == pytest.approx(flat.n1)
    assert indifferent_points(0.0, 1.0, 0.5, 0.1).n1 is None


@given(st.floats(0.2, 1.5), st.floats(0.2, 2), st.floats(0, 0.99))
def test_indifferent_points_equalise_payoffs(d1, d2, rho):
    phi = 0.1
    pts = indifferent_points(d1, d2, rho, phi)

    def pay(f, r):
        return [0.0, d1 * f - phi, d2 * f * r - phi, (d2 - d1 * rho) * f * r + d1 * f - 2 * phi]

    n, c, e, _ = pay(*pts.n1)
    assert n == pytest.approx(c, abs=1e-12) and c == pytest.approx(e, abs=1e-12)
    if pts.n2 is not None:
        _, c, e, h = pay(*pts.n2)
        assert c == pytest.approx(e, abs=1e-9) and e == pytest.approx(h, abs=1e-9)


def test_vectorised_argmax_tie_break():
    # f = 0 leaves every sponsorship at -phi or below, so N wins.
    assert best_memberships(np.zeros(3), np.ones(3), 1.0, 1.0, PARAMS).tolist() == [0, 0, 0]
    free = PARAMS.replace(phi1=0.0, phi2=0.0)
    # With no fees and f = 0 all four payoffs tie at zero.
    assert best_memberships(0.0, 0.5, 0.5, 0.5, free) == M.N
