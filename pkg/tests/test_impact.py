import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from evotrade.impact import (ImpactParams, TradeLog, charge, charge_bruteforce, decay_kernel,
                             size_factor)

P = ImpactParams()


def test_kernel_values():
    assert decay_kernel(0.0, P) == 1.0
    assert decay_kernel(300.0, P) == pytest.approx(0.70711, abs=1e-5)
    assert decay_kernel(1e9, P) < 1e-3
    taus = np.linspace(0, 1e5, 1000)
    assert np.all(np.diff(decay_kernel(taus, P)) < 0)


def test_size_factor_values():
    assert size_factor(2e9, P) == 1.0
    assert size_factor(0.0, P) == 0.0
    assert size_factor(-5e8, P) == -0.5


def test_single_trade_table_values():
    rep = charge(TradeLog([0.0], [2e9]), P)
    assert rep.per_trade_costs[0] == pytest.approx(3.0e7, rel=1e-15)
    assert rep.cost_bps == pytest.approx(150.0, rel=1e-15)


def test_empty_log():
    rep = charge(TradeLog([], []), P)
    assert rep.total_cost == 0.0 and rep.cost_bps == 0.0


def test_offsetting_simultaneous_trades():
    Q = 1e6
    rep = charge(TradeLog([10.0, 10.0], [Q, -Q]), P)
    s = (Q / P.daily_volume_usd) ** 0.5
    assert rep.per_trade_costs[0] == pytest.approx(0.015 * s * Q, rel=1e-14)
    # the second trade sees +s and -s: displacement exactly zero
    assert rep.per_trade_costs[1] == 0.0
    np.testing.assert_allclose(rep.per_trade_costs, oracles.impact_costs([10.0, 10.0], [Q, -Q]), rtol=1e-12)


def test_rejects_unsorted_times():
    with pytest.raises(ValueError):
        TradeLog([2.0, 1.0], [1.0, 1.0])


def test_params_validation():
    with pytest.raises(ValueError):
        ImpactParams(beta=2.5)
    with pytest.raises(ValueError):
        ImpactParams(daily_volume_usd=0)
    assert ImpactParams.from_dict(P.to_dict()) == P


def random_log(rng, n, grid=False):
    if grid:
        t = np.sort(rng.integers(0, 3 * n, n)).astype(float) * 60.0
    else:
        t = np.sort(rng.uniform(0, 36_000, n))
        if n > 3:
            t[2] = t[1]  # a tie
    q = rng.normal(0, 5e4, n) * rng.choice([0.0, 1.0], n, p=[0.05, 0.95])
    return TradeLog(t, q)


def test_matches_independent_double_sum():
    rng = np.random.default_rng(0)
    for _ in range(100):
        log = random_log(rng, int(rng.integers(1, 201)))
        got = charge(log, P).per_trade_costs
        want = np.array(oracles.impact_costs(log.times.tolist(), log.notionals.tolist()))
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12 * np.max(np.abs(want) + 1e-300))


def test_grid_path_matches_direct():
    rng = np.random.default_rng(1)
    log = random_log(rng, 2500, grid=True)
    got = charge(log, P).per_trade_costs
    want = charge_bruteforce(TradeLog(log.times[:300], log.notionals[:300]), P).per_trade_costs
    np.testing.assert_allclose(got[:300], want, rtol=1e-9, atol=1e-9 * np.max(np.abs(want)))
    from evotrade.impact import _transient_direct
    s = size_factor(log.notionals, P)
    direct = (P.alpha_perm * np.cumsum(s) + P.alpha_trans * _transient_direct(log.times, s, P)) * log.notionals
    np.testing.assert_allclose(got, direct, rtol=1e-9, atol=1e-9 * np.max(np.abs(direct)))


def test_report_aggregates():
    rng = np.random.default_rng(2)
    log = random_log(rng, 50)
    rep = charge(log, P)
    assert rep.total_cost == pytest.approx(float(np.sum(rep.per_trade_costs)), rel=1e-15)
    assert rep.cost_bps == pytest.approx(rep.total_cost / np.sum(np.abs(log.notionals)) * 1e4, rel=1e-15)
    assert sum(rep.per_interval.values()) == pytest.approx(rep.total_cost, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1.0, 1e6), min_size=1, max_size=30), st.floats(-1e6, 1e6))
def test_buys_into_buying_pay(sizes, shift):
    times = np.arange(len(sizes)) * 30.0
    rep = charge(TradeLog(times, sizes), P)
    assert np.all(rep.per_trade_costs > 0)
    moved = charge(TradeLog(times + 1e6 + shift, sizes), P)
    np.testing.assert_allclose(moved.per_trade_costs, rep.per_trade_costs, rtol=1e-12)


@pytest.mark.parametrize("k", [2, 4, 8])
def test_scaling_law(k):
    times = np.arange(20) * 1e9  # transient fully decayed between trades
    q = np.random.default_rng(3).uniform(1e4, 1e5, 20)
    base = charge(TradeLog(times, q), P).total_cost
    scaled = charge(TradeLog(times, k * q), P).total_cost
    assert scaled / base == pytest.approx(k ** 1.5, rel=0.01)
    assert math.isfinite(scaled)
