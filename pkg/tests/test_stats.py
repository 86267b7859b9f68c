import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evotrade.market_data import synthesize
from evotrade.simulator import run_backtest
from evotrade.stats import (DailyPnlSeries, NullModel, analysis_report, is_oos_curve, max_drawdown, null_block,
                            perf_metrics, phacking_ceiling, sizing_counterfactual, sizing_decomposition,
                            split_report, z_excess)
from evotrade.strategy import PassiveExecutor

REFERENCE_NULL = NullModel.from_baseline(82_615.0, 4.81, 366)


def test_win_rate_and_drawdown():
    m = perf_metrics(DailyPnlSeries.from_values([1, -1, 1, 1]))
    assert m.win_rate == 0.75
    assert max_drawdown([0, 10, 5, 20]) == -5.0
    assert max_drawdown([]) == 0.0
    assert max_drawdown([1, 2, 3]) == 0.0


def test_sharpe_sortino_calmar_hand():
    m = perf_metrics(DailyPnlSeries.from_values([1.0, 2.0, 3.0]))
    assert m.sharpe == pytest.approx(2.0 * math.sqrt(365), rel=1e-15)
    assert m.sortino == math.inf and m.calmar == math.inf
    m = perf_metrics(DailyPnlSeries.from_values([2.0, -1.0, 2.0]))
    # normalized by 2: [1, -0.5, 1], mean 0.5, downside rms sqrt(0.25/3)
    assert m.sortino == pytest.approx(0.5 / math.sqrt(0.25 / 3) * math.sqrt(365), rel=1e-14)
    assert m.calmar == pytest.approx(0.5 * 365 / 0.5, rel=1e-14)
    assert m.max_drawdown == -1.0 and m.total_pnl_adj == 3.0


def test_zero_variance_flagged(caplog):
    m = perf_metrics(DailyPnlSeries.from_values([5.0, 5.0]))
    assert m.sharpe == math.inf and any("sharpe" in f for f in m.flags)
    assert "sharpe" in caplog.text
    z = perf_metrics(DailyPnlSeries.from_values([0.0, 0.0]))
    assert z.sharpe == 0.0 and z.to_dict()["sortino"] == 0.0
    assert m.to_dict()["sharpe"] == "inf"
    with pytest.raises(ValueError):
        perf_metrics(DailyPnlSeries.from_values([1.0]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-10**9, 10**9), min_size=2, max_size=60), st.sampled_from([0.5, 3.0, 10.0]))
def test_scale_invariance(values, k):
    base = perf_metrics(DailyPnlSeries.from_values(values))
    scaled = perf_metrics(DailyPnlSeries.from_values([k * v for v in values]))
    for name in ("sharpe", "sortino", "calmar", "win_rate"):
        a, b = getattr(base, name), getattr(scaled, name)
        assert a == b or (math.isnan(a) and math.isnan(b))
    assert scaled.max_drawdown == k * base.max_drawdown
    assert scaled.total_pnl_adj == pytest.approx(k * base.total_pnl_adj, rel=1e-12, abs=1e-9)


def test_counterfactual():
    assert sizing_counterfactual(100.0, 20.0, 4.0) == 240.0
    assert sizing_counterfactual(1234.5, 67.8, 1.0) == 1234.5 - 67.8
    with pytest.raises(ValueError):
        sizing_counterfactual(1.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        sizing_counterfactual(1.0, -1.0, 1.0)


def test_sizing_decomposition():
    z = np.zeros(2)
    base = DailyPnlSeries([0, 1], [60.0, 20.0], [70.0, 30.0], z, [1e6, 1e6], [10.0, 10.0])
    k = 4.0
    cf = k * 100.0 - k ** 1.5 * 20.0
    evolved = DailyPnlSeries([0, 1], [cf / 2, cf / 2], [0, 0], z, [4e6, 4e6], z)
    d = sizing_decomposition(base, evolved)
    assert (d.F_b, d.I_b, d.k, d.counterfactual) == (100.0, 20.0, 4.0, 240.0)
    assert d.ratio == 1.0
    same = sizing_decomposition(base, base)
    assert same.counterfactual == 80.0 == same.evolved_pnl_adj


def test_null_model_values():
    n = REFERENCE_NULL
    assert n.sigma0 == pytest.approx(17_175.68, abs=0.01)
    assert phacking_ceiling(n, 1) == 82_615.0
    assert phacking_ceiling(n, 335) == pytest.approx(141_184, abs=1.0)
    assert z_excess(1.855e6, n) == pytest.approx(103.19, abs=0.01)
    test = n.rescaled(283, 46_791.0)
    assert test.sigma0 == pytest.approx(15_103, abs=1.0)
    assert z_excess(724_217.0, n, 283, 46_791.0) == pytest.approx(44.85, abs=0.01)
    assert z_excess(82_615.0, n) == 0.0
    with pytest.raises(ValueError):
        NullModel.from_baseline(1.0, 0.0, 10)
    with pytest.raises(ValueError):
        phacking_ceiling(n, 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 10**6), st.integers(1, 10**6))
def test_ceiling_monotone(k1, k2):
    lo, hi = sorted((k1, k2))
    assert phacking_ceiling(REFERENCE_NULL, lo) <= phacking_ceiling(REFERENCE_NULL, hi)


def test_null_block():
    b = null_block(REFERENCE_NULL, 335, 1.855e6)
    assert b["z"] == pytest.approx(103.19, abs=0.01) and b["ceiling"] == pytest.approx(141_184, abs=1)
    t = null_block(REFERENCE_NULL, 335, 724_217.0, 283, 46_791.0)
    assert t["z"] == pytest.approx(44.85, abs=0.01) and t["window_days"] == 283


def test_is_oos_hand_record():
    pairs = [(10.0, 5.0), (9.0, 100.0), (12.0, 4.0), (11.0, 50.0), (15.0, 6.0)]
    c = is_oos_curve(pairs)
    assert c.change_points == [1, 3, 5]
    assert c.is_best == [10.0, 10.0, 12.0, 12.0, 15.0]
    assert c.oos_of_champion == [5.0, 5.0, 4.0, 4.0, 6.0]
    assert c.degradation == 6.0 / 15.0


def test_is_oos_constant_champion():
    c = is_oos_curve([(10.0, 7.0), (3.0, 99.0), (None, None), (10.0, 1.0)])
    assert c.oos_of_champion == [7.0] * 4 and c.champion_id == [0] * 4
    assert c.degradation == 0.7


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.one_of(st.none(), st.floats(-1e6, 1e6)), st.floats(-1e6, 1e6)), max_size=40))
def test_is_curve_monotone(pairs):
    vals = [v for v in is_oos_curve(pairs).is_best if v is not None]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_daily_reconciliation():
    s = synthesize(12, 3 * 1440 + 77, signal_coef=3.5e-4)
    alpha = np.random.default_rng(0).normal(0, 5e-5, len(s))
    led = run_backtest(s, PassiveExecutor(), (alpha, 3.5e-5))
    daily = DailyPnlSeries.from_ledger(led)
    assert len(daily) == 4
    total = float(np.sum(led.pnl_adj))
    assert float(np.sum(daily.pnl_adj)) == pytest.approx(total, rel=1e-6)
    assert float(np.sum(daily.impact)) == pytest.approx(float(np.sum(led.impact_cost)), rel=1e-9)
    rep = split_report(led)
    assert rep["n_trades"] == led.n_trades and rep["total_pnl_adj"] == pytest.approx(total, rel=1e-6)
    one = split_report(run_backtest(s.take(slice(0, 600)), PassiveExecutor(), (alpha[:600], 3.5e-5)))
    assert one["sharpe"] is None and one["n_days"] == 1 and "total_pnl_adj" in one


def test_analysis_report_shape():
    rep = analysis_report(null={"validation": null_block(REFERENCE_NULL, 10, None)})
    assert rep["schema_version"] == "1.0"
    assert rep["null_model"]["validation"]["z"] is None
    assert "sqrt(365)" in rep["conventions"]["sharpe"]
