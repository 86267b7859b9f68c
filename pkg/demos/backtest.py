"""Run the default passive executor over a synthetic fixture and print the split summary."""
from evotrade import fixture_objectives, perf_metrics
from evotrade.stats import DailyPnlSeries, split_report

objectives = fixture_objectives()
for name, obj in objectives.items():
    ledger = obj.ledger()
    rep = split_report(ledger)
    m = perf_metrics(DailyPnlSeries.from_ledger(ledger))
    print(f"{name:>10}: trades={rep['n_trades']:5d}  pnl_adj={rep['total_pnl_adj']:10.2f}  "
          f"sharpe={m.sharpe:7.2f}  max_dd={m.max_drawdown:9.2f}")
