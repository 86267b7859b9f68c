"""Charge a toy trade log with the propagator impact model and show how cost scales with size."""
from evotrade import ImpactParams, TradeLog, charge

params = ImpactParams()
for notional in (1e4, 1e5, 1e6):
    log = TradeLog.from_trades([(60.0 * i, notional) for i in range(10)])
    rep = charge(log, params)
    print(f"10 x {notional:>9,.0f} USD: total cost {rep.total_cost:10.2f} USD ({rep.cost_bps:6.3f} bps)")
