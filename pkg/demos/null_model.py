"""Gauge how much of an evolved PnL a pure multiple-testing search could explain."""
from evotrade import NullModel, phacking_ceiling, z_excess

null = NullModel.from_baseline(82_615.0, 4.81, 366)
print(f"sigma0 = {null.sigma0:,.2f}")
for K in (1, 10, 100, 335, 10_000):
    print(f"K={K:>6}: ceiling {phacking_ceiling(null, K):12,.0f}")
print(f"z for 1.855M on the same window: {z_excess(1.855e6, null):.2f}")
