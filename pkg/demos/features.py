"""Train the ridge forecaster, score it out of sample, and run greedy feature selection."""
import numpy as np

from evotrade import Forecaster, greedy_select, score_forecast
from evotrade.forecaster import day_labels, default_calcset, forward_returns
from evotrade.pipeline import frozen_fixture

parts = frozen_fixture()
fc = Forecaster.train(parts["train"])
val = parts["validation"]
pred = fc.predict(val).primary
realized = np.nan_to_num(forward_returns(val.close, 1))
print("validation metrics:", score_forecast(pred, realized, day_labels(val.timestamp)).to_dict())

spans = [2, 3, 5, 8, 10, 13, 20, 30, 50, 80, 120]
cands = default_calcset(parts["train"], spans)
target = np.nan_to_num(forward_returns(parts["train"].close, 1))
print("selected features:", greedy_select(cands, target))
