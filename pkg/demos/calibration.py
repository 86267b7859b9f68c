"""Tune the executor's parameters with TPE on the validation split."""
from evotrade import DEFAULT_SPACE, TpeConfig, calibrate, fixture_objectives

val = fixture_objectives()["validation"]
res = calibrate(DEFAULT_SPACE, val, TpeConfig(n_random=10, n_guided=20, seed=0))
print(f"default genome: {val({}):10.2f}")
print(f"best of {len(res.trials)} trials: {res.best.objective:10.2f} (trial {res.best.trial_index})")
print("best genome:", {k: round(float(v), 6) for k, v in res.best.genome.items()})
