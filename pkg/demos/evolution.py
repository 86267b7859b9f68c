"""Evolve executor genomes with islands and MAP-Elites, then report the in/out-of-sample curve."""
from evotrade import DEFAULT_SPACE, EvolutionConfig, PerturbMutator, evolve, fixture_objectives, mutator_stats
from evotrade.stats import is_oos_curve
from evotrade.strategy import StrategyParams

objs = fixture_objectives()
record = evolve(EvolutionConfig(generations=8, batch_size=4), objs["validation"],
                [PerturbMutator(DEFAULT_SPACE)], StrategyParams().to_genome(), DEFAULT_SPACE,
                oos_evaluator=objs["test"])
best = record.best()
print(f"{len(record.candidates)} candidates, best id {best.id} fitness {best.fitness:.2f} "
      f"oos {record.oos[best.id]:.2f}")
curve = is_oos_curve(record)
print("champion changes at:", curve.change_points, " degradation:", curve.degradation)
print("mutators:", mutator_stats(record))
