"""Run merge episodes and compare strategies: outcome, inferred mode and ego acceleration."""
from dataclasses import replace

import numpy as np

from maxent_games.merge import MergeScenario, MergeConfig
from maxent_games.sim import EpisodeConfig, Perturbation, control_total_variation, run_episode

scenario = MergeScenario(MergeConfig.default())

# an inferring ego against both fixed opponents; mode z means agent z merges first
for other, true_mode in (("noyield", 1), ("yield", 0)):
    ep = run_episode(EpisodeConfig(strategies=("qmdp", other)), scenario)
    b = ep.beliefs[:, 0, true_mode]
    t90 = ep.times[np.argmax(b >= 0.9)] if np.any(b >= 0.9) else np.nan
    print(f"QMDP vs {other:8s} {ep.outcome:9s} in {ep.num_steps} steps, "
          f"belief in true mode >= 0.9 after {t90:.2f} s, min gap {ep.min_distance:.2f} m")

# two agents that both insist, or both defer
for pair in (("noyield", "noyield"), ("yield", "yield")):
    ep = run_episode(EpisodeConfig(strategies=pair), scenario)
    print(f"{pair[0]} vs {pair[1]}: {ep.outcome} after {ep.num_steps} steps")

# oscillating opponent with 100 ms actuation delay
cfg = EpisodeConfig(latency_steps=2, perturbation=Perturbation.parse("sin"))
for ego in ("ml", "qmdp"):
    ep = run_episode(replace(cfg, strategies=(ego, "yield")), scenario)
    print(f"{ego:4s} vs perturbed yield: {ep.outcome}, ego accel total variation "
          f"{control_total_variation(ep, 0, 'accel'):.2f}")
