"""Two-agent lane-merge scenario."""
from .scenario import (CenterlineSingularityError, CostWeights, MergeConfig, MergeDynamics, MergeObjective,
                       MergeScenario, bicycle_step, default_lanes, load_scenario, merge_costs, mirrored,
                       seed_modes)
from .spline import CenterlineSpline

__all__ = ["CenterlineSingularityError", "CenterlineSpline", "CostWeights", "MergeConfig", "MergeDynamics",
           "MergeObjective", "MergeScenario", "bicycle_step", "default_lanes", "load_scenario", "merge_costs",
           "mirrored", "seed_modes"]
