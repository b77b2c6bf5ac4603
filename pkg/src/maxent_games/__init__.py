"""Multimodal maximum-entropy dynamic games: local LQ (MaxEnt) Nash equilibria,
Bayesian inference over which equilibrium the other agents play, and QMDP
planning over that belief."""
from .game import (AgentObjective, ContractError, DynamicGame, DynamicsModel, LinearDynamics, LqApproximation,
                   NumericalError, QuadraticObjective, RK4Dynamics, Trajectory, evaluate_cost, lq_approximate,
                   rollout, single_integrator)
from .inference import (Belief, ModeBank, belief_update, estimate_controls, naive_belief_update,
                        prior_belief)
from .lq import (AffineGaussianPolicy, FeedbackPolicy, LocalNashSolution, QuadraticValue, iterative_lq_solve,
                 solve_feedback_ne_lq, solve_maxent_ne_lq)
from .planner import EgoDecision, Strategy, ml_policy, noinf_policy, plan_step, qmdp_policy
from .sim import EpisodeConfig, EpisodeLog, Perturbation, control_total_variation, run_episode, run_matrix
from .toy import ToyGame, exact_maxent_ne, exact_ne, onestep_maxent_value, softmin

__version__ = "0.1.0"
