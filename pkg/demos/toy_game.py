"""Walk through the one-step toy game: exact equilibria, LQ modes, prior and QMDP hedge."""
import numpy as np

from maxent_games.inference import Belief, belief_update, prior_belief
from maxent_games.planner import ml_policy, qmdp_policy
from maxent_games.toy import ToyGame, density_maxima, exact_maxent_ne, exact_ne

toy = ToyGame(eps=0.1, beta=0.5)

# deterministic equilibrium: P2 picks the lower well, P1 follows at 3/4
u1, u2 = exact_ne(toy)
print(f"exact NE: u1={u1:+.4f} u2={u2:+.4f}")

# Boltzmann densities by quadrature; P2 stays bimodal
dens = exact_maxent_ne(toy)
print(f"MaxEnt means: P1 {dens.mean1:+.5f}  P2 {dens.mean2:+.5f}")
print("P2 density peaks:", np.round(density_maxima(dens.u, dens.pi2), 3))

# one LQ MaxEnt equilibrium per well
bank = toy.lq_modes()
for m in bank.modes:
    var = [p.covariances[0][0, 0] for p in m.policies]
    print(f"mode {m.mode}: means {np.round(m.nominal.controls[0], 4)}  variances {np.round(var, 4)}")

# prior from the mode values, then the ego hedges between the modes
b0 = prior_belief(bank, toy.x0)
print("prior:", np.round(b0.probs, 4))
print(f"QMDP ego mean {qmdp_policy(b0, bank, toy.x0).control[0]:+.4f}  "
      f"ML ego mean {ml_policy(b0, bank, toy.x0).control[0]:+.4f}")

# watching P2 act pulls the belief toward the matching mode
b = Belief(b0.probs)
for u in (-0.6, -0.7, -0.8):
    b = belief_update(b, bank, toy.x0, [u])
    print(f"after observing u2={u:+.1f}: belief {np.round(b.probs, 4)}  "
          f"QMDP ego mean {qmdp_policy(b, bank, toy.x0).control[0]:+.4f}")
