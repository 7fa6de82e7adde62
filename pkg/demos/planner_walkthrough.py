"""Optimistic planning on a hand-built plausible set.

Starting from exact estimates of a small random MDP, the transition set of
every pair is widened by a fixed l1 radius (``c_lin * S``, no variance term).
Extended value iteration then picks the most favourable model in that set,
so the optimistic gain is at least the true optimal gain and grows with the
radius.
"""

import numpy as np

from tucrl import make_random_weakly_communicating, optimal_gain, otp, tevi
from tucrl.confidence import L1, set_from_estimates

mdp = make_random_weakly_communicating(S=6, A=2, seed=3)
g_star = optimal_gain(mdp)
print(f"true optimal gain g* = {g_star:.4f}")

# the inner step: put as much mass as the radius allows on the best state
v = np.array([0.0, 1.0, 0.5])
p_hat = np.array([0.0, 0.0, 1.0])
for beta in (0.0, 0.2, 1.0):
    p = otp(p_hat, beta, v)
    print(f"beta = {beta:.1f}: optimistic p = {np.round(p, 3)}, p'v = {p @ v:.3f}")

for radius in (0.0, 0.05, 0.2, 0.5):
    c_lin = np.full(mdp.rewards.shape, radius / mdp.n_states)
    c_sqrt = np.zeros(mdp.rewards.shape)
    pset = set_from_estimates(mdp.transitions, mdp.rewards, c_sqrt, c_lin, kind=L1,
                              valid=mdp.valid_actions)
    plan = tevi(pset, eps=1e-8)
    print(f"l1 radius {radius:.2f}: optimistic gain {plan.gain:.4f} "
          f"after {plan.n_iter} sweeps, policy {plan.policy}")
