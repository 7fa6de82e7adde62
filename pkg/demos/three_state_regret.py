"""Regret of UCRL and TUCRL on the three-state domain.

With ``delta = 0`` state s1 can never be reached, yet UCRL keeps believing it
might be and pays a linear price for trying.  TUCRL stops planning towards
states it has never seen once a pair is well explored, so its regret flattens.
"""

import numpy as np

from tucrl import AgentConfig, make_three_state, optimal_gain, regret, run_agent

HORIZON = 100_000
SEEDS = range(5)

mdp = make_three_state(0.0)
g_star = optimal_gain(mdp)
print(f"optimal gain g* = {g_star:.4f}")

checkpoints = np.geomspace(HORIZON / 100, HORIZON, 5).astype(int)
for algorithm in ("ucrl", "tucrl"):
    curves = []
    for seed in SEEDS:
        config = AgentConfig(algorithm=algorithm, seed=seed, shrink_r=0.05, shrink_p=0.05)
        run = run_agent(mdp, config, HORIZON, g_star=g_star)
        curves.append(regret(run)[checkpoints - 1])
    mean = np.mean(curves, axis=0)
    print(f"\n{algorithm}: mean regret over {len(SEEDS)} seeds")
    for t, r in zip(checkpoints, mean):
        print(f"  t = {t:>7d}  regret = {r:9.1f}  regret / t = {r / t:.4f}")
