"""Optimistic exploration for average-reward tabular MDPs (UCRL and TUCRL)."""

from .agents import (AgentConfig, EpisodeRecord, RunLog, diagnostics, exploration_threshold,
                     regret, run_agent, tucrl_run, ucrl_run)
from .confidence import (Counts, EmpiricalModel, PlausibleSet, beta_p, beta_r, exact_set,
                         new_statistics, plausible_set, record, zeta_slack)
from .envs import (EnvSpec, make_bias_toy, make_env, make_random_weakly_communicating,
                   make_taxi, make_three_state, make_two_state_family, parse_env_spec)
from .errors import Infeasible, LemmaViolation, MaxIterationsExceeded, NonUnichainPolicy
from .harness import (ExperimentConfig, load_config, parse_config, run_experiment,
                      verify_lemmas, verify_logs)
from .mdp import (Decomposition, GainBias, Mdp, decompose, diameter, from_text,
                  optimal_gain, optimal_gain_bias, policy_gain_bias, shortest_path, span,
                  to_text)
from .planner import (PlanResult, bellman_apply, extended_shortest_path, inner_max,
                      inner_max_bernstein, otp, tevi)

__version__ = "0.1.0"
