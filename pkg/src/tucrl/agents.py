"""UCRL and TUCRL learning loops with diagnostic instrumentation."""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .confidence import exploration_mask, new_statistics, plausible_set
from .errors import Infeasible, MaxIterationsExceeded
from .mdp import decompose, optimal_gain
from .planner import tevi

REASONS = ("doubling", "new_state", "horizon")
ALGORITHMS = ("ucrl", "tucrl")
TUCRL_VARIANTS = ("l1_relaxed", "zeta_relaxed")


@dataclass(frozen=True)
class AgentConfig:
    """Learner settings.

    ``eps_scale`` multiplies the planning accuracy ``r_max / sqrt(t_k)``.
    ``track_membership`` records, per episode, whether the true MDP lies in
    the untruncated per-element Bernstein set (diagnostics only).
    """

    algorithm: str = "tucrl"
    delta: float = 0.05
    variant: str = "l1_relaxed"
    shrink_r: float = 1.0
    shrink_p: float = 1.0
    eps_scale: float = 1.0
    seed: int = 0
    max_iter: int = 10**6
    track_membership: bool = True

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.variant not in TUCRL_VARIANTS:
            raise ValueError(f"variant must be one of {TUCRL_VARIANTS}")
        for name in ("shrink_r", "shrink_p"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")

    @property
    def label(self):
        if self.algorithm == "tucrl" and self.variant != "l1_relaxed":
            return f"tucrl_{self.variant.split('_')[0]}"
        return self.algorithm


@dataclass(frozen=True)
class EpisodeRecord:
    """Summary of one episode.  State and pair sets are stored as bit masks."""

    k: int
    t_k: int
    steps: int
    n_states: int
    n_actions: int
    sc_bits: np.ndarray
    k_bits: np.ndarray
    evi_full: bool
    set_variant: str
    gain: float
    eps: float
    span_c: float
    n_iter: int
    in_set: object
    reason: str
    delta_k: float = float("nan")

    @property
    def sc(self):
        """Boolean mask of ``S^C_k``."""
        return np.unpackbits(self.sc_bits, count=self.n_states).astype(bool)

    @property
    def st(self):
        return ~self.sc

    @property
    def kk(self):
        """Boolean ``(S, A)`` mask of ``K_k``."""
        flat = np.unpackbits(self.k_bits, count=self.n_states * self.n_actions)
        return flat.astype(bool).reshape(self.n_states, self.n_actions)

    @property
    def n_sc(self):
        return int(self.sc.sum())

    @property
    def n_k(self):
        return int(self.kk.sum())

    @property
    def evi_states(self):
        return np.ones(self.n_states, dtype=bool) if self.evi_full else self.sc


@dataclass
class RunLog:
    """Trace of one learning run.

    Step arrays are indexed by ``t - 1``; ``npm`` holds ``N^±_{k_t}(s_t, a_t)``
    and ``cum_reward`` the running sum of realized rewards.
    """

    env_name: str
    algorithm: str
    seed: int
    horizon: int
    n_states: int
    n_actions: int
    r_max: float
    g_star: float
    n_sc_true: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    episode: np.ndarray
    npm: np.ndarray
    cum_reward: np.ndarray
    episodes: list = field(default_factory=list)
    reward_means: np.ndarray = None
    delta: float = 0.05

    @property
    def n_episodes(self):
        return len(self.episodes)

    def steps_csv(self):
        lines = ["t,k,s,a,r,s_next"]
        for i in range(self.horizon):
            lines.append(f"{i + 1},{self.episode[i]},{self.states[i]},{self.actions[i]},"
                         f"{float(self.rewards[i])!r},{self.next_states[i]}")
        return "\n".join(lines) + "\n"

    def episodes_csv(self):
        lines = ["k,t_k,|SCk|,|Kk|,g_tilde,delta_k,reason"]
        for e in self.episodes:
            lines.append(f"{e.k},{e.t_k},{e.n_sc},{e.n_k},{e.gain!r},{e.delta_k!r},{e.reason}")
        return "\n".join(lines) + "\n"


def _true_support(mdp):
    S, A = mdp.n_states, mdp.max_actions
    support = np.zeros((S, A, S), dtype=np.int64)
    length = np.zeros((S, A), dtype=np.int64)
    for s in range(S):
        for a in range(A):
            idx = np.flatnonzero(mdp.transitions[s, a] > 0)
            support[s, a, :idx.size] = idx
            length[s, a] = idx.size
    return support, length


def _cumulative(mdp):
    cum = np.cumsum(mdp.transitions, axis=-1)
    S, A = mdp.n_states, mdp.max_actions
    for s in range(S):
        for a in range(A):
            pos = np.flatnonzero(mdp.transitions[s, a] > 0)
            if pos.size:
                cum[s, a, pos[-1]:] = 1.0
    return cum


def run_agent(env, config, horizon, g_star=None):
    """Run UCRL or TUCRL on ``env`` for ``horizon`` steps.

    Parameters
    ----------
    env : Mdp
    config : AgentConfig
    horizon : int
    g_star : float, optional
        Optimal gain used for the per-episode regret; computed if omitted.

    Returns
    -------
    RunLog
    """
    if horizon < 1:
        raise ValueError("horizon must be at least 1")
    T = int(horizon)
    S, A = env.n_states, env.max_actions
    r_max = env.r_max
    tucrl = config.algorithm == "tucrl"
    valid = env.valid_actions
    if g_star is None:
        g_star = optimal_gain(env)
    n_sc_true = len(decompose(env, diameters=False).communicating)

    counts, model = new_statistics(S, A, r_max)
    visited = np.zeros(S, dtype=bool)
    trans_seq, rew_seq = np.random.SeedSequence(config.seed).spawn(2)
    u_trans = np.random.default_rng(trans_seq).random(T)
    u_rew = np.random.default_rng(rew_seq).random(T)
    cum_p = _cumulative(env)
    true_support, true_len = _true_support(env)

    tr_s = np.zeros(T, dtype=np.int64)
    tr_a = np.zeros(T, dtype=np.int64)
    tr_r = np.zeros(T)
    tr_sn = np.zeros(T, dtype=np.int64)
    tr_npm = np.zeros(T, dtype=np.int64)
    tr_cum = np.zeros(T)
    tr_k = np.zeros(T, dtype=np.int64)

    records = []
    s = env.initial_state
    t = 0
    reward_sum = 0.0
    k = 0
    while t < T:
        k += 1
        t_k = t + 1
        counts.t, counts.t_k, counts.k = t, t_k, k
        sc = visited.copy()
        sc[s] = True
        under = exploration_mask(counts) & valid
        kk = under & sc[:, None]
        n_transient = int((~sc).sum())
        if tucrl and n_transient > 0:
            variant = config.variant
            planning = sc if not kk.any() else np.ones(S, dtype=bool)
        else:
            variant = "bernstein_per_element"
            planning = np.ones(S, dtype=bool)
        pset = plausible_set(counts, model, config.delta, variant, config.shrink_r,
                             config.shrink_p, valid=valid, current_state=s, states=planning)
        eps = config.eps_scale * r_max / np.sqrt(t_k)
        try:
            plan = tevi(pset, eps, max_iter=config.max_iter)
        except (MaxIterationsExceeded, Infeasible) as err:
            raise type(err)(f"episode {k} (t_k={t_k}): {err}") from err

        in_set = None
        if config.track_membership:
            # the untruncated per-element set shares the reward box and widths
            in_set = bool(K.true_in_box(env.rewards, env.transitions, true_support, true_len,
                                        valid, pset.r_lower, pset.r_upper, pset.p_hat,
                                        pset.support, pset.support_len, pset.c_sqrt,
                                        pset.c_lin, pset.free, 1e-12))

        policy = np.where(plan.policy >= 0, plan.policy, 0).astype(np.int64)
        t_new, s, reason, reward_sum = K.play_episode(
            t, T, s, policy, tucrl, counts.N, counts.nu, visited, cum_p, env.rewards,
            env.noise_kind, env.noise_param, r_max, u_trans, u_rew, model.n_samples,
            model.r_hat, model.r_m2, tr_s, tr_a, tr_r, tr_sn, tr_npm, tr_cum, reward_sum)
        tr_k[t:t_new] = k
        delta_k = float(np.sum(g_star - env.rewards[tr_s[t:t_new], tr_a[t:t_new]]))
        h = plan.values[sc]
        records.append(EpisodeRecord(
            k=k, t_k=t_k, steps=t_new - t, n_states=S, n_actions=A,
            sc_bits=np.packbits(sc), k_bits=np.packbits(kk.ravel()),
            evi_full=bool(planning.all()), set_variant=variant, gain=plan.gain, eps=eps,
            span_c=float(h.max() - h.min()), n_iter=plan.n_iter, in_set=in_set,
            reason=REASONS[reason], delta_k=delta_k))
        K.merge_episode(tr_s, tr_a, tr_sn, t, t_new, counts.N, counts.nu, counts.N_sas,
                        counts.support, counts.support_len, model.p_hat, visited)
        t = t_new
    counts.t = T

    return RunLog(env_name=env.name, algorithm=config.label, seed=config.seed, horizon=T,
                  n_states=S, n_actions=A, r_max=r_max, g_star=float(g_star),
                  n_sc_true=n_sc_true, states=tr_s, actions=tr_a, rewards=tr_r,
                  next_states=tr_sn, episode=tr_k, npm=tr_npm, cum_reward=tr_cum,
                  episodes=records, reward_means=env.rewards, delta=config.delta)


def tucrl_run(env, config=None, horizon=1, g_star=None):
    config = AgentConfig(algorithm="tucrl") if config is None else config
    if config.algorithm != "tucrl":
        raise ValueError("tucrl_run needs algorithm='tucrl'")
    return run_agent(env, config, horizon, g_star)


def ucrl_run(env, config=None, horizon=1, g_star=None):
    config = AgentConfig(algorithm="ucrl") if config is None else config
    if config.algorithm != "ucrl":
        raise ValueError("ucrl_run needs algorithm='ucrl'")
    return run_agent(env, config, horizon, g_star)


# ---------------------------------------------------------------------------
# analysis


def exploration_threshold(d_c, n_states, n_actions, n_transient, t_k, delta):
    """Episode start time beyond which the estimated transient set is reliable.

    ``C(k) = (2401/9) (D^C)^2 S A (|S^T_k| ln(2 S A t_k / delta))^2``.
    """
    log = np.log(2.0 * n_states * n_actions * t_k / delta)
    return 2401.0 / 9.0 * d_c**2 * n_states * n_actions * (n_transient * log) ** 2


def regret(run, g_star=None):
    """Cumulative regret ``t g* - sum of realized rewards`` for ``t = 1..T``."""
    g_star = run.g_star if g_star is None else g_star
    rewards = np.asarray(run.rewards)
    if rewards.shape[0] != run.horizon:
        raise ValueError("trace length does not match the horizon")
    t = np.arange(1, run.horizon + 1)
    return t * g_star - np.cumsum(rewards)


def z_bound(n_sc, n_actions, horizon):
    return 2.0 * np.sqrt(n_sc * n_actions * horizon) + 2.0 * n_sc * n_actions


def episode_bound(n_sc, n_actions, horizon):
    sa = n_sc * n_actions
    return 1.0 + 2.0 * sa + sa * np.log2(horizon / sa) + n_sc


@dataclass
class Diagnostics:
    z_t: int
    z_bound: float
    m: int
    m_bound: float
    sufficiently_explored: np.ndarray
    optimism_violations: int
    span_violations: int
    in_set_episodes: int


def diagnostics(run, d_c=None, g_star=None):
    """Z_T, episode count and the optimism / value-span checks of a run.

    The optimism and span checks need the true ``D^C``; without it they are
    reported as 0 with no episode tagged.
    """
    S, A, T = run.n_states, run.n_actions, run.horizon
    g_star = run.g_star if g_star is None else g_star
    t = np.arange(1, T + 1)
    z_t = int(np.sum(run.npm <= np.sqrt(t / (S * A))))
    explored = np.zeros(run.n_episodes, dtype=bool)
    opt_viol = span_viol = n_in = 0
    if d_c is not None:
        for i, e in enumerate(run.episodes):
            c_k = exploration_threshold(d_c, S, A, S - e.n_sc, e.t_k, run.delta)
            explored[i] = e.t_k >= c_k
            if not e.in_set:
                continue
            n_in += 1
            if explored[i] and e.gain < g_star - e.eps:
                opt_viol += 1
            if run.algorithm.startswith("tucrl") and e.span_c > run.r_max * d_c + e.eps:
                span_viol += 1
    return Diagnostics(z_t=z_t, z_bound=float(z_bound(run.n_sc_true, A, T)),
                       m=run.n_episodes, m_bound=float(episode_bound(run.n_sc_true, A, T)),
                       sufficiently_explored=explored, optimism_violations=opt_viol,
                       span_violations=span_viol, in_set_episodes=n_in)
