"""Visit statistics and empirical-Bernstein plausible sets.

The statistics are split the way the learner uses them: :class:`Counts`
holds the visit counters (``N`` frozen during an episode, ``nu`` counting the
current episode) and :class:`EmpiricalModel` the running estimates.  Transition
frequencies are refreshed at the end of each episode, so ``p_hat`` always
matches ``N``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import Infeasible

VARIANTS = ("bernstein_per_element", "truncated", "l1_relaxed", "zeta_relaxed", "l1")
TRUNCATED_BY_DEFAULT = {"bernstein_per_element": False, "truncated": True,
                        "l1_relaxed": True, "zeta_relaxed": True, "l1": False}
BOX, L1 = 0, 1
C_SQRT = 14.0
C_LIN = 49.0 / 3.0


class Counts:
    """Visit counters of a learner.

    Attributes
    ----------
    N : (S, A) int array
        Visits before the current episode.
    nu : (S, A) int array
        Visits within the current episode.
    N_sas : (S, A, S) int array
        Transition counts consistent with ``N``.
    support, support_len : arrays
        ``support[s, a, :support_len[s, a]]`` lists the observed successors.
    t : int
        Number of steps taken so far.
    t_k, k : int
        Start time (1-based) and index of the current episode.
    """

    def __init__(self, n_states, n_actions):
        S, A = n_states, n_actions
        self.n_states, self.n_actions = S, A
        self.N = np.zeros((S, A), dtype=np.int64)
        self.nu = np.zeros((S, A), dtype=np.int64)
        self.N_sas = np.zeros((S, A, S), dtype=np.int64)
        self.support = np.zeros((S, A, S), dtype=np.int64)
        self.support_len = np.zeros((S, A), dtype=np.int64)
        self.t = 0
        self.t_k = 1
        self.k = 1
        self._pending = []

    @property
    def n_plus(self):
        return np.maximum(1, self.N)

    @property
    def n_pm(self):
        return np.maximum(1, self.N - 1)

    @property
    def visited_states(self):
        """States with at least one recorded visit before this episode."""
        return self.N.sum(axis=1) > 0

    def end_episode(self, model=None):
        """Fold the episode into ``N`` and refresh ``model.p_hat``."""
        touched = set()
        for s, a, s_next in self._pending:
            if self.N_sas[s, a, s_next] == 0:
                self.support[s, a, self.support_len[s, a]] = s_next
                self.support_len[s, a] += 1
            self.N_sas[s, a, s_next] += 1
            touched.add((s, a))
        self._pending.clear()
        self.N += self.nu
        self.nu[:] = 0
        self.k += 1
        self.t_k = self.t + 1
        if model is not None:
            for s, a in touched:
                model.p_hat[s, a] = self.N_sas[s, a] / self.N[s, a]

    def to_csv(self):
        """Nonzero transition counts as ``s,a,s',count`` lines."""
        lines = ["s,a,s',count"]
        for s, a, s_next in zip(*np.nonzero(self.N_sas)):
            lines.append(f"{s},{a},{s_next},{self.N_sas[s, a, s_next]}")
        return "\n".join(lines) + "\n"


class EmpiricalModel:
    """Running reward mean/variance (Welford) and transition frequencies.

    Reward statistics include the current episode; ``p_hat`` is refreshed by
    :meth:`Counts.end_episode` and therefore matches ``Counts.N``.
    """

    def __init__(self, n_states, n_actions, r_max=1.0):
        S, A = n_states, n_actions
        self.r_max = float(r_max)
        self.n_samples = np.zeros((S, A), dtype=np.int64)
        self.r_hat = np.zeros((S, A))
        self.r_m2 = np.zeros((S, A))
        self.p_hat = np.zeros((S, A, S))

    @property
    def r_var(self):
        """Population variance of the observed rewards (0 for unseen pairs)."""
        return self.r_m2 / np.maximum(1, self.n_samples)

    @property
    def p_var(self):
        return self.p_hat * (1.0 - self.p_hat)

    @property
    def observed(self):
        """Flag of pairs whose ``p_hat`` row is a distribution."""
        return self.p_hat.sum(axis=-1) > 0


def new_statistics(n_states, n_actions, r_max=1.0):
    return Counts(n_states, n_actions), EmpiricalModel(n_states, n_actions, r_max)


def record(counts, model, s, a, r, s_next):
    """Record one transition; ``N`` is left untouched until the episode ends."""
    S, A = counts.n_states, counts.n_actions
    if not (0 <= s < S and 0 <= a < A and 0 <= s_next < S):
        raise IndexError(f"transition ({s}, {a}, {s_next}) out of range")
    if not 0.0 <= r <= model.r_max:
        raise ValueError(f"reward {r} outside [0, r_max]")
    counts.nu[s, a] += 1
    counts.t += 1
    counts._pending.append((s, a, s_next))
    n = model.n_samples[s, a] + 1
    delta = r - model.r_hat[s, a]
    model.r_hat[s, a] += delta / n
    model.r_m2[s, a] += delta * (r - model.r_hat[s, a])
    model.n_samples[s, a] = n


# ---------------------------------------------------------------------------
# bounds


def log_term(n_states, n_actions, t_k, delta):
    """``b = ln(2 S A t_k / delta)``."""
    if t_k < 1:
        raise ValueError("t_k must be at least 1")
    return float(np.log(2.0 * n_states * n_actions * t_k / delta))


def bernstein(var, n_plus, n_pm, b, scale=1.0, shrink=1.0):
    """Two-term empirical Bernstein width (vectorized)."""
    return shrink * (np.sqrt(C_SQRT * var * b / n_plus) + C_LIN * scale * b / n_pm)


def beta_r(counts, model, s, a, delta, shrink=1.0):
    """Reward confidence width of pair ``(s, a)`` at the current episode."""
    b = log_term(counts.n_states, counts.n_actions, counts.t_k, delta)
    return float(bernstein(model.r_var[s, a], counts.n_plus[s, a], counts.n_pm[s, a], b,
                           model.r_max, shrink))


def beta_p(counts, model, s, a, s_next, delta, shrink=1.0):
    """Transition confidence width of ``p(s_next | s, a)``."""
    b = log_term(counts.n_states, counts.n_actions, counts.t_k, delta)
    p = model.p_hat[s, a, s_next]
    return float(bernstein(p * (1 - p), counts.n_plus[s, a], counts.n_pm[s, a], b, 1.0, shrink))


def zeta_slack(counts, s, a, n_transient, delta, shrink=1.0):
    """Extra upper slack ``|S^T_k| * min(1, (49/3) b / N^±)`` for a truncated pair."""
    b = log_term(counts.n_states, counts.n_actions, counts.t_k, delta)
    if hasattr(n_transient, "__len__"):
        n_transient = len(n_transient)
    return float(n_transient * min(1.0, shrink * C_LIN * b / counts.n_pm[s, a]))


def exploration_mask(counts, t_k=None):
    """Pairs with ``N^± <= sqrt(t_k / (S A))`` (nominal S and A)."""
    t_k = counts.t_k if t_k is None else t_k
    return counts.n_pm <= np.sqrt(t_k / (counts.n_states * counts.n_actions))


# ---------------------------------------------------------------------------
# plausible sets


@dataclass(eq=False)
class PlausibleSet:
    """Rectangular reward intervals plus a transition uncertainty set per pair.

    Per-element widths are stored in factored form
    ``beta(s, a, s') = c_sqrt[s, a] * sqrt(p_hat (1 - p_hat)) + c_lin[s, a]``,
    which covers both the Bernstein sets and zero-width (exact) sets.
    ``p_hat`` is held by reference; rebuild the set after new data arrive.

    Attributes
    ----------
    kind : int
        ``BOX`` (per-element caps, greedy fill) or ``L1`` (OTP over an l1 ball).
    truncated : (S, A) bool
        Pairs whose successors are restricted to ``allowed``.
    allowed : (S,) bool
        States permitted as successors of truncated pairs (``S^C_k``).
    free : (S, A) bool
        Pairs with no data; their set is the whole simplex over the permitted
        successors.
    zeta : (S, A)
        Extra upper slack on permitted entries of truncated pairs (box kind).
    states : (S,) bool
        Planning state set ``S-bar``.
    """

    variant: str
    kind: int
    valid: np.ndarray
    r_lower: np.ndarray
    r_upper: np.ndarray
    p_hat: np.ndarray
    support: np.ndarray
    support_len: np.ndarray
    c_sqrt: np.ndarray
    c_lin: np.ndarray
    zeta: np.ndarray
    truncated: np.ndarray
    allowed: np.ndarray
    free: np.ndarray
    states: np.ndarray
    r_max: float = 1.0

    @property
    def n_states(self):
        return self.p_hat.shape[0]

    def beta_p(self, s, a):
        """Per-element widths of pair ``(s, a)`` over all successors."""
        p = self.p_hat[s, a]
        return self.c_sqrt[s, a] * np.sqrt(p * (1 - p)) + self.c_lin[s, a]

    def radius(self, s, a):
        """l1 radius ``sum_{s'} beta(s, a, s')``."""
        return float(self.beta_p(s, a).sum())

    def permitted(self, s, a):
        """Successors a plausible ``p(.|s, a)`` may charge."""
        perm = self.states.copy()
        if self.truncated[s, a]:
            perm &= self.allowed
        return perm

    def caps(self, s, a):
        """``(lower, upper)`` per-element caps; zero on forbidden entries."""
        perm = self.permitted(s, a)
        if self.free[s, a]:
            return np.zeros(self.n_states), perm.astype(float)
        p = self.p_hat[s, a]
        beta = self.beta_p(s, a)
        slack = self.zeta[s, a] if self.truncated[s, a] else 0.0
        lower = np.where(perm, np.maximum(0.0, p - beta), 0.0)
        upper = np.where(perm, np.minimum(1.0, p + beta + slack), 0.0)
        return lower, upper

    def contains(self, mdp, atol=1e-12):
        """Whether the rewards and transitions of ``mdp`` lie in the set."""
        R, P = mdp.rewards, mdp.transitions
        outside = (R < self.r_lower - atol) | (R > self.r_upper + atol)
        if np.any(outside & self.valid):
            return False
        S = self.n_states
        for s in range(S):
            for a in range(P.shape[1]):
                if not self.valid[s, a]:
                    continue
                perm = self.permitted(s, a)
                p = P[s, a]
                if np.any(p[~perm] > atol):
                    return False
                if self.free[s, a]:
                    continue
                if self.kind == L1:
                    if np.abs(p - self.p_hat[s, a]).sum() > self.radius(s, a) + atol:
                        return False
                else:
                    lower, upper = self.caps(s, a)
                    if np.any(p < lower - atol) or np.any(p > upper + atol):
                        return False
        return True


def _support_from_dense(p_hat):
    S, A, _ = p_hat.shape
    support = np.zeros((S, A, S), dtype=np.int64)
    support_len = np.zeros((S, A), dtype=np.int64)
    for s in range(S):
        for a in range(A):
            idx = np.flatnonzero(p_hat[s, a] > 0)
            support[s, a, :idx.size] = idx
            support_len[s, a] = idx.size
    return support, support_len


def plausible_set(counts, model, delta, variant="bernstein_per_element", shrink_r=1.0,
                  shrink_p=1.0, valid=None, current_state=None, truncate=None,
                  states=None):
    """Build the plausible set of the current episode.

    Parameters
    ----------
    variant : str
        ``bernstein_per_element`` (box caps), ``truncated`` (box caps with the
        forbidden support), ``l1_relaxed`` (l1 ball with the forbidden support),
        ``zeta_relaxed`` (box caps, forbidden support, zeta slack) or ``l1``
        (untruncated l1 ball).
    valid : (S, A) bool, optional
        Available actions; defaults to all.
    current_state : int, optional
        ``s_{t_k}``, added to ``S^C_k``.
    truncate : bool, optional
        Override whether pairs outside ``K_k`` lose the ``S^T_k`` successors.
    states : (S,) bool, optional
        Planning set ``S-bar``; defaults to all states.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    S, A = counts.n_states, counts.n_actions
    valid = np.ones((S, A), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    truncate = TRUNCATED_BY_DEFAULT[variant] if truncate is None else truncate
    b = log_term(S, A, counts.t_k, delta)
    n_plus, n_pm = counts.n_plus, counts.n_pm
    free = counts.N == 0

    width_r = bernstein(model.r_var, n_plus, n_pm, b, model.r_max, shrink_r)
    r_lower = np.clip(model.r_hat - width_r, 0.0, model.r_max)
    r_upper = np.clip(model.r_hat + width_r, 0.0, model.r_max)
    r_lower[free] = 0.0
    r_upper[free] = model.r_max

    c_sqrt = shrink_p * np.sqrt(C_SQRT * b / n_plus)
    c_lin = shrink_p * C_LIN * b / n_pm

    allowed = counts.visited_states.copy()
    if current_state is not None:
        allowed[current_state] = True
    under = exploration_mask(counts)
    truncated = (valid & ~under) if truncate else np.zeros((S, A), dtype=bool)
    zeta = np.zeros((S, A))
    if variant == "zeta_relaxed":
        n_t = int((~allowed).sum())
        zeta = n_t * np.minimum(1.0, c_lin)
    kind = L1 if variant in ("l1_relaxed", "l1") else BOX
    states = np.ones(S, dtype=bool) if states is None else np.asarray(states, dtype=bool)
    return PlausibleSet(variant, kind, valid, r_lower, r_upper, model.p_hat,
                        counts.support, counts.support_len, c_sqrt, c_lin, zeta,
                        truncated, allowed, free, states, model.r_max)


def exact_set(mdp, kind=BOX, states=None):
    """Zero-width set whose only member is ``mdp`` (rewards at their means)."""
    S, A = mdp.n_states, mdp.max_actions
    support, support_len = _support_from_dense(mdp.transitions)
    zeros = np.zeros((S, A))
    states = np.ones(S, dtype=bool) if states is None else np.asarray(states, dtype=bool)
    return PlausibleSet("exact", kind, mdp.valid_actions, mdp.rewards.copy(),
                        mdp.rewards.copy(), mdp.transitions, support, support_len,
                        zeros, zeros.copy(), zeros.copy(), np.zeros((S, A), dtype=bool),
                        np.ones(S, dtype=bool), np.zeros((S, A), dtype=bool), states,
                        mdp.r_max)


def set_from_estimates(p_hat, r_hat, c_sqrt, c_lin, kind=BOX, valid=None, truncated=None,
                       allowed=None, free=None, zeta=None, states=None, r_width=None,
                       r_max=1.0):
    """Plausible set from explicit estimates and width coefficients (tests, demos)."""
    p_hat = np.asarray(p_hat, dtype=float)
    S, A, _ = p_hat.shape

    def arr(x, default, dtype=float):
        if x is None:
            return np.full((S, A), default, dtype=dtype)
        return np.broadcast_to(np.asarray(x, dtype=dtype), (S, A)).copy()

    support, support_len = _support_from_dense(p_hat)
    r_hat = arr(r_hat, 0.0)
    width = arr(r_width, 0.0)
    free_ = arr(free, False, bool)
    rows = p_hat.sum(axis=-1)
    valid_ = arr(valid, True, bool)
    bad = valid_ & ~free_ & (np.abs(rows - 1.0) > 1e-9)
    if bad.any():
        raise Infeasible("p_hat rows of observed pairs must sum to 1")
    return PlausibleSet("custom", kind, valid_, np.clip(r_hat - width, 0, r_max),
                        np.where(free_, r_max, np.clip(r_hat + width, 0, r_max)), p_hat,
                        support, support_len, arr(c_sqrt, 0.0), arr(c_lin, 0.0),
                        arr(zeta, 0.0), arr(truncated, False, bool),
                        np.ones(S, dtype=bool) if allowed is None else np.asarray(allowed, bool),
                        free_, np.ones(S, dtype=bool) if states is None else np.asarray(states, bool),
                        r_max)
