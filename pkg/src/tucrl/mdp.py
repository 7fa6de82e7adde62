"""Finite tabular MDPs and their exact analysis.

The :class:`Mdp` container stores a dense transition tensor of shape
``(S, A, S)`` where ``A`` is the largest number of actions available in any
state; action ``a`` is valid in state ``s`` iff ``a < n_actions[s]``.  Invalid
rows are all-zero and never read.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import breadth_first_order, connected_components
from scipy.sparse.linalg import spsolve

from .errors import MaxIterationsExceeded, NonUnichainPolicy

NOISE_KINDS = ("deterministic", "bernoulli", "uniform")
DETERMINISTIC, BERNOULLI, UNIFORM = 0, 1, 2

ROW_TOL = 1e-12
MIX_AFTER = 10**4
MIX_TAU = 0.99


def span(x):
    """Span seminorm ``max(x) - min(x)``."""
    x = np.asarray(x, dtype=float)
    return float(x.max() - x.min()) if x.size else 0.0


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with per-pair mean rewards and a reward noise model.

    Parameters
    ----------
    transitions : (S, A, S) array
        ``transitions[s, a, s']`` is p(s'|s,a).
    rewards : (S, A) array
        Mean rewards in ``[0, r_max]``.
    n_actions : (S,) int array
        Number of valid actions per state.
    noise_kind : (S, A) int array, optional
        0 deterministic, 1 bernoulli (reward in {0, r_max}), 2 uniform.
    noise_param : (S, A) array, optional
        Width of the uniform noise; ignored for the other kinds.
    """

    transitions: np.ndarray
    rewards: np.ndarray
    n_actions: np.ndarray
    noise_kind: np.ndarray = None
    noise_param: np.ndarray = None
    r_max: float = 1.0
    initial_state: int = 0
    name: str = ""
    labels: tuple = field(default=None)

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        R = np.array(self.rewards, dtype=float)
        n_act = np.array(self.n_actions, dtype=np.int64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {P.shape}")
        S, A, _ = P.shape
        if R.shape != (S, A):
            raise ValueError(f"rewards must have shape {(S, A)}, got {R.shape}")
        if n_act.shape != (S,) or n_act.min() < 1 or n_act.max() > A:
            raise ValueError("n_actions must hold values in [1, A] for every state")
        kind = (np.zeros((S, A), dtype=np.int64) if self.noise_kind is None
                else np.array(self.noise_kind, dtype=np.int64))
        param = (np.zeros((S, A)) if self.noise_param is None
                 else np.array(self.noise_param, dtype=float))
        if kind.shape != (S, A) or param.shape != (S, A):
            raise ValueError("noise arrays must have shape (S, A)")
        if self.r_max <= 0:
            raise ValueError("r_max must be positive")
        if not 0 <= self.initial_state < S:
            raise ValueError("initial_state out of range")

        valid = np.arange(A)[None, :] < n_act[:, None]
        # invalid actions carry nothing
        P[~valid] = 0.0
        R[~valid] = 0.0
        kind[~valid] = DETERMINISTIC
        param[~valid] = 0.0
        if np.any(P < 0) or np.any(P > 1):
            raise ValueError("transition probabilities must lie in [0, 1]")
        sums = P[valid].sum(axis=-1)
        if np.any(np.abs(sums - 1.0) > ROW_TOL):
            raise ValueError("every valid transition row must sum to 1")
        if np.any(R < 0) or np.any(R > self.r_max):
            raise ValueError("mean rewards must lie in [0, r_max]")
        if np.any((kind < 0) | (kind > 2)):
            raise ValueError("unknown noise kind")
        unif = valid & (kind == UNIFORM)
        half = param / 2.0
        if np.any(param[unif] < 0) or np.any(R[unif] - half[unif] < -1e-15) or \
                np.any(R[unif] + half[unif] > self.r_max + 1e-15):
            raise ValueError("uniform reward noise must stay inside [0, r_max]")

        for arr in (P, R, n_act, kind, param):
            arr.setflags(write=False)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "rewards", R)
        object.__setattr__(self, "n_actions", n_act)
        object.__setattr__(self, "noise_kind", kind)
        object.__setattr__(self, "noise_param", param)
        object.__setattr__(self, "r_max", float(self.r_max))
        object.__setattr__(self, "initial_state", int(self.initial_state))

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def max_actions(self):
        return self.transitions.shape[1]

    @property
    def valid_actions(self):
        """Boolean ``(S, A)`` mask of available actions."""
        A = self.max_actions
        return np.arange(A)[None, :] < self.n_actions[:, None]

    def support_graph(self):
        """Sparse adjacency of the directed support graph of p."""
        adj = (self.transitions > 0).any(axis=1)
        return sp.csr_matrix(adj.astype(np.int8))

    def policy_matrix(self, policy):
        policy = self._check_policy(policy)
        S = self.n_states
        return self.transitions[np.arange(S), policy], self.rewards[np.arange(S), policy]

    def _check_policy(self, policy):
        policy = np.asarray(policy, dtype=np.int64)
        if policy.shape != (self.n_states,):
            raise ValueError("policy must give one action per state")
        if np.any(policy < 0) or np.any(policy >= self.n_actions):
            raise ValueError("policy selects an unavailable action")
        return policy


@dataclass(frozen=True)
class GainBias:
    """Gain and bias of a policy or of an optimal policy.

    Entries outside the evaluated state set are NaN.
    """

    gain: np.ndarray
    bias: np.ndarray

    @property
    def span(self):
        h = self.bias[np.isfinite(self.bias)]
        return span(h)


@dataclass(frozen=True)
class Decomposition:
    """Split of the state space into a communicating part and its complement."""

    communicating: np.ndarray  # sorted state indices of S^C
    transient: np.ndarray      # sorted state indices of S^T
    diameter: float            # D, +inf when S^T is not empty
    diameter_c: float          # D^C
    gamma_c: int               # max support size of a pair in S^C

    @property
    def mask(self):
        m = np.zeros(len(self.communicating) + len(self.transient), dtype=bool)
        m[self.communicating] = True
        return m


# ---------------------------------------------------------------------------
# policy evaluation


def _stationary(P):
    """Stationary distribution of an irreducible chain."""
    n = P.shape[0]
    M = np.vstack([P.T - np.eye(n), np.ones(n)])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    mu = np.linalg.lstsq(M, rhs, rcond=None)[0]
    return mu


def limiting_matrix(P):
    """Cesaro limit ``P*`` of a finite stochastic matrix.

    Returns ``(P_star, classes)`` where ``classes`` lists the recurrent classes.
    """
    n = P.shape[0]
    graph = sp.csr_matrix(P > 0)
    n_comp, label = connected_components(graph, directed=True, connection="strong")
    classes = []
    recurrent = np.zeros(n, dtype=bool)
    for c in range(n_comp):
        members = np.flatnonzero(label == c)
        outside = np.ones(n, dtype=bool)
        outside[members] = False
        if not (P[np.ix_(members, np.flatnonzero(outside))] > 0).any():
            classes.append(members)
            recurrent[members] = True

    P_star = np.zeros((n, n))
    trans = np.flatnonzero(~recurrent)
    if trans.size:
        # absorption probabilities into each recurrent class
        Q = P[np.ix_(trans, trans)]
        fund = np.linalg.inv(np.eye(trans.size) - Q)
    for members in classes:
        mu = _stationary(P[np.ix_(members, members)])
        P_star[np.ix_(members, members)] = mu[None, :]
        if trans.size:
            absorb = fund @ P[np.ix_(trans, members)].sum(axis=1)
            P_star[np.ix_(trans, members)] = absorb[:, None] * mu[None, :]
    return P_star, classes


def _reachable(graph, start):
    order = breadth_first_order(graph, start, directed=True, return_predecessors=False)
    mask = np.zeros(graph.shape[0], dtype=bool)
    mask[order] = True
    return mask


def policy_gain_bias(mdp, policy):
    """Exact gain and bias of a stationary deterministic policy.

    Gain ``g = P* r`` and bias ``h = (I - P + P*)^{-1}(I - P*) r`` are computed
    from the Cesaro limit of the induced chain, so state-dependent gains are
    handled too.  The bias is shifted so that its smallest entry is 0.

    Raises
    ------
    NonUnichainPolicy
        If two or more recurrent classes are reachable from the initial state.
    """
    P, r = mdp.policy_matrix(policy)
    P_star, classes = limiting_matrix(P)
    reach = _reachable(sp.csr_matrix(P > 0), mdp.initial_state)
    n_reached = sum(bool(reach[c].any()) for c in classes)
    if n_reached >= 2:
        raise NonUnichainPolicy(
            f"{n_reached} recurrent classes reachable from state {mdp.initial_state}")
    n = P.shape[0]
    I = np.eye(n)
    g = P_star @ r
    h = np.linalg.solve(I - P + P_star, (I - P_star) @ r)
    return GainBias(gain=g, bias=h - h.min())


def enumerate_policies(mdp, states=None):
    """Iterate over all deterministic policies (small MDPs only)."""
    import itertools

    S = mdp.n_states
    choices = [range(int(mdp.n_actions[s])) for s in range(S)]
    for combo in itertools.product(*choices):
        yield np.array(combo, dtype=np.int64)


# ---------------------------------------------------------------------------
# optimal control


def _closed_actions(mdp, states):
    """Mask of valid actions whose support stays inside ``states``."""
    inside = np.zeros(mdp.n_states, dtype=bool)
    inside[states] = True
    leak = mdp.transitions[:, :, ~inside].sum(axis=-1) > 0
    return mdp.valid_actions & ~leak


def _greedy(q, ok, tol=1e-12):
    """Lowest-index argmax of ``q`` over allowed entries, row-wise."""
    q = np.where(ok, q, -np.inf)
    best = q.max(axis=1, keepdims=True)
    scale = max(1.0, float(np.abs(best[np.isfinite(best)]).max(initial=0.0)))
    return np.argmax(q >= best - tol * scale, axis=1)


def optimal_gain_bias(mdp, eps=None, max_iter=10**6, states=None):
    """Optimal gain and bias by relative value iteration with span stopping.

    The iteration runs on the communicating set of the initial state (or on
    ``states`` if given) using only actions whose support stays inside it.
    If the span criterion has not been met after ``10**4`` sweeps the operator
    switches to the aperiodicity transform ``tau P + (1 - tau) I`` with
    ``tau = 0.99``, which leaves gains unchanged and scales biases by ``tau``.

    Returns
    -------
    (GainBias, policy)
        Gain and bias are NaN outside the evaluated set; the policy there is 0.
    """
    if eps is None:
        eps = 1e-8 * mdp.r_max
    if states is None:
        states = decompose(mdp, mdp.initial_state, diameters=False).communicating
    states = np.asarray(states)
    ok = _closed_actions(mdp, states)[states]
    if not ok.any(axis=1).all():
        raise ValueError("some state has no action staying inside the evaluated set")
    P = mdp.transitions[np.ix_(states, np.arange(mdp.max_actions), states)]
    R = mdp.rewards[states]
    R = np.where(ok, R, -np.inf)

    v = np.zeros(len(states))
    tau = 1.0
    for n in range(1, max_iter + 1):
        if n == MIX_AFTER + 1:
            tau = MIX_TAU
        q = R + tau * (P @ v)
        v_new = q.max(axis=1) + (1.0 - tau) * v
        diff = v_new - v
        if diff.max() - diff.min() <= eps:
            break
        v = v_new - v_new.min()
    else:
        raise MaxIterationsExceeded(f"relative value iteration did not converge in {max_iter} sweeps")

    g = 0.5 * (diff.max() + diff.min())
    policy_c = _greedy(R + tau * (P @ v), ok)
    bias = tau * v  # undo the aperiodicity scaling (no-op when tau = 1)
    S = mdp.n_states
    gain = np.full(S, np.nan)
    h = np.full(S, np.nan)
    gain[states] = g
    h[states] = bias - bias.min()
    policy = np.zeros(S, dtype=np.int64)
    policy[states] = policy_c
    return GainBias(gain=gain, bias=h), policy


def optimal_gain(mdp, **kwargs):
    """Scalar optimal gain on the communicating set of the initial state."""
    gb, _ = optimal_gain_bias(mdp, **kwargs)
    return float(np.nanmax(gb.gain))


# ---------------------------------------------------------------------------
# shortest paths


class _PathSolver:
    """Sparse (S*A, S) view of an MDP reused across shortest-path targets."""

    def __init__(self, mdp):
        self.S, self.A = mdp.n_states, mdp.max_actions
        self.valid = mdp.valid_actions.ravel()
        self.P = sp.csr_matrix(mdp.transitions.reshape(self.S * self.A, self.S))
        self.owner = np.repeat(np.arange(self.S), self.A)
        # one entry per positive transition: flattened pair, successor, probability
        coo = self.P.tocoo()
        self.e_row, self.e_col, self.e_p = coo.row, coo.col, coo.data

    def _proper_region(self, target):
        """States from which ``target`` is hit almost surely under some policy,
        the mask of (flattened) actions keeping the process inside them, and
        the breadth-first predecessors toward ``target`` along those actions."""
        S = self.S
        rows, cols = self.e_row, self.e_col
        base = self.valid & (self.owner != target)
        alive = np.ones(S, dtype=bool)
        while True:
            leak = np.zeros(S * self.A, dtype=bool)
            leak[rows[~alive[cols]]] = True
            ok = base & ~leak & alive[self.owner]
            keep = ok[rows]
            # reversed graph: successor -> owner of an allowed action
            rev = sp.csr_matrix((np.ones(int(keep.sum()), dtype=np.int8),
                                 (cols[keep], self.owner[rows[keep]])), shape=(S, S))
            order, pred = breadth_first_order(rev, target, directed=True,
                                              return_predecessors=True)
            reach = np.zeros(S, dtype=bool)
            reach[order] = True
            if np.array_equal(reach, alive):
                return alive, ok, pred
            alive = reach

    def solve(self, target):
        S, A, P = self.S, self.A, self.P
        alive, ok, pred = self._proper_region(target)
        tau = np.full(S, np.inf)
        tau[target] = 0.0
        others = np.flatnonzero(alive & (np.arange(S) != target))
        if others.size == 0:
            return tau

        # initial proper policy: each state takes its first allowed action with
        # an edge to its breadth-first predecessor (one layer closer)
        rows, cols = self.e_row, self.e_col
        owner = self.owner[rows]
        toward = ok[rows] & (cols == pred[owner]) & alive[owner]
        policy = np.full(S, A, dtype=np.int64)
        np.minimum.at(policy, owner[toward], rows[toward] % A)

        n = others.size
        compact = np.full(S, -1, dtype=np.int64)
        compact[others] = np.arange(n)
        diag = np.arange(n)
        ok2 = ok.reshape(S, A)[others]
        rows_all = others[:, None] * A + np.arange(A)[None, :]
        for _ in range(10 * S * A + 10):
            sub = P[others * A + policy[others]].tocoo()
            j = compact[sub.col]
            inside = j >= 0
            M = sp.csc_matrix((np.concatenate([np.ones(n), -sub.data[inside]]),
                               (np.concatenate([diag, sub.row[inside]]),
                                np.concatenate([diag, j[inside]]))), shape=(n, n))
            t = np.atleast_1d(spsolve(M, np.ones(n)))
            full = tau.copy()
            full[others] = t
            q = 1.0 + (P @ np.where(np.isfinite(full), full, 0.0))[rows_all]
            q = np.where(ok2, q, np.inf)
            best = q.min(axis=1)
            cur = q[diag, policy[others]]
            slack = 1e-12 * np.maximum(1.0, np.abs(cur))
            improve = best < cur - slack
            if not improve.any():
                tau[others] = t
                return tau
            choice = np.argmax(q <= best[:, None] + slack[:, None], axis=1)
            policy[others[improve]] = choice[improve]
        raise MaxIterationsExceeded("policy iteration for shortest paths did not terminate")


def shortest_path(mdp, target):
    """Minimal expected hitting times of ``target`` from every state.

    Policy iteration with exact sparse linear solves, started from a proper
    policy found by backward breadth-first search.  States from which the
    target cannot be reached almost surely get ``+inf``.
    """
    return _PathSolver(mdp).solve(int(target))


def diameter(mdp, states=None):
    """Largest minimal expected travel time between distinct states.

    With ``states`` given, both endpoints range over that subset (paths may
    use any state).  Returns ``+inf`` if some pair is unreachable.
    """
    S = mdp.n_states
    states = np.arange(S) if states is None else np.asarray(states)
    if states.size < 2:
        return 0.0
    solver = _PathSolver(mdp)
    worst = 0.0
    for target in states:
        tau = solver.solve(int(target))
        worst = max(worst, float(tau[states].max()))
        if np.isinf(worst):
            return worst
    return worst


def decompose(mdp, s1=None, diameters=True):
    """Communicating set of ``s1`` and the transient complement.

    ``S^C`` holds the states reachable from ``s1`` that can also reach it back
    in the support graph.  ``D`` is finite iff ``S^T`` is empty, in which case
    it equals ``D^C``.
    """
    s1 = mdp.initial_state if s1 is None else int(s1)
    graph = mdp.support_graph()
    fwd = _reachable(graph, s1)
    bwd = _reachable(graph.T.tocsr(), s1)
    comm = fwd & bwd
    comm[s1] = True
    C = np.flatnonzero(comm)
    T = np.flatnonzero(~comm)
    sub = mdp.transitions[C]
    supp = (sub > 0).sum(axis=-1)[mdp.valid_actions[C]]
    gamma = int(supp.max())
    if diameters:
        d_c = diameter(mdp, C)
        d = d_c if T.size == 0 else np.inf
    else:
        d_c = d = np.nan
    return Decomposition(communicating=C, transient=T, diameter=d, diameter_c=d_c,
                         gamma_c=gamma)


# ---------------------------------------------------------------------------
# text serialization


def to_text(mdp):
    """Serialize to the plain-text MDP format (exact float round trip)."""
    S = mdp.n_states
    lines = [f"states {S}",
             "actions " + " ".join(str(int(n)) for n in mdp.n_actions),
             f"r_max {mdp.r_max!r}",
             f"initial_state {mdp.initial_state}"]
    for s in range(S):
        for a in range(int(mdp.n_actions[s])):
            probs = " ".join(repr(float(p)) for p in mdp.transitions[s, a])
            kind = NOISE_KINDS[mdp.noise_kind[s, a]]
            lines.append(f"{s} {a} {float(mdp.rewards[s, a])!r} {kind} "
                         f"{float(mdp.noise_param[s, a])!r} {probs}")
    return "\n".join(lines) + "\n"


def from_text(text, name=""):
    """Parse the plain-text MDP format; blank lines and ``#`` comments are skipped."""
    header = {}
    rows = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head in ("states", "actions", "r_max", "initial_state"):
            header[head] = rest
        else:
            rows.append(line.split())
    S = int(header["states"][0])
    n_actions = np.array([int(x) for x in header["actions"]], dtype=np.int64)
    if n_actions.size != S:
        raise ValueError("action count list must have one entry per state")
    A = int(n_actions.max())
    P = np.zeros((S, A, S))
    R = np.zeros((S, A))
    kind = np.zeros((S, A), dtype=np.int64)
    param = np.zeros((S, A))
    seen = np.zeros((S, A), dtype=bool)
    for fields_ in rows:
        if len(fields_) != 5 + S:
            raise ValueError(f"malformed transition line: {' '.join(fields_)}")
        s, a = int(fields_[0]), int(fields_[1])
        R[s, a] = float(fields_[2])
        kind[s, a] = NOISE_KINDS.index(fields_[3])
        param[s, a] = float(fields_[4])
        P[s, a] = [float(x) for x in fields_[5:]]
        seen[s, a] = True
    valid = np.arange(A)[None, :] < n_actions[:, None]
    if not np.array_equal(seen, valid):
        raise ValueError("every valid (s, a) pair needs exactly one line")
    return Mdp(P, R, n_actions, kind, param,
               r_max=float(header.get("r_max", ["1.0"])[0]),
               initial_state=int(header.get("initial_state", ["0"])[0]), name=name)
