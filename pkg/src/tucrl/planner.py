"""Optimistic planning on extended MDPs.

The functions :func:`otp` and :func:`inner_max_bernstein` are straightforward
numpy versions of the two inner maximizations.  The operator, TEVI and the
extended shortest paths run on the compiled kernels in ``_kernels``.
"""

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import breadth_first_order
import scipy.sparse as sp

from . import _kernels as K
from .confidence import L1
from .errors import Infeasible, MaxIterationsExceeded
from .mdp import MIX_AFTER, MIX_TAU

SUM_TOL = 1e-9


def _desc_order(v, states):
    """States sorted by decreasing value, ties broken by lower index."""
    states = np.asarray(states)
    return states[np.argsort(-v[states], kind="stable")]


def otp(p_hat, beta, v, support=None):
    """Maximize ``p'v`` over the simplex on ``support`` within l1 distance ``beta`` of ``p_hat``.

    The state with the largest value receives up to ``beta / 2`` extra mass,
    which is then removed from the lowest-valued states.

    Parameters
    ----------
    p_hat : (S,) array
        Reference distribution; must put all its mass on ``support``.
    beta : float
        l1 radius, non-negative.
    v : (S,) array
        Values.
    support : (S,) bool or index array, optional
        Permitted successors ``I``; all states by default.
    """
    p_hat = np.asarray(p_hat, dtype=float)
    v = np.asarray(v, dtype=float)
    S = p_hat.size
    if support is None:
        idx = np.arange(S)
    else:
        support = np.asarray(support)
        idx = np.flatnonzero(support) if support.dtype == bool else np.sort(support)
    if beta < 0:
        raise ValueError("beta must be non-negative")
    if abs(p_hat[idx].sum() - 1.0) > SUM_TOL:
        raise ValueError("p_hat must sum to 1 on the support")
    order = _desc_order(v, idx)
    p = np.zeros(S)
    p[idx] = p_hat[idx]
    top = order[0]
    p[top] = min(1.0, p_hat[top] + beta / 2.0)
    j = len(order) - 1
    while p[idx].sum() > 1.0 and j > 0:
        s = order[j]
        p[s] = max(0.0, 1.0 - (p[idx].sum() - p[s]))
        j -= 1
    return p


def inner_max_bernstein(lower, upper, v, forbidden=None):
    """Maximize ``p'v`` over the simplex intersected with the box ``[lower, upper]``.

    Starts from the lower caps and pours the remaining mass into states by
    decreasing value, each up to its upper cap.  Forbidden entries stay at 0.

    Raises
    ------
    Infeasible
        If the caps admit no probability vector.
    """
    lower = np.array(lower, dtype=float)
    upper = np.array(upper, dtype=float)
    v = np.asarray(v, dtype=float)
    if forbidden is not None:
        forbidden = np.asarray(forbidden, dtype=bool)
        if np.any(lower[forbidden] > 0):
            raise Infeasible("a forbidden entry has a positive lower cap")
        upper[forbidden] = 0.0
    if np.any(lower > upper + 1e-15):
        raise Infeasible("lower cap exceeds upper cap")
    if lower.sum() > 1.0 + SUM_TOL or upper.sum() < 1.0 - SUM_TOL:
        raise Infeasible("cap sums exclude 1")
    p = lower.copy()
    residual = 1.0 - p.sum()
    for s in _desc_order(v, np.arange(v.size)):
        if residual <= 0:
            break
        take = min(residual, upper[s] - lower[s])
        p[s] += take
        residual -= take
    return p


# ---------------------------------------------------------------------------
# operators on plausible sets


@dataclass(frozen=True)
class PlanResult:
    """Output of TEVI; ``values`` and ``policy`` are NaN / -1 outside ``states``."""

    gain: float
    values: np.ndarray
    policy: np.ndarray
    n_iter: int
    converged: bool
    states: np.ndarray
    mixed: bool = False

    @property
    def span(self):
        h = self.values[self.states]
        return float(h.max() - h.min()) if h.size else 0.0


def _arrays(pset):
    return (pset.p_hat, pset.support, pset.support_len, pset.c_sqrt, pset.c_lin,
            pset.zeta, pset.truncated, pset.allowed, pset.free, pset.kind)


def _n_actions(pset):
    return pset.valid.sum(axis=1).astype(np.int64)


def inner_max(pset, s, a, v):
    """Optimistic transition vector and value ``max p'v`` of pair ``(s, a)``."""
    v = np.asarray(v, dtype=float)
    S = v.size
    order = np.empty(S, dtype=np.int64)
    rank = np.full(S, -1, dtype=np.int64)
    n = K._sort_states(v, pset.states, order, rank)
    out = np.zeros(S)
    value = K.pair_value(s, a, v, order, n, rank, pset.states, *_arrays(pset), out)
    if np.isnan(value):
        raise Infeasible(f"empty transition set for pair ({s}, {a})")
    return out, float(value)


def bellman_apply(v, pset):
    """Optimistic Bellman backup on the planning states of ``pset``.

    Returns ``(v_new, actions)``; entries outside the planning set are NaN / -1.
    """
    v = np.asarray(v, dtype=float)
    S = v.size
    v_in = np.where(pset.states, v, 0.0)
    v_new = np.full(S, np.nan)
    policy = np.full(S, -1, dtype=np.int64)
    ok = K.sweep(v_in, pset.states, pset.r_upper, _n_actions(pset), 1.0, *_arrays(pset),
                 v_new, policy, np.empty(S, dtype=np.int64), np.full(S, -1, dtype=np.int64))
    if not ok:
        raise Infeasible("some pair has an empty transition set")
    return v_new, policy


def tevi(pset, eps, v0=None, states=None, max_iter=10**6, mix_after=MIX_AFTER,
         mix_tau=MIX_TAU):
    """Truncated extended value iteration.

    Iterates the optimistic operator on ``states`` (default: the planning set
    of ``pset``) until the span of consecutive differences is at most ``eps``.
    If that has not happened after ``mix_after`` sweeps, the operator is mixed
    with a self-loop of weight ``1 - mix_tau`` to break periodicity.

    Returns
    -------
    PlanResult
        ``gain`` is the midpoint of the largest and smallest last differences,
        ``values`` is the iterate the greedy ``policy`` was computed from.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    S = pset.n_states
    states = pset.states if states is None else np.asarray(states, dtype=bool)
    v0 = np.zeros(S) if v0 is None else np.where(states, np.asarray(v0, dtype=float), 0.0)
    status, n_iter, g, v, policy, tau = K.tevi_loop(
        v0, states, pset.r_upper, _n_actions(pset), *_arrays(pset), float(eps),
        int(max_iter), int(mix_after), float(mix_tau))
    if status == 2:
        raise Infeasible("some pair has an empty transition set")
    if status == 1:
        raise MaxIterationsExceeded(f"TEVI did not meet the span criterion in {max_iter} sweeps")
    values = np.where(states, tau * v, np.nan)
    values = values - np.nanmin(values)
    policy = np.where(states, policy, -1)
    return PlanResult(float(g), values, policy, int(n_iter), True, states.copy(), tau < 1.0)


def _optimistic_edges(pset):
    """Adjacency of successors that some plausible transition can reach."""
    S = pset.n_states
    adj = np.zeros((S, S), dtype=bool)
    for s in np.flatnonzero(pset.states):
        for a in np.flatnonzero(pset.valid[s]):
            perm = pset.permitted(s, a)
            if pset.free[s, a]:
                reach = perm
            elif pset.kind == L1:
                reach = perm if pset.radius(s, a) > 0 else perm & (pset.p_hat[s, a] > 0)
            else:
                reach = pset.caps(s, a)[1] > 0
            adj[s] |= reach
    return adj


def extended_shortest_path(pset, target, tol=1e-12, max_iter=10**6):
    """Optimistic expected hitting times of ``target``.

    Solves ``tau(s) = 1 + min_{a, p} p' tau`` with ``tau(target) = 0``, the
    minimum ranging over the plausible transitions.  States from which no
    plausible transition path leads to the target get ``+inf``.
    """
    S = pset.n_states
    adj = _optimistic_edges(pset)
    back = breadth_first_order(sp.csr_matrix(adj.T.astype(np.int8)), target, directed=True,
                               return_predecessors=False)
    reach = np.zeros(S, dtype=bool)
    reach[back] = True
    fixed = ~reach
    fixed[target] = True
    status, _, u = K.ssp_loop(int(target), pset.states, _n_actions(pset), *_arrays(pset),
                              fixed, float(tol), int(max_iter))
    if status == 2:
        raise Infeasible("some pair has an empty transition set")
    if status == 1:
        raise MaxIterationsExceeded("extended shortest path did not converge")
    tau = 0.0 - u
    tau[~reach | (tau > 1e11)] = np.inf
    return tau
