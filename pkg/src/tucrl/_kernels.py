"""Compiled inner loops of the planner and the simulator.

Plain-numpy reference versions live in :mod:`tucrl.planner`; the tests check
the two against each other.
"""

import numpy as np
from numba import njit

BOX, L1 = 0, 1
MASS_TOL = 1e-9


@njit(cache=True)
def pair_value(s, a, v, order, n_order, rank, in_bar, p_hat, support, support_len,
               c_sqrt, c_lin, zeta, truncated, allowed, free, kind, out):
    """max p'v over the transition set of (s, a); optionally writes p into ``out``.

    ``order[:n_order]`` lists the planning states by decreasing ``v`` (ties by
    index) and ``rank`` is its inverse.  Returns NaN when the set is empty.
    """
    write = out.shape[0] > 0
    if write:
        out[:] = 0.0
    trunc = truncated[s, a]

    # top permitted successor
    top = -1
    for i in range(n_order):
        x = order[i]
        if trunc and not allowed[x]:
            continue
        top = x
        break
    if top < 0:
        return np.nan
    if free[s, a]:
        if write:
            out[top] = 1.0
        return v[top]

    k = support_len[s, a]
    row = p_hat[s, a]
    # every observed successor must be permitted
    for j in range(k):
        x = support[s, a, j]
        if row[x] > 0.0 and (not in_bar[x] or (trunc and not allowed[x])):
            if row[x] > MASS_TOL:
                return np.nan

    cs = c_sqrt[s, a]
    cl = c_lin[s, a]
    if kind == L1:
        radius = cl * row.shape[0]
        for j in range(k):
            p = row[support[s, a, j]]
            radius += cs * np.sqrt(p * (1.0 - p))
        value = 0.0
        for j in range(k):
            x = support[s, a, j]
            value += row[x] * v[x]
            if write:
                out[x] = row[x]
        raised = min(1.0, row[top] + 0.5 * radius)
        excess = raised - row[top]
        value += excess * v[top]
        if write:
            out[top] = raised
        if excess <= 0.0:
            return value
        # take the excess back from the lowest-valued successors
        idx = np.empty(k, dtype=np.int64)
        m = 0
        for j in range(k):
            x = support[s, a, j]
            if x != top and row[x] > 0.0:
                idx[m] = x
                m += 1
        for i in range(1, m):
            x = idx[i]
            j = i - 1
            while j >= 0 and rank[idx[j]] < rank[x]:
                idx[j + 1] = idx[j]
                j -= 1
            idx[j + 1] = x
        for i in range(m):
            x = idx[i]
            d = min(excess, row[x])
            value -= d * v[x]
            excess -= d
            if write:
                out[x] = row[x] - d
            if excess <= 0.0:
                break
        return value

    # box caps: start from the lower caps and pour the rest by decreasing v
    slack = zeta[s, a] if trunc else 0.0
    value = 0.0
    low_sum = 0.0
    for j in range(k):
        x = support[s, a, j]
        p = row[x]
        lo = p - (cs * np.sqrt(p * (1.0 - p)) + cl)
        if lo > 0.0:
            low_sum += lo
            value += lo * v[x]
            if write:
                out[x] = lo
    residual = 1.0 - low_sum
    for i in range(n_order):
        if residual <= 0.0:
            break
        x = order[i]
        if trunc and not allowed[x]:
            continue
        p = row[x]
        beta = cs * np.sqrt(p * (1.0 - p)) + cl
        lo = max(0.0, p - beta)
        up = min(1.0, p + beta + slack)
        take = min(residual, up - lo)
        if take > 0.0:
            value += take * v[x]
            residual -= take
            if write:
                out[x] += take
    if residual > MASS_TOL:
        return np.nan
    return value


@njit(cache=True)
def _sort_states(v, in_bar, order, rank):
    idx = np.flatnonzero(in_bar)
    perm = np.argsort(-v[idx], kind="mergesort")
    n = idx.shape[0]
    for i in range(n):
        order[i] = idx[perm[i]]
        rank[idx[perm[i]]] = i
    return n


@njit(cache=True)
def sweep(v, in_bar, rewards, n_actions, tau, p_hat, support, support_len, c_sqrt,
          c_lin, zeta, truncated, allowed, free, kind, v_new, policy, order, rank):
    """One application of the (optionally mixed) optimistic Bellman operator.

    Returns False if some inner set is empty.
    """
    n_order = _sort_states(v, in_bar, order, rank)
    empty = np.empty(0)
    S = v.shape[0]
    for s in range(S):
        if not in_bar[s]:
            continue
        best = -np.inf
        best_a = -1
        for a in range(n_actions[s]):
            inner = pair_value(s, a, v, order, n_order, rank, in_bar, p_hat, support,
                               support_len, c_sqrt, c_lin, zeta, truncated, allowed, free,
                               kind, empty)
            if np.isnan(inner):
                return False
            q = rewards[s, a] + tau * inner
            if q > best:
                best = q
                best_a = a
        v_new[s] = best + (1.0 - tau) * v[s]
        policy[s] = best_a
    return True


@njit(cache=True)
def tevi_loop(v0, in_bar, rewards, n_actions, p_hat, support, support_len, c_sqrt, c_lin,
              zeta, truncated, allowed, free, kind, eps, max_iter, mix_after, mix_tau):
    """Truncated extended value iteration with span stopping.

    Returns ``(status, n_iter, g, v_n, policy, tau)``; status 0 converged,
    1 iteration cap, 2 empty inner set.
    """
    S = v0.shape[0]
    v = v0.copy()
    v_new = np.zeros(S)
    policy = np.full(S, -1, dtype=np.int64)
    order = np.empty(S, dtype=np.int64)
    rank = np.full(S, -1, dtype=np.int64)
    tau = 1.0
    g = np.nan
    for n in range(1, max_iter + 1):
        if n == mix_after + 1:
            tau = mix_tau
        ok = sweep(v, in_bar, rewards, n_actions, tau, p_hat, support, support_len,
                   c_sqrt, c_lin, zeta, truncated, allowed, free, kind, v_new, policy,
                   order, rank)
        if not ok:
            return 2, n, g, v, policy, tau
        hi = -np.inf
        lo = np.inf
        low_v = np.inf
        for s in range(S):
            if in_bar[s]:
                d = v_new[s] - v[s]
                hi = max(hi, d)
                lo = min(lo, d)
                low_v = min(low_v, v_new[s])
        if hi - lo <= eps:
            g = 0.5 * (hi + lo)
            return 0, n, g, v, policy, tau
        for s in range(S):
            if in_bar[s]:
                v[s] = v_new[s] - low_v
    return 1, max_iter, g, v, policy, tau


@njit(cache=True)
def ssp_loop(target, in_bar, n_actions, p_hat, support, support_len, c_sqrt, c_lin,
             zeta, truncated, allowed, free, kind, fixed, tol, max_iter):
    """Value iteration for the optimistic hitting-time equation ``u = -1 + max p'u``.

    ``fixed`` marks states held at their initial value (target and states that
    cannot reach it).  Returns ``(status, n_iter, u)``.
    """
    S = in_bar.shape[0]
    u = np.where(fixed, 0.0, -1.0)
    for s in range(S):
        if fixed[s] and s != target:
            u[s] = -1e12
    u[target] = 0.0
    order = np.empty(S, dtype=np.int64)
    rank = np.full(S, -1, dtype=np.int64)
    empty = np.empty(0)
    u_new = u.copy()
    for n in range(1, max_iter + 1):
        n_order = _sort_states(u, in_bar, order, rank)
        change = 0.0
        for s in range(S):
            if fixed[s] or not in_bar[s]:
                continue
            best = -np.inf
            for a in range(n_actions[s]):
                inner = pair_value(s, a, u, order, n_order, rank, in_bar, p_hat, support,
                                   support_len, c_sqrt, c_lin, zeta, truncated, allowed,
                                   free, kind, empty)
                if np.isnan(inner):
                    return 2, n, u
                best = max(best, inner)
            u_new[s] = -1.0 + best
            change = max(change, abs(u_new[s] - u[s]))
        u[:] = u_new
        if change <= tol:
            return 0, n, u
    return 1, max_iter, u


# ---------------------------------------------------------------------------
# simulation

DOUBLING, NEW_STATE, HORIZON = 0, 1, 2


@njit(cache=True)
def play_episode(t, T, s, policy, stop_on_new, N, nu, visited, cum_p, r_mean, noise_kind,
                 noise_param, r_max, u_trans, u_rew, n_samples, r_hat, r_m2, tr_s, tr_a,
                 tr_r, tr_sn, tr_npm, tr_cum, reward_sum):
    """Run the greedy policy from step ``t`` (0-based) until a stopping rule fires.

    The first step always executes.  Later steps stop the episode before
    acting when the current state had no visits before the episode
    (``stop_on_new``) or when the chosen pair already has ``nu = max(1, N)``.
    Returns ``(t, s, reason, reward_sum)``.
    """
    first = True
    S = N.shape[0]
    while t < T:
        a = policy[s]
        if not first:
            if stop_on_new and not visited[s]:
                return t, s, NEW_STATE, reward_sum
            if nu[s, a] >= max(1, N[s, a]):
                return t, s, DOUBLING, reward_sum
        first = False
        kind = noise_kind[s, a]
        mean = r_mean[s, a]
        if kind == 0:
            r = mean
        elif kind == 1:
            r = r_max if u_rew[t] < mean / r_max else 0.0
        else:
            r = mean + (u_rew[t] - 0.5) * noise_param[s, a]
        s_next = np.searchsorted(cum_p[s, a], u_trans[t], side="right")
        if s_next >= S:
            s_next = S - 1
        n = n_samples[s, a] + 1
        d = r - r_hat[s, a]
        r_hat[s, a] += d / n
        r_m2[s, a] += d * (r - r_hat[s, a])
        n_samples[s, a] = n
        tr_s[t] = s
        tr_a[t] = a
        tr_r[t] = r
        tr_sn[t] = s_next
        tr_npm[t] = max(1, N[s, a] - 1)
        reward_sum += r
        tr_cum[t] = reward_sum
        nu[s, a] += 1
        t += 1
        s = s_next
    return t, s, HORIZON, reward_sum


@njit(cache=True)
def merge_episode(tr_s, tr_a, tr_sn, lo, hi, N, nu, N_sas, support, support_len, p_hat,
                  visited):
    """Fold steps ``lo:hi`` of the trace into the counts and refresh ``p_hat``."""
    for i in range(lo, hi):
        s = tr_s[i]
        a = tr_a[i]
        x = tr_sn[i]
        if N_sas[s, a, x] == 0:
            support[s, a, support_len[s, a]] = x
            support_len[s, a] += 1
        N_sas[s, a, x] += 1
    S, A = N.shape
    for s in range(S):
        for a in range(A):
            if nu[s, a] > 0:
                N[s, a] += nu[s, a]
                nu[s, a] = 0
                visited[s] = True
                for j in range(support_len[s, a]):
                    x = support[s, a, j]
                    p_hat[s, a, x] = N_sas[s, a, x] / N[s, a]


@njit(cache=True)
def true_in_box(r_true, p_true, true_support, true_len, valid, r_lower, r_upper, p_hat,
                support, support_len, c_sqrt, c_lin, free, tol):
    """Whether the true MDP lies in the untruncated per-element Bernstein set."""
    S, A = valid.shape
    for s in range(S):
        for a in range(A):
            if not valid[s, a] or free[s, a]:
                continue
            if r_true[s, a] < r_lower[s, a] - tol or r_true[s, a] > r_upper[s, a] + tol:
                return False
            cs = c_sqrt[s, a]
            cl = c_lin[s, a]
            for j in range(true_len[s, a]):
                x = true_support[s, a, j]
                p = p_hat[s, a, x]
                if abs(p_true[s, a, x] - p) > cs * np.sqrt(p * (1.0 - p)) + cl + tol:
                    return False
            for j in range(support_len[s, a]):
                x = support[s, a, j]
                if p_true[s, a, x] == 0.0:
                    p = p_hat[s, a, x]
                    if p > cs * np.sqrt(p * (1.0 - p)) + cl + tol:
                        return False
    return True
