import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tucrl import (Mdp, NonUnichainPolicy, MaxIterationsExceeded, decompose, diameter,
                   from_text, make_bias_toy, make_random_weakly_communicating,
                   make_three_state, make_two_state_family, optimal_gain, optimal_gain_bias,
                   policy_gain_bias, shortest_path, span, to_text)

from conftest import cycle_mdp, random_mdp


def cesaro_gain(P, r):
    """Gain ``P* r`` from powers of the lazy chain (independent of the library)."""
    M = 0.5 * (np.eye(len(r)) + P)
    for _ in range(60):
        M = M @ M
        M /= M.sum(axis=1, keepdims=True)
    return M @ r


def enumerated_optimum(mdp):
    """Best gain from the initial state over all deterministic policies."""
    best = -np.inf
    S = mdp.n_states
    for pol in itertools.product(*(range(n) for n in mdp.n_actions)):
        P, r = mdp.policy_matrix(np.array(pol))
        best = max(best, cesaro_gain(P, r)[mdp.initial_state])
    return best


def first_passage(mdp, policy, target):
    """Expected hitting times of ``target`` under a fixed policy by a linear solve."""
    P, _ = mdp.policy_matrix(policy)
    S = mdp.n_states
    keep = np.arange(S) != target
    Q = P[np.ix_(keep, keep)]
    tau = np.zeros(S)
    tau[keep] = np.linalg.solve(np.eye(S - 1) - Q, np.ones(S - 1))
    return tau


class TestMdpValidation:
    def test_rows_must_sum_to_one(self):
        P = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
        with pytest.raises(ValueError):
            Mdp(P, np.zeros((2, 1)), [1, 1])

    def test_reward_outside_range(self):
        P = np.array([[[1.0]]])
        with pytest.raises(ValueError):
            Mdp(P, np.array([[1.5]]), [1])

    def test_uniform_noise_must_fit(self):
        P = np.array([[[1.0]]])
        with pytest.raises(ValueError):
            Mdp(P, np.array([[0.05]]), [1], noise_kind=[[2]], noise_param=[[0.2]])

    def test_arrays_are_read_only(self):
        mdp = cycle_mdp()
        with pytest.raises(ValueError):
            mdp.transitions[0, 0, 0] = 1.0

    def test_span(self):
        assert span([3.0, -1.0, 2.0]) == 4.0
        assert span([]) == 0.0


class TestPolicyGainBias:
    def test_two_cycle(self):
        gb = policy_gain_bias(cycle_mdp(), [0, 0])
        assert np.array_equal(gb.gain, [0.5, 0.5])
        np.testing.assert_allclose(gb.bias, [0.0, 0.5], atol=1e-12)

    def test_two_state_family_policy_b(self):
        gb = policy_gain_bias(make_two_state_family(0.3), [0, 0])
        np.testing.assert_allclose(gb.gain, 1.0, atol=1e-12)

    @pytest.mark.parametrize("theta", [0.1, 0.25, 0.5])
    def test_bias_toy_span(self, theta):
        gb = policy_gain_bias(make_bias_toy(theta), [0, 0])
        assert gb.span == pytest.approx(1 / (2 * theta), abs=1e-9)
        np.testing.assert_allclose(gb.gain, 0.5, atol=1e-12)

    def test_bias_is_min_normalized(self, rng):
        mdp = random_mdp(rng, 4, 2, density=1.0)
        gb = policy_gain_bias(mdp, [0, 1, 0, 1])
        assert gb.bias.min() == 0.0

    def test_evaluation_equations(self, rng):
        for _ in range(20):
            mdp = random_mdp(rng, 5, 2, density=1.0)
            pol = rng.integers(2, size=5)
            gb = policy_gain_bias(mdp, pol)
            P, r = mdp.policy_matrix(pol)
            resid = gb.gain + gb.bias - r - P @ gb.bias
            assert np.abs(resid).max() < 1e-9

    def test_matches_cesaro_oracle(self, rng):
        for _ in range(20):
            mdp = random_mdp(rng, 4, 3, density=1.0)
            pol = rng.integers(3, size=4)
            P, r = mdp.policy_matrix(pol)
            np.testing.assert_allclose(policy_gain_bias(mdp, pol).gain, cesaro_gain(P, r),
                                       atol=1e-10)

    def test_two_reachable_classes_raise(self):
        P = np.zeros((3, 1, 3))
        P[0, 0] = [0.0, 0.5, 0.5]
        P[1, 0, 1] = P[2, 0, 2] = 1.0
        mdp = Mdp(P, np.zeros((3, 1)), [1, 1, 1])
        with pytest.raises(NonUnichainPolicy):
            policy_gain_bias(mdp, [0, 0, 0])

    def test_state_dependent_gain_off_the_start(self):
        # theta = 0: both states absorbing, only x is reachable from the start
        gb = policy_gain_bias(make_bias_toy(0.0), [0, 0])
        np.testing.assert_allclose(gb.gain, [0.0, 1.0])

    def test_invalid_policy(self):
        with pytest.raises(ValueError):
            policy_gain_bias(make_three_state(0.0), [0, 1, 0])


class TestOptimalGainBias:
    def test_two_state_family(self):
        assert abs(optimal_gain(make_two_state_family(0.3)) - 1.0) <= 1e-8
        assert abs(optimal_gain(make_two_state_family(0.0)) - 0.5) <= 1e-8

    def test_optimal_action_in_x(self):
        _, pol = optimal_gain_bias(make_two_state_family(0.5))
        assert pol[0] == 0
        _, pol = optimal_gain_bias(make_two_state_family(0.0))
        assert pol[0] == 1

    def test_one_state(self):
        mdp = Mdp(np.ones((1, 1, 1)), np.array([[0.7]]), [1])
        assert optimal_gain(mdp) == pytest.approx(0.7, abs=1e-12)

    def test_three_state_against_enumeration(self):
        mdp = make_three_state(0.005)
        assert optimal_gain(mdp) == pytest.approx(enumerated_optimum(mdp), abs=1e-6)

    def test_three_state_restricts_to_communicating_set(self):
        gb, pol = optimal_gain_bias(make_three_state(0.0))
        assert np.isnan(gb.gain[1]) and np.isnan(gb.bias[1])
        assert gb.gain[0] == pytest.approx(gb.gain[2])

    def test_random_instances_against_enumeration(self):
        for seed in range(60):
            rng = np.random.default_rng(seed)
            S, A = int(rng.integers(1, 5)), int(rng.integers(1, 4))
            mdp = make_random_weakly_communicating(S, A, 0, seed=seed)
            assert optimal_gain(mdp) == pytest.approx(enumerated_optimum(mdp), abs=1e-6)

    def test_greedy_policy_attains_gain(self, rng):
        for seed in range(10):
            mdp = make_random_weakly_communicating(4, 3, 0, seed=seed)
            gb, pol = optimal_gain_bias(mdp)
            P, r = mdp.policy_matrix(pol)
            assert cesaro_gain(P, r)[mdp.initial_state] == pytest.approx(gb.gain[0], abs=1e-6)

    def test_periodic_chain_needs_mixing(self):
        gb, _ = optimal_gain_bias(cycle_mdp())
        np.testing.assert_allclose(gb.gain, 0.5, atol=1e-8)

    def test_iteration_cap(self):
        with pytest.raises(MaxIterationsExceeded):
            optimal_gain_bias(make_random_weakly_communicating(4, 2, seed=3), eps=1e-15,
                              max_iter=3)

    def test_optimal_span_below_diameter(self):
        for seed in range(20):
            mdp = make_random_weakly_communicating(5, 2, 1, seed=seed)
            dec = decompose(mdp)
            gb, _ = optimal_gain_bias(mdp)
            assert gb.span <= mdp.r_max * dec.diameter_c + 1e-6


class TestShortestPath:
    def test_two_cycle(self):
        mdp = cycle_mdp()
        np.testing.assert_allclose(shortest_path(mdp, 0), [0.0, 1.0])
        np.testing.assert_allclose(shortest_path(mdp, 1), [1.0, 0.0])

    def test_two_state_family(self):
        tau = shortest_path(make_two_state_family(0.1), 1)
        assert tau[0] == pytest.approx(10.0, abs=1e-9)

    def test_unreachable_is_infinite(self):
        tau = shortest_path(make_two_state_family(0.0), 1)
        assert np.isinf(tau[0]) and tau[1] == 0.0

    def test_against_linear_solve_of_argmin_policy(self):
        for seed in range(20):
            rng = np.random.default_rng(seed)
            mdp = random_mdp(rng, 5, 3, density=0.5)
            for target in range(5):
                tau = shortest_path(mdp, target)
                if not np.all(np.isfinite(tau)):
                    continue
                q = 1.0 + mdp.transitions @ tau
                pol = np.argmin(q, axis=1)
                oracle = first_passage(mdp, pol, target)
                np.testing.assert_allclose(tau, oracle, atol=1e-9)
                others = np.arange(5) != target
                np.testing.assert_allclose(tau[others], q.min(axis=1)[others], atol=1e-9)

    def test_mass_toward_target_never_hurts(self):
        for seed in range(30):
            rng = np.random.default_rng(seed)
            mdp = random_mdp(rng, 5, 2, density=0.6)
            target = int(rng.integers(5))
            tau = shortest_path(mdp, target)
            P = mdp.transitions.copy()
            s, a = int(rng.integers(5)), int(rng.integers(2))
            w = float(rng.random())
            P[s, a] *= 1 - w
            P[s, a, target] += w
            tau2 = shortest_path(Mdp(P, mdp.rewards, mdp.n_actions), target)
            finite = np.isfinite(tau)
            assert np.all(tau2[finite] <= tau[finite] + 1e-9)


class TestDecompose:
    def test_two_state_family_without_link(self):
        dec = decompose(make_two_state_family(0.0), 0)
        assert list(dec.communicating) == [0] and list(dec.transient) == [1]
        assert dec.diameter == np.inf

    @pytest.mark.parametrize("eps", [0.1, 0.5])
    def test_two_state_diameter(self, eps):
        assert decompose(make_two_state_family(eps)).diameter == pytest.approx(1 / eps, abs=1e-6)

    def test_two_state_diameter_eps_one(self):
        assert decompose(make_two_state_family(1.0)).diameter == pytest.approx(1.0)

    def test_uniform_three_states(self):
        mdp = Mdp(np.full((3, 1, 3), 1 / 3), np.zeros((3, 1)), [1, 1, 1])
        dec = decompose(mdp)
        assert dec.transient.size == 0 and dec.gamma_c == 3

    def test_partition_and_start(self):
        for seed in range(20):
            mdp = make_random_weakly_communicating(6, 2, 2, seed=seed)
            dec = decompose(mdp)
            assert mdp.initial_state in dec.communicating
            both = np.concatenate([dec.communicating, dec.transient])
            assert sorted(both) == list(range(6))
            assert dec.transient.size == 2
            assert np.isfinite(dec.diameter_c)

    def test_idempotent(self):
        mdp = make_random_weakly_communicating(6, 2, 2, seed=5)
        first = decompose(mdp)
        second = decompose(mdp)
        assert np.array_equal(first.communicating, second.communicating)
        assert first.diameter_c == second.diameter_c

    def test_diameter_is_max_pairwise_path(self):
        mdp = make_random_weakly_communicating(5, 2, 0, seed=11)
        taus = np.array([shortest_path(mdp, t) for t in range(5)])
        assert decompose(mdp).diameter == pytest.approx(taus.max(), abs=1e-9)
        assert diameter(mdp) == pytest.approx(taus.max(), abs=1e-9)


class TestTextFormat:
    def test_round_trip_is_exact(self):
        for mdp in (make_three_state(0.005), make_random_weakly_communicating(5, 3, 1, seed=2)):
            back = from_text(to_text(mdp))
            assert np.array_equal(back.transitions, mdp.transitions)
            assert np.array_equal(back.rewards, mdp.rewards)
            assert np.array_equal(back.noise_kind, mdp.noise_kind)
            assert np.array_equal(back.noise_param, mdp.noise_param)
            assert np.array_equal(back.n_actions, mdp.n_actions)
            assert back.initial_state == mdp.initial_state

    def test_decimal_inputs(self):
        text = ("states 2\nactions 1 2\nr_max 1.0\ninitial_state 0\n"
                "0 0 0.123456789012 deterministic 0.0 0.3 0.7\n"
                "1 0 0.5 uniform 0.2 1.0 0.0\n"
                "1 1 0.25 bernoulli 0.0 0.1 0.9\n")
        mdp = from_text(text)
        assert mdp.rewards[0, 0] == 0.123456789012
        assert to_text(mdp) == text

    def test_missing_pair_rejected(self):
        with pytest.raises(ValueError):
            from_text("states 1\nactions 2\n0 0 0.5 deterministic 0.0 1.0\n")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), S=st.integers(2, 5), A=st.integers(1, 3),
       n_t=st.integers(0, 2))
def test_generator_partition_is_recovered(seed, S, A, n_t):
    n_t = min(n_t, S - 1)
    mdp = make_random_weakly_communicating(S, A, n_t, seed=seed)
    dec = decompose(mdp, diameters=False)
    assert dec.transient.size == n_t
