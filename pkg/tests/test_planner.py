"""Planner tests: enumeration, selection, candidate generation, robustness."""

import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from splt import autodiff as ad
from splt.data import NormalizationStats, collect_toy_dataset
from splt.models import SpltConfig, SpltModel
from splt.planner import (
    CandidateTrajectory,
    Planner,
    enumerate_latents,
    select_from_matrix,
)

PLAN_CFG = SpltConfig(state_dim=4, action_dim=1, context=3, n_layers=1, n_heads=2,
                      embed_dim=8, c=2, n_w=2, n_pi=2, latent_width=4)


def identity_stats(state_dim, action_dim):
    return NormalizationStats(
        state_mean=np.zeros(state_dim), state_std=np.ones(state_dim),
        action_mean=np.zeros(action_dim), action_std=np.ones(action_dim),
        reward_mean=0.0, reward_std=1.0, return_mean=0.0, return_std=1.0)


def make_planner(mode="maxmin", horizon=2, cfg=PLAN_CFG, seed=0, **kw):
    model = SpltModel(cfg, np.random.default_rng(seed))
    return Planner(model, identity_stats(cfg.state_dim, cfg.action_dim),
                   horizon=horizon, mode=mode, **kw)


def random_history(cfg, n_steps, seed=1):
    rng = np.random.default_rng(seed)
    states = rng.normal(size=(n_steps + 1, cfg.state_dim))
    actions = rng.normal(size=(n_steps, cfg.action_dim))
    return states, actions


class TestEnumeration:
    def test_binary_one_dim(self):
        np.testing.assert_array_equal(enumerate_latents(2, 1), [[0], [1]])

    def test_binary_three_dims_lexicographic(self):
        codes = enumerate_latents(2, 3)
        assert codes.shape == (8, 3)
        expected = [[0, 0, 0], [0, 0, 1], [0, 1, 0], [0, 1, 1],
                    [1, 0, 0], [1, 0, 1], [1, 1, 0], [1, 1, 1]]
        np.testing.assert_array_equal(codes, expected)

    @given(st.integers(1, 4), st.integers(1, 5))
    def test_count_matches_power(self, c, n):
        codes = enumerate_latents(c, n)
        assert codes.shape == (c ** n, n)
        assert len({tuple(r) for r in codes}) == c ** n

    def test_cap_enforced_with_guidance(self):
        with pytest.raises(ValueError, match="cap"):
            enumerate_latents(2, 13)
        assert enumerate_latents(2, 13, cap=2**13).shape == (8192, 13)


class TestMatrixSelection:
    def test_bias_contrast_matrix(self):
        matrix = np.array([[10.0, -10.0], [6.0, 4.0]])
        assert select_from_matrix(matrix, "maxmin") == (1, 1)
        assert select_from_matrix(matrix, "maxmax") == (0, 0)

    def test_single_entry(self):
        m = np.array([[3.0]])
        assert select_from_matrix(m, "maxmin") == (0, 0)
        assert select_from_matrix(m, "maxmax") == (0, 0)

    def test_ties_break_to_lowest_index(self):
        m = np.array([[1.0, 1.0], [1.0, 1.0]])
        assert select_from_matrix(m, "maxmin") == (0, 0)
        assert select_from_matrix(m, "maxmax") == (0, 0)

    @settings(max_examples=300, deadline=None)
    @given(arrays(np.float64, (5, 7), elements=st.floats(-100, 100)))
    def test_matches_exhaustive_double_loop(self, matrix):
        # independent brute-force oracle
        best_i, best_j, best_val = 0, 0, -math.inf
        for i in range(matrix.shape[0]):
            worst_j, worst_val = 0, math.inf
            for j in range(matrix.shape[1]):
                if matrix[i, j] < worst_val:
                    worst_j, worst_val = j, matrix[i, j]
            if worst_val > best_val:
                best_i, best_j, best_val = i, worst_j, worst_val
        assert select_from_matrix(matrix, "maxmin") == (best_i, best_j)

        flat_i, flat_j, flat_val = 0, 0, -math.inf
        for i in range(matrix.shape[0]):
            for j in range(matrix.shape[1]):
                if matrix[i, j] > flat_val:
                    flat_i, flat_j, flat_val = i, j, matrix[i, j]
        assert select_from_matrix(matrix, "maxmax") == (flat_i, flat_j)

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, (4, 4),
                  elements=st.floats(-50, 50).map(lambda x: round(x, 3))),
           st.floats(-20, 20).map(lambda x: round(x, 3)))
    def test_value_properties(self, matrix, const):
        # entries on a 1e-3 grid: adding the constant cannot reorder or merge
        # distinct values, so the mathematical argmax invariance applies
        i_min, j_min = select_from_matrix(matrix, "maxmin")
        i_max, j_max = select_from_matrix(matrix, "maxmax")
        assert matrix[i_min].min() <= matrix[i_max, j_max]  # maxmin value <= maxmax value
        shifted = matrix + const
        assert select_from_matrix(shifted, "maxmin") == (i_min, j_min)
        assert select_from_matrix(shifted, "maxmax") == (i_max, j_max)

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (4, 3), elements=st.floats(-50, 50)))
    def test_strictly_dominated_rows_never_selected(self, matrix):
        i_star, _ = select_from_matrix(matrix, "maxmin")
        for other in range(matrix.shape[0]):
            if other != i_star and (matrix[other] > matrix[i_star]).all():
                pytest.fail(f"row {i_star} selected despite row {other} strictly dominating it")


def scalar_alternation_oracle(planner, states_raw, actions_raw, pi, wi):
    """Hand-written single-candidate re-implementation of the rollout loop."""
    cfg = planner.model.cfg
    stats = planner.stats
    states = stats.norm_states(np.asarray(states_raw, dtype=np.float64))
    actions = stats.norm_actions(np.asarray(actions_raw, dtype=np.float64).reshape(-1, cfg.action_dim))
    keep = min(len(states), planner.context + 1)
    states = list(states[len(states) - keep:].astype(cfg.np_dtype()))
    actions = list(actions[max(len(actions) - (keep - 1), 0):].astype(cfg.np_dtype()))
    zp = ad.Tensor(planner._zp_all[pi][None])
    zw = ad.Tensor(planner._zw_all[wi][None])

    pred_a, pred_s, pred_r = [], [], []
    terminal = None
    with ad.no_grad():
        for i in range(planner.horizon + 1):
            s_in = np.stack(states[-(cfg.context + 1):])[None]
            a_in = np.stack(actions[-(s_in.shape[1] - 1):])[None] if s_in.shape[1] > 1 else np.zeros((1, 0, cfg.action_dim))
            a_hat = planner.model.policy_decoder.predict(s_in, a_in, zp).data[0, -1]
            pred_a.append(a_hat)
            actions.append(a_hat)
            s_in2 = np.stack(states[-(cfg.context + 1):])[None]
            a_in2 = np.stack(actions[-s_in2.shape[1]:])[None]
            s_out, r_out, ret_out = planner.model.world_decoder.predict(s_in2, a_in2, zw)
            pred_r.append(float(r_out.data[0, -1]))
            terminal = float(ret_out.data[0, -1])
            if i < planner.horizon:
                pred_s.append(s_out.data[0, -1])
                states.append(s_out.data[0, -1])

    rewards = stats.denorm_rewards(np.array(pred_r))
    term = float(stats.denorm_returns(terminal))
    value = 0.0
    for i, r in enumerate(rewards):
        value += (planner.gamma ** i) * r
    value += (planner.gamma ** (planner.horizon + 1)) * term
    return (stats.denorm_actions(np.stack(pred_a)),
            stats.denorm_states(np.stack(pred_s)) if pred_s else np.zeros((0, cfg.state_dim)),
            rewards, term, value)


class TestCandidateGeneration:
    def test_matches_scalar_oracle_bitwise(self):
        for trial in range(6):
            planner = make_planner(horizon=2 + trial % 2, seed=100 + trial)
            states, actions = random_history(PLAN_CFG, n_steps=2 + trial % 3, seed=200 + trial)
            for pi, wi in [(0, 0), (1, 3), (3, 2)]:
                cand = planner.generate_candidate(states, actions, pi, wi)
                oa, os_, orw, oterm, oval = scalar_alternation_oracle(planner, states, actions, pi, wi)
                np.testing.assert_array_equal(cand.actions, oa)
                np.testing.assert_array_equal(cand.states, os_)
                np.testing.assert_array_equal(cand.rewards, orw)
                assert cand.terminal_return == oterm
                np.testing.assert_allclose(cand.value, oval, rtol=1e-12)

    def test_candidate_value_composes_from_fields(self):
        planner = make_planner(horizon=3)
        states, actions = random_history(PLAN_CFG, n_steps=3)
        cand = planner.generate_candidate(states, actions, 1, 2)
        recomposed = CandidateTrajectory.compose_value(cand.rewards, cand.terminal_return, planner.gamma)
        assert cand.value == float(recomposed)

    def test_deterministic_bitwise(self):
        planner = make_planner(horizon=2)
        states, actions = random_history(PLAN_CFG, n_steps=3, seed=4)
        c1 = planner.generate_candidate(states, actions, 2, 1)
        c2 = planner.generate_candidate(states, actions, 2, 1)
        np.testing.assert_array_equal(c1.actions, c2.actions)
        assert c1.value == c2.value

    def test_horizon_zero_single_round(self):
        planner = make_planner(horizon=0)
        states, actions = random_history(PLAN_CFG, n_steps=2, seed=5)
        cand = planner.generate_candidate(states, actions, 0, 0)
        assert cand.actions.shape == (1, PLAN_CFG.action_dim)
        assert cand.rewards.shape == (1,)
        assert cand.states.shape == (0, PLAN_CFG.state_dim)
        expected = cand.rewards[0] + planner.gamma * cand.terminal_return
        assert cand.value == pytest.approx(expected, rel=1e-12)

    def test_history_must_contain_a_state(self):
        planner = make_planner()
        with pytest.raises(ValueError, match="current state"):
            planner.generate_candidate(np.zeros((0, 4)), np.zeros((0, 1)), 0, 0)

    def test_mismatched_history_rejected(self):
        planner = make_planner()
        with pytest.raises(ValueError, match="actions"):
            planner.generate_candidate(np.zeros((3, 4)), np.zeros((3, 1)), 0, 0)


class TestSelectAction:
    def test_plan_is_pure_function(self):
        planner = make_planner(horizon=2)
        states, actions = random_history(PLAN_CFG, n_steps=3, seed=6)
        r1 = planner.select_action(states, actions)
        r2 = planner.select_action(states, actions)
        np.testing.assert_array_equal(r1.matrix, r2.matrix)
        np.testing.assert_array_equal(r1.action, r2.action)
        assert (r1.policy_index, r1.world_index) == (r2.policy_index, r2.world_index)

    def test_matrix_entries_match_individual_candidates(self):
        planner = make_planner(horizon=2, keep_candidates=True)
        states, actions = random_history(PLAN_CFG, n_steps=2, seed=7)
        res = planner.select_action(states, actions)
        assert res.matrix.shape == (4, 4)
        for pi in range(4):
            for wi in range(4):
                cand = planner.generate_candidate(states, actions, pi, wi)
                np.testing.assert_allclose(res.matrix[pi, wi], cand.value, rtol=1e-9)
        assert len(res.candidates) == 16

    def test_selection_consistent_with_matrix(self):
        for mode in ("maxmin", "maxmax"):
            planner = make_planner(mode=mode, horizon=1, seed=9)
            states, actions = random_history(PLAN_CFG, n_steps=3, seed=8)
            res = planner.select_action(states, actions)
            assert (res.policy_index, res.world_index) == select_from_matrix(res.matrix, mode)

    def test_first_action_comes_from_selected_candidate(self):
        planner = make_planner(horizon=2, seed=10)
        states, actions = random_history(PLAN_CFG, n_steps=3, seed=11)
        res = planner.select_action(states, actions)
        cand = planner.generate_candidate(states, actions, res.policy_index, res.world_index)
        np.testing.assert_allclose(res.action, cand.actions[0], rtol=1e-12)

    def test_non_finite_candidate_flagged_and_excluded(self):
        class Poisoned(Planner):
            def _world_step(self, states, actions, zw):
                s, r, ret = super()._world_step(states, actions, zw)
                if r.shape[0] > 3:
                    r = r.copy()
                    r[3] = np.nan
                return s, r, ret

        model = SpltModel(PLAN_CFG, np.random.default_rng(12))
        planner = Poisoned(model, identity_stats(4, 1), horizon=1, mode="maxmin")
        states, actions = random_history(PLAN_CFG, n_steps=2, seed=13)
        res = planner.select_action(states, actions)
        assert (0, 3) in res.non_finite
        assert res.matrix[0, 3] == -np.inf
        assert (res.policy_index, res.world_index) != (0, 3)

    def test_batched_planning_matches_single(self):
        planner = make_planner(horizon=2, seed=14)
        s1, a1 = random_history(PLAN_CFG, n_steps=3, seed=15)
        s2, a2 = random_history(PLAN_CFG, n_steps=3, seed=16)
        batched = planner.plan_batch([s1, s2], [a1, a2])
        single = [planner.select_action(s1, a1), planner.select_action(s2, a2)]
        for b, s in zip(batched, single):
            assert (b.policy_index, b.world_index) == (s.policy_index, s.world_index)
            np.testing.assert_allclose(b.matrix, s.matrix, rtol=1e-9)

    def test_wall_clock_full_toy_configuration(self):
        cfg = SpltConfig(state_dim=4, action_dim=1, context=5, n_layers=2, n_heads=8,
                         embed_dim=48, c=2, n_w=2, n_pi=3)
        model = SpltModel(cfg, np.random.default_rng(17))
        planner = Planner(model, identity_stats(4, 1), horizon=5, mode="maxmin")
        states, actions = np.random.default_rng(18).normal(size=(6, 4)), np.random.default_rng(19).normal(size=(5, 1))
        planner.select_action(states, actions)  # warm-up
        t0 = time.perf_counter()
        planner.select_action(states, actions)
        elapsed = time.perf_counter() - t0
        assert elapsed < 1.0, f"single plan took {elapsed:.3f}s"
