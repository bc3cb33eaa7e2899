"""Test-time search over enumerated latent codes.

For every (policy code i, world code j) pair the two decoders alternate
autoregressively for h+1 rounds: predict the next action from the sequence
ending on a state, then the next state / reward / discounted return from the
sequence ending on that action.  The return estimate of a candidate composes
the h+1 predicted rewards with the final bootstrapped return,

    R_hat = sum_{i=0..h} gamma^i * r_hat_{t+i}  +  gamma^(h+1) * R_hat_{t+h+1},

in denormalized units.  Selection is max over policy codes of the min (or,
for the optimism ablation, the max) over world codes; ties break toward the
lowest index.  Everything is deterministic: decoders emit means, candidates
are independent and evaluated as one batch, and decoder inputs are cropped to
the trained context length with positions rebased to zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import NormalizationStats
from .models import SpltModel, enumerate_codes_onehot

LATENT_ENUMERATION_CAP = 4096


def enumerate_latents(c: int, n: int, cap: int = LATENT_ENUMERATION_CAP) -> np.ndarray:
    """All c**n codes as an (c**n, n) int array in lexicographic digit order."""
    if c < 1 or n < 1:
        raise ValueError("need c >= 1 and n >= 1")
    total = c ** n
    if total > cap:
        raise ValueError(
            f"{c}**{n} = {total} codes exceeds the enumeration cap {cap}; "
            "reduce the latent dimensionality or raise the cap explicitly")
    codes = np.stack(np.meshgrid(*[np.arange(c)] * n, indexing="ij"), axis=-1)
    return codes.reshape(total, n)


def select_from_matrix(matrix: np.ndarray, mode: str) -> tuple[int, int]:
    """(i*, j*) under max-min or max-max; ties break to the lowest index."""
    if mode == "maxmin":
        row_mins = matrix.min(axis=1)
        i = int(np.argmax(row_mins))
        j = int(np.argmin(matrix[i]))
        return i, j
    if mode == "maxmax":
        flat = int(np.argmax(matrix))
        return flat // matrix.shape[1], flat % matrix.shape[1]
    raise ValueError(f"unknown planner mode {mode!r}")


@dataclass
class CandidateTrajectory:
    """One deterministic rollout for a fixed (policy code, world code) pair.

    Arrays are in raw (denormalized) units.  ``value`` always equals the
    discounted composition of ``rewards`` and ``terminal_return``.
    """

    policy_index: int
    world_index: int
    actions: np.ndarray        # (h+1, action_dim)
    states: np.ndarray         # (h, state_dim) predicted s_{t+1..t+h}
    rewards: np.ndarray        # (h+1,) predicted r_{t..t+h}
    terminal_return: float     # predicted R_{t+h+1}
    value: float

    @staticmethod
    def compose_value(rewards: np.ndarray, terminal_return, gamma: float):
        h1 = rewards.shape[-1]
        weights = gamma ** np.arange(h1)
        return (rewards * weights).sum(axis=-1) + gamma ** h1 * terminal_return


@dataclass
class PlanResult:
    policy_index: int
    world_index: int
    action: np.ndarray                  # first action of the selected candidate, raw units
    matrix: np.ndarray                  # (c**n_pi, c**n_w) denormalized return estimates
    non_finite: list = field(default_factory=list)
    candidates: list | None = None


class Planner:
    """Enumerates latent pairs, rolls candidates in one batch, and selects."""

    def __init__(self, model: SpltModel, stats: NormalizationStats, horizon: int = 5,
                 context: int | None = None, mode: str = "maxmin",
                 keep_candidates: bool = False):
        if horizon < 0:
            raise ValueError("horizon must be >= 0")
        if mode not in ("maxmin", "maxmax"):
            raise ValueError(f"unknown planner mode {mode!r}")
        cfg = model.cfg
        self.model = model
        self.stats = stats
        self.gamma = cfg.gamma
        self.horizon = horizon
        self.context = cfg.context if context is None else min(context, cfg.context)
        self.mode = mode
        self.keep_candidates = keep_candidates
        self.policy_codes = enumerate_latents(cfg.c, cfg.n_pi)
        self.world_codes = enumerate_latents(cfg.c, cfg.n_w)
        dtype = cfg.np_dtype()
        self._zp_all = enumerate_codes_onehot(self.policy_codes, cfg.c, dtype)
        self._zw_all = enumerate_codes_onehot(self.world_codes, cfg.c, dtype)

    # -- decoder queries (normalized space, context-cropped) ----------------

    def _policy_step(self, states, actions, zp):
        keep = min(states.shape[1], self.model.cfg.context + 1)
        s = states[:, states.shape[1] - keep:]
        a = actions[:, max(actions.shape[1] - (keep - 1), 0):]
        preds = self.model.policy_decoder.predict(s, a, ad.Tensor(zp))
        return preds.data[:, -1]

    def _world_step(self, states, actions, zw):
        keep = min(states.shape[1], self.model.cfg.context + 1)
        s = states[:, states.shape[1] - keep:]
        a = actions[:, actions.shape[1] - keep:]
        s_pred, r_pred, ret_pred = self.model.world_decoder.predict(s, a, ad.Tensor(zw))
        return s_pred.data[:, -1], r_pred.data[:, -1], ret_pred.data[:, -1]

    def _roll(self, states, actions, zp, zw):
        """Alternate decoder predictions for h+1 rounds (normalized inputs).

        Returns predicted actions (N, h+1, A), states (N, h, S), rewards
        (N, h+1) and terminal returns (N,), still in normalized units.
        """
        h = self.horizon
        n = states.shape[0]
        act_out, state_out, reward_out = [], [], []
        terminal = None
        with ad.no_grad():
            for i in range(h + 1):
                a_next = self._policy_step(states, actions, zp)
                act_out.append(a_next)
                actions = np.concatenate([actions, a_next[:, None]], axis=1)
                s_next, r, ret = self._world_step(states, actions, zw)
                reward_out.append(r)
                terminal = ret
                if i < h:
                    state_out.append(s_next)
                    states = np.concatenate([states, s_next[:, None]], axis=1)
        actions_pred = np.stack(act_out, axis=1)
        states_pred = np.stack(state_out, axis=1) if state_out else np.zeros((n, 0, states.shape[2]))
        rewards_pred = np.stack(reward_out, axis=1)
        return actions_pred, states_pred, rewards_pred, terminal

    # -- public surface ------------------------------------------------------

    def generate_candidate(self, history_states, history_actions,
                           policy_index: int, world_index: int) -> CandidateTrajectory:
        """Roll a single candidate for one latent pair (deterministic)."""
        states, actions = self._prepare_history(history_states, history_actions)
        zp = self._zp_all[policy_index][None]
        zw = self._zw_all[world_index][None]
        a, s, r, term = self._roll(states[None], actions[None], zp, zw)
        rewards = self.stats.denorm_rewards(r[0])
        terminal = float(self.stats.denorm_returns(term[0]))
        value = float(CandidateTrajectory.compose_value(rewards, terminal, self.gamma))
        return CandidateTrajectory(
            policy_index=policy_index, world_index=world_index,
            actions=self.stats.denorm_actions(a[0]),
            states=self.stats.denorm_states(s[0]),
            rewards=rewards, terminal_return=terminal, value=value)

    def select_action(self, history_states, history_actions) -> PlanResult:
        return self.plan_batch([history_states], [history_actions])[0]

    def plan_batch(self, histories_states: list, histories_actions: list) -> list[PlanResult]:
        """Plan for many histories of equal length in one decoder batch."""
        e = len(histories_states)
        prepared = [self._prepare_history(s, a) for s, a in zip(histories_states, histories_actions)]
        ts = prepared[0][0].shape[0]
        if any(p[0].shape[0] != ts for p in prepared):
            raise ValueError("batched planning requires equal-length histories")
        p_count, w_count = len(self._zp_all), len(self._zw_all)
        per_ep = p_count * w_count

        states = np.repeat(np.stack([p[0] for p in prepared]), per_ep, axis=0)
        actions = np.repeat(np.stack([p[1] for p in prepared]), per_ep, axis=0)
        zp = np.tile(np.repeat(self._zp_all, w_count, axis=0), (e, 1, 1))
        zw = np.tile(self._zw_all, (e * p_count, 1, 1))

        a_pred, s_pred, r_pred, term = self._roll(states, actions, zp, zw)
        rewards = self.stats.denorm_rewards(r_pred)
        terminals = self.stats.denorm_returns(term)
        values = CandidateTrajectory.compose_value(rewards, terminals, self.gamma)

        results = []
        for ei in range(e):
            block = slice(ei * per_ep, (ei + 1) * per_ep)
            matrix = values[block].reshape(p_count, w_count).copy()
            bad = ~np.isfinite(matrix)
            flagged = [(int(i), int(j)) for i, j in zip(*np.nonzero(bad))]
            if flagged:
                matrix[bad] = -np.inf
            i_star, j_star = select_from_matrix(matrix, self.mode)
            first = self.stats.denorm_actions(a_pred[block][i_star * w_count + j_star, 0])
            candidates = None
            if self.keep_candidates:
                candidates = []
                for pi in range(p_count):
                    for wj in range(w_count):
                        row = block.start + pi * w_count + wj
                        rw = rewards[row]
                        tr = float(terminals[row])
                        candidates.append(CandidateTrajectory(
                            policy_index=pi, world_index=wj,
                            actions=self.stats.denorm_actions(a_pred[row]),
                            states=self.stats.denorm_states(s_pred[row]),
                            rewards=rw, terminal_return=tr,
                            value=float(CandidateTrajectory.compose_value(rw, tr, self.gamma))))
            results.append(PlanResult(policy_index=i_star, world_index=j_star, action=first,
                                      matrix=matrix, non_finite=flagged, candidates=candidates))
        return results

    def _prepare_history(self, history_states, history_actions):
        states = np.asarray(history_states, dtype=np.float64)
        actions = np.asarray(history_actions, dtype=np.float64)
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("history must contain at least the current state")
        if actions.ndim == 1:
            actions = actions.reshape(0, self.model.cfg.action_dim)
        if actions.shape[0] != states.shape[0] - 1:
            raise ValueError(f"history needs len(states)-1 actions, got {actions.shape[0]} for {states.shape[0]} states")
        keep = min(states.shape[0], self.context + 1)
        states = states[states.shape[0] - keep:]
        actions = actions[max(actions.shape[0] - (keep - 1), 0):]
        dtype = self.model.cfg.np_dtype()
        return (self.stats.norm_states(states).astype(dtype),
                self.stats.norm_actions(actions).astype(dtype))
