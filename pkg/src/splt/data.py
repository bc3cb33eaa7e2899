"""Offline dataset creation, normalization, returns, and window sampling.

Conventions (fixed here, used everywhere else):
  - An episode with T transitions stores T+1 states s_0..s_T and length-(T+1)
    action/reward arrays where index T is a zero placeholder (the trajectory
    formally ends on an action, but episodes end on a state).
  - r_t is the reward received on the transition out of (s_t, a_t); terminal
    rewards of the one-step MDP are credited at that single transition.
  - R_t = r_t + gamma * R_{t+1}, with R beyond the last state defined as 0.
  - Windows of K+1 timesteps never cross episodes; positions past the episode
    end are zero-padded and masked out.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .container import load_container, save_container
from .envs import (
    FiveStateMDP,
    ToyDrivingConfig,
    ToyDrivingEnv,
    mdp_action_onehot,
    mdp_state_onehot,
)
from .utils import rng_stream

SCHEMA_VERSION = 1
STD_FLOOR = 1e-6
DEFAULT_GAMMA = 0.99


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Per-timestep discounted return via the backward recursion."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must be in [0, 1), got {gamma}")
    rewards = np.asarray(rewards, dtype=np.float64)
    returns = np.zeros_like(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


# ---------------------------------------------------------------------------
# IDM controller
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdmParams:
    target_speed: float = 10.0
    headway: float = 1.5
    min_gap: float = 2.0
    max_accel: float = 1.0
    comfort_decel: float = 1.0
    exponent: float = 4.0

    @property
    def controller_id(self) -> str:
        return f"idm(T={self.headway:.3f},s0={self.min_gap:.3f})"


def idm_acceleration(gap: float, v: float, dv: float, params: IdmParams,
                     bound: float = 1.0) -> float:
    """Car-following acceleration from gap, own speed and closing speed.

    dv is the closing speed (own speed minus leader speed).  Non-positive
    gaps are treated as an emergency: full braking.  Output is clipped to
    the environment's action bounds.
    """
    if gap <= 0.0:
        return -bound
    desired_gap = params.min_gap + v * params.headway + v * dv / (2.0 * math.sqrt(params.max_accel * params.comfort_decel))
    accel = params.max_accel * (1.0 - (v / params.target_speed) ** params.exponent - (desired_gap / gap) ** 2)
    return min(max(accel, -bound), bound)


@dataclass(frozen=True)
class IdmDistribution:
    """Aggressiveness spread for data collection, from safe to crashing."""

    headway_low: float = 0.5
    headway_high: float = 2.0
    min_gap_low: float = 1.0
    min_gap_high: float = 4.0
    target_speed: float = 10.0
    comfort_decel: float = 1.0
    exponent: float = 4.0

    def sample(self, rng: np.random.Generator) -> IdmParams:
        return IdmParams(
            target_speed=self.target_speed,
            headway=float(rng.uniform(self.headway_low, self.headway_high)),
            min_gap=float(rng.uniform(self.min_gap_low, self.min_gap_high)),
            max_accel=1.0,
            comfort_decel=self.comfort_decel,
            exponent=self.exponent,
        )


# ---------------------------------------------------------------------------
# Episodes, datasets, normalization
# ---------------------------------------------------------------------------


@dataclass
class EpisodeRecord:
    """One environment episode; arrays all have length T+1 (see module notes)."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    done_reason: str
    controller_id: str
    seed: int

    @property
    def n_transitions(self) -> int:
        return len(self.states) - 1

    @property
    def episode_return(self) -> float:
        return float(self.rewards.sum())

    def validate(self, gamma: float) -> None:
        n = len(self.states)
        assert self.actions.shape[0] == n and self.rewards.shape[0] == n and self.returns.shape[0] == n
        assert np.isfinite(self.rewards).all()
        np.testing.assert_allclose(self.returns, discounted_returns(self.rewards, gamma), atol=1e-9)


@dataclass
class NormalizationStats:
    state_mean: np.ndarray
    state_std: np.ndarray
    action_mean: np.ndarray
    action_std: np.ndarray
    reward_mean: float
    reward_std: float
    return_mean: float
    return_std: float
    floored: list = field(default_factory=list)

    @classmethod
    def compute(cls, episodes: list[EpisodeRecord]) -> "NormalizationStats":
        """Exact moments over the stored data.

        States and returns include the terminal timestep; actions and rewards
        exclude the zero placeholders at index T.
        """
        states = np.concatenate([ep.states for ep in episodes])
        actions = np.concatenate([ep.actions[:-1] for ep in episodes])
        rewards = np.concatenate([ep.rewards[:-1] for ep in episodes])
        returns = np.concatenate([ep.returns for ep in episodes])
        floored = []

        def _std(arr, label):
            s = arr.std(axis=0)
            low = s < STD_FLOOR
            if np.any(low):
                floored.append(label)
                s = np.where(low, STD_FLOOR, s)
            return s

        stats = cls(
            state_mean=states.mean(axis=0), state_std=_std(states, "states"),
            action_mean=actions.mean(axis=0), action_std=_std(actions, "actions"),
            reward_mean=float(rewards.mean()), reward_std=float(_std(rewards[:, None], "rewards")[0]),
            return_mean=float(returns.mean()), return_std=float(_std(returns[:, None], "returns")[0]),
        )
        stats.floored = floored
        return stats

    def norm_states(self, x):
        return (x - self.state_mean) / self.state_std

    def denorm_states(self, x):
        return x * self.state_std + self.state_mean

    def norm_actions(self, x):
        return (x - self.action_mean) / self.action_std

    def denorm_actions(self, x):
        return x * self.action_std + self.action_mean

    def norm_rewards(self, x):
        return (x - self.reward_mean) / self.reward_std

    def denorm_rewards(self, x):
        return x * self.reward_std + self.reward_mean

    def norm_returns(self, x):
        return (x - self.return_mean) / self.return_std

    def denorm_returns(self, x):
        return x * self.return_std + self.return_mean

    def to_meta(self) -> dict:
        return {
            "state_mean": self.state_mean.tolist(), "state_std": self.state_std.tolist(),
            "action_mean": self.action_mean.tolist(), "action_std": self.action_std.tolist(),
            "reward_mean": self.reward_mean, "reward_std": self.reward_std,
            "return_mean": self.return_mean, "return_std": self.return_std,
            "floored": list(self.floored),
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "NormalizationStats":
        return cls(
            state_mean=np.array(meta["state_mean"]), state_std=np.array(meta["state_std"]),
            action_mean=np.array(meta["action_mean"]), action_std=np.array(meta["action_std"]),
            reward_mean=meta["reward_mean"], reward_std=meta["reward_std"],
            return_mean=meta["return_mean"], return_std=meta["return_std"],
            floored=list(meta.get("floored", [])),
        )


@dataclass
class Dataset:
    episodes: list[EpisodeRecord]
    stats: NormalizationStats
    gamma: float
    env_config: dict
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return sum(ep.n_transitions for ep in self.episodes)

    @property
    def state_dim(self) -> int:
        return self.episodes[0].states.shape[1]

    @property
    def action_dim(self) -> int:
        return self.episodes[0].actions.shape[1]

    @property
    def max_return(self) -> float:
        return max(float(ep.returns.max()) for ep in self.episodes)

    def crash_fraction(self) -> float:
        return float(np.mean([ep.done_reason == "crash" for ep in self.episodes]))

    def window_index(self) -> np.ndarray:
        """All valid (episode, start) pairs; starts leave >= 1 real transition."""
        if not hasattr(self, "_window_index"):
            pairs = [(i, s) for i, ep in enumerate(self.episodes) for s in range(ep.n_transitions)]
            self._window_index = np.array(pairs, dtype=np.int64)
        return self._window_index


def build_dataset(episodes: list[EpisodeRecord], gamma: float, env_config: dict, meta: dict) -> Dataset:
    stats = NormalizationStats.compute(episodes)
    meta = dict(meta)
    meta.setdefault("schema_version", SCHEMA_VERSION)
    meta.setdefault("code_version", __version__)
    return Dataset(episodes=episodes, stats=stats, gamma=gamma, env_config=env_config, meta=meta)


# ---------------------------------------------------------------------------
# Collection
# ---------------------------------------------------------------------------


def collect_toy_dataset(n_steps: int, seed: int, gamma: float = DEFAULT_GAMMA,
                        distribution: IdmDistribution | None = None,
                        env_cfg: ToyDrivingConfig | None = None) -> Dataset:
    """IDM mixture on the trailing task until >= n_steps transitions."""
    distribution = distribution or IdmDistribution()
    env_cfg = env_cfg or ToyDrivingConfig()
    env = ToyDrivingEnv(cfg=env_cfg)
    episodes = []
    total = 0
    ep_idx = 0
    param_rng = rng_stream(seed, "collect", "idm-params")
    while total < n_steps:
        params = distribution.sample(param_rng)
        ep_seed = int(rng_stream(seed, "collect", "episode", ep_idx).integers(2**31))
        episodes.append(rollout_idm_episode(env, params, ep_seed, gamma))
        total += episodes[-1].n_transitions
        ep_idx += 1
    meta = {"kind": "toy", "root_seed": seed, "idm_distribution": asdict(distribution)}
    return build_dataset(episodes, gamma, env.config_dict(), meta)


def rollout_idm_episode(env: ToyDrivingEnv, params: IdmParams, ep_seed: int, gamma: float) -> EpisodeRecord:
    obs = env.reset(seed=ep_seed)
    states, actions, rewards = [obs], [], []
    done = False
    while not done:
        ego_x, ego_v, lead_x, lead_v = obs
        a = idm_acceleration(lead_x - ego_x, ego_v, ego_v - lead_v, params, bound=env.cfg.accel_bound)
        res = env.step(a)
        actions.append([a])
        rewards.append(res.reward)
        states.append(res.obs)
        obs = res.obs
        done = res.done
    reason = "crash" if res.info["crash"] else "timeout"
    return finalize_episode(states, actions, rewards, reason, params.controller_id, ep_seed, gamma)


def collect_mdp_dataset(n_steps: int, seed: int, gamma: float = DEFAULT_GAMMA) -> Dataset:
    """Uniform-random single-transition episodes on the five-state MDP."""
    env = FiveStateMDP(seed=int(rng_stream(seed, "collect", "mdp-env").integers(2**31)))
    action_rng = rng_stream(seed, "collect", "mdp-actions")
    env.reset()
    episodes = []
    for i in range(n_steps):
        action = int(action_rng.integers(0, 2))
        s0 = mdp_state_onehot("s0")
        res = env.step(action)
        episodes.append(finalize_episode(
            [s0, res.obs], [mdp_action_onehot(action)], [res.reward],
            "terminal", "uniform-random", i, gamma))
        env.reset()
    meta = {"kind": "mdp", "root_seed": seed}
    return build_dataset(episodes, gamma, env.config_dict(), meta)


def finalize_episode(states, actions, rewards, reason, controller_id, seed, gamma) -> EpisodeRecord:
    states = np.asarray(states, dtype=np.float64)
    action_dim = len(np.atleast_1d(actions[0]))
    acts = np.zeros((len(states), action_dim))
    acts[:-1] = np.asarray(actions, dtype=np.float64).reshape(-1, action_dim)
    rews = np.zeros(len(states))
    rews[:-1] = np.asarray(rewards, dtype=np.float64)
    return EpisodeRecord(
        states=states, actions=acts, rewards=rews,
        returns=discounted_returns(rews, gamma),
        done_reason=reason, controller_id=controller_id, seed=int(seed),
    )


# ---------------------------------------------------------------------------
# Window sampling
# ---------------------------------------------------------------------------


@dataclass
class WindowBatch:
    """K+1 timesteps per row, zero-padded and masked past the episode end.

    state_mask[b, k] is 1 when state k is real data; action_mask[b, k] is 1
    when action k is a real (non-placeholder) action, which also means the
    transition to state k+1 happened.
    """

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    returns: np.ndarray
    state_mask: np.ndarray
    action_mask: np.ndarray
    starts: np.ndarray
    episode_indices: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]

    @property
    def n_timesteps(self) -> int:
        return self.states.shape[1]

    def normalized(self, stats: NormalizationStats) -> "WindowBatch":
        return WindowBatch(
            states=stats.norm_states(self.states) * self.state_mask[:, :, None],
            actions=stats.norm_actions(self.actions) * self.action_mask[:, :, None],
            rewards=stats.norm_rewards(self.rewards) * self.action_mask,
            returns=stats.norm_returns(self.returns) * self.state_mask,
            state_mask=self.state_mask, action_mask=self.action_mask,
            starts=self.starts, episode_indices=self.episode_indices,
        )


def window_from_episode(ep: EpisodeRecord, start: int, K: int) -> tuple:
    n = K + 1
    T = ep.n_transitions
    end = min(start + n, T + 1)
    valid = end - start
    s = np.zeros((n, ep.states.shape[1]))
    a = np.zeros((n, ep.actions.shape[1]))
    r = np.zeros(n)
    g = np.zeros(n)
    s[:valid] = ep.states[start:end]
    a[:valid] = ep.actions[start:end]
    r[:valid] = ep.rewards[start:end]
    g[:valid] = ep.returns[start:end]
    state_mask = (np.arange(n) < valid).astype(np.float64)
    action_mask = (start + np.arange(n) < T).astype(np.float64)
    return s, a, r, g, state_mask, action_mask


def sample_windows(dataset: Dataset, K: int, batch_size: int, rng: np.random.Generator) -> WindowBatch:
    """Uniformly random (episode, start) windows of K+1 timesteps."""
    if K < 1:
        raise ValueError("K must be >= 1")
    index = dataset.window_index()
    picks = rng.integers(0, len(index), size=batch_size)
    rows = [window_from_episode(dataset.episodes[index[i, 0]], int(index[i, 1]), K) for i in picks]
    s, a, r, g, sm, am = (np.stack(x) for x in zip(*rows))
    return WindowBatch(states=s, actions=a, rewards=r, returns=g, state_mask=sm, action_mask=am,
                       starts=index[picks, 1].copy(), episode_indices=index[picks, 0].copy())


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def save_dataset(path: str, dataset: Dataset) -> None:
    arrays = {
        "states": np.concatenate([ep.states for ep in dataset.episodes]),
        "actions": np.concatenate([ep.actions for ep in dataset.episodes]),
        "rewards": np.concatenate([ep.rewards for ep in dataset.episodes]),
        "returns": np.concatenate([ep.returns for ep in dataset.episodes]),
        "lengths": np.array([len(ep.states) for ep in dataset.episodes], dtype=np.int64),
    }
    meta = {
        "type": "dataset",
        "gamma": dataset.gamma,
        "env_config": dataset.env_config,
        "stats": dataset.stats.to_meta(),
        "extra": dataset.meta,
        "episodes": [
            {"done_reason": ep.done_reason, "controller_id": ep.controller_id, "seed": ep.seed}
            for ep in dataset.episodes
        ],
    }
    save_container(path, meta, arrays)


def load_dataset(path: str) -> Dataset:
    meta, arrays = load_container(path)
    if meta.get("type") != "dataset":
        raise ValueError(f"{path} does not hold a dataset")
    lengths = arrays["lengths"]
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    episodes = []
    for i, info in enumerate(meta["episodes"]):
        lo, hi = offsets[i], offsets[i + 1]
        episodes.append(EpisodeRecord(
            states=arrays["states"][lo:hi], actions=arrays["actions"][lo:hi],
            rewards=arrays["rewards"][lo:hi], returns=arrays["returns"][lo:hi],
            done_reason=info["done_reason"], controller_id=info["controller_id"], seed=info["seed"],
        ))
    return Dataset(episodes=episodes, stats=NormalizationStats.from_meta(meta["stats"]),
                   gamma=meta["gamma"], env_config=meta["env_config"], meta=meta["extra"])
