"""Closed-loop evaluation: policies, seeded rollouts, and metrics tables.

Episodes of one evaluation seed run in lockstep so that model queries batch
across episodes (candidates of all alive episodes go through the decoders as
one batch).  Histories within a lockstep group always have equal length, so
batching never needs padding.  Identical seeds reproduce identical metrics
bitwise because every random draw comes from named streams of the root seed
and batch compositions are deterministic.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .baselines import next_target_return
from .data import EpisodeRecord, NormalizationStats, discounted_returns, finalize_episode
from .envs import ToyDrivingConfig, make_env
from .models import SpltModel
from .planner import Planner
from .utils import rng_stream, stream_seed


@dataclass
class History:
    """Raw running record of one episode (untruncated; consumers crop)."""

    states: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    def state_array(self) -> np.ndarray:
        return np.asarray(self.states)

    def action_array(self, action_dim: int) -> np.ndarray:
        if not self.actions:
            return np.zeros((0, action_dim))
        return np.asarray(self.actions)


class PlannerPolicy:
    """Replans with the latent-enumeration search at every timestep."""

    def __init__(self, planner: Planner, dump: list | None = None):
        self.planner = planner
        self.dump = dump

    def act(self, histories: list[History], episode_ids, t) -> np.ndarray:
        dim = self.planner.model.cfg.action_dim
        results = self.planner.plan_batch(
            [h.state_array() for h in histories],
            [h.action_array(dim) for h in histories])
        if self.dump is not None:
            for ep_id, res in zip(episode_ids, results):
                self.dump.append({
                    "episode": int(ep_id), "t": int(t),
                    "matrix": res.matrix.tolist(),
                    "selected": [int(res.policy_index), int(res.world_index)],
                    "action": np.asarray(res.action).reshape(-1).tolist(),
                    "non_finite": res.non_finite,
                })
        return np.stack([np.asarray(r.action).reshape(-1) for r in results])


class BcPolicy:
    def __init__(self, model, stats: NormalizationStats, context: int | None = None):
        self.model = model
        self.stats = stats
        self.context = context if context is not None else model.cfg.context

    def act(self, histories, episode_ids, t) -> np.ndarray:
        cfg = self.model.cfg
        keep = self.context + 1
        states, actions = [], []
        for h in histories:
            s = h.state_array()[-keep:]
            a = h.action_array(cfg.action_dim)[-(len(s) - 1):] if len(s) > 1 else np.zeros((0, cfg.action_dim))
            states.append(self.stats.norm_states(s))
            actions.append(self.stats.norm_actions(a))
        s = np.stack(states).astype(cfg.np_dtype())
        a = np.stack(actions).astype(cfg.np_dtype())
        with ad.no_grad():
            preds = self.model.predict(s, a)
        return self.stats.denorm_actions(preds.data[:, -1])


class DtPolicy:
    """Return-conditioned action selection with return-to-go bookkeeping."""

    def __init__(self, model, stats: NormalizationStats, target_return: float,
                 context: int | None = None, discounted: bool | None = None):
        self.model = model
        self.stats = stats
        self.target = float(target_return)
        self.context = context if context is not None else model.cfg.context
        self.discounted = model.cfg.discounted_targets if discounted is None else discounted
        self.gamma = model.cfg.gamma

    def _targets(self, rewards) -> np.ndarray:
        out = [self.target]
        for r in rewards:
            out.append(next_target_return(out[-1], r, self.gamma, self.discounted))
        return np.asarray(out)

    def act(self, histories, episode_ids, t) -> np.ndarray:
        cfg = self.model.cfg
        keep = self.context + 1
        returns, states, actions = [], [], []
        for h in histories:
            rtg = self._targets(h.rewards)[-keep:]
            s = h.state_array()[-keep:]
            a = h.action_array(cfg.action_dim)[-(len(s) - 1):] if len(s) > 1 else np.zeros((0, cfg.action_dim))
            returns.append(self.stats.norm_returns(rtg))
            states.append(self.stats.norm_states(s))
            actions.append(self.stats.norm_actions(a))
        r = np.stack(returns).astype(cfg.np_dtype())
        s = np.stack(states).astype(cfg.np_dtype())
        a = np.stack(actions).astype(cfg.np_dtype())
        return self.stats.denorm_actions(self.model.act(r, s, a))


class IdmPolicy:
    """The car-following controller as an evaluation policy (toy env only)."""

    def __init__(self, params, accel_bound: float = 1.0):
        from .data import idm_acceleration
        self._accel = idm_acceleration
        self.params = params
        self.bound = accel_bound

    def act(self, histories, episode_ids, t) -> np.ndarray:
        out = []
        for h in histories:
            ego_x, ego_v, lead_x, lead_v = h.states[-1]
            out.append([self._accel(lead_x - ego_x, ego_v, ego_v - lead_v, self.params, self.bound)])
        return np.asarray(out)


def rollout_episodes(env_name: str, policy, n_episodes: int, seed: int,
                     gamma: float, toy_cfg: ToyDrivingConfig | None = None) -> list[EpisodeRecord]:
    """Run n episodes in lockstep with per-episode seeds derived from ``seed``."""
    envs = [make_env(env_name, toy_cfg=toy_cfg) for _ in range(n_episodes)]
    histories = [History() for _ in range(n_episodes)]
    reasons = ["timeout"] * n_episodes
    for i, env in enumerate(envs):
        obs = env.reset(seed=stream_seed(seed, "eval-episode", i))
        histories[i].states.append(obs)
    alive = list(range(n_episodes))
    t = 0
    while alive:
        acts = policy.act([histories[i] for i in alive], alive, t)
        still = []
        for row, i in enumerate(alive):
            if env_name == "mdp":
                choice = int(np.argmax(acts[row]))
                executed = np.zeros(len(acts[row]))
                executed[choice] = 1.0
                res = envs[i].step(choice)
            else:
                bound = envs[i].cfg.accel_bound
                a = float(min(max(acts[row][0], -bound), bound))
                executed = np.array([a])
                res = envs[i].step(a)
            h = histories[i]
            h.actions.append(executed)
            h.rewards.append(res.reward)
            h.states.append(res.obs)
            if res.done:
                reasons[i] = "crash" if res.info.get("crash") else ("terminal" if env_name == "mdp" else "timeout")
            else:
                still.append(i)
        alive = still
        t += 1
    return [
        finalize_episode(h.states, h.actions, h.rewards, reasons[i], type(policy).__name__, i, gamma)
        for i, h in enumerate(histories)
    ]


@dataclass
class SeedMetrics:
    seed: int
    mean_return: float
    std_return: float
    success_rate: float
    crash_count: int
    mean_length: float
    mean_discounted_return: float


@dataclass
class MetricsReport:
    """Per-seed metrics plus the cross-seed mean +- std convention."""

    per_seed: list[SeedMetrics]

    @property
    def return_mean(self) -> float:
        return float(np.mean([m.mean_return for m in self.per_seed]))

    @property
    def return_std(self) -> float:
        return float(np.std([m.mean_return for m in self.per_seed]))

    @property
    def success_mean(self) -> float:
        return float(np.mean([m.success_rate for m in self.per_seed]))

    @property
    def success_std(self) -> float:
        return float(np.std([m.success_rate for m in self.per_seed]))

    def rows(self) -> list[list]:
        rows = [[m.seed, m.mean_return, m.std_return, m.success_rate, m.crash_count,
                 m.mean_length, m.mean_discounted_return] for m in self.per_seed]
        rows.append(["aggregate", self.return_mean, self.return_std, self.success_mean,
                     sum(m.crash_count for m in self.per_seed),
                     float(np.mean([m.mean_length for m in self.per_seed])),
                     float(np.mean([m.mean_discounted_return for m in self.per_seed]))])
        return rows

    COLUMNS = ["seed", "return_mean", "return_std", "success_pct", "crashes",
               "mean_length", "discounted_return_mean"]


def summarize_episodes(seed: int, episodes: list[EpisodeRecord]) -> SeedMetrics:
    returns = np.array([ep.episode_return for ep in episodes])
    crashes = sum(ep.done_reason == "crash" for ep in episodes)
    return SeedMetrics(
        seed=seed,
        mean_return=float(returns.mean()),
        std_return=float(returns.std()),
        success_rate=100.0 * (1.0 - crashes / len(episodes)),
        crash_count=int(crashes),
        mean_length=float(np.mean([ep.n_transitions for ep in episodes])),
        mean_discounted_return=float(np.mean([ep.returns[0] for ep in episodes])),
    )


def evaluate_policy(env_name: str, policy, episodes: int, seeds, gamma: float,
                    toy_cfg: ToyDrivingConfig | None = None) -> MetricsReport:
    per_seed = []
    for s in seeds:
        eps = rollout_episodes(env_name, policy, episodes, s, gamma, toy_cfg=toy_cfg)
        per_seed.append(summarize_episodes(s, eps))
    return MetricsReport(per_seed=per_seed)


def toy_cfg_from_meta(env_config: dict) -> ToyDrivingConfig:
    fields_ = {k: v for k, v in env_config.items() if k != "env"}
    return ToyDrivingConfig(**fields_)


# ---------------------------------------------------------------------------
# Optimism-bias demonstration on the five-state MDP
# ---------------------------------------------------------------------------


def mdp_action_frequencies(policy, n_decisions: int, seed: int, gamma: float) -> np.ndarray:
    episodes = rollout_episodes("mdp", policy, n_decisions, seed, gamma)
    counts = np.zeros(2)
    for ep in episodes:
        counts[int(np.argmax(ep.actions[0]))] += 1
    return counts / n_decisions


def world_mode_predictions(model: SpltModel, stats: NormalizationStats) -> dict:
    """Per-latent world-decoder predictions after (s0, a) for both actions."""
    from .envs import MDP_STATE_NAMES, mdp_action_onehot, mdp_state_onehot
    from .models import enumerate_codes_onehot
    from .planner import enumerate_latents

    cfg = model.cfg
    codes = enumerate_latents(cfg.c, cfg.n_w)
    onehots = enumerate_codes_onehot(codes, cfg.c, cfg.np_dtype())
    report = {}
    with ad.no_grad():
        for action in (0, 1):
            s = stats.norm_states(mdp_state_onehot("s0"))[None, None].astype(cfg.np_dtype())
            a = stats.norm_actions(mdp_action_onehot(action))[None, None].astype(cfg.np_dtype())
            per_code = []
            for z in onehots:
                s_pred, r_pred, ret_pred = model.world_decoder.predict(s, a, ad.Tensor(z[None]))
                raw_state = stats.denorm_states(s_pred.data[0, -1])
                nearest = MDP_STATE_NAMES[int(np.argmax(raw_state))]
                per_code.append({
                    "code": [int(v) for v in codes[len(per_code)]],
                    "predicted_state": nearest,
                    "predicted_reward": float(stats.denorm_rewards(r_pred.data[0, -1])),
                    "predicted_return": float(stats.denorm_returns(ret_pred.data[0, -1])),
                })
            report[f"a{action + 1}"] = per_code
    return report


def run_mdp_demo(splt_bundle, dt_bundle, n_decisions: int, seed: int,
                 horizon: int = 0, dt_targets=(10.0, 5.0)) -> dict:
    """Action-selection frequencies at s0 for the planner (both modes) and the
    return-conditioned baseline, plus the world decoder's per-latent modes."""
    gamma = splt_bundle.config.gamma
    report = {"decisions": n_decisions}

    for mode in ("maxmin", "maxmax"):
        planner = Planner(splt_bundle.model, splt_bundle.stats, horizon=horizon, mode=mode)
        freq = mdp_action_frequencies(PlannerPolicy(planner), n_decisions, seed, gamma)
        report[f"splt_{mode}"] = {"a1": float(freq[0]), "a2": float(freq[1])}

    for target in dt_targets:
        policy = DtPolicy(dt_bundle.model, dt_bundle.stats, target_return=target)
        freq = mdp_action_frequencies(policy, n_decisions, seed, gamma)
        report[f"dt_target_{target:g}"] = {"a1": float(freq[0]), "a2": float(freq[1])}

    planner = Planner(splt_bundle.model, splt_bundle.stats, horizon=horizon, mode="maxmin")
    from .envs import mdp_state_onehot
    res = planner.select_action(np.asarray([mdp_state_onehot("s0")]), np.zeros((0, 2)))
    report["return_matrix_at_s0"] = res.matrix.tolist()
    report["world_modes"] = world_mode_predictions(splt_bundle.model, splt_bundle.stats)
    return report
