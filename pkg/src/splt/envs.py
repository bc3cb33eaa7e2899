"""The two seedable evaluation environments.

FiveStateMDP: a single-decision stochastic MDP.  From the start state, each
action leads to one of two terminal states with equal probability; rewards
are +10/-10 for the first action's outcomes and +6/+4 for the second's, so
the first action is better in the best case, worse in expectation (0 vs 5)
and far worse in the worst case (-10 vs 4).

ToyDrivingEnv: a 1-D two-vehicle trailing problem.  Point-mass kinematics,
semi-implicit Euler at a fixed dt, velocities clamped to [0, 10] m/s.  Half
of episodes the leader brakes at the last possible moment so as to stop just
short of a fixed mark, waits, then drives on; the other half it speeds up to
the limit.  The ego vehicle cannot observe which kind of episode it is in.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

MDP_STATE_NAMES = ("s0", "s11", "s12", "s21", "s22")
MDP_TERMINAL_REWARDS = {"s11": 10.0, "s12": -10.0, "s21": 6.0, "s22": 4.0}
MDP_ACTION_NAMES = ("a1", "a2")
MDP_STATE_DIM = 5
MDP_ACTION_DIM = 2


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    done: bool
    info: dict


def mdp_state_onehot(name: str) -> np.ndarray:
    obs = np.zeros(MDP_STATE_DIM)
    obs[MDP_STATE_NAMES.index(name)] = 1.0
    return obs


def mdp_action_onehot(action: int) -> np.ndarray:
    vec = np.zeros(MDP_ACTION_DIM)
    vec[action] = 1.0
    return vec


class FiveStateMDP:
    """Single-transition MDP; observations are one-hot state vectors."""

    state_dim = MDP_STATE_DIM
    action_dim = MDP_ACTION_DIM

    def __init__(self, seed: int = 0):
        self._rng = np.random.default_rng(seed)
        self._state: str | None = None

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        self._state = "s0"
        return mdp_state_onehot("s0")

    def step(self, action: int) -> StepResult:
        if self._state != "s0":
            raise RuntimeError("episode is finished; call reset() before stepping again")
        if action not in (0, 1):
            raise ValueError(f"action must be 0 (a1) or 1 (a2), got {action!r}")
        good = self._rng.random() < 0.5
        if action == 0:
            nxt = "s11" if good else "s12"
        else:
            nxt = "s21" if good else "s22"
        self._state = nxt
        return StepResult(mdp_state_onehot(nxt), MDP_TERMINAL_REWARDS[nxt], True,
                          {"terminal_state": nxt, "crash": False, "timeout": False})

    def config_dict(self) -> dict:
        return {"env": "mdp", "rewards": dict(MDP_TERMINAL_REWARDS)}


@dataclass(frozen=True)
class ToyDrivingConfig:
    """All constants of the trailing problem (recorded with every dataset)."""

    dt: float = 0.1
    horizon_s: float = 10.0
    v_min: float = 0.0
    v_max: float = 10.0
    accel_bound: float = 1.0
    crash_penalty: float = -100.0
    brake_mark: float = 70.0
    lead_decel: float = 1.5
    lead_accel: float = 1.0
    lead_dwell_s: float = 1.0
    ego_v0_low: float = 7.5
    ego_v0_high: float = 10.0
    lead_x0_low: float = 10.0
    lead_x0_high: float = 20.0
    brake_prob: float = 0.5

    @property
    def max_steps(self) -> int:
        return int(round(self.horizon_s / self.dt))


class LeadBrakeController:
    """Latest-possible-moment braking so the leader stops short of the mark.

    Phases: cruise (hold entry speed) -> brake (max deceleration, triggered by
    the stopping-distance condition with a one-step margin) -> dwell (stand
    still) -> resume (accelerate to the speed limit).  The phase machine never
    re-enters braking after resuming.
    """

    def __init__(self, cfg: ToyDrivingConfig):
        self.cfg = cfg
        self.phase = "cruise"
        self._dwell_left = cfg.lead_dwell_s
        self.engaged = False

    def accel(self, lead_x: float, lead_v: float) -> float:
        cfg = self.cfg
        if self.phase == "cruise":
            stop_dist = lead_v * lead_v / (2.0 * cfg.lead_decel)
            if cfg.brake_mark - lead_x <= stop_dist + lead_v * cfg.dt:
                self.phase = "brake"
                self.engaged = True
        if self.phase == "brake":
            if lead_v <= 0.0:
                self.phase = "dwell"
            else:
                return -cfg.lead_decel
        if self.phase == "dwell":
            if self._dwell_left > 0.0:
                self._dwell_left -= cfg.dt
                return 0.0
            self.phase = "resume"
        if self.phase == "resume":
            return cfg.lead_accel
        return 0.0  # cruise: hold speed


class ToyDrivingEnv:
    """1-D trailing task; observation is [ego_x, ego_v, lead_x, lead_v]."""

    state_dim = 4
    action_dim = 1

    def __init__(self, cfg: ToyDrivingConfig | None = None, seed: int = 0):
        self.cfg = cfg or ToyDrivingConfig()
        self._rng = np.random.default_rng(seed)
        self._alive = False

    def reset(self, seed: int | None = None) -> np.ndarray:
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        cfg = self.cfg
        self.ego_x = 0.0
        self.ego_v = float(self._rng.uniform(cfg.ego_v0_low, cfg.ego_v0_high))
        self.lead_x = float(self._rng.uniform(cfg.lead_x0_low, cfg.lead_x0_high))
        self.lead_v = self.ego_v
        self.will_brake = bool(self._rng.random() < cfg.brake_prob)
        self._brake_ctrl = LeadBrakeController(cfg) if self.will_brake else None
        self._step_count = 0
        self._alive = True
        return self._obs()

    def _obs(self) -> np.ndarray:
        return np.array([self.ego_x, self.ego_v, self.lead_x, self.lead_v])

    def _lead_accel(self) -> float:
        if self.will_brake:
            return self._brake_ctrl.accel(self.lead_x, self.lead_v)
        return self.cfg.lead_accel  # speed up to the limit and hold

    def step(self, action: float) -> StepResult:
        if not self._alive:
            raise RuntimeError("episode is finished; call reset() before stepping again")
        a = float(np.asarray(action).reshape(-1)[0])
        if math.isnan(a):
            raise ValueError("action is NaN")
        cfg = self.cfg
        a = min(max(a, -cfg.accel_bound), cfg.accel_bound)
        lead_a = self._lead_accel()

        self.ego_v = min(max(self.ego_v + a * cfg.dt, cfg.v_min), cfg.v_max)
        ego_dx = self.ego_v * cfg.dt
        self.ego_x += ego_dx
        self.lead_v = min(max(self.lead_v + lead_a * cfg.dt, cfg.v_min), cfg.v_max)
        self.lead_x += self.lead_v * cfg.dt
        self._step_count += 1

        crash = self.ego_x >= self.lead_x
        timeout = self._step_count >= cfg.max_steps
        reward = ego_dx + (cfg.crash_penalty if crash else 0.0)
        done = crash or timeout
        self._alive = not done
        return StepResult(self._obs(), reward, done, {"crash": crash, "timeout": timeout})

    def config_dict(self) -> dict:
        d = dataclasses.asdict(self.cfg)
        d["env"] = "toy"
        return d


def make_env(name: str, seed: int = 0, toy_cfg: ToyDrivingConfig | None = None):
    if name == "mdp":
        return FiveStateMDP(seed=seed)
    if name == "toy":
        return ToyDrivingEnv(cfg=toy_cfg, seed=seed)
    raise ValueError(f"unknown environment {name!r}")
