"""Behavior-cloning and return-conditioned transformer baselines.

The BC model is architecturally the policy decoder minus its latent
conditioning: same interleaved token layout, same causal backbone, same
action head.  The return-conditioned model consumes (return-to-go, state,
action) token triplets and predicts the action at every state token; at
deployment the conditioning value starts at a chosen target return and is
decremented by observed rewards each step.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, WindowBatch
from .transformer import Backbone, Linear, TransformerConfig, WindowEmbedder, merge_params


@dataclass(frozen=True)
class BaselineConfig:
    kind: str                 # "bc" or "dt"
    state_dim: int
    action_dim: int
    context: int = 5
    n_layers: int = 4
    n_heads: int = 8
    embed_dim: int = 128
    gamma: float = 0.99
    discounted_targets: bool = True  # return-to-go bookkeeping convention
    dtype: str = "float64"

    def np_dtype(self):
        return np.dtype(self.dtype)

    def transformer_config(self) -> TransformerConfig:
        return TransformerConfig(n_layers=self.n_layers, n_heads=self.n_heads,
                                 embed_dim=self.embed_dim, max_timesteps=self.context + 1,
                                 attention_mode="causal")

    def to_meta(self) -> dict:
        return asdict(self)

    @classmethod
    def from_meta(cls, meta: dict) -> "BaselineConfig":
        return cls(**meta)


class BcModel:
    """Next-action regression from interleaved state/action history."""

    def __init__(self, cfg: BaselineConfig, rng: np.random.Generator):
        assert cfg.kind == "bc"
        self.cfg = cfg
        dtype = cfg.np_dtype()
        tcfg = cfg.transformer_config()
        self.embedder = WindowEmbedder(rng, tcfg, cfg.state_dim, cfg.action_dim, dtype=dtype)
        self.backbone = Backbone(rng, tcfg, dtype=dtype)
        self.action_head = Linear(rng, cfg.embed_dim, cfg.action_dim, dtype=dtype)

    def predict(self, states: np.ndarray, actions: np.ndarray) -> Tensor:
        """states (B, T, S), actions (B, T-1, A) -> action means (B, T, A)."""
        seq = self.embedder.embed_interleaved(states, actions)
        out = self.backbone(seq).embeddings
        return ad.take(self.action_head(out), (slice(None), slice(0, None, 2)))

    def loss(self, batch: WindowBatch, rng=None):
        K = batch.n_timesteps - 1
        preds = self.predict(batch.states, batch.actions[:, :K])
        err = preds - Tensor(batch.actions.astype(self.cfg.np_dtype(), copy=False))
        per_step = ad.tsum(err * err, axis=-1) * 0.5
        mask = Tensor(batch.action_mask.astype(self.cfg.np_dtype(), copy=False))
        denom = max(float(batch.action_mask.sum()), 1.0)
        loss = ad.tsum(per_step * mask) * (1.0 / denom)
        return loss, {"bc_recon": loss.item()}

    def _children(self):
        return {"embedder": self.embedder, "backbone": self.backbone, "action_head": self.action_head}

    def named_params(self):
        return merge_params(self._children())[0]

    def decay_names(self):
        return merge_params(self._children())[1]


class DtModel:
    """Return-conditioned action regression over (R, s, a) token triplets."""

    def __init__(self, cfg: BaselineConfig, rng: np.random.Generator):
        assert cfg.kind == "dt"
        self.cfg = cfg
        dtype = cfg.np_dtype()
        tcfg = cfg.transformer_config()
        self.embedder = WindowEmbedder(rng, tcfg, cfg.state_dim, cfg.action_dim,
                                       with_returns=True, dtype=dtype)
        self.backbone = Backbone(rng, tcfg, dtype=dtype)
        self.action_head = Linear(rng, cfg.embed_dim, cfg.action_dim, dtype=dtype)

    def predict(self, returns: np.ndarray, states: np.ndarray, actions: np.ndarray) -> Tensor:
        """Action mean at every state token; actions may be one shorter."""
        seq = self.embedder.embed_triplet(returns, states, actions)
        out = self.backbone(seq).embeddings
        return ad.take(self.action_head(out), (slice(None), slice(1, None, 3)))

    def loss(self, batch: WindowBatch, rng=None):
        K = batch.n_timesteps - 1
        preds = self.predict(batch.returns, batch.states, batch.actions[:, :K])
        err = preds - Tensor(batch.actions.astype(self.cfg.np_dtype(), copy=False))
        per_step = ad.tsum(err * err, axis=-1) * 0.5
        mask = Tensor(batch.action_mask.astype(self.cfg.np_dtype(), copy=False))
        denom = max(float(batch.action_mask.sum()), 1.0)
        loss = ad.tsum(per_step * mask) * (1.0 / denom)
        return loss, {"dt_recon": loss.item()}

    def act(self, returns: np.ndarray, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Predicted action at the final state token (normalized units)."""
        with ad.no_grad():
            preds = self.predict(returns, states, actions)
        return preds.data[:, -1]

    def _children(self):
        return {"embedder": self.embedder, "backbone": self.backbone, "action_head": self.action_head}

    def named_params(self):
        return merge_params(self._children())[0]

    def decay_names(self):
        return merge_params(self._children())[1]


def next_target_return(target: float, reward: float, gamma: float, discounted: bool = True) -> float:
    """Return-to-go bookkeeping after observing one reward.

    Under the discounted convention R_t = r_t + gamma * R_{t+1}, the next
    conditioning value is (R - r) / gamma; undiscounted keeps the classic
    R - r decrement.
    """
    if discounted:
        return (target - reward) / gamma
    return target - reward


def dt_target_return(dataset: Dataset, alpha: float = 1.0) -> float:
    """Target-return heuristic: alpha times the maximum return in the dataset."""
    return alpha * dataset.max_return
