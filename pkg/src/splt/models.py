"""The four separated networks and their variational training losses.

Two encoder/decoder pairs with fully disjoint parameters:

  policy encoder  : window -> n_pi independent c-way categorical distributions
  policy decoder  : (history ending on a state, z_pi) -> next-action means
  world encoder   : window -> n_w  independent c-way categorical distributions
  world decoder   : (history ending on an action, z_w) -> next state / reward /
                    discounted-return means via three separate heads

Latent codes are sampled with a straight-through estimator during training and
enumerated exhaustively at planning time.  Both losses are (masked mean)
squared-error reconstruction plus beta times the KL divergence of the encoder
output to the uniform categorical prior, which reduces to sum_i (ln c - H(q_i)).
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import WindowBatch
from .transformer import (
    Backbone,
    Linear,
    TransformerConfig,
    WindowEmbedder,
    add_latent_conditioning,
    mean_pool,
    merge_params,
)


@dataclass(frozen=True)
class SpltConfig:
    """Hyperparameters of one separated-latent model pair."""

    state_dim: int
    action_dim: int
    context: int = 5          # K: windows span K+1 timesteps
    n_layers: int = 4
    n_heads: int = 8
    embed_dim: int = 128
    c: int = 2                # categories per latent dimension
    n_w: int = 2              # world latent dimensions
    n_pi: int = 3             # policy latent dimensions
    beta: float = 1e-3
    gamma: float = 0.99
    include_first_step: bool = False  # also supervise the k=0 prediction
    latent_width: int = 0     # per-dimension latent embedding width; 0 = embed_dim
    dtype: str = "float64"

    def np_dtype(self):
        return np.dtype(self.dtype)

    def transformer_config(self, mode: str) -> TransformerConfig:
        return TransformerConfig(n_layers=self.n_layers, n_heads=self.n_heads,
                                 embed_dim=self.embed_dim, max_timesteps=self.context + 1,
                                 attention_mode=mode)

    def to_meta(self) -> dict:
        return asdict(self)

    @classmethod
    def from_meta(cls, meta: dict) -> "SpltConfig":
        return cls(**meta)


def kl_to_uniform(probs: Tensor) -> Tensor:
    """KL(q || U{1..c}) summed over latent dimensions: sum_i (ln c - H(q_i)).

    ``probs`` has shape (..., n, c); the result drops the last two axes.
    Computed as sum p * ln(p * c), which is exactly zero on exactly
    representable uniform rows.
    """
    c = probs.shape[-1]
    scaled = ad.clamp_min(probs * float(c), 1e-300)
    return ad.tsum(probs * ad.log(scaled), axis=(-2, -1))


class LatentEmbedding:
    """Map one-hot latent codes to a single conditioning vector.

    Each latent dimension has its own category-embedding table; the per-
    dimension embeddings are concatenated and projected linearly to the token
    embedding width.  Implemented with matmuls over the one-hot code so the
    straight-through gradient reaches the encoder.
    """

    def __init__(self, rng, n: int, c: int, width: int, embed_dim: int, dtype=np.float64):
        self.n, self.c, self.width = n, c, width
        self.tables = Tensor(rng.normal(0.0, 0.02, size=(n, c, width)).astype(dtype), requires_grad=True)
        self.proj = Linear(rng, n * width, embed_dim, dtype=dtype)

    def __call__(self, z_onehot: Tensor) -> Tensor:
        b = z_onehot.shape[0]
        z = ad.reshape(z_onehot, (b, self.n, 1, self.c))
        per_dim = ad.matmul(z, self.tables)  # (b, n, 1, width)
        return self.proj(ad.reshape(per_dim, (b, self.n * self.width)))

    def named_params(self):
        p, _ = merge_params({"proj": self.proj})
        p["tables"] = self.tables
        return p

    def decay_names(self):
        # Category tables are embeddings: excluded from weight decay.
        _, d = merge_params({"proj": self.proj})
        return d


class TrajectoryEncoder:
    """Full-attention transformer over an interleaved window, mean-pooled into
    n independent c-way categorical logit rows."""

    def __init__(self, rng, cfg: SpltConfig, n_latent: int):
        dtype = cfg.np_dtype()
        self.n_latent, self.c = n_latent, cfg.c
        tcfg = cfg.transformer_config("full")
        self.embedder = WindowEmbedder(rng, tcfg, cfg.state_dim, cfg.action_dim, dtype=dtype)
        self.backbone = Backbone(rng, tcfg, dtype=dtype)
        self.head_hidden = Linear(rng, cfg.embed_dim, cfg.embed_dim, dtype=dtype)
        self.head_out = Linear(rng, cfg.embed_dim, n_latent * cfg.c, dtype=dtype)

    def logits(self, states, actions, state_mask=None, action_mask=None) -> Tensor:
        seq = self.embedder.embed_interleaved(states, actions, state_mask, action_mask)
        pooled = mean_pool(self.backbone(seq))
        h = ad.gelu(self.head_hidden(pooled))
        return ad.reshape(self.head_out(h), (states.shape[0], self.n_latent, self.c))

    def probs(self, states, actions, state_mask=None, action_mask=None) -> Tensor:
        return ad.softmax(self.logits(states, actions, state_mask, action_mask), axis=-1)

    def _children(self):
        return {"embedder": self.embedder, "backbone": self.backbone,
                "head_hidden": self.head_hidden, "head_out": self.head_out}

    def named_params(self):
        return merge_params(self._children())[0]

    def decay_names(self):
        return merge_params(self._children())[1]


class PolicyDecoder:
    """Causal transformer emitting the next-action mean at every state token."""

    def __init__(self, rng, cfg: SpltConfig):
        dtype = cfg.np_dtype()
        tcfg = cfg.transformer_config("causal")
        width = cfg.latent_width or cfg.embed_dim
        self.embedder = WindowEmbedder(rng, tcfg, cfg.state_dim, cfg.action_dim, dtype=dtype)
        self.latent = LatentEmbedding(rng, cfg.n_pi, cfg.c, width, cfg.embed_dim, dtype=dtype)
        self.backbone = Backbone(rng, tcfg, dtype=dtype)
        self.action_head = Linear(rng, cfg.embed_dim, cfg.action_dim, dtype=dtype)

    def predict(self, states: np.ndarray, actions: np.ndarray, z_onehot: Tensor) -> Tensor:
        """states (B, T, S) with actions (B, T-1, A): one action mean per state."""
        seq = self.embedder.embed_interleaved(states, actions)
        seq = add_latent_conditioning(seq, self.latent(z_onehot))
        out = self.backbone(seq).embeddings
        preds = self.action_head(out)
        return ad.take(preds, (slice(None), slice(0, None, 2)))

    def _children(self):
        return {"embedder": self.embedder, "latent": self.latent,
                "backbone": self.backbone, "action_head": self.action_head}

    def named_params(self):
        return merge_params(self._children())[0]

    def decay_names(self):
        return merge_params(self._children())[1]


class WorldDecoder:
    """Causal transformer with three heads (next state, reward, return) read
    at every action token."""

    def __init__(self, rng, cfg: SpltConfig):
        dtype = cfg.np_dtype()
        tcfg = cfg.transformer_config("causal")
        width = cfg.latent_width or cfg.embed_dim
        self.embedder = WindowEmbedder(rng, tcfg, cfg.state_dim, cfg.action_dim, dtype=dtype)
        self.latent = LatentEmbedding(rng, cfg.n_w, cfg.c, width, cfg.embed_dim, dtype=dtype)
        self.backbone = Backbone(rng, tcfg, dtype=dtype)
        self.state_head = Linear(rng, cfg.embed_dim, cfg.state_dim, dtype=dtype)
        self.reward_head = Linear(rng, cfg.embed_dim, 1, dtype=dtype)
        self.return_head = Linear(rng, cfg.embed_dim, 1, dtype=dtype)

    def predict(self, states: np.ndarray, actions: np.ndarray, z_onehot: Tensor):
        """states (B, T, S) with actions (B, T, A); per action token returns
        (next-state (B,T,S), reward (B,T), return (B,T)) means."""
        seq = self.embedder.embed_interleaved(states, actions)
        seq = add_latent_conditioning(seq, self.latent(z_onehot))
        out = self.backbone(seq).embeddings
        at_actions = ad.take(out, (slice(None), slice(1, None, 2)))
        b, t = states.shape[0], states.shape[1]
        s_next = self.state_head(at_actions)
        r = ad.reshape(self.reward_head(at_actions), (b, t))
        ret = ad.reshape(self.return_head(at_actions), (b, t))
        return s_next, r, ret

    def _children(self):
        return {"embedder": self.embedder, "latent": self.latent, "backbone": self.backbone,
                "state_head": self.state_head, "reward_head": self.reward_head,
                "return_head": self.return_head}

    def named_params(self):
        return merge_params(self._children())[0]

    def decay_names(self):
        return merge_params(self._children())[1]


class SpltModel:
    """The two separated VAEs plus their joint training objective."""

    def __init__(self, cfg: SpltConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.policy_encoder = TrajectoryEncoder(rng, cfg, cfg.n_pi)
        self.policy_decoder = PolicyDecoder(rng, cfg)
        self.world_encoder = TrajectoryEncoder(rng, cfg, cfg.n_w)
        self.world_decoder = WorldDecoder(rng, cfg)
        # Sampling seam: tests swap in the straight-through surrogate
        # (one_hot0 + probs - probs0) to make finite differences well defined.
        self._sample = ad.straight_through_sample

    def _components(self):
        return {"policy_enc": self.policy_encoder, "policy_dec": self.policy_decoder,
                "world_enc": self.world_encoder, "world_dec": self.world_decoder}

    def named_params(self) -> dict[str, Tensor]:
        return merge_params(self._components())[0]

    def decay_names(self) -> set[str]:
        return merge_params(self._components())[1]

    def policy_param_names(self) -> set[str]:
        p, _ = merge_params({"policy_enc": self.policy_encoder, "policy_dec": self.policy_decoder})
        return set(p)

    def world_param_names(self) -> set[str]:
        p, _ = merge_params({"world_enc": self.world_encoder, "world_dec": self.world_decoder})
        return set(p)

    # -- losses ------------------------------------------------------------

    def policy_elbo_loss(self, batch: WindowBatch, rng: np.random.Generator):
        """Masked-mean squared error on next actions + beta * KL to uniform.

        ``batch`` must already be normalized.  One latent sample per window.
        """
        cfg = self.cfg
        K = batch.n_timesteps - 1
        probs = self.policy_encoder.probs(batch.states, batch.actions,
                                          batch.state_mask, batch.action_mask)
        z = self._sample(probs, rng)
        preds = self.policy_decoder.predict(batch.states, batch.actions[:, :K], z)

        k0 = 0 if cfg.include_first_step else 1
        err = ad.take(preds, (slice(None), slice(k0, None))) - Tensor(
            batch.actions[:, k0:].astype(cfg.np_dtype(), copy=False))
        mask = batch.action_mask[:, k0:]
        recon = _masked_mean(ad.tsum(err * err, axis=-1) * 0.5, mask, cfg.np_dtype())
        kl = ad.tmean(kl_to_uniform(probs))
        loss = recon + kl * cfg.beta
        return loss, {"policy_recon": recon.item(), "policy_kl": kl.item()}

    def world_elbo_loss(self, batch: WindowBatch, rng: np.random.Generator):
        """Three squared-error heads (next state, reward, return) + beta * KL.

        The prediction at the final action token of a window has its next
        state/return outside the stored window, so that step is masked out;
        random window starts cover every transition at interior positions.
        """
        cfg = self.cfg
        dtype = cfg.np_dtype()
        K = batch.n_timesteps - 1
        probs = self.world_encoder.probs(batch.states, batch.actions,
                                         batch.state_mask, batch.action_mask)
        z = self._sample(probs, rng)
        s_pred, r_pred, ret_pred = self.world_decoder.predict(batch.states, batch.actions, z)

        k0 = 0 if cfg.include_first_step else 1
        sel = (slice(None), slice(k0, K))
        s_err = ad.take(s_pred, sel) - Tensor(batch.states[:, k0 + 1:K + 1].astype(dtype, copy=False))
        r_err = ad.take(r_pred, sel) - Tensor(batch.rewards[:, k0:K].astype(dtype, copy=False))
        ret_err = ad.take(ret_pred, sel) - Tensor(batch.returns[:, k0 + 1:K + 1].astype(dtype, copy=False))
        per_step = (ad.tsum(s_err * s_err, axis=-1) + r_err * r_err + ret_err * ret_err) * 0.5
        mask = batch.action_mask[:, k0:K]
        recon = _masked_mean(per_step, mask, dtype)
        kl = ad.tmean(kl_to_uniform(probs))
        loss = recon + kl * cfg.beta
        return loss, {"world_recon": recon.item(), "world_kl": kl.item()}

    def loss(self, batch: WindowBatch, rng: np.random.Generator):
        lp, parts_p = self.policy_elbo_loss(batch, rng)
        lw, parts_w = self.world_elbo_loss(batch, rng)
        return lp + lw, {**parts_p, **parts_w}


def _masked_mean(per_step: Tensor, mask: np.ndarray, dtype) -> Tensor:
    m = Tensor(mask.astype(dtype, copy=False))
    denom = max(float(mask.sum()), 1.0)
    return ad.tsum(per_step * m) * (1.0 / denom)


def enumerate_codes_onehot(codes: np.ndarray, c: int, dtype=np.float64) -> np.ndarray:
    """Integer codes (N, n) -> one-hot (N, n, c)."""
    n_rows, n_dims = codes.shape
    onehot = np.zeros((n_rows, n_dims, c), dtype=dtype)
    np.put_along_axis(onehot, codes[..., None], 1.0, axis=-1)
    return onehot
