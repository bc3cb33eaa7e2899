"""GPT-style transformer blocks shared by the encoders, decoders and baselines.

Sequences are built from raw state/action (and optionally return-to-go)
vectors: each modality gets its own linear projection + layer normalization,
plus a learned positional embedding per timestep that is shared by all tokens
of that timestep.  Attention is either causal (decoders) or full (encoders);
full-attention sequences additionally mask padded key positions so padding
cannot influence valid tokens.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TOKEN_STATE = 0
TOKEN_ACTION = 1
TOKEN_RETURN = 2


@dataclass(frozen=True)
class TransformerConfig:
    """Architecture knobs for one transformer network."""

    n_layers: int = 4
    n_heads: int = 8
    embed_dim: int = 128
    max_timesteps: int = 6
    attention_mode: str = "causal"  # "causal" or "full"
    mlp_ratio: int = 4
    use_positional: bool = True
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.embed_dim % self.n_heads != 0:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by n_heads {self.n_heads}")
        if self.attention_mode not in ("causal", "full"):
            raise ValueError(f"unknown attention_mode {self.attention_mode!r}")


@dataclass
class TokenSequence:
    """Token embeddings plus per-position metadata.

    ``token_types`` and ``timesteps`` have shape (T,) and are shared across
    the batch; ``mask`` is (B, T) with 1 for real tokens and 0 for padding
    (None means everything is valid).
    """

    embeddings: Tensor
    token_types: np.ndarray
    timesteps: np.ndarray
    mask: np.ndarray | None = None

    @property
    def n_tokens(self) -> int:
        return self.embeddings.shape[1]

    def with_embeddings(self, emb: Tensor) -> "TokenSequence":
        return TokenSequence(emb, self.token_types, self.timesteps, self.mask)


class Linear:
    def __init__(self, rng, d_in: int, d_out: int, dtype=np.float64, std: float = 0.02):
        self.w = Tensor(rng.normal(0.0, std, size=(d_in, d_out)).astype(dtype), requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.matmul(x, self.w) + self.b

    def named_params(self):
        return {"w": self.w, "b": self.b}

    def decay_names(self):
        return {"w"}


class LayerNorm:
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gain, self.bias, eps=self.eps)

    def named_params(self):
        return {"gain": self.gain, "bias": self.bias}

    def decay_names(self):
        return set()


def merge_params(children: dict[str, object]) -> tuple[dict[str, Tensor], set[str]]:
    """Collect named parameters (and decay names) from child modules."""
    params: dict[str, Tensor] = {}
    decay: set[str] = set()
    for prefix, module in children.items():
        for name, tensor in module.named_params().items():
            params[f"{prefix}.{name}"] = tensor
        for name in module.decay_names():
            decay.add(f"{prefix}.{name}")
    return params, decay


class SelfAttention:
    def __init__(self, rng, cfg: TransformerConfig, dtype=np.float64):
        self.cfg = cfg
        self.qkv = Linear(rng, cfg.embed_dim, 3 * cfg.embed_dim, dtype=dtype)
        self.proj = Linear(rng, cfg.embed_dim, cfg.embed_dim, dtype=dtype)

    def __call__(self, x: Tensor, attn_bias: np.ndarray | None) -> Tensor:
        b, t, d = x.shape
        h = self.cfg.n_heads
        dh = d // h
        qkv = self.qkv(x)
        q = ad.take(qkv, (slice(None), slice(None), slice(0, d)))
        k = ad.take(qkv, (slice(None), slice(None), slice(d, 2 * d)))
        v = ad.take(qkv, (slice(None), slice(None), slice(2 * d, 3 * d)))
        q = ad.transpose(ad.reshape(q, (b, t, h, dh)), (0, 2, 1, 3))
        k = ad.transpose(ad.reshape(k, (b, t, h, dh)), (0, 2, 1, 3))
        v = ad.transpose(ad.reshape(v, (b, t, h, dh)), (0, 2, 1, 3))
        scores = ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        if attn_bias is not None:
            scores = scores + Tensor(attn_bias.astype(x.dtype, copy=False))
        weights = ad.softmax(scores, axis=-1)
        out = ad.matmul(weights, v)
        out = ad.reshape(ad.transpose(out, (0, 2, 1, 3)), (b, t, d))
        return self.proj(out)

    def named_params(self):
        p, _ = merge_params({"qkv": self.qkv, "proj": self.proj})
        return p

    def decay_names(self):
        _, d = merge_params({"qkv": self.qkv, "proj": self.proj})
        return d


class Block:
    """Pre-norm residual block: x + Attn(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, rng, cfg: TransformerConfig, dtype=np.float64):
        d = cfg.embed_dim
        self.ln1 = LayerNorm(d, dtype=dtype, eps=cfg.ln_eps)
        self.attn = SelfAttention(rng, cfg, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype=dtype, eps=cfg.ln_eps)
        self.fc = Linear(rng, d, cfg.mlp_ratio * d, dtype=dtype)
        self.out = Linear(rng, cfg.mlp_ratio * d, d, dtype=dtype)

    def __call__(self, x: Tensor, attn_bias: np.ndarray | None) -> Tensor:
        x = x + self.attn(self.ln1(x), attn_bias)
        x = x + self.out(ad.gelu(self.fc(self.ln2(x))))
        return x

    def _children(self):
        return {"ln1": self.ln1, "attn": self.attn, "ln2": self.ln2, "fc": self.fc, "out": self.out}

    def named_params(self):
        p, _ = merge_params(self._children())
        return p

    def decay_names(self):
        _, d = merge_params(self._children())
        return d


class Backbone:
    """Stack of residual blocks with a final layer norm."""

    def __init__(self, rng, cfg: TransformerConfig, dtype=np.float64):
        self.cfg = cfg
        self.blocks = [Block(rng, cfg, dtype=dtype) for _ in range(cfg.n_layers)]
        self.ln_f = LayerNorm(cfg.embed_dim, dtype=dtype, eps=cfg.ln_eps)

    def __call__(self, seq: TokenSequence) -> TokenSequence:
        bias = attention_bias(self.cfg.attention_mode, seq.n_tokens, seq.mask)
        x = seq.embeddings
        for block in self.blocks:
            x = block(x, bias)
        return seq.with_embeddings(self.ln_f(x))

    def _children(self):
        children = {f"block{i}": blk for i, blk in enumerate(self.blocks)}
        children["ln_f"] = self.ln_f
        return children

    def named_params(self):
        p, _ = merge_params(self._children())
        return p

    def decay_names(self):
        _, d = merge_params(self._children())
        return d


def attention_bias(mode: str, n_tokens: int, mask: np.ndarray | None) -> np.ndarray | None:
    """Additive attention bias: 0 for allowed pairs, -inf for forbidden ones.

    Causal mode forbids attending to later positions.  A token mask (for
    full-attention encoders over padded windows) forbids every query from
    attending to padded keys; padded queries keep their valid keys so softmax
    stays finite, and their outputs are excluded downstream.
    """
    bias = None
    if mode == "causal":
        bias = np.where(np.tril(np.ones((n_tokens, n_tokens), dtype=bool)), 0.0, -np.inf)[None, None]
    if mask is not None:
        key_bias = np.where(mask[:, None, None, :] > 0, 0.0, -np.inf)
        bias = key_bias if bias is None else bias + key_bias
    return bias


class WindowEmbedder:
    """Raw-value projections + positional encodings for one network.

    ``mode`` selects the token layout:
      - "decoder-interleaved": s, a, s, a, ..., s   (2T-1 tokens, ends on state)
      - "encoder-interleaved": s, a, ..., s, a      (2T tokens, ends on action)
      - "dt-triplet":          R, s, a per step     (3T tokens)
    Planner rollouts also use the interleaved layouts with one fewer action
    than states (policy queries) or equal counts (world queries); both are
    handled by ``embed_interleaved``.
    """

    def __init__(self, rng, cfg: TransformerConfig, state_dim: int, action_dim: int,
                 with_returns: bool = False, dtype=np.float64):
        self.cfg = cfg
        d = cfg.embed_dim
        self.state_proj = Linear(rng, state_dim, d, dtype=dtype)
        self.state_ln = LayerNorm(d, dtype=dtype, eps=cfg.ln_eps)
        self.action_proj = Linear(rng, action_dim, d, dtype=dtype)
        self.action_ln = LayerNorm(d, dtype=dtype, eps=cfg.ln_eps)
        self.with_returns = with_returns
        if with_returns:
            self.return_proj = Linear(rng, 1, d, dtype=dtype)
            self.return_ln = LayerNorm(d, dtype=dtype, eps=cfg.ln_eps)
        self.pos = Tensor(rng.normal(0.0, 0.02, size=(cfg.max_timesteps, d)).astype(dtype), requires_grad=True)
        self.dtype = dtype

    def _check_len(self, n_steps: int):
        if n_steps > self.cfg.max_timesteps:
            raise ValueError(f"window of {n_steps} timesteps exceeds max_timesteps {self.cfg.max_timesteps}")

    def _positions(self, n_steps: int) -> Tensor | None:
        if not self.cfg.use_positional:
            return None
        return ad.take(self.pos, slice(0, n_steps))

    def embed_interleaved(self, states: np.ndarray, actions: np.ndarray,
                          state_mask: np.ndarray | None = None,
                          action_mask: np.ndarray | None = None) -> TokenSequence:
        """Interleave state/action tokens; actions may be one shorter."""
        b, ts, _ = states.shape
        ta = actions.shape[1]
        if ta not in (ts, ts - 1):
            raise ValueError(f"need {ts} or {ts - 1} actions for {ts} states, got {ta}")
        self._check_len(ts)
        drop_last = ta == ts - 1
        if drop_last:
            pad = np.zeros((b, 1, actions.shape[2]), dtype=actions.dtype)
            actions = np.concatenate([actions, pad], axis=1)

        s_tok = self.state_ln(self.state_proj(Tensor(states.astype(self.dtype, copy=False))))
        a_tok = self.action_ln(self.action_proj(Tensor(actions.astype(self.dtype, copy=False))))
        pos = self._positions(ts)
        if pos is not None:
            s_tok = s_tok + pos
            a_tok = a_tok + pos
        tokens = ad.reshape(ad.stack([s_tok, a_tok], axis=2), (b, 2 * ts, self.cfg.embed_dim))

        types = np.tile([TOKEN_STATE, TOKEN_ACTION], ts)
        steps = np.repeat(np.arange(ts), 2)
        mask = None
        if state_mask is not None or action_mask is not None:
            sm = np.ones((b, ts)) if state_mask is None else state_mask
            am = np.ones((b, ts)) if action_mask is None else action_mask
            if am.shape[1] == ts - 1:
                am = np.concatenate([am, np.zeros((b, 1))], axis=1)
            mask = np.stack([sm, am], axis=2).reshape(b, 2 * ts)
        if drop_last:
            tokens = ad.take(tokens, (slice(None), slice(0, 2 * ts - 1)))
            types = types[: 2 * ts - 1]
            steps = steps[: 2 * ts - 1]
            mask = mask[:, : 2 * ts - 1] if mask is not None else None
        return TokenSequence(tokens, types, steps, mask)

    def embed_triplet(self, returns: np.ndarray, states: np.ndarray, actions: np.ndarray,
                      state_mask: np.ndarray | None = None,
                      action_mask: np.ndarray | None = None) -> TokenSequence:
        """(return, state, action) token triplets for return-conditioned models.

        Actions may be one shorter than states/returns (deployment queries
        that end on the current state); the trailing (R, s) pair is kept.
        """
        if not self.with_returns:
            raise ValueError("embedder was built without a return projection")
        b, ts, _ = states.shape
        ta = actions.shape[1]
        if ta not in (ts, ts - 1):
            raise ValueError(f"need {ts} or {ts - 1} actions for {ts} states, got {ta}")
        self._check_len(ts)
        drop_last = ta == ts - 1
        if drop_last:
            pad = np.zeros((b, 1, actions.shape[2]), dtype=actions.dtype)
            actions = np.concatenate([actions, pad], axis=1)

        r_tok = self.return_ln(self.return_proj(Tensor(returns.astype(self.dtype, copy=False).reshape(b, ts, 1))))
        s_tok = self.state_ln(self.state_proj(Tensor(states.astype(self.dtype, copy=False))))
        a_tok = self.action_ln(self.action_proj(Tensor(actions.astype(self.dtype, copy=False))))
        pos = self._positions(ts)
        if pos is not None:
            r_tok = r_tok + pos
            s_tok = s_tok + pos
            a_tok = a_tok + pos
        tokens = ad.reshape(ad.stack([r_tok, s_tok, a_tok], axis=2), (b, 3 * ts, self.cfg.embed_dim))

        types = np.tile([TOKEN_RETURN, TOKEN_STATE, TOKEN_ACTION], ts)
        steps = np.repeat(np.arange(ts), 3)
        mask = None
        if state_mask is not None or action_mask is not None:
            sm = np.ones((b, ts)) if state_mask is None else state_mask
            am = np.ones((b, ts)) if action_mask is None else action_mask
            if am.shape[1] == ts - 1:
                am = np.concatenate([am, np.zeros((b, 1))], axis=1)
            mask = np.stack([sm, sm, am], axis=2).reshape(b, 3 * ts)
        if drop_last:
            tokens = ad.take(tokens, (slice(None), slice(0, 3 * ts - 1)))
            types = types[: 3 * ts - 1]
            steps = steps[: 3 * ts - 1]
            mask = mask[:, : 3 * ts - 1] if mask is not None else None
        return TokenSequence(tokens, types, steps, mask)

    def _children(self):
        children = {
            "state_proj": self.state_proj,
            "state_ln": self.state_ln,
            "action_proj": self.action_proj,
            "action_ln": self.action_ln,
        }
        if self.with_returns:
            children["return_proj"] = self.return_proj
            children["return_ln"] = self.return_ln
        return children

    def named_params(self):
        p, _ = merge_params(self._children())
        if self.cfg.use_positional:
            p["pos"] = self.pos
        return p

    def decay_names(self):
        # Positional table is an embedding: excluded from weight decay.
        _, d = merge_params(self._children())
        return d


def mean_pool(seq: TokenSequence) -> Tensor:
    """Arithmetic mean of final-layer outputs over (valid) positions."""
    if seq.n_tokens == 0:
        raise ValueError("cannot pool an empty sequence")
    if seq.mask is None:
        return ad.tmean(seq.embeddings, axis=1)
    dtype = seq.embeddings.dtype
    m = seq.mask.astype(dtype)[:, :, None]
    total = ad.tsum(seq.embeddings * Tensor(m), axis=1)
    counts = Tensor(np.maximum(m.sum(axis=1), 1.0))
    return total / counts


def add_latent_conditioning(seq: TokenSequence, z_embed: Tensor) -> TokenSequence:
    """Add one conditioning vector to every token embedding (not a new token)."""
    b, d = z_embed.shape
    return seq.with_embeddings(seq.embeddings + ad.reshape(z_embed, (b, 1, d)))


def count_params(params: dict[str, Tensor]) -> int:
    return sum(int(p.data.size) for p in params.values())
