"""Training loop shared by all three model kinds.

One Adam optimizer over the model's full registry (decoupled weight decay on
weight matrices only; layer-norm gains/biases, all biases, and embedding
tables are excluded), a linear-warmup-then-constant learning-rate schedule,
optional global-norm gradient clipping, and a loss-curve CSV next to the
emitted checkpoint.  All randomness derives from the config seed via named
streams, so a training run is a pure function of (dataset, config).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .autodiff import AdamState, Tape, adam_step, clip_grad_norm, collect_grads, lr_schedule, zero_grad
from .baselines import BaselineConfig
from .checkpoint import make_model, save_checkpoint
from .data import Dataset, sample_windows
from .models import SpltConfig
from .utils import rng_stream, write_csv


@dataclass
class TrainConfig:
    model: str = "splt"             # splt | bc | dt
    context: int = 5
    n_layers: int = 4
    n_heads: int = 8
    embed_dim: int = 128
    c: int = 2
    n_w: int = 2
    n_pi: int = 3
    beta: float = 1e-3
    steps: int = 5000
    batch_size: int = 64
    lr: float = 1e-4
    weight_decay: float = 0.1
    warmup_steps: int = 10_000
    clip_norm: float | None = None
    include_first_step: bool = False
    latent_width: int = 0
    discounted_targets: bool = True
    seed: int = 0
    dtype: str = "float64"
    log_every: int = 50

    def model_config(self, state_dim: int, action_dim: int, gamma: float):
        if self.model == "splt":
            return SpltConfig(
                state_dim=state_dim, action_dim=action_dim, context=self.context,
                n_layers=self.n_layers, n_heads=self.n_heads, embed_dim=self.embed_dim,
                c=self.c, n_w=self.n_w, n_pi=self.n_pi, beta=self.beta, gamma=gamma,
                include_first_step=self.include_first_step, latent_width=self.latent_width,
                dtype=self.dtype)
        return BaselineConfig(
            kind=self.model, state_dim=state_dim, action_dim=action_dim, context=self.context,
            n_layers=self.n_layers, n_heads=self.n_heads, embed_dim=self.embed_dim,
            gamma=gamma, discounted_targets=self.discounted_targets, dtype=self.dtype)


def train_model(dataset: Dataset, cfg: TrainConfig, checkpoint_path: str,
                losses_csv_path: str | None = None, verbose: bool = False):
    """Train one model on the dataset; returns (model, loss history)."""
    model_cfg = cfg.model_config(dataset.state_dim, dataset.action_dim, dataset.gamma)
    model = make_model(cfg.model, model_cfg, rng_stream(cfg.seed, "init", cfg.model))
    params = model.named_params()
    state = AdamState(lr=cfg.lr, weight_decay=cfg.weight_decay,
                      decay_params=frozenset(model.decay_names()))
    window_rng = rng_stream(cfg.seed, "train", "windows")
    latent_rng = rng_stream(cfg.seed, "train", "latents")

    history = []
    t_start = time.time()
    for step in range(cfg.steps):
        batch = sample_windows(dataset, cfg.context, cfg.batch_size, window_rng).normalized(dataset.stats)
        zero_grad(params)
        with Tape() as tape:
            loss, parts = model.loss(batch, latent_rng)
        tape.backward(loss)
        grads = collect_grads(params)
        if cfg.clip_norm is not None:
            clip_grad_norm(params, cfg.clip_norm)
            grads = collect_grads(params)
        state.lr = lr_schedule(step + 1, cfg.warmup_steps, cfg.lr)
        adam_step(params, grads, state)
        if step % cfg.log_every == 0 or step == cfg.steps - 1:
            history.append({"step": step, "lr": state.lr, "loss": loss.item(), **parts})
            if verbose:
                rate = (step + 1) / max(time.time() - t_start, 1e-9)
                print(f"  step {step:6d}  loss {loss.item():.5f}  ({rate:.1f} steps/s)", flush=True)

    extra = {
        "train_config": asdict(cfg),
        "dataset_meta": dataset.meta,
        "env_config": dataset.env_config,
        "gamma": dataset.gamma,
    }
    save_checkpoint(checkpoint_path, cfg.model, model, dataset.stats, extra=extra)
    if losses_csv_path:
        columns = sorted({k for row in history for k in row})
        rows = [[row.get(c, "") for c in columns] for row in history]
        write_csv(losses_csv_path,
                  [f"code_version: {__version__}", f"config: {json.dumps(asdict(cfg), sort_keys=True)}"],
                  columns, rows)
    return model, history
