#!/usr/bin/env python3
"""End-to-end optimism-bias experiment on the five-state MDP.

Collects a uniform-random dataset, trains the separated-latent model and the
return-conditioned baseline at the small configuration, then reports action
frequencies at the start state for max-min planning, max-max planning, and
return conditioning.  Everything is driven through the CLI so the exact
commands are reproducible by hand.
"""

import argparse
import os
import sys

from splt.cli import main as cli


def run(out_dir: str, seed: int, steps: int, train_steps: int, dt_steps: int) -> int:
    os.makedirs(out_dir, exist_ok=True)
    ds = os.path.join(out_dir, "mdp.ds")
    splt_ck = os.path.join(out_dir, "mdp_splt.ckpt")
    dt_ck = os.path.join(out_dir, "mdp_dt.ckpt")
    report = os.path.join(out_dir, "mdp_demo.json")

    cli(["collect", "--env", "mdp", "--steps", str(steps), "--seed", str(seed), "--out", ds])
    common = ["--dataset", ds, "--context", "1", "--layers", "2", "--heads", "8",
              "--embed", "64", "--batch", "128", "--lr", "1e-4", "--warmup", "100",
              "--clip-norm", "1.0", "--seed", str(seed), "--log-every", "250", "--verbose"]
    cli(["train", "--model", "splt", "--c", "2", "--nw", "1", "--npi", "1",
         "--beta", "1e-3", "--include-first-step", "--steps", str(train_steps),
         "--out", splt_ck] + common)
    cli(["train", "--model", "dt", "--steps", str(dt_steps), "--out", dt_ck] + common)
    return cli(["mdp-demo", "--splt", splt_ck, "--dt", dt_ck, "--decisions", "100",
                "--seed", str(seed), "--horizon", "0", "--out", report])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/mdp")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=10_000)
    ap.add_argument("--train-steps", type=int, default=2000)
    ap.add_argument("--dt-steps", type=int, default=1500)
    a = ap.parse_args()
    sys.exit(run(a.out_dir, a.seed, a.steps, a.train_steps, a.dt_steps))
