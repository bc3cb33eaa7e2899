#!/usr/bin/env python3
"""Full trailing-benchmark experiment: collect, train all three models, then
evaluate max-min planning, the max-over-futures ablation, behavior cloning,
return conditioning, and the best data-collection controller in one table."""

import argparse
import json
import os
import sys

from splt.cli import main as cli


def run(out_dir: str, seed: int, steps: int, splt_steps: int, baseline_steps: int,
        episodes: int, n_seeds: int, dtype: str) -> int:
    os.makedirs(out_dir, exist_ok=True)
    ds = os.path.join(out_dir, "toy.ds")
    splt_ck = os.path.join(out_dir, "toy_splt.ckpt")
    bc_ck = os.path.join(out_dir, "toy_bc.ckpt")
    dt_ck = os.path.join(out_dir, "toy_dt.ckpt")

    cli(["collect", "--env", "toy", "--steps", str(steps), "--seed", str(seed), "--out", ds])
    common = ["--dataset", ds, "--context", "5", "--layers", "2", "--heads", "8",
              "--embed", "48", "--batch", "64", "--lr", "1e-4", "--warmup", "200",
              "--clip-norm", "1.0", "--dtype", dtype, "--seed", str(seed),
              "--log-every", "250", "--verbose"]
    cli(["train", "--model", "splt", "--c", "2", "--nw", "2", "--npi", "3",
         "--beta", "1e-3", "--steps", str(splt_steps), "--out", splt_ck] + common)
    cli(["train", "--model", "bc", "--steps", str(baseline_steps), "--out", bc_ck] + common)
    cli(["train", "--model", "dt", "--steps", str(baseline_steps), "--out", dt_ck] + common)

    runs = {"runs": [
        {"name": "SPLT", "checkpoint": splt_ck, "env": "toy", "episodes": episodes,
         "n_seeds": n_seeds, "planner": "maxmin", "horizon": 5, "seed": seed},
        {"name": "SPLT(max)", "checkpoint": splt_ck, "env": "toy", "episodes": episodes,
         "n_seeds": n_seeds, "planner": "maxmax", "horizon": 5, "seed": seed},
        {"name": "BC", "checkpoint": bc_ck, "env": "toy", "episodes": episodes,
         "n_seeds": n_seeds, "seed": seed},
        {"name": "DT(t)", "checkpoint": dt_ck, "env": "toy", "episodes": episodes,
         "n_seeds": n_seeds, "alpha": 0.86, "dataset": ds, "seed": seed},
        {"name": "DT(m)", "checkpoint": dt_ck, "env": "toy", "episodes": episodes,
         "n_seeds": n_seeds, "alpha": 1.0, "dataset": ds, "seed": seed},
        {"name": "IDM(t)", "policy": "idm", "env": "toy", "episodes": episodes,
         "n_seeds": n_seeds, "idm_headway": 1.4, "idm_min_gap": 1.0, "seed": seed},
    ]}
    spec = os.path.join(out_dir, "comparison_runs.json")
    with open(spec, "w") as fh:
        json.dump(runs, fh, indent=2)
    return cli(["compare", "--runs", spec, "--out", os.path.join(out_dir, "comparison.csv")])


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="runs/toy")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=100_000)
    ap.add_argument("--splt-steps", type=int, default=5000)
    ap.add_argument("--baseline-steps", type=int, default=2500)
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--n-seeds", type=int, default=3)
    ap.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    a = ap.parse_args()
    sys.exit(run(a.out_dir, a.seed, a.steps, a.splt_steps, a.baseline_steps,
                 a.episodes, a.n_seeds, a.dtype))
