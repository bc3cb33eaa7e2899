"""Command-line harness: collect | train | eval | compare | mdp-demo.

Every output artifact embeds the exact configuration that produced it plus
the code version.  A JSON --config file supplies flag defaults (explicit
command-line flags still win).  All randomness flows from --seed through
named streams; see utils.rng_stream.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import __version__
from .baselines import dt_target_return
from .checkpoint import load_checkpoint
from .data import (
    IdmParams,
    collect_mdp_dataset,
    collect_toy_dataset,
    load_dataset,
    save_dataset,
)
from .evaluation import (
    BcPolicy,
    DtPolicy,
    IdmPolicy,
    MetricsReport,
    PlannerPolicy,
    evaluate_policy,
    run_mdp_demo,
    toy_cfg_from_meta,
)
from .planner import Planner
from .training import TrainConfig, train_model
from .utils import atomic_write_bytes, write_csv


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="root seed for all derived streams")
    common.add_argument("--out-dir", default=".", help="directory for outputs without explicit paths")
    common.add_argument("--config", default=None, help="JSON file supplying flag defaults")

    p = argparse.ArgumentParser(prog="splt", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("collect", parents=[common], help="roll offline datasets")
    c.add_argument("--env", choices=("toy", "mdp"), required=True)
    c.add_argument("--steps", type=int, default=100_000)
    c.add_argument("--gamma", type=float, default=0.99)
    c.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="train a model on a dataset")
    t.add_argument("--dataset", required=True)
    t.add_argument("--model", choices=("splt", "bc", "dt"), required=True)
    t.add_argument("--c", type=int, default=2)
    t.add_argument("--nw", type=int, default=2)
    t.add_argument("--npi", type=int, default=3)
    t.add_argument("--beta", type=float, default=1e-3)
    t.add_argument("--context", type=int, default=5)
    t.add_argument("--layers", type=int, default=4)
    t.add_argument("--heads", type=int, default=8)
    t.add_argument("--embed", type=int, default=128)
    t.add_argument("--steps", type=int, default=5000)
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--weight-decay", type=float, default=0.1)
    t.add_argument("--warmup", type=int, default=10_000)
    t.add_argument("--clip-norm", type=float, default=None)
    t.add_argument("--include-first-step", action="store_true")
    t.add_argument("--latent-width", type=int, default=0)
    t.add_argument("--undiscounted-targets", action="store_true",
                   help="return-conditioned baseline uses undiscounted returns-to-go")
    t.add_argument("--dtype", choices=("float64", "float32"), default="float64")
    t.add_argument("--log-every", type=int, default=50)
    t.add_argument("--verbose", action="store_true")
    t.add_argument("--out", required=True, help="checkpoint path; loss CSV lands beside it")

    e = sub.add_parser("eval", parents=[common], help="closed-loop evaluation")
    e.add_argument("--checkpoint", default=None)
    e.add_argument("--env", choices=("toy", "mdp"), required=True)
    e.add_argument("--episodes", type=int, default=100)
    e.add_argument("--n-seeds", type=int, default=3)
    e.add_argument("--seeds", default=None, help="comma list overriding the derived seed set")
    e.add_argument("--policy", choices=("auto", "splt", "bc", "dt", "idm"), default="auto")
    e.add_argument("--planner", choices=("maxmin", "maxmax"), default="maxmin")
    e.add_argument("--horizon", type=int, default=5)
    e.add_argument("--context", type=int, default=None)
    e.add_argument("--target-return", type=float, default=None)
    e.add_argument("--alpha", type=float, default=None)
    e.add_argument("--dataset", default=None, help="needed to resolve --alpha targets")
    e.add_argument("--idm-headway", type=float, default=1.5)
    e.add_argument("--idm-min-gap", type=float, default=2.0)
    e.add_argument("--gamma", type=float, default=0.99, help="used when no checkpoint supplies one")
    e.add_argument("--metrics-out", default=None)
    e.add_argument("--dump-candidates", default=None, help="JSONL of per-step return matrices")

    r = sub.add_parser("compare", parents=[common], help="run several evals, one table")
    r.add_argument("--runs", default=None, help="JSON file: {\"runs\": [{name, eval flags...}]}")
    r.add_argument("--out", default=None, help="comparison CSV path")

    m = sub.add_parser("mdp-demo", parents=[common], help="optimism-bias report")
    m.add_argument("--splt", required=True, help="trained splt checkpoint")
    m.add_argument("--dt", required=True, help="trained dt checkpoint")
    m.add_argument("--decisions", type=int, default=100)
    m.add_argument("--horizon", type=int, default=0)
    m.add_argument("--out", default=None, help="JSON report path")
    return p


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args, _ = parser.parse_known_args(argv)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            defaults = json.load(fh)
        parser = build_parser()
        for action in parser._subparsers._group_actions[0].choices.values():
            action.set_defaults(**{k: v for k, v in defaults.items()})
        args = parser.parse_args(argv)
    else:
        args = parser.parse_args(argv)
    return args


def _provenance(args: argparse.Namespace) -> list[str]:
    cfg = {k: v for k, v in vars(args).items() if k != "command"}
    return [f"code_version: {__version__}", f"config: {json.dumps(cfg, sort_keys=True, default=str)}"]


def cmd_collect(args) -> int:
    if args.env == "toy":
        ds = collect_toy_dataset(args.steps, seed=args.seed, gamma=args.gamma)
    else:
        ds = collect_mdp_dataset(args.steps, seed=args.seed, gamma=args.gamma)
    ds.meta["cli_config"] = {k: v for k, v in vars(args).items() if k != "command"}
    save_dataset(args.out, ds)
    print(f"wrote {args.out}: {len(ds.episodes)} episodes, {ds.n_steps} steps, "
          f"crash fraction {ds.crash_fraction():.3f}")
    return 0


def cmd_train(args) -> int:
    dataset = load_dataset(args.dataset)
    cfg = TrainConfig(
        model=args.model, context=args.context, n_layers=args.layers, n_heads=args.heads,
        embed_dim=args.embed, c=args.c, n_w=args.nw, n_pi=args.npi, beta=args.beta,
        steps=args.steps, batch_size=args.batch, lr=args.lr, weight_decay=args.weight_decay,
        warmup_steps=args.warmup, clip_norm=args.clip_norm,
        include_first_step=args.include_first_step, latent_width=args.latent_width,
        discounted_targets=not args.undiscounted_targets, seed=args.seed, dtype=args.dtype,
        log_every=args.log_every)
    base, _ = os.path.splitext(args.out)
    _, history = train_model(dataset, cfg, args.out, losses_csv_path=base + ".losses.csv",
                             verbose=args.verbose)
    print(f"wrote {args.out} (final loss {history[-1]['loss']:.5f})")
    return 0


def _eval_seeds(args) -> list[int]:
    if args.seeds:
        return [int(s) for s in str(args.seeds).split(",") if s != ""]
    return [args.seed + i for i in range(args.n_seeds)]


def build_eval_policy(args):
    """Returns (policy, gamma, toy_cfg, dump_rows)."""
    dump_rows = [] if args.dump_candidates else None
    if args.policy == "idm":
        if args.env != "toy":
            raise ValueError("the idm policy only applies to the toy environment")
        return IdmPolicy(IdmParams(headway=args.idm_headway, min_gap=args.idm_min_gap)), args.gamma, None, dump_rows

    if not args.checkpoint:
        raise ValueError("--checkpoint is required unless --policy idm")
    bundle = load_checkpoint(args.checkpoint)
    kind = bundle.kind if args.policy == "auto" else args.policy
    if kind != bundle.kind:
        raise ValueError(f"checkpoint holds a {bundle.kind!r} model, not {kind!r}")

    from .envs import make_env
    probe = make_env(args.env)
    if bundle.config.state_dim != probe.state_dim or bundle.config.action_dim != probe.action_dim:
        raise ValueError(
            f"checkpoint dimensions (state {bundle.config.state_dim}, action {bundle.config.action_dim}) "
            f"do not match environment {args.env!r}")

    gamma = bundle.config.gamma
    env_config = bundle.meta.get("extra", {}).get("env_config") or {}
    toy_cfg = toy_cfg_from_meta(env_config) if args.env == "toy" and env_config.get("env") == "toy" else None

    if kind == "splt":
        planner = Planner(bundle.model, bundle.stats, horizon=args.horizon,
                          context=args.context, mode=args.planner)
        return PlannerPolicy(planner, dump=dump_rows), gamma, toy_cfg, dump_rows
    if kind == "bc":
        return BcPolicy(bundle.model, bundle.stats, context=args.context), gamma, toy_cfg, dump_rows
    if kind == "dt":
        target = args.target_return
        if target is None:
            alpha = 1.0 if args.alpha is None else args.alpha
            if not args.dataset:
                raise ValueError("resolving a target return from --alpha requires --dataset")
            target = dt_target_return(load_dataset(args.dataset), alpha)
        return DtPolicy(bundle.model, bundle.stats, target_return=target,
                        context=args.context), gamma, toy_cfg, dump_rows
    raise ValueError(f"unknown policy kind {kind!r}")


def cmd_eval(args) -> int:
    policy, gamma, toy_cfg, dump_rows = build_eval_policy(args)
    seeds = _eval_seeds(args)
    report = evaluate_policy(args.env, policy, args.episodes, seeds, gamma, toy_cfg=toy_cfg)
    if args.metrics_out:
        write_csv(args.metrics_out, _provenance(args), MetricsReport.COLUMNS, report.rows())
    if dump_rows is not None:
        lines = [json.dumps({"config": _provenance(args)[1]})]
        lines += [json.dumps(r) for r in dump_rows]
        atomic_write_bytes(args.dump_candidates, ("\n".join(lines) + "\n").encode())
    print(f"return {report.return_mean:.2f} +- {report.return_std:.2f} | "
          f"success {report.success_mean:.1f}% +- {report.success_std:.1f} "
          f"({args.episodes} episodes x {len(seeds)} seeds)")
    return 0


def render_comparison(names: list[str], reports: list[MetricsReport]) -> str:
    header = ["Metric"] + names
    return_row = ["Return"] + [f"{r.return_mean:.1f} +- {r.return_std:.1f}" for r in reports]
    success_row = ["Success (%)"] + [f"{r.success_mean:.1f} +- {r.success_std:.1f}" for r in reports]
    widths = [max(len(row[i]) for row in (header, return_row, success_row)) for i in range(len(header))]
    def fmt(row):
        return " | ".join(v.ljust(w) for v, w in zip(row, widths))
    sep = "-+-".join("-" * w for w in widths)
    return "\n".join([fmt(header), sep, fmt(return_row), fmt(success_row)])


def cmd_compare(args) -> int:
    if not args.runs:
        raise ValueError("compare needs --runs FILE (JSON with a 'runs' list of eval flag sets)")
    with open(args.runs, "r", encoding="utf-8") as fh:
        spec = json.load(fh)
    names, reports = [], []
    rows = []
    for run in spec["runs"]:
        run_args = parse_args(["eval", "--env", run.get("env", "toy")])
        for key, value in run.items():
            if key != "name":
                setattr(run_args, key.replace("-", "_"), value)
        policy, gamma, toy_cfg, _ = build_eval_policy(run_args)
        seeds = _eval_seeds(run_args)
        report = evaluate_policy(run_args.env, policy, run_args.episodes, seeds, gamma, toy_cfg=toy_cfg)
        name = run.get("name", run.get("policy", "run"))
        names.append(name)
        reports.append(report)
        rows.append([name, report.return_mean, report.return_std,
                     report.success_mean, report.success_std])
    table = render_comparison(names, reports)
    print(table)
    out = args.out or os.path.join(args.out_dir, "comparison.csv")
    write_csv(out, _provenance(args), ["name", "return_mean", "return_std", "success_mean", "success_std"], rows)
    txt = os.path.splitext(out)[0] + ".txt"
    atomic_write_bytes(txt, (table + "\n").encode())
    return 0


def cmd_mdp_demo(args) -> int:
    splt_bundle = load_checkpoint(args.splt, expect_kind="splt")
    dt_bundle = load_checkpoint(args.dt, expect_kind="dt")
    report = run_mdp_demo(splt_bundle, dt_bundle, args.decisions, args.seed, horizon=args.horizon)
    report["code_version"] = __version__
    report["config"] = {k: v for k, v in vars(args).items() if k != "command"}
    text = json.dumps(report, indent=2)
    print(text)
    if args.out:
        atomic_write_bytes(args.out, (text + "\n").encode())
    return 0


def main(argv=None) -> int:
    args = parse_args(argv if argv is not None else sys.argv[1:])
    handlers = {"collect": cmd_collect, "train": cmd_train, "eval": cmd_eval,
                "compare": cmd_compare, "mdp-demo": cmd_mdp_demo}
    return handlers[args.command](args)


if __name__ == "__main__":
    raise SystemExit(main())
