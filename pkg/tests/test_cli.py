"""End-to-end CLI smoke tests at tiny scale: every subcommand, file round-trips,
provenance embedding, and config-file defaults."""

import json
import os

import numpy as np
import pytest

from splt import __version__
from splt.cli import main, parse_args, render_comparison
from splt.data import load_dataset
from splt.utils import read_csv


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """collect + train the three model kinds once, at throwaway scale."""
    root = tmp_path_factory.mktemp("cli")
    ds = str(root / "mdp.ds")
    assert main(["collect", "--env", "mdp", "--steps", "300", "--seed", "3", "--out", ds]) == 0
    common = ["--dataset", ds, "--context", "1", "--layers", "1", "--heads", "2",
              "--embed", "16", "--steps", "30", "--batch", "16", "--warmup", "10",
              "--seed", "1", "--log-every", "10"]
    splt_ck = str(root / "splt.ckpt")
    bc_ck = str(root / "bc.ckpt")
    dt_ck = str(root / "dt.ckpt")
    assert main(["train", "--model", "splt", "--nw", "1", "--npi", "1",
                 "--include-first-step", "--out", splt_ck] + common) == 0
    assert main(["train", "--model", "bc", "--out", bc_ck] + common) == 0
    assert main(["train", "--model", "dt", "--out", dt_ck] + common) == 0
    return {"root": root, "ds": ds, "splt": splt_ck, "bc": bc_ck, "dt": dt_ck}


class TestCollect:
    def test_dataset_written_and_loadable(self, workspace):
        ds = load_dataset(workspace["ds"])
        assert ds.n_steps == 300
        assert ds.meta["cli_config"]["seed"] == 3

    def test_toy_collect_smoke(self, tmp_path):
        out = str(tmp_path / "toy.ds")
        assert main(["collect", "--env", "toy", "--steps", "500", "--seed", "0", "--out", out]) == 0
        ds = load_dataset(out)
        assert ds.n_steps >= 500
        assert ds.env_config["env"] == "toy"


class TestTrain:
    def test_loss_csv_written_with_provenance(self, workspace):
        losses = os.path.splitext(workspace["splt"])[0] + ".losses.csv"
        comments, columns, rows = read_csv(losses)
        assert any(f"code_version: {__version__}" in c for c in comments)
        assert any("config:" in c for c in comments)
        assert "loss" in columns
        assert len(rows) >= 3

    def test_checkpoint_embeds_train_config(self, workspace):
        from splt.checkpoint import load_checkpoint
        bundle = load_checkpoint(workspace["splt"], expect_kind="splt")
        assert bundle.meta["extra"]["train_config"]["steps"] == 30
        assert bundle.meta["code_version"] == __version__


class TestEval:
    def test_eval_writes_metrics_csv(self, workspace):
        out = str(workspace["root"] / "metrics.csv")
        assert main(["eval", "--checkpoint", workspace["splt"], "--env", "mdp",
                     "--episodes", "10", "--n-seeds", "2", "--seed", "0",
                     "--horizon", "0", "--metrics-out", out]) == 0
        comments, columns, rows = read_csv(out)
        assert columns == ["seed", "return_mean", "return_std", "success_pct", "crashes",
                           "mean_length", "discounted_return_mean"]
        assert rows[-1][0] == "aggregate"
        # CSV parses back to the same numbers
        agg = float(rows[-1][1])
        per_seed = [float(r[1]) for r in rows[:-1]]
        assert agg == pytest.approx(np.mean(per_seed), rel=1e-12)

    def test_eval_dt_with_alpha_needs_dataset(self, workspace):
        with pytest.raises(ValueError, match="dataset"):
            main(["eval", "--checkpoint", workspace["dt"], "--env", "mdp",
                  "--episodes", "2", "--n-seeds", "1", "--alpha", "1.0"])

    def test_eval_dt_with_target(self, workspace):
        assert main(["eval", "--checkpoint", workspace["dt"], "--env", "mdp",
                     "--episodes", "5", "--n-seeds", "1", "--target-return", "10"]) == 0

    def test_eval_idm_policy(self, workspace, tmp_path):
        out = str(tmp_path / "idm.csv")
        assert main(["eval", "--policy", "idm", "--env", "toy", "--episodes", "3",
                     "--n-seeds", "1", "--metrics-out", out]) == 0
        _, _, rows = read_csv(out)
        assert float(rows[-1][3]) >= 0.0

    def test_candidate_dump_jsonl(self, workspace, tmp_path):
        dump = str(tmp_path / "cands.jsonl")
        assert main(["eval", "--checkpoint", workspace["splt"], "--env", "mdp",
                     "--episodes", "3", "--n-seeds", "1", "--horizon", "0",
                     "--dump-candidates", dump]) == 0
        lines = [json.loads(l) for l in open(dump)]
        assert "config" in lines[0]
        assert {"episode", "t", "matrix", "selected", "action"} <= set(lines[1])
        matrix = np.array(lines[1]["matrix"])
        assert matrix.shape == (2, 2)

    def test_dimension_mismatch_rejected(self, workspace):
        with pytest.raises(ValueError, match="dimension"):
            main(["eval", "--checkpoint", workspace["splt"], "--env", "toy",
                  "--episodes", "2", "--n-seeds", "1"])


class TestCompare:
    def test_compare_runs_and_round_trips(self, workspace, tmp_path):
        runs = {"runs": [
            {"name": "planner-a", "checkpoint": workspace["splt"], "env": "mdp",
             "episodes": 5, "n_seeds": 1, "horizon": 0},
            {"name": "planner-b", "checkpoint": workspace["splt"], "env": "mdp",
             "episodes": 5, "n_seeds": 1, "horizon": 0},
        ]}
        spec = str(tmp_path / "runs.json")
        json.dump(runs, open(spec, "w"))
        out = str(tmp_path / "cmp.csv")
        assert main(["compare", "--runs", spec, "--out", out]) == 0
        _, columns, rows = read_csv(out)
        assert len(rows) == 2
        # identical configs produce identical rows
        assert rows[0][1:] == rows[1][1:]
        txt = open(os.path.splitext(out)[0] + ".txt").read()
        assert "Return" in txt and "Success (%)" in txt

    def test_render_layout(self):
        from splt.evaluation import MetricsReport, SeedMetrics
        rep = MetricsReport(per_seed=[SeedMetrics(0, 50.0, 1.0, 100.0, 0, 100.0, 40.0)])
        table = render_comparison(["m"], [rep])
        assert table.splitlines()[0].startswith("Metric")


class TestMdpDemo:
    def test_demo_report_written(self, workspace, tmp_path):
        out = str(tmp_path / "demo.json")
        assert main(["mdp-demo", "--splt", workspace["splt"], "--dt", workspace["dt"],
                     "--decisions", "5", "--seed", "0", "--out", out]) == 0
        report = json.load(open(out))
        for key in ("splt_maxmin", "splt_maxmax", "dt_target_10", "dt_target_5",
                    "return_matrix_at_s0", "world_modes"):
            assert key in report
        assert report["splt_maxmin"]["a1"] + report["splt_maxmin"]["a2"] == pytest.approx(1.0)


class TestConfigFile:
    def test_file_supplies_defaults_cli_overrides(self, tmp_path, workspace):
        cfg = {"episodes": 7, "n_seeds": 1, "horizon": 0, "env": "mdp",
               "checkpoint": workspace["splt"]}
        path = str(tmp_path / "cfg.json")
        json.dump(cfg, open(path, "w"))
        args = parse_args(["eval", "--config", path, "--env", "mdp"])
        assert args.episodes == 7 and args.n_seeds == 1
        args = parse_args(["eval", "--config", path, "--env", "mdp", "--episodes", "2"])
        assert args.episodes == 2  # explicit flag beats the file
