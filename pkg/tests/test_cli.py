import json

import numpy as np
import pytest

from vcd.cli import directional_summary, main
from vcd.metrics import ScoreMatrix

TINY = """\
total_env_steps: 60
warmup_steps: 30
batch_size: 8
eval_every: 30
eval_episodes: 2
pad: 2
env:
  grid_size: 6
  margin: 2
  max_episode_steps: 30
network:
  encoder_widths: [16]
  z_dim: 8
  dynamics_widths: [8]
  projector_widths: [8]
  proj_dim: 4
  predictor_widths: [4]
  q_widths: [8]
"""


@pytest.fixture
def tiny_yaml(tmp_path):
    p = tmp_path / "tiny.yaml"
    p.write_text(TINY)
    return p


def test_train_writes_artifacts_and_refuses_overwrite(tmp_path, tiny_yaml, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_yaml), "--seed", "4", "--out", str(out)]) == 0
    assert {p.name for p in out.iterdir()} >= {"run.jsonl", "checkpoint.json", "config.yaml"}
    assert "seed: 4" in (out / "config.yaml").read_text()
    assert main(["train", "--config", str(tiny_yaml), "--out", str(out)]) == 2
    assert "not empty" in capsys.readouterr().err
    assert main(["train", "--config", str(tiny_yaml), "--out", str(out), "--force"]) == 0


def test_missing_config_is_usage_error(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.yaml"), "--out", str(tmp_path / "o")]) == 2
    assert "nope.yaml" in capsys.readouterr().err


def test_bad_arguments_exit_2(capsys):
    assert main([]) == 2
    assert main(["train"]) == 2


def test_evaluate_checkpoint(tmp_path, tiny_yaml, capsys):
    out = tmp_path / "run"
    main(["train", "--config", str(tiny_yaml), "--out", str(out)])
    capsys.readouterr()
    rep = tmp_path / "eval.json"
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.json"), "--config", str(tiny_yaml),
                 "--episodes", "2", "--report", str(rep)]) == 0
    assert json.loads(rep.read_text())["episodes"] == 2
    assert main(["evaluate", "--checkpoint", str(tmp_path / "x.json")]) == 2
    # default config has a different frame size than the checkpoint
    assert main(["evaluate", "--checkpoint", str(out / "checkpoint.json")]) == 2


def test_ablate_and_metrics(tmp_path, tiny_yaml, capsys):
    out = tmp_path / "abl"
    assert main(["ablate", "--config", str(tiny_yaml), "--axis", "predictors", "--values", "0,2",
                 "--seeds", "0,1", "--out", str(out)]) == 0
    m = ScoreMatrix.from_csv(out / "scores.csv")
    assert m.task_names == ["predictors=0", "predictors=2"] and m.run_ids == ["0", "1"]
    rep, prof = tmp_path / "r.json", tmp_path / "p.csv"
    assert main(["metrics", "--scores", str(out / "scores.csv"), "--report", str(rep), "--profile", str(prof),
                 "--resamples", "200", "--bounds=-10,10"]) == 0
    data = json.loads(rep.read_text())
    assert data["normalization"] == {"low": -10.0, "high": 10.0}
    assert prof.read_text().startswith("rho,fraction,ci_low,ci_high")


@pytest.mark.parametrize("argv", [
    ["ablate", "--axis", "depth", "--values", "1", "--seeds", "0", "--out", "x"],
    ["ablate", "--axis", "lambda", "--seeds", "0", "--out", "x"],
    ["ablate", "--axis", "lambda", "--values", "a", "--seeds", "0", "--out", "x"],
    ["ablate", "--axis", "lambda", "--values", "0.5", "--seeds", "a", "--out", "x"],
    ["ablate", "--axis", "mode", "--values", "other", "--seeds", "0", "--out", "x"],
])
def test_ablate_usage_errors(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 2


def test_metrics_usage_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("config,seed,score\na,0,zz\n")
    assert main(["metrics", "--scores", str(bad), "--report", str(tmp_path / "r.json")]) == 2
    assert main(["metrics", "--scores", str(tmp_path / "none.csv"), "--report", str(tmp_path / "r.json")]) == 2
    good = tmp_path / "good.csv"
    good.write_text("config,seed,score\na,0,1\na,1,2\n")
    assert main(["metrics", "--scores", str(good), "--report", str(tmp_path / "r.json"), "--resamples", "10"]) == 2
    assert main(["metrics", "--scores", str(good), "--report", str(tmp_path / "r.json"), "--bounds", "1"]) == 2


def test_check_blocks_command(capsys):
    assert main(["check-blocks", "--grid", "4"]) == 0
    assert json.loads(capsys.readouterr().out)["disjoint"] is True
    assert main(["check-blocks", "--grid", "4", "--margin", "0", "--pad", "1", "--frame-stack", "1"]) == 1


def test_log_level_env(monkeypatch, capsys):
    monkeypatch.setenv("VCD_LOG_LEVEL", "loud")
    assert main(["check-blocks", "--grid", "4"]) == 2


def test_directional_summary_logic():
    rng = np.random.default_rng(0)
    scores = np.column_stack([5 + 0.1 * rng.normal(size=10), 4 + 0.1 * rng.normal(size=10)])
    m = ScoreMatrix(scores, ["mode=vcd", "mode=base"])
    s = directional_summary(m, np.full(50, -5.0), resamples=200)
    assert s["vcd_ge_base"] and s["both_beat_random_by_3se"] and s["pass"]
    s = directional_summary(ScoreMatrix(scores[:, ::-1], ["mode=vcd", "mode=base"]), np.full(50, -5.0), 200)
    assert not s["vcd_ge_base"] and not s["pass"]
