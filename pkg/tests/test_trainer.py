import json

import numpy as np
import pytest

from conftest import tiny_config
from vcd import losses
from vcd.losses import LossConfig, compose_report
from vcd.mmdp_env import MDPSpec
from vcd.metrics import ScoreMatrix
from vcd.trainer import (TrainConfig, ablation_suite, evaluate, plan_ablation, random_policy_returns, run_dir_name,
                         train)


def test_train_log_structure(tmp_path):
    cfg = tiny_config()
    res = train(cfg, tmp_path)
    recs = [json.loads(x) for x in (tmp_path / "run.jsonl").read_text().splitlines()]
    assert all(r["seed"] == cfg.seed for r in recs)
    updates = [r for r in recs if r["event"] == "update"]
    assert len(updates) == res.updates == cfg.total_env_steps - cfg.warmup_steps + 1
    for r in updates:
        rep = compose_report(r["l_rl"], r["l_pre"], r["l_con"], cfg.loss)
        assert abs(rep.l_total - r["l_total"]) <= 1e-12
        assert 0 <= r["l_pre"] <= 4 and 0 <= r["l_con"] <= 4
    evals = [r for r in recs if r["event"] == "eval"]
    assert [r["step"] for r in evals] == [60, 120]
    assert res.final_score == evals[-1]["eval_score"]
    assert (tmp_path / "checkpoint.json").exists() and (tmp_path / "timing.jsonl").exists()
    assert "wallclock" not in (tmp_path / "run.jsonl").read_text()


def test_final_eval_when_not_on_boundary():
    res = train(tiny_config(total_env_steps=70))
    evals = [r for r in res.log.records() if r["event"] == "eval"]
    assert [r["step"] for r in evals] == [60, 70]


def test_zero_steps_gives_empty_log():
    res = train(tiny_config(total_env_steps=0))
    assert res.log.lines == [] and res.final_score is None and res.updates == 0


def test_base_mode_logs_zero_lambda():
    res = train(tiny_config(total_env_steps=50, loss=LossConfig(mode="base", lam=0.5)))
    ups = [r for r in res.log.records() if r["event"] == "update"]
    assert ups and all(r["lambda"] == 0.0 for r in ups)


def test_tau_zero_hard_syncs():
    res = train(tiny_config(total_env_steps=45, ema_tau=0.0, target_sync_interval=3))
    s = res.stack
    # 6 updates: the last one is a sync point
    assert res.updates == 6
    assert np.array_equal(s.target["encoder.0.weight"].data, s.online["encoder.0.weight"].data)


def test_runs_differ_by_seed():
    a = train(tiny_config(total_env_steps=60, seed=0)).log.lines
    b = train(tiny_config(total_env_steps=60, seed=1)).log.lines
    assert a != b


def test_nonfinite_loss_dumps_batch(tmp_path, monkeypatch):
    def broken(l_rl, l_pre, l_con, cfg):
        raise losses.NonFiniteLoss("l_con", float("nan"))

    monkeypatch.setattr("vcd.trainer.total_loss", broken)
    with pytest.raises(losses.NonFiniteLoss):
        train(tiny_config(total_env_steps=50), tmp_path)
    dump = np.load(tmp_path / "nonfinite_batch.npz")
    assert dump["v1"].shape[0] == 8


def test_evaluate_is_deterministic():
    res = train(tiny_config(total_env_steps=45))
    spec = tiny_config().env
    assert evaluate(res.stack, spec, 3, 5) == evaluate(res.stack, spec, 3, 5)
    with pytest.raises(ValueError):
        evaluate(res.stack, spec, 0, 5)


def test_random_policy_is_below_perfect():
    spec = MDPSpec(grid_size=8, max_episode_steps=70)
    r = random_policy_returns(spec, 30, 0)
    assert r.shape == (30,) and r.mean() < 0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(ema_tau=2.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_config_hash_ignores_seed():
    a, b = TrainConfig(seed=1), TrainConfig(seed=2)
    assert a.config_hash() == b.config_hash()
    assert run_dir_name(a) != run_dir_name(b)
    assert TrainConfig(lr=1e-3).config_hash() != a.config_hash()


def test_plan_ablation_cross_product():
    plan = plan_ablation(TrainConfig(), [("lambda", [0.0, 0.5]), ("k_steps", [1, 2, 3])], [0, 1])
    labels = list(dict.fromkeys(p[0] for p in plan))
    assert labels == [f"lambda={l},k_steps={k}" for l in (0.0, 0.5) for k in (1, 2, 3)]
    assert len(plan) == 12
    cfg = dict(((p[0], p[1]), p[2]) for p in plan)[("lambda=0.5,k_steps=3", 1)]
    assert cfg.loss.lam == 0.5 and cfg.loss.pred_steps == 3 and cfg.seed == 1
    with pytest.raises(ValueError, match="unknown ablation axis"):
        plan_ablation(TrainConfig(), [("depth", [1])], [0])
    with pytest.raises(ValueError, match="seed"):
        plan_ablation(TrainConfig(), [("tau", [0.1])], [])


def test_ablation_suite_matrix_and_resume(tmp_path):
    calls = []

    def fake(args):
        cfg, root = args
        calls.append(cfg)
        return cfg.network.num_predictors + cfg.seed / 10

    m = ablation_suite(TrainConfig(), [("predictors", [0, 1, 2])], [0, 1], runner=fake)
    assert isinstance(m, ScoreMatrix)
    assert m.task_names == ["predictors=0", "predictors=1", "predictors=2"] and m.run_ids == ["0", "1"]
    np.testing.assert_allclose(m.scores, [[0, 1, 2], [0.1, 1.1, 2.1]])

    base = tiny_config(total_env_steps=45)
    first = ablation_suite(base, [("lambda", [0.0])], [0], run_root=tmp_path)
    run = tmp_path / run_dir_name(base.__class__(**{**base.__dict__, "loss": LossConfig(lam=0.0)}))
    assert (run / "result.json").exists() and (run / "config.yaml").exists()
    (run / "run.jsonl").unlink()
    again = ablation_suite(base, [("lambda", [0.0])], [0], run_root=tmp_path)
    assert not (run / "run.jsonl").exists()  # reused, not retrained
    np.testing.assert_array_equal(first.scores, again.scores)
