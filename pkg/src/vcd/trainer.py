"""Training loop: act, store, sample, augment, compute losses, Adam on the online line, EMA.

Per update the order is fixed: gradient step, then target EMA (or hard sync when
``ema_tau == 0``), then the periodic DQN target sync. Every random draw comes
from a substream derived from the master seed, so a run is a pure function of
its config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import mmdp_env as env
from .augment import sample_view_batch
from .dqn import Batch, ReplayBuffer, Transition, act_epsilon_greedy, epsilon_schedule, td_loss_from_latents
from .losses import LossConfig, LossReport, NonFiniteLoss, auxiliary_losses, total_loss
from .metrics import ScoreMatrix
from .networks import SSL_ROLES, NetworkConfig, NetworkStack, ema_update, greedy_action, hard_sync, q_values
from .rng import derive_seed, generator

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    total_env_steps: int = 50_000
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    env: env.MDPSpec = field(default_factory=env.MDPSpec)
    ema_tau: float = 0.05
    target_sync_interval: int = 1
    q_target_sync_interval: int = 1000
    eval_every: int = 2_000
    eval_episodes: int = 10
    batch_size: int = 64
    warmup_steps: int = 1_000
    lr: float = 3e-4
    buffer_capacity: int = 50_000
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_fraction: float = 0.2
    pad: int = 4
    q_target_clean_view: bool = False
    checkpoint_at_eval: bool = True

    def __post_init__(self):
        if self.total_env_steps < 0:
            raise ValueError("total_env_steps must be non-negative")
        for name in ("target_sync_interval", "q_target_sync_interval", "eval_every", "eval_episodes",
                     "batch_size", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.warmup_steps < 0:
            raise ValueError("warmup_steps must be non-negative")
        if not 0.0 <= self.ema_tau <= 1.0:
            raise ValueError(f"ema_tau must lie in [0, 1], got {self.ema_tau}")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not (0 <= self.eps_end <= 1 and 0 <= self.eps_start <= 1):
            raise ValueError("epsilon bounds must lie in [0, 1]")
        if self.pad < 0:
            raise ValueError("pad must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss"]["lambda"] = d["loss"].pop("lam")
        for k, v in d["network"].items():
            if isinstance(v, tuple):
                d["network"][k] = list(v)
        return d

    def config_hash(self) -> str:
        """Hash of everything except the seed."""
        d = self.to_dict()
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


class RunLog:
    """JSONL writer keeping the lines in memory; each record carries the run seed."""

    def __init__(self, seed: int, path: Path | None = None):
        self.seed = seed
        self.lines: list[str] = []
        self._fh = open(path, "w", encoding="utf-8") if path else None

    def write(self, record: dict) -> None:
        record = {"seed": self.seed, **record}
        line = json.dumps(record, sort_keys=True)
        self.lines.append(line)
        if self._fh:
            self._fh.write(line + "\n")

    def close(self) -> None:
        if self._fh:
            self._fh.close()
            self._fh = None

    def records(self) -> list[dict]:
        return [json.loads(x) for x in self.lines]


@dataclass
class TrainResult:
    stack: NetworkStack
    log: RunLog
    final_score: float | None
    updates: int


def make_views(batch: Batch, rng: np.random.Generator, pad: int, k: int) -> tuple[np.ndarray, np.ndarray, list]:
    """Draw v1, then v2, then one view per future state, in that order."""
    v1 = sample_view_batch(batch.obs, rng, pad)
    v2 = sample_view_batch(batch.obs, rng, pad)
    v_next = [sample_view_batch(batch.next_obs[j], rng, pad) for j in range(k)]
    return v1, v2, v_next


def compute_objective(stack: NetworkStack, cfg: TrainConfig, batch: Batch, v1, v2, v_next) -> tuple[ad.Tensor, LossReport]:
    aux = auxiliary_losses(stack, v1, v2, batch.actions, v_next, cfg.loss)
    znext = stack.encode(batch.next_obs[0], "target") if cfg.q_target_clean_view else aux.znext_target
    l_rl = td_loss_from_latents(stack, aux.z1, batch.actions[:, 0], batch.rewards, znext, batch.dones,
                                cfg.env.discount)
    return total_loss(l_rl, aux.l_pre, aux.l_con, cfg.loss)


def evaluate(stack: NetworkStack, spec: env.MDPSpec, episodes: int, seed: int) -> float:
    """Mean return of the greedy policy on clean observations."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns = []
    for i in range(episodes):
        state, obs = env.reset(spec, derive_seed(seed, f"eval-episode-{i}"))
        total, done = 0.0, False
        while not done:
            a = int(greedy_action(q_values(stack, obs))[0])
            state, obs, r, done = env.step(spec, state, a)
            total += r
        returns.append(total)
    return float(np.mean(returns))


def random_policy_returns(spec: env.MDPSpec, episodes: int, seed: int) -> np.ndarray:
    """Per-episode returns of the uniform random policy on the evaluation episodes."""
    rng = generator(seed, "random-policy")
    out = []
    for i in range(episodes):
        state, _ = env.reset(spec, derive_seed(seed, f"eval-episode-{i}"))
        total, done = 0.0, False
        while not done:
            state, _, r, done = env.step(spec, state, int(rng.integers(spec.num_actions)))
            total += r
        out.append(total)
    return np.asarray(out)


def _dump_batch(path: Path, batch: Batch, v1, v2, v_next) -> None:
    np.savez(path, obs=batch.obs, actions=batch.actions, rewards=batch.rewards, dones=batch.dones,
             v1=v1, v2=v2, **{f"next_obs_{i}": x for i, x in enumerate(batch.next_obs)},
             **{f"v_next_{i}": x for i, x in enumerate(v_next)})


def train(cfg: TrainConfig, out_dir: str | Path | None = None,
          on_record: Callable[[dict], None] | None = None) -> TrainResult:
    """Run one training job. With ``out_dir``, writes run.jsonl, timing.jsonl and checkpoint.json there."""
    out = Path(out_dir) if out_dir is not None else None
    spec = cfg.env
    stack = NetworkStack(cfg.network, spec.obs_shape, spec.num_actions, seed=cfg.seed)
    runlog = RunLog(cfg.seed, out / "run.jsonl" if out else None)
    timing = open(out / "timing.jsonl", "w", encoding="utf-8") if out else None
    start = time.perf_counter()

    def emit(record: dict) -> None:
        runlog.write(record)
        if timing is not None:
            timing.write(json.dumps({"step": record["step"], "wallclock": time.perf_counter() - start}) + "\n")
        if on_record:
            on_record(record)

    def checkpoint() -> None:
        if out is not None:
            stack.save(out / "checkpoint.json", extra={"seed": cfg.seed, "config_hash": cfg.config_hash()})

    act_rng = generator(cfg.seed, "epsilon-greedy")
    aug_rng = generator(cfg.seed, "augmentation")
    replay_rng = generator(cfg.seed, "replay")
    eval_seed = derive_seed(cfg.seed, "eval")
    params = stack.online_params()
    adam = ad.AdamState.zeros_like(params)
    buffer = ReplayBuffer(min(cfg.buffer_capacity, max(cfg.total_env_steps, 1)), spec.obs_shape)
    k = cfg.loss.pred_steps

    episode = 0
    state, obs = env.reset(spec, derive_seed(cfg.seed, f"train-episode-{episode}"))
    ep_return = 0.0
    updates = 0
    final_score = None
    last_eval_step = None
    try:
        for t in range(cfg.total_env_steps):
            eps = epsilon_schedule(t, cfg.total_env_steps, cfg.eps_start, cfg.eps_end, cfg.eps_decay_fraction)
            a = act_epsilon_greedy(stack, obs, eps, act_rng)
            state, next_obs, r, done = env.step(spec, state, a)
            buffer.push(Transition(obs, a, r, next_obs, done))
            ep_return += r
            obs = next_obs
            if done:
                emit({"step": t + 1, "event": "episode", "episodic_return": ep_return})
                episode += 1
                state, obs = env.reset(spec, derive_seed(cfg.seed, f"train-episode-{episode}"))
                ep_return = 0.0

            if t + 1 >= cfg.warmup_steps and len(buffer) >= max(cfg.batch_size, k):
                batch = buffer.sample(cfg.batch_size, replay_rng, k)
                v1, v2, v_next = make_views(batch, aug_rng, cfg.pad, k)
                try:
                    with ad.Tape() as tape:
                        total, report = compute_objective(stack, cfg, batch, v1, v2, v_next)
                        grads = tape.backward(total)
                except NonFiniteLoss:
                    if out is not None:
                        _dump_batch(out / "nonfinite_batch.npz", batch, v1, v2, v_next)
                    log.error("non-finite loss at step %d; batch dumped", t + 1)
                    raise
                ad.adam_step(params, grads, adam, cfg.lr)
                updates += 1
                if cfg.ema_tau > 0:
                    ema_update(stack, cfg.ema_tau)
                elif updates % cfg.target_sync_interval == 0:
                    hard_sync(stack, SSL_ROLES)
                if updates % cfg.q_target_sync_interval == 0:
                    hard_sync(stack, ("q_head",))
                emit({"step": t + 1, "event": "update", **report.to_json()})

            if (t + 1) % cfg.eval_every == 0:
                final_score = evaluate(stack, spec, cfg.eval_episodes, eval_seed)
                last_eval_step = t + 1
                emit({"step": t + 1, "event": "eval", "eval_score": final_score})
                log.info("step %d eval %.3f", t + 1, final_score)
                if cfg.checkpoint_at_eval:
                    checkpoint()
        if cfg.total_env_steps > 0 and last_eval_step != cfg.total_env_steps:
            final_score = evaluate(stack, spec, cfg.eval_episodes, eval_seed)
            emit({"step": cfg.total_env_steps, "event": "eval", "eval_score": final_score})
    finally:
        runlog.close()
        if timing is not None:
            timing.close()
    checkpoint()
    return TrainResult(stack, runlog, final_score, updates)


# -- ablations --------------------------------------------------------------

AXES = ("lambda", "k_steps", "mode", "predictors", "tau")


def parse_axis_value(axis: str, raw: str):
    if axis in ("lambda", "tau"):
        return float(raw)
    if axis in ("k_steps", "predictors"):
        return int(raw)
    if axis == "mode":
        return raw.strip()
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def apply_axis(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    if axis == "lambda":
        return replace(cfg, loss=replace(cfg.loss, lam=float(value)))
    if axis == "k_steps":
        return replace(cfg, loss=replace(cfg.loss, pred_steps=int(value)))
    if axis == "mode":
        return replace(cfg, loss=replace(cfg.loss, mode=str(value)))
    if axis == "predictors":
        return replace(cfg, network=replace(cfg.network, num_predictors=int(value)))
    if axis == "tau":
        return replace(cfg, ema_tau=float(value))
    raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")


def _label(axes: Sequence[str], combo: Sequence) -> str:
    return ",".join(f"{a}={v}" for a, v in zip(axes, combo))


def plan_ablation(base: TrainConfig, grid: Sequence[tuple[str, Sequence]], seeds: Sequence[int]) -> list[tuple[str, int, TrainConfig]]:
    """Every (label, seed, config) of the cross product, validated before anything runs."""
    if not seeds:
        raise ValueError("at least one seed is required")
    if not grid:
        raise ValueError("at least one ablation axis is required")
    for axis, values in grid:
        if axis not in AXES:
            raise ValueError(f"unknown ablation axis {axis!r}; expected one of {AXES}")
        if not values:
            raise ValueError(f"axis {axis} has no values")
    combos: list[tuple] = [()]
    for _, values in grid:
        combos = [c + (v,) for c in combos for v in values]
    axes = [a for a, _ in grid]
    plan = []
    for combo in combos:
        cfg = base
        for axis, v in zip(axes, combo):
            cfg = apply_axis(cfg, axis, v)
        for s in seeds:
            plan.append((_label(axes, combo), int(s), replace(cfg, seed=int(s))))
    return plan


def run_dir_name(cfg: TrainConfig) -> str:
    return f"{cfg.config_hash()[:12]}-seed{cfg.seed}"


def _run_job(args: tuple[TrainConfig, str | None]) -> float:
    cfg, run_root = args
    if run_root is None:
        return train(cfg).final_score
    d = Path(run_root) / run_dir_name(cfg)
    done_marker = d / "result.json"
    if done_marker.exists():
        return json.loads(done_marker.read_text())["final_score"]
    d.mkdir(parents=True, exist_ok=True)
    from .config import write_config

    write_config(cfg, d / "config.yaml")
    res = train(cfg, d)
    done_marker.write_text(json.dumps({"seed": cfg.seed, "final_score": res.final_score}))
    return res.final_score


def ablation_suite(base: TrainConfig, grid: Sequence[tuple[str, Sequence]], seeds: Sequence[int],
                   run_root: str | Path | None = None, jobs: int = 1,
                   runner: Callable[[tuple[TrainConfig, str | None]], float] = _run_job) -> ScoreMatrix:
    """Train every (configuration, seed) pair and collect final evaluation scores.

    Columns of the result are configurations, rows are seeds. Completed runs
    under ``run_root`` are reused, so an interrupted suite can be resumed.
    """
    plan = plan_ablation(base, grid, seeds)
    args = [(cfg, str(run_root) if run_root is not None else None) for _, _, cfg in plan]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            scores = list(pool.map(runner, args))
    else:
        scores = [runner(a) for a in args]
    labels = list(dict.fromkeys(label for label, _, _ in plan))
    seeds = [int(s) for s in seeds]
    table = {(label, s): score for (label, s, _), score in zip(plan, scores)}
    matrix = np.array([[table[(label, s)] for label in labels] for s in seeds], dtype=np.float64)
    return ScoreMatrix(matrix, labels, [str(s) for s in seeds])


def config_from_dict(d: dict) -> TrainConfig:
    """Inverse of :meth:`TrainConfig.to_dict`; missing keys take defaults."""
    d = dict(d)
    loss = dict(d.pop("loss", {}) or {})
    if "lambda" in loss:
        loss["lam"] = loss.pop("lambda")
    network = dict(d.pop("network", {}) or {})
    spec = dict(d.pop("env", {}) or {})
    return TrainConfig(loss=LossConfig(**loss), network=NetworkConfig(**network), env=env.MDPSpec(**spec), **d)


def field_names(cls) -> list[str]:
    return [f.name for f in dataclasses.fields(cls)]
