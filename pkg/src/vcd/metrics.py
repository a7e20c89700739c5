"""Aggregate score statistics for few-run RL evaluation.

Scores are held as an ``M runs x N tasks`` matrix. Aggregates pool every
(run, task) entry; confidence intervals come from a percentile bootstrap that
resamples runs with replacement independently inside each task column.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class ScoreFormatError(ValueError):
    pass


@dataclass
class ScoreMatrix:
    scores: np.ndarray
    task_names: list[str]
    run_ids: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2 or self.scores.size == 0:
            raise ValueError(f"score matrix must be a non-empty 2-D array, got shape {self.scores.shape}")
        if len(self.task_names) != self.scores.shape[1]:
            raise ValueError("one task name per column is required")
        if not self.run_ids:
            self.run_ids = [str(i) for i in range(self.scores.shape[0])]
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("score matrix contains missing or non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape

    def column(self, task: str) -> "ScoreMatrix":
        j = self.task_names.index(task)
        return ScoreMatrix(self.scores[:, [j]], [task], list(self.run_ids))

    def normalized(self, low: float | Sequence[float], high: float | Sequence[float]) -> "ScoreMatrix":
        """Per-task min-max normalisation ``(x - low) / (high - low)``."""
        lo = np.broadcast_to(np.asarray(low, dtype=np.float64), (self.shape[1],))
        hi = np.broadcast_to(np.asarray(high, dtype=np.float64), (self.shape[1],))
        return ScoreMatrix(normalize_hns(self.scores, lo, hi), list(self.task_names), list(self.run_ids))

    def to_csv(self, path: str | Path, header: tuple[str, str, str] = ("config", "seed", "score")) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for j, task in enumerate(self.task_names):
                for i, run in enumerate(self.run_ids):
                    w.writerow([task, run, repr(float(self.scores[i, j]))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScoreMatrix":
        text = Path(path).read_text(encoding="utf-8")
        return cls.from_csv_text(text, str(path))

    @classmethod
    def from_csv_text(cls, text: str, source: str = "<csv>") -> "ScoreMatrix":
        """Accepts ``config,seed,score`` or ``task,run,score`` headers."""
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ScoreFormatError(f"{source}: empty file")
        header = [h.strip() for h in rows[0]]
        if header not in (["config", "seed", "score"], ["task", "run", "score"]):
            raise ScoreFormatError(f"{source}:1: header must be config,seed,score or task,run,score; got {','.join(header)}")
        table: dict[str, dict[str, float]] = {}
        for lineno, row in enumerate(rows[1:], start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ScoreFormatError(f"{source}:{lineno}: expected 3 columns, got {len(row)}")
            task, run, raw = (c.strip() for c in row)
            try:
                value = float(raw)
            except ValueError:
                raise ScoreFormatError(f"{source}:{lineno}: column 3 (score) is not a number: {raw!r}") from None
            if not np.isfinite(value):
                raise ScoreFormatError(f"{source}:{lineno}: column 3 (score) is not finite")
            runs = table.setdefault(task, {})
            if run in runs:
                raise ScoreFormatError(f"{source}:{lineno}: duplicate entry for ({task}, {run})")
            runs[run] = value
        if not table:
            raise ScoreFormatError(f"{source}: no data rows")
        tasks = list(table)
        run_ids = list(table[tasks[0]])
        for t in tasks[1:]:
            if set(table[t]) != set(run_ids):
                missing = sorted(set(run_ids) ^ set(table[t]))
                raise ScoreFormatError(f"{source}: task {t!r} does not cover the same runs (differs on {missing})")
        scores = np.array([[table[t][r] for t in tasks] for r in run_ids])
        return cls(scores, tasks, run_ids)


def normalize_hns(agent, random, human):
    """(agent - random) / (human - random)."""
    agent, random, human = (np.asarray(x, dtype=np.float64) for x in (agent, random, human))
    if np.any(human == random):
        raise ValueError("degenerate normalisation: human score equals random score")
    out = (agent - random) / (human - random)
    return float(out) if out.ndim == 0 else out


def iqm(values) -> float:
    """Mean of the middle half with fractional boundary weights.

    Sorted item i covers [i, i+1) on a length-n axis; its weight is the overlap
    with [n/4, 3n/4].
    """
    x = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    n = x.size
    if n == 0:
        raise ValueError("iqm of an empty sequence")
    lo, hi = 0.25 * n, 0.75 * n
    i = np.arange(n)
    w = np.clip(np.minimum(i + 1, hi) - np.maximum(i, lo), 0.0, None)
    return float(np.dot(w, x) / (0.5 * n))


def mean(values) -> float:
    return float(np.mean(np.asarray(values, dtype=np.float64)))


def median(values) -> float:
    return float(np.median(np.asarray(values, dtype=np.float64)))


AGGREGATES: dict[str, Callable] = {"mean": mean, "median": median, "iqm": iqm}


def _scores(matrix) -> np.ndarray:
    return matrix.scores if isinstance(matrix, ScoreMatrix) else np.asarray(matrix, dtype=np.float64)


def bootstrap_distribution(matrix, statistic: Callable, resamples: int = 2000, seed: int = 0) -> np.ndarray:
    """Statistic over stratified resamples: each task column resampled with replacement on its own."""
    x = _scores(matrix)
    if x.size == 0:
        raise ValueError("empty score matrix")
    if resamples < 1:
        raise ValueError("resamples must be positive")
    m, n = x.shape
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, m, size=(resamples, m, n))
    resampled = x[idx, np.arange(n)]
    return np.array([statistic(r) for r in resampled])


def stratified_bootstrap_ci(matrix, statistic: Callable, resamples: int = 2000, alpha: float = 0.05,
                            seed: int = 0) -> tuple[float, float]:
    if resamples < 100:
        raise ValueError("at least 100 resamples are required")
    if _scores(matrix).size == 0:
        raise ValueError("empty score matrix")
    dist = bootstrap_distribution(matrix, statistic, resamples, seed)
    lo, hi = np.percentile(dist, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)


def bootstrap_stderr(matrix, statistic: Callable, resamples: int = 2000, seed: int = 0) -> float:
    return float(np.std(bootstrap_distribution(matrix, statistic, resamples, seed), ddof=1))


def performance_profile(matrix, rho_grid) -> np.ndarray:
    """Fraction of (run, task) scores strictly above each threshold: mean over runs of mean over tasks."""
    x = _scores(matrix)
    rho = np.asarray(rho_grid, dtype=np.float64)
    if np.any(np.diff(rho) < 0):
        raise ValueError("rho_grid must be sorted ascending")
    above = x[None, :, :] > rho[:, None, None]
    return above.mean(axis=2).mean(axis=1)


def profile_with_ci(matrix, rho_grid, resamples: int = 2000, alpha: float = 0.05,
                    seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Profile plus pointwise percentile-bootstrap bands from the same stratified resamples."""
    x = _scores(matrix)
    m, n = x.shape
    rng = np.random.Generator(np.random.PCG64(seed))
    idx = rng.integers(0, m, size=(resamples, m, n))
    resampled = x[idx, np.arange(n)]
    dist = np.stack([performance_profile(r, rho_grid) for r in resampled])
    lo, hi = np.percentile(dist, [100 * alpha / 2, 100 * (1 - alpha / 2)], axis=0)
    return performance_profile(x, rho_grid), lo, hi


def auc_of_profile(rho_grid, fractions) -> float:
    """Trapezoidal area under a profile."""
    rho = np.asarray(rho_grid, dtype=np.float64)
    f = np.asarray(fractions, dtype=np.float64)
    return float(np.sum((f[1:] + f[:-1]) * np.diff(rho)) / 2)


def default_rho_grid(matrix, points: int = 1001) -> np.ndarray:
    x = _scores(matrix)
    lo = min(0.0, float(x.min()))
    hi = max(1.0, float(x.max()))
    return np.linspace(lo, hi, points)


@dataclass
class AggregateReport:
    mean: float
    median: float
    iqm: float
    ci: dict[str, tuple[float, float]]

    def to_json(self) -> dict:
        return {name: {"point": getattr(self, name), "ci_low": self.ci[name][0], "ci_high": self.ci[name][1]}
                for name in AGGREGATES}


def aggregate_report(matrix, resamples: int = 2000, alpha: float = 0.05, seed: int = 0) -> AggregateReport:
    x = _scores(matrix)
    ci = {name: stratified_bootstrap_ci(x, fn, resamples, alpha, seed) for name, fn in AGGREGATES.items()}
    return AggregateReport(mean(x), median(x), iqm(x), ci)


def full_report(matrix: ScoreMatrix, rho_grid=None, resamples: int = 2000, alpha: float = 0.05,
                seed: int = 0) -> dict:
    """Everything the metrics command writes: pooled and per-task aggregates plus the profile."""
    rho = default_rho_grid(matrix) if rho_grid is None else np.asarray(rho_grid, dtype=np.float64)
    frac, lo, hi = profile_with_ci(matrix, rho, resamples, alpha, seed)
    return {
        "n_runs": matrix.shape[0],
        "n_tasks": matrix.shape[1],
        "tasks": list(matrix.task_names),
        "resamples": resamples,
        "alpha": alpha,
        "seed": seed,
        "aggregates": aggregate_report(matrix, resamples, alpha, seed).to_json(),
        "per_task": {t: aggregate_report(matrix.column(t), resamples, alpha, seed).to_json()
                     for t in matrix.task_names},
        "profile": {"rho": rho.tolist(), "fraction": frac.tolist(), "ci_low": lo.tolist(), "ci_high": hi.tolist(),
                    "auc": auc_of_profile(rho, frac)},
    }


def write_profile_csv(path: str | Path, report: dict) -> None:
    p = report["profile"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rho", "fraction", "ci_low", "ci_high"])
        for row in zip(p["rho"], p["fraction"], p["ci_low"], p["ci_high"]):
            w.writerow([repr(float(v)) for v in row])


def write_report_json(path: str | Path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
