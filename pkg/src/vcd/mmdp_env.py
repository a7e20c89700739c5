"""Deterministic "catcher" gridworld rendered to stacked grayscale frames.

An object falls one row per step from the top of a ``grid_size`` square
playfield; a one-cell paddle on the bottom row moves left, stays or moves
right. Reaching the bottom row scores +1 on the paddle column and -1
elsewhere, and a new object spawns on the top row at a column drawn from a
SplitMix64 stream whose state is part of the tabular state. ``step`` is
therefore a pure function of ``(state, action)``.

Frames are ``grid_size + 2 * margin`` pixels on a side. The playfield is
painted with a nonzero background so its position, and hence any translation
applied to the frame, can be read back from the pixels.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .rng import draw_below

ACTIONS = ("left", "stay", "right")
MOVES = (-1, 0, 1)

EMPTY = 0.0
BACKGROUND = 0.25
OBJECT = 0.6
PADDLE = 1.0

MAX_ENUM_GRID = 16


class EpisodeDone(RuntimeError):
    pass


@dataclass(frozen=True)
class MDPSpec:
    grid_size: int = 16
    frame_stack: int = 2
    discount: float = 0.99
    max_episode_steps: int = 200
    margin: int = 4

    def __post_init__(self):
        if self.grid_size < 3:
            raise ValueError("grid_size must be at least 3")
        if self.frame_stack < 1:
            raise ValueError("frame_stack must be >= 1")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must lie in [0, 1)")
        if self.max_episode_steps < 1:
            raise ValueError("max_episode_steps must be positive")
        if self.margin < 0:
            raise ValueError("margin must be non-negative")

    @property
    def frame_size(self) -> int:
        return self.grid_size + 2 * self.margin

    @property
    def obs_shape(self) -> tuple[int, int, int]:
        return (self.frame_stack, self.frame_size, self.frame_size)

    @property
    def num_actions(self) -> int:
        return len(ACTIONS)


# (paddle_x, object_x, object_y) of one rendered frame
Frame = tuple[int, int, int]


@dataclass(frozen=True)
class TabularState:
    paddle_x: int
    object_x: int
    object_y: int
    step_count: int
    prev_frames: tuple[Frame, ...]  # oldest first, length frame_stack - 1
    rng_state: int

    @property
    def frame(self) -> Frame:
        return (self.paddle_x, self.object_x, self.object_y)

    @property
    def frames(self) -> tuple[Frame, ...]:
        return self.prev_frames + (self.frame,)

    def to_json(self) -> dict:
        d = asdict(self)
        d["prev_frames"] = [list(f) for f in self.prev_frames]
        return d

    @classmethod
    def from_json(cls, d: dict) -> "TabularState":
        return cls(d["paddle_x"], d["object_x"], d["object_y"], d["step_count"],
                   tuple(tuple(f) for f in d["prev_frames"]), d["rng_state"])


def is_done(spec: MDPSpec, state: TabularState) -> bool:
    return state.step_count >= spec.max_episode_steps


def render_frame(spec: MDPSpec, frame: Frame) -> np.ndarray:
    n, m = spec.frame_size, spec.margin
    img = np.full((n, n), EMPTY)
    img[m:m + spec.grid_size, m:m + spec.grid_size] = BACKGROUND
    px, ox, oy = frame
    img[m + oy, m + ox] = OBJECT
    img[m + spec.grid_size - 1, m + px] = PADDLE
    return img


def render(spec: MDPSpec, state: TabularState) -> np.ndarray:
    """Stacked observation of shape ``(frame_stack, H, W)``, oldest frame first."""
    return np.stack([render_frame(spec, f) for f in state.frames])


def reset(spec: MDPSpec, seed: int) -> tuple[TabularState, np.ndarray]:
    """Paddle centred, object on the top row; the stream starts at ``seed``."""
    rng, col = draw_below(seed & ((1 << 64) - 1), spec.grid_size)
    frame = (spec.grid_size // 2, col, 0)
    state = TabularState(frame[0], col, 0, 0, (frame,) * (spec.frame_stack - 1), rng)
    return state, render(spec, state)


def _advance(spec: MDPSpec, frame: Frame, action: int, spawn_col: int | None) -> tuple[Frame, float, bool]:
    """Kinematics of one step; ``spawn_col`` is used only if the object lands."""
    px, ox, oy = frame
    px = min(max(px + MOVES[action], 0), spec.grid_size - 1)
    oy += 1
    if oy == spec.grid_size - 1:
        reward = 1.0 if ox == px else -1.0
        return (px, spawn_col, 0), reward, True
    return (px, ox, oy), 0.0, False


def step(spec: MDPSpec, state: TabularState, action: int) -> tuple[TabularState, np.ndarray, float, bool]:
    nxt, reward, done = transition(spec, state, action)
    return nxt, render(spec, nxt), reward, done


def transition(spec: MDPSpec, state: TabularState, action: int) -> tuple[TabularState, float, bool]:
    """The tabular part of :func:`step`, without rendering."""
    if is_done(spec, state):
        raise EpisodeDone("step called on a finished episode")
    if action not in (0, 1, 2):
        raise ValueError(f"invalid action {action!r}")
    rng = state.rng_state
    landing = state.object_y + 1 == spec.grid_size - 1
    col = None
    if landing:
        rng, col = draw_below(rng, spec.grid_size)
    frame, reward, _ = _advance(spec, state.frame, action, col)
    prev = (state.prev_frames + (state.frame,))[1:] if spec.frame_stack > 1 else ()
    nxt = TabularState(frame[0], frame[1], frame[2], state.step_count + 1, prev, rng)
    return nxt, reward, is_done(spec, nxt)


def enumerate_states(spec: MDPSpec, horizon: int, seeds: Iterable[int] = (0,)) -> list[TabularState]:
    """Every tabular state reachable from ``reset(seed)`` within ``horizon`` steps."""
    if spec.grid_size > MAX_ENUM_GRID:
        raise ValueError(f"enumeration guard: grid_size {spec.grid_size} > {MAX_ENUM_GRID}")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    seen: dict[TabularState, None] = {}
    frontier: list[TabularState] = []
    for seed in seeds:
        s, _ = reset(spec, seed)
        if s not in seen:
            seen[s] = None
            frontier.append(s)
    for _ in range(horizon):
        nxt = []
        for s in frontier:
            if is_done(spec, s):
                continue
            for a in range(spec.num_actions):
                t = transition(spec, s, a)[0]
                if t not in seen:
                    seen[t] = None
                    nxt.append(t)
        frontier = nxt
    return list(seen)


def enumerate_frame_stacks(spec: MDPSpec) -> list[tuple[Frame, ...]]:
    """All frame stacks reachable from any reset under any actions and spawns.

    Spawn columns are treated as free choices, so the result covers every
    observation the environment can emit regardless of seed or step count.
    """
    if spec.grid_size > MAX_ENUM_GRID:
        raise ValueError(f"enumeration guard: grid_size {spec.grid_size} > {MAX_ENUM_GRID}")
    g, l = spec.grid_size, spec.frame_stack
    starts = [((g // 2, c, 0),) * l for c in range(g)]
    seen = dict.fromkeys(starts)
    queue = deque(starts)
    while queue:
        stack = queue.popleft()
        cur = stack[-1]
        spawns = range(g) if cur[2] + 1 == g - 1 else (None,)
        for a in range(spec.num_actions):
            for col in spawns:
                frame = _advance(spec, cur, a, col)[0]
                nxt = stack[1:] + (frame,)
                if nxt not in seen:
                    seen[nxt] = None
                    queue.append(nxt)
    return list(seen)


def state_from_frames(frames: tuple[Frame, ...], step_count: int = 0, rng_state: int = 0) -> TabularState:
    px, ox, oy = frames[-1]
    return TabularState(px, ox, oy, step_count, tuple(frames[:-1]), rng_state)


@dataclass
class TrajectoryRecord:
    t: int
    tabular_state: TabularState
    action: int
    reward: float
    done: bool

    def to_json(self) -> dict:
        return {"t": self.t, "tabular_state": self.tabular_state.to_json(),
                "action": self.action, "reward": self.reward, "done": self.done}


def write_trajectory(path: str | Path, records: Iterable[TrajectoryRecord]) -> None:
    """JSONL, one record per step; ``tabular_state`` is the state acted upon."""
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_trajectory(path: str | Path) -> Iterator[TrajectoryRecord]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            yield TrajectoryRecord(d["t"], TabularState.from_json(d["tabular_state"]),
                                   d["action"], d["reward"], d["done"])


def rollout(spec: MDPSpec, seed: int, actions: Iterable[int]) -> list[TrajectoryRecord]:
    state, _ = reset(spec, seed)
    out = []
    for t, a in enumerate(actions):
        nxt, _, r, done = step(spec, state, a)
        out.append(TrajectoryRecord(t, state, a, r, done))
        state = nxt
        if done:
            break
    return out
