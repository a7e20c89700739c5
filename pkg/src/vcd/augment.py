"""Views of a state as zero-filled pixel shifts, their decoder, and block-structure checks."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from . import mmdp_env as env
from .mmdp_env import MDPSpec

DEFAULT_PAD = 4


@dataclass(frozen=True)
class AugmentationParams:
    dx: int = 0
    dy: int = 0
    pad: int = DEFAULT_PAD

    def __post_init__(self):
        if self.pad < 0:
            raise ValueError("pad must be non-negative")
        if abs(self.dx) > self.pad or abs(self.dy) > self.pad:
            raise ValueError(f"shift ({self.dx}, {self.dy}) exceeds pad {self.pad}")

    def inverse(self) -> "AugmentationParams":
        return AugmentationParams(-self.dx, -self.dy, self.pad)


@dataclass
class View:
    pixels: np.ndarray
    params: AugmentationParams
    source_hint: Hashable | None = field(default=None, compare=False)


def shift(pixels: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate the last two axes by ``dx`` columns and ``dy`` rows, filling with 0.

    Positive ``dx`` moves content right, positive ``dy`` moves it down.
    """
    h, w = pixels.shape[-2:]
    out = np.zeros_like(pixels)
    if abs(dx) >= w or abs(dy) >= h:
        return out
    src_r = slice(max(0, -dy), h - max(0, dy))
    dst_r = slice(max(0, dy), h - max(0, -dy))
    src_c = slice(max(0, -dx), w - max(0, dx))
    dst_c = slice(max(0, dx), w - max(0, -dx))
    out[..., dst_r, dst_c] = pixels[..., src_r, src_c]
    return out


def shift_batch(pixels: np.ndarray, dxs: np.ndarray, dys: np.ndarray, pad: int) -> np.ndarray:
    """Per-sample shifts of a ``[B, ..., H, W]`` batch via pad-and-crop."""
    h, w = pixels.shape[-2:]
    widths = [(0, 0)] * (pixels.ndim - 2) + [(pad, pad), (pad, pad)]
    padded = np.pad(pixels, widths)
    out = np.empty_like(pixels)
    for i, (dx, dy) in enumerate(zip(dxs, dys)):
        r, c = pad - dy, pad - dx
        out[i] = padded[i, ..., r:r + h, c:c + w]
    return out


def render_view(obs: np.ndarray, params: AugmentationParams, source_hint=None) -> View:
    return View(shift(obs, params.dx, params.dy), params, source_hint)


def sample_params(rng: np.random.Generator, pad: int = DEFAULT_PAD) -> AugmentationParams:
    """Uniform over ``[-pad, pad]**2``; draws dx then dy."""
    dx, dy = rng.integers(-pad, pad + 1, size=2)
    return AugmentationParams(int(dx), int(dy), pad)


def sample_view(obs: np.ndarray, rng: np.random.Generator, pad: int = DEFAULT_PAD) -> View:
    return render_view(obs, sample_params(rng, pad))


def sample_view_batch(obs: np.ndarray, rng: np.random.Generator, pad: int = DEFAULT_PAD) -> np.ndarray:
    """One independent shift per sample; draws a ``[B, 2]`` block of (dx, dy)."""
    if pad == 0:
        return obs.copy()
    d = rng.integers(-pad, pad + 1, size=(obs.shape[0], 2))
    return shift_batch(obs, d[:, 0], d[:, 1], pad)


def unshift(view: View) -> np.ndarray:
    """Inverse shift using the view's known parameters."""
    return shift(view.pixels, -view.params.dx, -view.params.dy)


def estimate_shift(pixels: np.ndarray, spec: MDPSpec) -> tuple[int, int] | None:
    """Read the translation off the painted playfield; ``None`` if it is not found intact."""
    nz = np.argwhere(pixels[0] != env.EMPTY)
    if nz.size == 0:
        return None
    top, left = nz.min(axis=0)
    bottom, right = nz.max(axis=0)
    g = spec.grid_size
    if bottom - top + 1 != g or right - left + 1 != g:
        return None
    return int(left - spec.margin), int(top - spec.margin)


def decode(pixels: np.ndarray, spec: MDPSpec) -> np.ndarray | None:
    """Recover the unshifted observation from a view without knowing its parameters."""
    est = estimate_shift(pixels, spec)
    if est is None:
        return None
    dx, dy = est
    return shift(pixels, -dx, -dy)


def decode_frames(pixels: np.ndarray, spec: MDPSpec) -> tuple[env.Frame, ...] | None:
    """Decode a view all the way to the per-frame (paddle_x, object_x, object_y) tuples."""
    obs = decode(pixels, spec)
    if obs is None:
        return None
    m, g = spec.margin, spec.grid_size
    frames = []
    for img in obs:
        field_ = img[m:m + g, m:m + g]
        paddle = np.flatnonzero(field_[g - 1] == env.PADDLE)
        obj = np.argwhere(field_[:g - 1] == env.OBJECT)
        if paddle.size != 1 or len(obj) != 1:
            return None
        frames.append((int(paddle[0]), int(obj[0][1]), int(obj[0][0])))
    return tuple(frames)


@dataclass
class BlockReport:
    disjoint: bool
    decodable: bool
    collisions: list = field(default_factory=list)
    n_states: int = 0
    n_views: int = 0


def all_params(pad: int) -> list[AugmentationParams]:
    r = range(-pad, pad + 1)
    return [AugmentationParams(dx, dy, pad) for dy in r for dx in r]


def check_block_structure(spec: MDPSpec, pad: int = DEFAULT_PAD,
                          observations: Mapping[Hashable, np.ndarray] | None = None,
                          max_grid: int = 8, max_collisions: int = 1000) -> BlockReport:
    """Exhaustively test that views of distinct states never coincide and always decode.

    By default every frame stack the environment can emit is enumerated;
    ``observations`` (state id -> pixels) substitutes a custom state set.
    """
    if observations is None:
        if spec.grid_size > max_grid:
            raise ValueError(f"enumeration guard: grid_size {spec.grid_size} > {max_grid}")
        observations = {fs: env.render(spec, env.state_from_frames(fs)) for fs in env.enumerate_frame_stacks(spec)}
    params = all_params(pad)
    # views are keyed by digest; a digest match is confirmed on the pixels
    owner: dict[bytes, tuple[Hashable, AugmentationParams]] = {}
    collisions = []
    decodable = True
    n_views = 0
    for key, obs in observations.items():
        for p in params:
            v = shift(obs, p.dx, p.dy)
            n_views += 1
            if decodable:
                back = decode(v, spec)
                decodable = back is not None and np.array_equal(back, obs)
            h = hashlib.blake2b(v.tobytes(), digest_size=16).digest()
            prev = owner.get(h)
            if prev is None:
                owner[h] = (key, p)
            elif prev[0] != key and len(collisions) < max_collisions:
                other = shift(observations[prev[0]], prev[1].dx, prev[1].dy)
                if np.array_equal(other, v):
                    collisions.append((prev[0], prev[1], key, p))
    return BlockReport(not collisions, decodable, collisions, len(observations), n_views)


def check_view_consistency(spec: MDPSpec, states, pad: int = DEFAULT_PAD) -> list:
    """Return every (state, params, action) where stepping the decoded view differs from stepping the state."""
    failures = []
    params = all_params(pad)
    for s in states:
        obs = env.render(spec, s)
        expected = [env.transition(spec, s, a) for a in range(spec.num_actions)]
        for p in params:
            frames = decode_frames(shift(obs, p.dx, p.dy), spec)
            if frames is None:
                failures.extend((s, p, a) for a in range(spec.num_actions))
                continue
            decoded = env.state_from_frames(frames, s.step_count, s.rng_state)
            for a in range(spec.num_actions):
                if env.transition(spec, decoded, a) != expected[a]:
                    failures.append((s, p, a))
    return failures
