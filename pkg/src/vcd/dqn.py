"""DQN pieces supplying the RL term: replay buffer, epsilon-greedy acting, one-step TD loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .networks import NetworkStack, greedy_action, q_values

# All rendered intensities are multiples of 1/20, so uint8 storage is lossless.
PIXEL_SCALE = 20


@dataclass
class Transition:
    obs: np.ndarray
    action: int
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray          # [B, l, H, W]
    actions: np.ndarray      # [B, K]
    rewards: np.ndarray      # [B]  reward of the first step
    next_obs: list           # K arrays [B, l, H, W]; next_obs[k] is k + 1 steps ahead
    dones: np.ndarray        # [B]  done flag of the first step


class ReplayBuffer:
    """Ring buffer of transitions in insertion order, sampled uniformly with replacement."""

    def __init__(self, capacity: int, obs_shape: tuple[int, ...]):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs_shape = tuple(obs_shape)
        self._obs = np.zeros((capacity, *obs_shape), dtype=np.uint8)
        self._next = np.zeros((capacity, *obs_shape), dtype=np.uint8)
        self._act = np.zeros(capacity, dtype=np.int64)
        self._rew = np.zeros(capacity)
        self._done = np.zeros(capacity, dtype=bool)
        self._pos = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    @staticmethod
    def _encode(obs: np.ndarray) -> np.ndarray:
        q = np.rint(obs * PIXEL_SCALE)
        if not np.array_equal(q / PIXEL_SCALE, obs):
            raise ValueError("observation intensities are not multiples of 1/20")
        return q.astype(np.uint8)

    def push(self, t: Transition) -> None:
        i = self._pos
        self._obs[i] = self._encode(t.obs)
        self._next[i] = self._encode(t.next_obs)
        self._act[i] = t.action
        self._rew[i] = t.reward
        self._done[i] = t.done
        self._pos = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def _physical(self, logical: np.ndarray) -> np.ndarray:
        oldest = self._pos if self._size == self.capacity else 0
        return (oldest + logical) % self.capacity

    def __getitem__(self, logical: int) -> Transition:
        i = int(self._physical(np.asarray(logical)))
        return Transition(self._obs[i] / PIXEL_SCALE, int(self._act[i]), float(self._rew[i]),
                          self._next[i] / PIXEL_SCALE, bool(self._done[i]))

    def sample_indices(self, n: int, rng: np.random.Generator, k: int = 1) -> np.ndarray:
        """Logical start indices of ``k`` consecutive same-episode transitions.

        Invalid starts (too close to the newest item, or crossing a ``done``) are
        redrawn until all ``n`` are valid.
        """
        if n < 1:
            raise ValueError("sample size must be positive")
        if self._size < max(n, k):
            raise ValueError(f"cannot sample {n} from a buffer holding {self._size}")
        hi = self._size - k + 1
        idx = rng.integers(0, hi, size=n)
        if k == 1:
            return idx
        for _ in range(10_000):
            bad = np.zeros(n, dtype=bool)
            for j in range(k - 1):
                bad |= self._done[self._physical(idx + j)]
            if not bad.any():
                return idx
            idx[bad] = rng.integers(0, hi, size=int(bad.sum()))
        raise RuntimeError(f"no valid {k}-step sequences in the buffer")

    def sample(self, n: int, rng: np.random.Generator, k: int = 1) -> Batch:
        start = self.sample_indices(n, rng, k)
        steps = [self._physical(start + j) for j in range(k)]
        first = steps[0]
        return Batch(
            obs=self._obs[first] / PIXEL_SCALE,
            actions=np.stack([self._act[s] for s in steps], axis=1),
            rewards=self._rew[first].copy(),
            next_obs=[self._next[s] / PIXEL_SCALE for s in steps],
            dones=self._done[first].copy(),
        )


def epsilon_schedule(step: int, total_steps: int, start: float = 1.0, end: float = 0.05,
                     decay_fraction: float = 0.2) -> float:
    """Linear decay from ``start`` to ``end`` over the first ``decay_fraction`` of training."""
    horizon = decay_fraction * total_steps
    if horizon <= 0 or step >= horizon:
        return end
    return start + (end - start) * step / horizon


def act_epsilon_greedy(stack: NetworkStack, obs: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform action with probability ``epsilon``, else the online greedy action (ties to lowest index)."""
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if rng.random() < epsilon:
        return int(rng.integers(stack.num_actions))
    return int(greedy_action(q_values(stack, obs))[0])


def td_targets(stack: NetworkStack, znext_target: Tensor, rewards: np.ndarray, dones: np.ndarray,
               gamma: float) -> np.ndarray:
    q_next = stack.q_head(znext_target, "target").data
    return rewards + gamma * (1.0 - dones.astype(np.float64)) * q_next.max(axis=1)


def td_loss_from_latents(stack: NetworkStack, z_online: Tensor, actions: np.ndarray, rewards: np.ndarray,
                         znext_target: Tensor, dones: np.ndarray, gamma: float) -> Tensor:
    """mean((Q_online(z, a) - y)**2) with y built entirely off-tape."""
    if len(rewards) == 0:
        raise ValueError("td_loss needs a non-empty batch")
    y = td_targets(stack, znext_target, rewards, dones, gamma)
    q = stack.q_head(z_online)
    chosen = ad.reduce_sum(q * stack.onehot(actions), axis=1)
    return ad.reduce_mean(ad.square(chosen - Tensor(y)))


def td_loss(stack: NetworkStack, views: np.ndarray, actions: np.ndarray, rewards: np.ndarray,
            next_views: np.ndarray, dones: np.ndarray, gamma: float) -> Tensor:
    if len(rewards) == 0:
        raise ValueError("td_loss needs a non-empty batch")
    return td_loss_from_latents(stack, stack.encode(views), np.asarray(actions), np.asarray(rewards, float),
                                stack.encode(next_views, "target"), np.asarray(dones), gamma)
