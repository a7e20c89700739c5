"""Online and target network stacks: encoder, latent dynamics, projector, predictors, Q-head.

Parameters live in two flat dicts keyed ``"<role>.<layer>.<weight|bias>"``.
The target side holds the EMA copies of encoder/dynamics/projector and a
separately hard-synced Q-head used for TD targets. Predictors exist only
online. Every target output passes through ``stop_gradient``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, stop_gradient
from .rng import generator

SSL_ROLES = ("encoder", "dynamics", "projector")
CHECKPOINT_FORMAT = "vcd-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class NetworkConfig:
    encoder_widths: tuple[int, ...] = (256, 128)
    z_dim: int = 64
    dynamics_widths: tuple[int, ...] = (128,)
    projector_widths: tuple[int, ...] = (64,)
    proj_dim: int = 32
    predictor_widths: tuple[int, ...] = (32,)
    num_predictors: int = 2
    q_widths: tuple[int, ...] = (64,)

    def __post_init__(self):
        if self.num_predictors not in (0, 1, 2):
            raise ValueError(f"num_predictors must be 0, 1 or 2, got {self.num_predictors}")
        for name in ("encoder_widths", "dynamics_widths", "projector_widths", "predictor_widths", "q_widths"):
            object.__setattr__(self, name, tuple(int(w) for w in getattr(self, name)))
        if self.z_dim < 1 or self.proj_dim < 1:
            raise ValueError("latent sizes must be positive")


def _layer_sizes(cfg: NetworkConfig, in_dim: int, num_actions: int) -> dict[str, list[int]]:
    sizes = {
        "encoder": [in_dim, *cfg.encoder_widths, cfg.z_dim],
        "dynamics": [cfg.z_dim + num_actions, *cfg.dynamics_widths, cfg.z_dim],
        "projector": [cfg.z_dim, *cfg.projector_widths, cfg.proj_dim],
        "q_head": [cfg.z_dim, *cfg.q_widths, num_actions],
    }
    if cfg.num_predictors >= 1:
        sizes["q_pre"] = [cfg.proj_dim, *cfg.predictor_widths, cfg.proj_dim]
    if cfg.num_predictors == 2:
        sizes["q_con"] = [cfg.proj_dim, *cfg.predictor_widths, cfg.proj_dim]
    return sizes


def _init_mlp(rng: np.random.Generator, role: str, sizes: list[int]) -> dict[str, Tensor]:
    params = {}
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{role}.{i}.weight"] = Tensor(rng.uniform(-bound, bound, (fan_in, fan_out)), True, f"{role}.{i}.weight")
        params[f"{role}.{i}.bias"] = Tensor(rng.uniform(-bound, bound, fan_out), True, f"{role}.{i}.bias")
    return params


def mlp(params: dict[str, Tensor], role: str, x: Tensor) -> Tensor:
    """ReLU on hidden layers, linear output."""
    n = sum(1 for k in params if k.startswith(role + ".") and k.endswith(".weight"))
    for i in range(n):
        x = x @ params[f"{role}.{i}.weight"] + params[f"{role}.{i}.bias"]
        if i < n - 1:
            x = ad.relu(x)
    return x


def role_of(name: str) -> str:
    return name.split(".", 1)[0]


class NetworkStack:
    def __init__(self, config: NetworkConfig, obs_shape: Sequence[int], num_actions: int = 3, seed: int = 0):
        self.config = config
        self.obs_shape = tuple(obs_shape)
        self.num_actions = num_actions
        in_dim = int(np.prod(self.obs_shape))
        rng = generator(seed, "init")
        self.online: dict[str, Tensor] = {}
        for role, sizes in _layer_sizes(config, in_dim, num_actions).items():
            self.online.update(_init_mlp(rng, role, sizes))
        self.target: dict[str, Tensor] = {
            k: Tensor(v.data.copy(), False, k) for k, v in self.online.items() if role_of(k) in SSL_ROLES + ("q_head",)
        }

    def online_params(self) -> list[Tensor]:
        return list(self.online.values())

    def group(self, role: str, line: str = "online") -> list[Tensor]:
        params = self.online if line == "online" else self.target
        return [v for k, v in params.items() if role_of(k) == role]

    # -- building blocks ---------------------------------------------------
    def _flat(self, views) -> Tensor:
        x = views.pixels if hasattr(views, "pixels") else views
        x = np.asarray(x, dtype=np.float64)
        if x.shape == self.obs_shape:
            x = x[None]
        if x.shape[1:] != self.obs_shape:
            raise ad.ShapeError("encoder", x.shape[1:], self.obs_shape)
        return Tensor(x.reshape(x.shape[0], -1))

    def onehot(self, actions) -> Tensor:
        a = np.atleast_1d(np.asarray(actions, dtype=np.int64))
        if a.min() < 0 or a.max() >= self.num_actions:
            raise ValueError(f"action out of range: {a}")
        return Tensor(np.eye(self.num_actions)[a])

    def encode(self, views, line: str = "online") -> Tensor:
        if line == "online":
            return mlp(self.online, "encoder", self._flat(views))
        return stop_gradient(mlp(self.target, "encoder", self._flat(views)))

    def dynamics(self, z: Tensor, actions, line: str = "online") -> Tensor:
        params = self.online if line == "online" else self.target
        x = mlp(params, "dynamics", ad.concat([z, self.onehot(actions)], axis=-1))
        return x if line == "online" else stop_gradient(x)

    def project(self, x: Tensor, line: str = "online") -> Tensor:
        if line == "online":
            return mlp(self.online, "projector", x)
        return stop_gradient(mlp(self.target, "projector", x))

    def predict(self, y: Tensor, which: str) -> Tensor:
        """Apply ``q_pre`` or ``q_con``; shared with one predictor, identity with none."""
        n = self.config.num_predictors
        if n == 0:
            return y
        role = "q_con" if which == "q_con" and n == 2 else "q_pre"
        return mlp(self.online, role, y)

    def q_head(self, z: Tensor, line: str = "online") -> Tensor:
        if line == "online":
            return mlp(self.online, "q_head", z)
        return stop_gradient(mlp(self.target, "q_head", z))

    # -- checkpointing -----------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        out = {f"online.{k}": v.data for k, v in self.online.items()}
        out.update({f"target.{k}": v.data for k, v in self.target.items()})
        return out

    def save(self, path: str | Path, extra: dict | None = None) -> None:
        """JSON checkpoint: {name: {shape, values}} with row-major values; floats round-trip exactly."""
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "obs_shape": list(self.obs_shape),
            "num_actions": self.num_actions,
            "network": asdict(self.config),
            "params": {k: {"shape": list(v.shape), "values": v.reshape(-1).tolist()}
                       for k, v in self.state_dict().items()},
        }
        if extra:
            doc["extra"] = extra
        Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NetworkStack":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
        stack = cls(NetworkConfig(**doc["network"]), doc["obs_shape"], doc["num_actions"])
        for name, entry in doc["params"].items():
            line, key = name.split(".", 1)
            params = stack.online if line == "online" else stack.target
            if key not in params:
                raise ValueError(f"{path}: unexpected parameter {name}")
            arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
            if arr.shape != params[key].shape:
                raise ValueError(f"{path}: {name} has shape {arr.shape}, expected {params[key].shape}")
            params[key].data = arr
        return stack


@dataclass
class LatentPipeline:
    z1: Tensor
    zbar2: Tensor
    xhat1: Tensor
    xbar2: Tensor
    yhat1: Tensor
    ybar2: Tensor
    ytilde: Tensor
    znext_target: Tensor = field(repr=False, default=None)


def forward_pipeline(stack: NetworkStack, v1, v2, action, v_next) -> LatentPipeline:
    """Online line on ``v1``, target line on ``v2`` and on the true next view ``v_next``."""
    z1 = stack.encode(v1)
    zbar2 = stack.encode(v2, "target")
    if z1.shape != zbar2.shape:
        raise ad.ShapeError("forward_pipeline", z1.shape, zbar2.shape)
    xhat1 = stack.dynamics(z1, action)
    xbar2 = stack.dynamics(zbar2, action, "target")
    znext = stack.encode(v_next, "target")
    return LatentPipeline(
        z1=z1, zbar2=zbar2, xhat1=xhat1, xbar2=xbar2,
        yhat1=stack.project(xhat1), ybar2=stack.project(xbar2, "target"),
        ytilde=stack.project(znext, "target"), znext_target=znext,
    )


def rollout_k(stack: NetworkStack, z: Tensor, actions: Sequence, line: str = "online") -> list[Tensor]:
    """Iterate the dynamics model over ``actions``; returns every intermediate prediction."""
    if len(actions) == 0:
        raise ValueError("rollout_k needs at least one action")
    out = []
    for a in actions:
        z = stack.dynamics(z, a, line)
        out.append(z)
    return out


def ema_update(stack: NetworkStack, tau: float, roles: Sequence[str] = SSL_ROLES) -> None:
    """theta_m <- (1 - tau) * theta_m + tau * theta_o for every target parameter of ``roles``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0, 1], got {tau}")
    for k, t in stack.target.items():
        if role_of(k) in roles:
            # in place, same rounding as (1 - tau) * m + tau * o
            t.data *= 1.0 - tau
            t.data += tau * stack.online[k].data


def hard_sync(stack: NetworkStack, roles: Sequence[str]) -> None:
    for k, t in stack.target.items():
        if role_of(k) in roles:
            t.data = stack.online[k].data.copy()


def q_values(stack: NetworkStack, views, use_target: bool = False) -> np.ndarray:
    line = "target" if use_target else "online"
    return stack.q_head(stack.encode(views, line), line).data


def greedy_action(q: np.ndarray) -> np.ndarray:
    """Argmax over the last axis; ties go to the lowest action index."""
    return np.argmax(q, axis=-1)
