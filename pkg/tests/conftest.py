import numpy as np
import pytest

from vcd.losses import LossConfig
from vcd.mmdp_env import MDPSpec
from vcd.networks import NetworkConfig, NetworkStack
from vcd.trainer import TrainConfig

MICRO_NET = NetworkConfig(encoder_widths=(5,), z_dim=4, dynamics_widths=(4,), projector_widths=(4,),
                          proj_dim=3, predictor_widths=(3,), num_predictors=2, q_widths=(4,))
MICRO_SPEC = MDPSpec(grid_size=3, frame_stack=1, margin=0, max_episode_steps=20)

TINY_NET = NetworkConfig(encoder_widths=(16,), z_dim=8, dynamics_widths=(8,), projector_widths=(8,),
                         proj_dim=4, predictor_widths=(4,), q_widths=(8,))
TINY_SPEC = MDPSpec(grid_size=6, margin=2, max_episode_steps=30)


def tiny_config(**kw) -> TrainConfig:
    base = dict(total_env_steps=120, warmup_steps=40, batch_size=8, eval_every=60, eval_episodes=2,
                network=TINY_NET, env=TINY_SPEC, pad=2, q_target_sync_interval=20)
    base.update(kw)
    return TrainConfig(**base)


def random_batch(rng, spec: MDPSpec, b: int, k: int = 1):
    """Random (v1, v2, actions, v_next, rewards, dones) shaped by ``spec.obs_shape``."""
    shape = (b, *spec.obs_shape)
    v1, v2 = rng.normal(size=shape), rng.normal(size=shape)
    actions = rng.integers(0, spec.num_actions, size=(b, k))
    v_next = [rng.normal(size=shape) for _ in range(k)]
    rewards = rng.choice([-1.0, 0.0, 1.0], size=b)
    dones = rng.random(b) < 0.2
    return v1, v2, actions, v_next, rewards, dones


def perturb_target(stack: NetworkStack, rng, scale: float = 0.3) -> None:
    """Move the target line off the online line so target-side gradients would be visible."""
    for t in stack.target.values():
        t.data = t.data + scale * rng.normal(size=t.shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def micro_stack():
    return NetworkStack(MICRO_NET, MICRO_SPEC.obs_shape, seed=3)


@pytest.fixture
def tiny_stack():
    return NetworkStack(TINY_NET, TINY_SPEC.obs_shape, seed=1)


@pytest.fixture
def vcd_cfg():
    return LossConfig(lam=0.5, mode="vcd")


# -- acceptance summary -------------------------------------------------------

_ACCEPTANCE: list[tuple[str, str, str]] = []


@pytest.fixture
def acceptance():
    """``acceptance(name, ok, detail)`` records one pass/fail line and asserts ``ok``."""

    def record(name: str, ok: bool, detail: str = "") -> None:
        status = "PASS" if ok else "FAIL"
        _ACCEPTANCE.append((status, name, detail))
        print(f"[{status}] {name}: {detail}")
        assert ok, f"{name}: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for status, name, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"[{status}] {name}: {detail}")
