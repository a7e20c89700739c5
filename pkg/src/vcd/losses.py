"""Prediction and view-consistency losses, their InfoNCE variant, and the weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, stop_gradient
from .networks import NetworkStack, rollout_k

MODES = ("vcd", "vcd_pne", "vcd_cne", "base", "contrastive")


class NonFiniteLoss(FloatingPointError):
    def __init__(self, component: str, value: float):
        self.component = component
        super().__init__(f"non-finite loss component {component} = {value}")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.5
    pred_steps: int = 1
    mode: str = "vcd"
    infonce_temperature: float = 0.1
    symmetrize: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.lam >= 0 and math.isfinite(self.lam)):
            raise ValueError(f"lambda must be a finite non-negative number, got {self.lam}")
        if self.pred_steps < 1:
            raise ValueError("pred_steps must be >= 1")
        if not self.infonce_temperature > 0:
            raise ValueError("infonce_temperature must be positive")

    @property
    def effective_lambda(self) -> float:
        return 0.0 if self.mode == "base" else float(self.lam)


@dataclass
class LossReport:
    l_rl: float
    l_pre: float
    l_con: float
    l_total: float
    lam: float
    mode: str

    def to_json(self) -> dict:
        return {"l_rl": self.l_rl, "l_pre": self.l_pre, "l_con": self.l_con,
                "l_total": self.l_total, "lambda": self.lam, "mode": self.mode}


def cosine_distance_loss(prediction: Tensor, target: Tensor) -> Tensor:
    """2 - 2 cos(prediction, target), averaged over rows when batched."""
    return ad.reduce_mean(2.0 - 2.0 * ad.cosine_similarity(prediction, target))


def infonce_loss(queries: Tensor, keys: Tensor, temperature: float) -> Tensor:
    """Row i of ``keys`` is the positive for row i of ``queries``; other rows are negatives."""
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if queries.shape != keys.shape or len(queries.shape) != 2:
        raise ad.ShapeError("infonce_loss", queries.shape, keys.shape)
    logits = ad.l2_normalize(queries) @ ad.transpose(ad.l2_normalize(keys))
    logits = ad.scale(logits, 1.0 / temperature)
    shift = Tensor(logits.data.max(axis=1, keepdims=True))
    logits = logits - shift
    n = queries.shape[0]
    positives = ad.reduce_sum(logits * Tensor(np.eye(n)), axis=1)
    log_norm = ad.log(ad.reduce_sum(ad.exp(logits), axis=1))
    return ad.reduce_mean(log_norm - positives)


def prediction_loss(pipe, stack: NetworkStack) -> Tensor:
    return cosine_distance_loss(stack.predict(pipe.yhat1, "q_pre"), pipe.ytilde)


def consistency_loss(pipe, stack: NetworkStack) -> Tensor:
    return cosine_distance_loss(stack.predict(pipe.yhat1, "q_con"), pipe.ybar2)


@dataclass
class AuxiliaryOutputs:
    l_pre: Tensor
    l_con: Tensor
    z1: Tensor
    znext_target: Tensor  # target encoding of the first next view, reused for TD targets


def _branch_losses(stack: NetworkStack, cfg: LossConfig, z1: Tensor, zbar2: Tensor,
                   actions: np.ndarray, ytildes: list[Tensor]) -> tuple[Tensor, Tensor]:
    k = cfg.pred_steps
    steps = [actions[:, i] for i in range(k)]
    z_pre = stop_gradient(z1) if cfg.mode == "vcd_pne" else z1
    z_con = stop_gradient(z1) if cfg.mode == "vcd_cne" else z1
    y_pre = [stack.project(x) for x in rollout_k(stack, z_pre, steps)]
    y_con = y_pre if z_con is z_pre else [stack.project(x) for x in rollout_k(stack, z_con, steps)]
    y_bar = [stack.project(x, "target") for x in rollout_k(stack, zbar2, steps, "target")]

    if cfg.mode == "contrastive":
        t = cfg.infonce_temperature
        pre_terms = [infonce_loss(stack.predict(y, "q_pre"), yt, t) for y, yt in zip(y_pre, ytildes)]
        con_terms = [infonce_loss(stack.predict(y, "q_con"), yb, t) for y, yb in zip(y_con, y_bar)]
    else:
        pre_terms = [cosine_distance_loss(stack.predict(y, "q_pre"), yt) for y, yt in zip(y_pre, ytildes)]
        con_terms = [cosine_distance_loss(stack.predict(y, "q_con"), yb) for y, yb in zip(y_con, y_bar)]
    return _average(pre_terms), _average(con_terms)


def _average(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = total + t
    return total if len(terms) == 1 else ad.scale(total, 1.0 / len(terms))


def auxiliary_losses(stack: NetworkStack, v1: np.ndarray, v2: np.ndarray, actions: np.ndarray,
                     v_next: Sequence[np.ndarray], cfg: LossConfig) -> AuxiliaryOutputs:
    """L_pre and L_con for a batch.

    ``actions`` is ``[B, K]``; ``v_next[k]`` holds views of the state k + 1 steps
    ahead. Per-step losses are averaged over the K steps. In ``base`` mode L_con
    is still evaluated for logging but detached from the graph.
    """
    actions = np.asarray(actions).reshape(len(v1), -1)
    if actions.shape[1] < cfg.pred_steps or len(v_next) < cfg.pred_steps:
        raise ValueError(f"need {cfg.pred_steps} future steps, got {actions.shape[1]} actions "
                         f"and {len(v_next)} next views")
    znext = [stack.encode(v, "target") for v in v_next[:cfg.pred_steps]]
    ytildes = [stack.project(z, "target") for z in znext]

    z1 = stack.encode(v1)
    zbar2 = stack.encode(v2, "target")
    l_pre, l_con = _branch_losses(stack, cfg, z1, zbar2, actions, ytildes)
    if cfg.symmetrize:
        z2 = stack.encode(v2)
        zbar1 = stack.encode(v1, "target")
        s_pre, s_con = _branch_losses(stack, cfg, z2, zbar1, actions, ytildes)
        l_pre = ad.scale(l_pre + s_pre, 0.5)
        l_con = ad.scale(l_con + s_con, 0.5)
    if cfg.mode == "base":
        l_con = stop_gradient(l_con)
    return AuxiliaryOutputs(l_pre, l_con, z1, znext[0])


def total_loss(l_rl: Tensor, l_pre: Tensor, l_con: Tensor, cfg: LossConfig) -> tuple[Tensor, LossReport]:
    """L_rl + L_pre + lambda * L_con, with lambda forced to 0 in ``base`` mode."""
    for name, t in (("l_rl", l_rl), ("l_pre", l_pre), ("l_con", l_con)):
        if not math.isfinite(t.item()):
            raise NonFiniteLoss(name, t.item())
    lam = cfg.effective_lambda
    total = l_rl + l_pre + ad.scale(l_con, lam)
    report = LossReport(l_rl.item(), l_pre.item(), l_con.item(), total.item(), lam, cfg.mode)
    return total, report


def compose_report(l_rl: float, l_pre: float, l_con: float, cfg: LossConfig) -> LossReport:
    """Scalar-only version of :func:`total_loss` for recomputing logged totals."""
    for name, v in (("l_rl", l_rl), ("l_pre", l_pre), ("l_con", l_con)):
        if not math.isfinite(v):
            raise NonFiniteLoss(name, v)
    lam = cfg.effective_lambda
    return LossReport(l_rl, l_pre, l_con, l_rl + l_pre + l_con * lam, lam, cfg.mode)


def gradient_scope(stack: NetworkStack, v1, v2, actions, v_next, cfg: LossConfig,
                   roles: Sequence[str] = ("encoder", "dynamics")) -> dict[str, dict[str, bool]]:
    """Which online parameter groups receive nonzero gradient from each weighted auxiliary term."""
    out = {}
    for which in ("l_pre", "l_con"):
        with ad.Tape() as tape:
            aux = auxiliary_losses(stack, v1, v2, actions, v_next, cfg)
            term = aux.l_pre if which == "l_pre" else ad.scale(aux.l_con, cfg.effective_lambda)
            grads = tape.backward(term)
        out[which] = {r: any(np.any(grads[p] != 0) for p in stack.group(r)) for r in roles}
    return out
