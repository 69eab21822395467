"""Unsupervised training loops for pair-wise and group-wise registration."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, grid_warp, no_grad, resample, zero_grads
from .encoder import encode_sequence
from .errors import ConfigError
from .fields import DisplacementField, Volume
from .integrator import (IntegrationPlan, register_pairwise,
                         register_to_phase)
from .model import ModelConfig
from .objective import LossConfig, total_loss
from .optim import AdamState, adam_step


@dataclass
class TrainConfig:
    steps: int = 300
    lr: float = 1e-4
    step_size: float = 0.2          # pair-wise default; group-wise uses 0.5
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    include_path_phases: bool = False   # group-wise: also score phases
    #                                     passed through along the route


def _warped_moving(moving: Volume, phi: Tensor, dtype) -> Tensor:
    full = resample(phi, moving.extents, vector_mode=True) \
        if phi.shape[1:] != moving.extents else phi
    return grid_warp(Tensor(moving.data.astype(dtype, copy=False)[None]),
                     full)


def _phase_loss(fixed: Volume, moving: Volume, phi: Tensor, loss_cfg,
                dtype) -> Tensor:
    warped = _warped_moving(moving, phi, dtype)
    fixed_t = Tensor(fixed.data.astype(dtype, copy=False)[None])
    return total_loss(fixed_t, {1: warped}, {1: phi}, "pair", loss_cfg)


def train_pairwise(fixed: Volume, moving: Volume, params,
                   model_cfg: ModelConfig = None,
                   train_cfg: TrainConfig = None,
                   adam: AdamState = None, on_step=None):
    """Overfit-style unsupervised training on one image pair.

    Returns the per-step loss log [(step, loss)]. on_step(step, loss) can
    stop training early by returning True.
    """
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    adam = adam if adam is not None else AdamState()
    plan = IntegrationPlan.pairwise(train_cfg.step_size)
    dtype = model_cfg.np_dtype
    log = []
    for step in range(train_cfg.steps):
        phi = register_pairwise(fixed, moving, params, model_cfg, plan)
        loss = _phase_loss(fixed, moving, phi, train_cfg.loss, dtype)
        zero_grads(params)
        loss.backward()
        adam_step(params, adam, train_cfg.lr)
        value = loss.item()
        log.append((step, value))
        if on_step is not None and on_step(step, value):
            break
    return log


def train_groupwise(seq, params, model_cfg: ModelConfig = None,
                    train_cfg: TrainConfig = None,
                    plan: IntegrationPlan = None,
                    adam: AdamState = None, on_step=None):
    """Each iteration registers one randomly drawn phase to the fixed
    frame (phase 0) and updates on that phase's loss; optionally the
    phases passed through along the route contribute too."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig(step_size=0.5)
    adam = adam if adam is not None else AdamState()
    plan = plan or IntegrationPlan.groupwise(len(seq),
                                             train_cfg.step_size)
    if len(seq) < 2:
        raise ConfigError("need at least two phases to train")
    dtype = model_cfg.np_dtype
    rng = np.random.default_rng(train_cfg.seed)
    moving_phases = sorted({p for path in plan.directions
                            for p in path[1:]})
    log = []
    for step in range(train_cfg.steps):
        phase = int(rng.choice(moving_phases))
        inputs = [Tensor(v.data.astype(dtype, copy=False)[None])
                  for v in seq]
        feats, context = encode_sequence(inputs, params, model_cfg)
        if train_cfg.include_path_phases:
            path, n_intervals = plan.phase_route(phase)
            losses = []
            for i in range(1, n_intervals + 1):
                phi_i = register_to_phase(feats, context, params,
                                          model_cfg, plan, path[i])
                losses.append(_phase_loss(seq[0], seq[path[i]], phi_i,
                                          train_cfg.loss, dtype))
            loss = losses[0]
            for extra in losses[1:]:
                loss = loss + extra
            loss = loss * (1.0 / len(losses))
        else:
            phi = register_to_phase(feats, context, params, model_cfg,
                                    plan, phase)
            loss = _phase_loss(seq[0], seq[phase], phi, train_cfg.loss,
                               dtype)
        zero_grads(params)
        loss.backward()
        adam_step(params, adam, train_cfg.lr)
        value = loss.item()
        log.append((step, value))
        if on_step is not None and on_step(step, value):
            break
    return log


def pairwise_field(fixed: Volume, moving: Volume, params,
                   model_cfg: ModelConfig = None,
                   step_size=0.1) -> DisplacementField:
    """Inference-time pair registration as a plain displacement field."""
    model_cfg = model_cfg or ModelConfig()
    with no_grad():
        phi = register_pairwise(fixed, moving, params, model_cfg,
                                IntegrationPlan.pairwise(step_size))
    return DisplacementField(phi.data, model_cfg.field_fraction)
