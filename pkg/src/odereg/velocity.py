"""Velocity estimation: cost volume, dense velocity networks, and the
compose-and-scale conversion from predicted alignment vectors to voxel
velocities.

Steps per level: resample carried quantities onto the level grid, compose
the carried vector onto the current displacement, warp the moving features,
correlate them against the fixed features, and run the level's dense conv
stack. After the finest level the predicted vector is composed onto the
current displacement and divided by the remaining time to the moving
frame, which keeps velocity magnitudes roughly constant along the
integration interval.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import (Tensor, concat, conv3d, correlate, grid_warp,
                       leaky_relu, resample, sqrt, square, tsum)
from .encoder import FeatureMaps
from .errors import ConfigError, ShapeError
from .model import VN_HALF_WIDTHS, VN_QUARTER_WIDTHS, ModelConfig

_NORM_EPS = 1e-12


@dataclass
class RegistrationState:
    """Everything one velocity query needs: features of the fixed and the
    current moving frame, temporal context, the displacement so far, the
    current time, and the moving frame's time."""

    fixed: FeatureMaps
    moving: FeatureMaps
    context: Tensor
    phi: Tensor
    t: float
    t_m: float


def local_cost_volume(a: Tensor, b: Tensor, radius: int) -> Tensor:
    """Correlation of a(p) with b(p + k) over cubic shifts k in [-r, r]^3.

    Both maps are first standardized by the mean and standard deviation
    pooled over the two maps' spatial and channel dimensions; shifts that
    leave the grid contribute zero.
    """
    if a.shape != b.shape:
        raise ShapeError(f"feature maps differ: {a.shape} vs {b.shape}")
    n = 2.0 * a.data.size
    mu = (tsum(a) + tsum(b)) * (1.0 / n)
    var = (tsum(square(a - mu)) + tsum(square(b - mu))) * (1.0 / n)
    sigma = sqrt(var + _NORM_EPS)
    return correlate((a - mu) / sigma, (b - mu) / sigma, radius)


def compose_tensor_fields(phi: Tensor, v: Tensor) -> Tensor:
    """result(p) = phi(p + v(p)) + v(p) on a shared grid."""
    return grid_warp(phi, v) + v


def compose_and_scale(v: Tensor, phi_t: Tensor, t: float,
                      t_m: float) -> Tensor:
    """Convert an alignment vector field into a voxel velocity:
    (phi_t composed with v, minus phi_t) / (t_m - t)."""
    if t_m <= t:
        raise ConfigError(f"moving-frame time {t_m} must exceed "
                          f"current time {t}")
    composed = compose_tensor_fields(phi_t, v)
    return (composed - phi_t) * (1.0 / (t_m - t))


def _dense_stack(x, params, prefix, n_layers, slope):
    """Densely connected conv stack: layer k sees the block input plus all
    previous outputs; a linear 3-channel head reads the last output.
    Returns the head output and the trunk activations."""
    feats = [x]
    for k in range(n_layers):
        key = f"{prefix}{k}.w"
        if key not in params:
            raise ConfigError(f"missing parameters for layer {key}")
        inp = feats[0] if k == 0 else concat(feats)
        feats.append(leaky_relu(
            conv3d(inp, params[key], params[f"{prefix}{k}.b"]), slope))
    head = conv3d(feats[-1], params[f"{prefix}_head.w"],
                  params[f"{prefix}_head.b"])
    return head, feats


def _level_input(corr, vec, fixed, context, warped, use_cost_volume):
    blocks = ([corr] if use_cost_volume else []) + [vec, fixed, context]
    if warped is not None:
        blocks.append(warped)
    return concat(blocks)


def predict_alignment(state: RegistrationState, params,
                      cfg: ModelConfig = None):
    """Run the velocity network(s) and return the raw alignment vector at
    the finest configured level (no time semantics applied)."""
    cfg = cfg or ModelConfig()
    quarter_extents = state.fixed.quarter.shape[1:]
    if cfg.levels == 1:
        phi_q = state.phi
    else:
        if "vnh0.w" not in params:
            raise ConfigError("two-level configuration but no half-"
                              "resolution network parameters")
        phi_q = resample(state.phi, quarter_extents, vector_mode=True)
    if phi_q.shape[1:] != quarter_extents:
        raise ShapeError(f"displacement grid {phi_q.shape[1:]} does not "
                         f"match features {quarter_extents}")

    warped_q = grid_warp(state.moving.quarter, phi_q)
    corr_q = (local_cost_volume(state.fixed.quarter, warped_q,
                                cfg.radius_quarter)
              if cfg.use_cost_volume else None)
    x = _level_input(corr_q, phi_q, state.fixed.quarter, state.context,
                     warped_q, cfg.use_cost_volume)
    v, feats = _dense_stack(x, params, "vnq", len(VN_QUARTER_WIDTHS),
                            cfg.leaky_slope)
    if cfg.levels == 1:
        return v

    half_extents = state.fixed.half.shape[1:]
    carried_v = resample(v, half_extents, vector_mode=True)
    # context at the finer level: the coarser trunk's second-last output
    context_h = resample(feats[-2], half_extents)
    phi_half = compose_tensor_fields(state.phi, carried_v)
    warped_h = grid_warp(state.moving.half, phi_half)
    if cfg.use_cost_volume:
        corr_h = local_cost_volume(state.fixed.half, warped_h,
                                   cfg.radius_half)
        x2 = _level_input(corr_h, carried_v, state.fixed.half, context_h,
                          None, True)
    else:
        x2 = concat([warped_h, carried_v, state.fixed.half, context_h])
    v2, _ = _dense_stack(x2, params, "vnh", len(VN_HALF_WIDTHS),
                         cfg.leaky_slope)
    return v2


def estimate_velocity(state: RegistrationState, params,
                      cfg: ModelConfig = None) -> Tensor:
    """Voxel velocity at the finest configured level (3 channels)."""
    cfg = cfg or ModelConfig()
    v = predict_alignment(state, params, cfg)
    return compose_and_scale(v, state.phi, state.t, state.t_m)
