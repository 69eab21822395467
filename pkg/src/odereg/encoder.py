"""Per-frame feature pyramid and temporal ConvGRU encoding."""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, conv3d, leaky_relu, sigmoid, tanh
from .errors import ShapeError
from .model import PYRAMID_LAYERS, ModelConfig


@dataclass
class FeatureMaps:
    """Half- (16 ch) and quarter-resolution (32 ch) maps for one frame."""

    half: Tensor
    quarter: Tensor


def _act_conv(x, params, name, stride, slope):
    return leaky_relu(conv3d(x, params[f"{name}.w"], params[f"{name}.b"],
                             stride), slope)


def feature_pyramid_forward(vol: Tensor, params,
                            cfg: ModelConfig = None) -> FeatureMaps:
    """Two pyramid levels; each halves the spatial extents once.

    vol: (1, H, W, D) with extents divisible by 4; weights are shared
    across frames by construction (same parameter dict).
    """
    cfg = cfg or ModelConfig()
    if vol.data.ndim != 4 or vol.data.shape[0] != 1:
        raise ShapeError(f"expected a (1, H, W, D) volume, got {vol.shape}")
    if any(e % 4 for e in vol.data.shape[1:]):
        raise ShapeError(
            f"extents must be divisible by 4, got {vol.data.shape[1:]}")
    x = vol
    outputs = {}
    for name, _, _, stride in PYRAMID_LAYERS:
        x = _act_conv(x, params, name, stride, cfg.leaky_slope)
        outputs[name] = x
    return FeatureMaps(half=outputs["pyr3"], quarter=outputs["pyr6"])


def zero_context(like: Tensor) -> Tensor:
    return Tensor(np.zeros_like(like.data))


def convgru_step(f: Tensor, h: Tensor, params,
                 cfg: ModelConfig = None) -> Tensor:
    """Gated update of the hidden map from one frame's quarter features.

    z = sig(Conv_u([f, h])), r = sig(Conv_r([f, h])),
    cand = tanh(Conv_n([f, r * h])), h' = (1 - z) * h + z * cand.
    """
    cfg = cfg or ModelConfig()
    if f.data.shape != h.data.shape:
        raise ShapeError(
            f"features {f.shape} and hidden state {h.shape} differ")
    fh = concat([f, h])
    z = sigmoid(conv3d(fh, params["gru_update.w"], params["gru_update.b"]))
    r = sigmoid(conv3d(fh, params["gru_reset.w"], params["gru_reset.b"]))
    cand = tanh(conv3d(concat([f, r * h]),
                       params["gru_cand.w"], params["gru_cand.b"]))
    return (1.0 - z) * h + z * cand


def encode_sequence(vols, params, cfg: ModelConfig = None):
    """Per-frame FeatureMaps plus the temporal context.

    The context is the GRU hidden state after the final frame (zeros before
    the first); with the GRU disabled it falls back to the first (fixed)
    frame's quarter-resolution features.
    """
    cfg = cfg or ModelConfig()
    vols = list(vols)
    if len(vols) < 2:
        raise ShapeError(f"need a sequence of >= 2 frames, got {len(vols)}")
    feats = []
    hidden = None
    for vol in vols:
        fm = feature_pyramid_forward(vol, params, cfg)
        feats.append(fm)
        if cfg.use_gru:
            if hidden is None:
                hidden = zero_context(fm.quarter)
            hidden = convgru_step(fm.quarter, hidden, params, cfg)
    context = hidden if cfg.use_gru else feats[0].quarter
    return feats, context
