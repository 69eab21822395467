"""Unsupervised training losses.

The image term is a windowed squared normalized cross-correlation, summed
over all voxel-centered windows and negated (perfect alignment drives it
toward minus the voxel count). Window statistics use box sums truncated at
the border with means over the in-range count, so constant images have
exactly zero variance everywhere. The regularizer is the mean squared
forward-difference gradient of the displacement field, so its weight is
resolution independent.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .autodiff import Tensor, box_sum, square, tsum
from .errors import ConfigError, ShapeError


@dataclass
class LossConfig:
    window: int = 9
    smooth_weight: float = 1.0
    eps: float = 1e-5

    def __post_init__(self):
        if self.window % 2 == 0 or self.window < 3:
            raise ConfigError(f"window must be odd and >= 3, "
                              f"got {self.window}")
        if self.smooth_weight < 0:
            raise ConfigError("smooth_weight must be >= 0")


def _window_counts(shape, n, dtype):
    ones = np.ones((1,) + tuple(shape[-3:]), dtype=np.float64)
    cnt = backend.box_sum3(ones, n)[0].astype(dtype)
    return cnt.reshape(shape) if len(shape) == 4 else cnt


def ncc_loss(i: Tensor, j: Tensor, cfg: LossConfig = None) -> Tensor:
    """Negative windowed squared NCC, summed over all voxels."""
    cfg = cfg or LossConfig()
    if i.shape != j.shape:
        raise ShapeError(f"images differ in shape: {i.shape} vs {j.shape}")
    n = cfg.window
    cnt = Tensor(_window_counts(i.shape[-3:], n, i.data.dtype))
    si = box_sum(i, n)
    sj = box_sum(j, n)
    sii = box_sum(i * i, n)
    sjj = box_sum(j * j, n)
    sij = box_sum(i * j, n)
    cross = sij - si * sj / cnt
    var_i = sii - si * si / cnt
    var_j = sjj - sj * sj / cnt
    cc = square(cross) / (var_i * var_j + cfg.eps)
    return -tsum(cc)


def smoothness_loss(phi: Tensor) -> Tensor:
    """Mean over voxels of the squared forward-difference field gradient."""
    if any(e < 2 for e in phi.shape[1:]):
        raise ShapeError(f"need extents >= 2 per axis, got {phi.shape[1:]}")
    total = None
    full = slice(None)
    for axis in range(1, 4):
        hi = tuple(slice(1, None) if a == axis else full for a in range(4))
        lo = tuple(slice(None, -1) if a == axis else full for a in range(4))
        diff = phi[hi] - phi[lo]
        npos = int(np.prod(diff.shape[1:]))
        term = tsum(square(diff)) * (1.0 / npos)
        total = term if total is None else total + term
    return total


def total_loss(fixed: Tensor, warped_by_phase: dict, fields_by_phase: dict,
               mode: str, cfg: LossConfig = None) -> Tensor:
    """Combined image + smoothness objective.

    Group-wise: average over moving phases of ncc + weight * smoothness.
    Pair-wise: the single-phase form.
    """
    cfg = cfg or LossConfig()
    if mode not in ("group", "pair"):
        raise ConfigError(f"mode must be 'group' or 'pair', got {mode!r}")
    phases = [t for t in sorted(warped_by_phase) if t != 0]
    if not phases:
        raise ConfigError("no moving phases to score")
    if set(phases) - set(fields_by_phase):
        raise ConfigError("warped phases and fields are out of step")
    if mode == "pair" and len(phases) != 1:
        raise ConfigError(f"pair-wise mode expects one phase, got {phases}")
    total = None
    for t in phases:
        term = ncc_loss(fixed, warped_by_phase[t], cfg)
        if cfg.smooth_weight:
            term = term + cfg.smooth_weight * smoothness_loss(
                fields_by_phase[t])
        total = term if total is None else total + term
    return total * (1.0 / len(phases))
