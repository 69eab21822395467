"""Fixed-step Euler integration of voxel velocities and the registration
drivers built on it.

Group-wise registration walks frame-index paths (forward and backward
around the breathing cycle), integrating each unit interval with the
path's next frame as the moving target and chaining the displacement as
the initial condition of the following interval. Times are always the
path-position parameterization (interval i runs from i-1 to i); direction
is encoded purely by frame selection. Pair-wise registration integrates
from 0 to 1. The recursive-composition variant reuses the same network but
composes raw alignment vectors without any time semantics.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, no_grad
from .encoder import encode_sequence
from .errors import ConfigError, IntegrationError, ShapeError
from .fields import DisplacementField, Volume
from .model import ModelConfig
from .velocity import (RegistrationState, compose_tensor_fields,
                       estimate_velocity, predict_alignment)


def default_paths(t_phases: int):
    """Bidirectional frame paths: [0, 1, ..., mid] and [0, T-1, ..., mid].

    For ten phases these are 0..5 and 0,9,...,5; shorter cyclic sequences
    scale the same way.
    """
    if t_phases < 2:
        raise ConfigError(f"need at least 2 phases, got {t_phases}")
    if t_phases == 2:
        return [[0, 1]]
    mid = t_phases // 2
    forward = list(range(0, mid + 1))
    backward = [0] + list(range(t_phases - 1, mid - 1, -1))
    return [forward, backward]


@dataclass
class IntegrationPlan:
    """How to drive the solver: step size, frame paths, mode."""

    mode: str = "pair"
    step_size: float = 0.1
    directions: list = field(default_factory=lambda: [[0, 1]])

    def __post_init__(self):
        if self.mode not in ("pair", "group"):
            raise ConfigError(f"mode must be 'pair' or 'group', "
                              f"got {self.mode!r}")
        if self.step_size <= 0:
            raise ConfigError(f"step size must be positive, "
                              f"got {self.step_size}")
        for path in self.directions:
            if len(path) < 2 or path[0] != 0:
                raise ConfigError(f"each path must start at frame 0 and "
                                  f"visit at least one more frame: {path}")

    @classmethod
    def pairwise(cls, step_size=0.1):
        return cls("pair", step_size, [[0, 1]])

    @classmethod
    def groupwise(cls, t_phases, step_size=0.25):
        return cls("group", step_size, default_paths(t_phases))

    def phase_route(self, phase):
        """(path, number of intervals) reaching the given phase; forward
        paths take precedence at the meeting phase."""
        for path in self.directions:
            if phase in path[1:]:
                return path, path.index(phase)
        raise ConfigError(f"phase {phase} is not reachable by any path")


@dataclass
class Trajectory:
    """Per-phase displacement fields on one shared grid."""

    fields_by_phase: dict
    resolution_fraction: float = 1.0

    def __post_init__(self):
        if 0 not in self.fields_by_phase:
            raise ConfigError("trajectory must include phase 0")
        if np.any(self.fields_by_phase[0].vectors != 0.0):
            raise ConfigError("phase-0 field must be identically zero")

    @property
    def phases(self):
        return sorted(self.fields_by_phase)


def euler_integrate(velocity_fn, phi0: Tensor, t0: float, t1: float,
                    h: float, collect=False):
    """K = round((t1 - t0) / h) steps of phi <- phi + v(phi, t) * h.

    Returns (final phi, list of intermediate phi after each step). A
    non-finite velocity aborts with the failing step index.
    """
    if t1 <= t0:
        raise ConfigError(f"need t1 > t0, got [{t0}, {t1}]")
    if h > t1 - t0:
        raise ConfigError(f"step size {h} exceeds interval {t1 - t0}")
    steps = max(1, round((t1 - t0) / h))
    phi = phi0
    intermediates = []
    for k in range(steps):
        t = t0 + k * h
        v = velocity_fn(phi, t)
        if not np.all(np.isfinite(v.data)):
            raise IntegrationError(
                f"non-finite velocity at step {k} (t = {t:g})")
        phi = phi + v * h
        if collect:
            intermediates.append(phi)
    return phi, intermediates


def _check_network_range(vol: Volume):
    lo, hi = float(vol.data.min()), float(vol.data.max())
    if lo < -1e-6 or hi > 1.0 + 1e-6:
        raise ConfigError(
            f"intensities must be rescaled to [0, 1] before registration, "
            f"got [{lo:g}, {hi:g}]")


def _as_input(vol: Volume, dtype):
    _check_network_range(vol)
    return Tensor(vol.data.astype(dtype, copy=False)[None])


def _zero_phi(extents, fraction, dtype):
    grid = tuple(int(round(e * fraction)) for e in extents)
    return Tensor(np.zeros((3,) + grid, dtype=dtype))


def _interval_velocity_fn(fixed_feats, moving_feats, context, params, cfg,
                          t_m):
    def velocity_fn(phi, t):
        state = RegistrationState(fixed=fixed_feats, moving=moving_feats,
                                  context=context, phi=phi, t=t, t_m=t_m)
        return estimate_velocity(state, params, cfg)
    return velocity_fn


def register_pairwise(fixed: Volume, moving: Volume, params,
                      cfg: ModelConfig = None,
                      plan: IntegrationPlan = None) -> Tensor:
    """Integrate the pair ODE over [0, 1]; returns the final displacement
    at the network's native resolution (graph-attached)."""
    cfg = cfg or ModelConfig()
    plan = plan or IntegrationPlan.pairwise()
    if fixed.extents != moving.extents:
        raise ShapeError(f"extents differ: {fixed.extents} vs "
                         f"{moving.extents}")
    dtype = cfg.np_dtype
    feats, context = encode_sequence(
        [_as_input(fixed, dtype), _as_input(moving, dtype)], params, cfg)
    phi0 = _zero_phi(fixed.extents, cfg.field_fraction, dtype)
    vfn = _interval_velocity_fn(feats[0], feats[1], context, params, cfg,
                                t_m=1.0)
    phi, _ = euler_integrate(vfn, phi0, 0.0, 1.0, plan.step_size)
    return phi


def register_groupwise(seq, params, cfg: ModelConfig = None,
                       plan: IntegrationPlan = None) -> Trajectory:
    """Piece-wise integration along every planned path; each phase is
    emitted once (forward path wins at the meeting phase). Inference only
    (no graph); training uses register_to_phase."""
    cfg = cfg or ModelConfig()
    plan = plan or IntegrationPlan.groupwise(len(seq))
    _validate_plan_frames(plan, len(seq))
    dtype = cfg.np_dtype
    with no_grad():
        feats, context = encode_sequence(
            [_as_input(v, dtype) for v in seq], params, cfg)
        frac = cfg.field_fraction
        fields = {0: DisplacementField.zeros(
            tuple(int(round(e * frac)) for e in seq[0].extents), frac,
            dtype)}
        for path in plan.directions:
            phi = _zero_phi(seq[0].extents, frac, dtype)
            for i in range(1, len(path)):
                vfn = _interval_velocity_fn(feats[0], feats[path[i]],
                                            context, params, cfg, t_m=i)
                phi, _ = euler_integrate(vfn, phi, i - 1.0, float(i),
                                         plan.step_size)
                fields.setdefault(path[i],
                                  DisplacementField(phi.data.copy(), frac))
    return Trajectory(fields, frac)


def register_to_phase(feats, context, params, cfg, plan, phase) -> Tensor:
    """Graph-attached displacement for one phase along its planned path."""
    path, n_intervals = plan.phase_route(phase)
    extents4 = feats[0].quarter.shape[1:]
    scale = 4 * cfg.field_fraction
    grid = tuple(int(round(e * scale)) for e in extents4)
    phi = Tensor(np.zeros((3,) + grid, dtype=cfg.np_dtype))
    for i in range(1, n_intervals + 1):
        vfn = _interval_velocity_fn(feats[0], feats[path[i]], context,
                                    params, cfg, t_m=i)
        phi, _ = euler_integrate(vfn, phi, i - 1.0, float(i),
                                 plan.step_size)
    return phi


def _validate_plan_frames(plan, t_phases):
    for path in plan.directions:
        if max(path) >= t_phases:
            raise ConfigError(
                f"path {path} references frame {max(path)} but the "
                f"sequence has {t_phases} phases")


def drrn_register(fixed: Volume, moving: Volume, params,
                  cfg: ModelConfig = None, recursions: int = 1) -> Tensor:
    """Recursive composition variant: predict an alignment vector with the
    same network and fold it in via composition, R times, with no time
    scaling or velocity semantics."""
    cfg = cfg or ModelConfig()
    if recursions < 1:
        raise ConfigError(f"need at least one recursion, got {recursions}")
    if fixed.extents != moving.extents:
        raise ShapeError(f"extents differ: {fixed.extents} vs "
                         f"{moving.extents}")
    dtype = cfg.np_dtype
    feats, context = encode_sequence(
        [_as_input(fixed, dtype), _as_input(moving, dtype)], params, cfg)
    phi = _zero_phi(fixed.extents, cfg.field_fraction, dtype)
    for _ in range(recursions):
        state = RegistrationState(fixed=feats[0], moving=feats[1],
                                  context=context, phi=phi, t=0.0, t_m=1.0)
        v = predict_alignment(state, params, cfg)
        phi = compose_tensor_fields(phi, v)
    return phi
