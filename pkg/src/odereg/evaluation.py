"""Registration accuracy and significance metrics.

TRE transports phase-0 landmarks through the predicted displacement
(trilinear field lookup at fractional positions, full voxel resolution)
and measures Euclidean distance to the annotated target, converted to mm
per axis at the end. The Wilcoxon signed-rank test drops zero differences,
uses average ranks for ties, enumerates the exact null distribution up to
25 pairs (dynamic program over rank sums), and falls back to a normal
approximation with tie correction above that.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .fields import (DisplacementField, LandmarkSet, displace_points,
                     to_full_resolution)


@dataclass
class TREReport:
    errors_mm: np.ndarray
    mean_mm: float
    std_mm: float
    per_phase: dict = field(default_factory=dict)

    @classmethod
    def from_errors(cls, pooled, per_phase=None):
        pooled = np.asarray(pooled, dtype=np.float64)
        return cls(errors_mm=pooled, mean_mm=float(pooled.mean()),
                   std_mm=float(pooled.std()),
                   per_phase=per_phase or {})


def _full_extents(fld: DisplacementField):
    return tuple(int(round(e / fld.resolution_fraction))
                 for e in fld.extents)


def _phase_errors(fld: DisplacementField, p_ref: LandmarkSet,
                  p_target: LandmarkSet, spacing):
    if len(p_ref) != len(p_target):
        raise ConfigError(
            f"landmark cardinality mismatch: {len(p_ref)} reference vs "
            f"{len(p_target)} at phase {p_target.phase_index}")
    extents = _full_extents(fld)
    full = to_full_resolution(fld, extents)
    moved = displace_points(p_ref, full, extents)
    delta = (moved.points - p_target.points) * np.asarray(spacing,
                                                          dtype=np.float64)
    return np.linalg.norm(delta, axis=1)


def tre_groupwise(traj, landmarks, spacing) -> TREReport:
    """Mean 4D TRE: average transported-landmark error over every moving
    phase, (1 / n(T-1)) sum_t sum_i |p_0 + phi_t(p_0) - p_t|, in mm."""
    by_phase = {lm.phase_index: lm for lm in landmarks}
    if 0 not in by_phase:
        raise ConfigError("groupwise TRE needs phase-0 landmarks")
    moving = [t for t in sorted(traj.fields_by_phase) if t != 0]
    if not moving:
        raise ConfigError("trajectory has no moving phases")
    pooled, per_phase = [], {}
    for t in moving:
        if t not in by_phase:
            raise ConfigError(f"no landmarks annotated for phase {t}")
        errors = _phase_errors(traj.fields_by_phase[t], by_phase[0],
                               by_phase[t], spacing)
        per_phase[t] = TREReport.from_errors(errors)
        pooled.append(errors)
    return TREReport.from_errors(np.concatenate(pooled), per_phase)


def tre_pairwise(phi1: DisplacementField, p_fixed: LandmarkSet,
                 p_moving: LandmarkSet, spacing) -> TREReport:
    """Mean TRE between transported fixed landmarks and moving landmarks."""
    return TREReport.from_errors(
        _phase_errors(phi1, p_fixed, p_moving, spacing))


@dataclass
class WilcoxonResult:
    p_value: float
    statistic: float       # min of the positive/negative rank sums
    n_effective: int
    method: str            # "exact", "normal", or "degenerate"
    degenerate: bool = False


def _average_ranks(values):
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided(scaled_ranks, w2):
    # distribution of twice the positive rank sum via subset-sum counts
    total = int(sum(scaled_ranks))
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for s in scaled_ranks:
        counts[s:] += counts[:-s].copy()
    mass = counts.sum()
    p_le = counts[:w2 + 1].sum() / mass
    p_ge = counts[w2:].sum() / mass
    return min(1.0, 2.0 * min(p_le, p_ge))


def wilcoxon_signed_rank(errors_a, errors_b, method="auto",
                         exact_limit=25) -> WilcoxonResult:
    """Two-sided paired signed-rank test between two error samples."""
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError(f"need two equal-length 1D samples, got "
                         f"{a.shape} and {b.shape}")
    d = a - b
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return WilcoxonResult(p_value=1.0, statistic=0.0, n_effective=0,
                              method="degenerate", degenerate=True)
    if n < 5:
        raise ConfigError(
            f"need at least 5 non-zero differences, got {n}")
    absd = np.abs(d)
    ranks = _average_ranks(absd)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks.sum() - w_plus)
    statistic = min(w_plus, w_minus)
    if method == "auto":
        method = "exact" if n <= exact_limit else "normal"
    if method == "exact":
        scaled = [int(round(2 * r)) for r in ranks]
        p = _exact_two_sided(scaled, int(round(2 * w_plus)))
    elif method == "normal":
        mu = n * (n + 1) / 4.0
        var = n * (n + 1) * (2 * n + 1) / 24.0
        _, tie_counts = np.unique(absd, return_counts=True)
        var -= float(((tie_counts ** 3 - tie_counts) / 48.0).sum())
        z = (w_plus - mu) / math.sqrt(var)
        p = min(1.0, math.erfc(abs(z) / math.sqrt(2.0)))
    else:
        raise ConfigError(f"unknown method {method!r}")
    return WilcoxonResult(p_value=float(p), statistic=statistic,
                          n_effective=n, method=method)


def significance_marker(p):
    """Conventional stars: * p<0.05, ** p<0.01, *** p<0.001."""
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""
