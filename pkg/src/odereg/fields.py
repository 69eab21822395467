"""Displacement-field algebra: warping, point transport, composition,
Jacobian analysis. Non-learned math over plain numpy arrays.

Conventions: arrays are indexed (x, y, z) on axes (0, 1, 2); displacement
fields are (3, H, W, D) with vectors in voxel units of their own grid.
Fields at fractional resolutions convert to other grids only through
vector-mode resampling.
"""

from dataclasses import dataclass, field

import numpy as np

from . import backend
from .autodiff import Tensor, no_grad, resample
from .errors import ShapeError


@dataclass
class Volume:
    """Dense scalar image with physical voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise ShapeError(f"volume must be 3D, got {self.data.shape}")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ShapeError(f"spacing must be 3 positive values, "
                             f"got {self.spacing}")

    @property
    def extents(self):
        return self.data.shape


@dataclass
class DisplacementField:
    """Dense 3-vector field; resolution_fraction relates its grid to the
    full volume grid (1, 1/2, 1/4)."""

    vectors: np.ndarray
    resolution_fraction: float = 1.0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 4 or self.vectors.shape[0] != 3:
            raise ShapeError(
                f"field must be (3, H, W, D), got {self.vectors.shape}")

    @property
    def extents(self):
        return self.vectors.shape[1:]

    def is_finite(self):
        return bool(np.all(np.isfinite(self.vectors)))

    @classmethod
    def zeros(cls, extents, resolution_fraction=1.0, dtype=np.float32):
        return cls(np.zeros((3,) + tuple(extents), dtype=dtype),
                   resolution_fraction)


@dataclass
class LandmarkSet:
    """Point set in full-resolution voxel coordinates for one phase."""

    points: np.ndarray
    phase_index: int = 0

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        if self.points.shape[1] != 3:
            raise ShapeError(f"points must be (N, 3), got {self.points.shape}")

    def __len__(self):
        return self.points.shape[0]

    def check_inside(self, extents):
        lo = self.points < 0
        hi = self.points >= np.asarray(extents, dtype=np.float64)
        bad = np.nonzero(lo.any(axis=1) | hi.any(axis=1))[0]
        if bad.size:
            raise ShapeError(
                f"landmark index {int(bad[0])} at {self.points[bad[0]]} "
                f"falls outside extents {tuple(extents)}")


def to_full_resolution(phi: DisplacementField, extents) -> DisplacementField:
    """Vector-mode resample onto the full-resolution grid."""
    if phi.extents == tuple(extents):
        return DisplacementField(phi.vectors, 1.0)
    with no_grad():
        up = resample(Tensor(phi.vectors), tuple(extents), vector_mode=True)
    return DisplacementField(up.data, 1.0)


def warp_volume(v: Volume, phi: DisplacementField) -> Volume:
    """out(p) = v(p + phi(p)); phi is upsampled first when fractional."""
    phi = to_full_resolution(phi, v.extents)
    vec = np.ascontiguousarray(phi.vectors.astype(v.data.dtype, copy=False))
    out = backend.warp_trilinear(
        np.ascontiguousarray(v.data[None]), vec)[0]
    return Volume(out, v.spacing)


def sample_field_at_points(phi: DisplacementField, points) -> np.ndarray:
    """Trilinear field values at (possibly fractional) full-res positions."""
    vec = phi.vectors
    h, w, d = phi.extents
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    out = np.zeros_like(pts)
    x = np.clip(pts[:, 0], 0, h - 1)
    y = np.clip(pts[:, 1], 0, w - 1)
    z = np.clip(pts[:, 2], 0, d - 1)
    x0 = np.minimum(x.astype(np.int64), h - 2)
    y0 = np.minimum(y.astype(np.int64), w - 2)
    z0 = np.minimum(z.astype(np.int64), d - 2)
    fx, fy, fz = x - x0, y - y0, z - z0
    for i in (0, 1):
        wx = fx if i else 1 - fx
        for j in (0, 1):
            wy = fy if j else 1 - fy
            for k in (0, 1):
                wz = fz if k else 1 - fz
                wgt = (wx * wy * wz)[:, None]
                out += wgt * vec[:, x0 + i, y0 + j, z0 + k].T
    return out


def displace_points(pts: LandmarkSet, phi: DisplacementField,
                    extents=None) -> LandmarkSet:
    """Move each point by the interpolated field value at its location.

    The field must already live on the full-resolution grid. Points outside
    the grid are rejected with their index in the diagnostic.
    """
    if phi.resolution_fraction != 1.0:
        raise ShapeError("displace_points expects a full-resolution field; "
                         "resample it first")
    pts.check_inside(extents if extents is not None else phi.extents)
    moved = pts.points + sample_field_at_points(phi, pts.points)
    return LandmarkSet(moved, pts.phase_index)


def compose_fields(phi: DisplacementField,
                   v: DisplacementField) -> DisplacementField:
    """result(p) = phi(p + v(p)) + v(p), sampled trilinearly."""
    if phi.extents != v.extents:
        raise ShapeError(
            f"cannot compose fields on grids {phi.extents} and {v.extents}")
    pv = np.ascontiguousarray(phi.vectors)
    vv = np.ascontiguousarray(v.vectors.astype(pv.dtype, copy=False))
    out = backend.warp_trilinear(pv, vv) + vv
    return DisplacementField(out, phi.resolution_fraction)


def jacobian_determinant(phi: DisplacementField) -> np.ndarray:
    """det(I + grad(phi)) per voxel; central differences in the interior,
    one-sided at the boundary, unit voxel spacing."""
    if any(e < 3 for e in phi.extents):
        raise ShapeError(f"need extents >= 3 per axis, got {phi.extents}")
    vec = phi.vectors.astype(np.float64, copy=False)
    j = np.empty((3, 3) + phi.extents)
    for comp in range(3):
        grads = np.gradient(vec[comp], edge_order=1)
        for axis in range(3):
            j[comp, axis] = grads[axis]
    j[0, 0] += 1.0
    j[1, 1] += 1.0
    j[2, 2] += 1.0
    return (j[0, 0] * (j[1, 1] * j[2, 2] - j[1, 2] * j[2, 1])
            - j[0, 1] * (j[1, 0] * j[2, 2] - j[1, 2] * j[2, 0])
            + j[0, 2] * (j[1, 0] * j[2, 1] - j[1, 1] * j[2, 0]))


def jacobian_stats(detj: np.ndarray, mask=None):
    """(standard deviation, fraction of negative values) over the grid,
    optionally restricted to a boolean mask."""
    values = np.asarray(detj)
    if mask is not None:
        values = values[np.asarray(mask, dtype=bool)]
    if values.size == 0:
        raise ShapeError("empty determinant field")
    return float(values.std()), float(np.mean(values < 0.0))
