import numpy as np
import pytest

from odereg.errors import ShapeError
from odereg.fields import (DisplacementField, LandmarkSet, Volume,
                           compose_fields, displace_points,
                           jacobian_determinant, jacobian_stats,
                           sample_field_at_points, to_full_resolution,
                           warp_volume)

from oracles import jacobian_det_ref, warp_ref


def smooth_field(rng, extents, scale):
    """Band-limited random field (a few low-frequency Fourier modes)."""
    out = np.zeros((3,) + tuple(extents))
    coords = [np.arange(e) / e for e in extents]
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    for c in range(3):
        for _ in range(3):
            kx, ky, kz = rng.integers(0, 3, size=3)
            phase = rng.uniform(0, 2 * np.pi)
            out[c] += rng.normal() * np.sin(
                2 * np.pi * (kx * gx + ky * gy + kz * gz) + phase)
    peak = np.abs(out).max()
    return out * (scale / peak if peak > 0 else 0.0)


class TestWarpVolume:
    def test_zero_field_is_identity(self, rng):
        v = Volume(rng.random((6, 6, 6)))
        out = warp_volume(v, DisplacementField.zeros((6, 6, 6)))
        np.testing.assert_array_equal(out.data, v.data)

    def test_constant_shift_on_ramp(self):
        e = 8
        ramp = np.broadcast_to(np.arange(e, dtype=float)[:, None, None],
                               (e, e, e)).copy()
        vec = np.zeros((3, e, e, e))
        vec[0] = 2.0
        out = warp_volume(Volume(ramp), DisplacementField(vec))
        np.testing.assert_allclose(out.data[:e - 2], ramp[:e - 2] + 2.0,
                                   atol=1e-12)

    def test_random_case_matches_oracle(self, rng):
        v = Volume(rng.random((5, 5, 5)))
        vec = rng.uniform(-1, 1, size=(3, 5, 5, 5))
        out = warp_volume(v, DisplacementField(vec))
        np.testing.assert_allclose(out.data, warp_ref(v.data[None], vec)[0],
                                   rtol=1e-6, atol=1e-9)

    def test_fractional_field_is_upsampled(self, rng):
        v = Volume(rng.random((8, 8, 8)))
        vec = np.full((3, 4, 4, 4), 0.5)
        out = warp_volume(v, DisplacementField(vec, 0.5))
        up = to_full_resolution(DisplacementField(vec, 0.5), (8, 8, 8))
        np.testing.assert_allclose(up.vectors, np.full((3, 8, 8, 8), 1.0))
        assert out.data.shape == (8, 8, 8)


class TestDisplacePoints:
    def test_zero_field_keeps_points(self):
        pts = LandmarkSet([[1.0, 2.0, 3.0], [4.0, 4.0, 4.0]])
        out = displace_points(pts, DisplacementField.zeros((6, 6, 6)))
        np.testing.assert_array_equal(out.points, pts.points)

    def test_constant_field_shifts_all_points(self):
        vec = np.zeros((3, 6, 6, 6))
        vec[0], vec[1], vec[2] = 1.0, 2.0, 3.0
        pts = LandmarkSet([[1.0, 1.0, 1.0], [2.5, 3.5, 2.0]])
        out = displace_points(pts, DisplacementField(vec))
        np.testing.assert_allclose(out.points,
                                   pts.points + np.array([1.0, 2.0, 3.0]))

    def test_linear_field_matches_closed_form(self):
        e = 8
        alpha = 0.25
        base = np.stack(np.meshgrid(*[np.arange(e)] * 3, indexing="ij"))
        field = DisplacementField(alpha * base.astype(np.float64))
        p = np.array([[1.25, 3.5, 2.75]])
        out = displace_points(LandmarkSet(p), field)
        # trilinear interpolation of a linear field is exact
        np.testing.assert_allclose(out.points, p * (1 + alpha), atol=1e-12)

    def test_out_of_bounds_point_rejected_with_index(self):
        pts = LandmarkSet([[1.0, 1.0, 1.0], [7.5, 1.0, 1.0]])
        with pytest.raises(ShapeError, match="index 1"):
            displace_points(pts, DisplacementField.zeros((6, 6, 6)))


class TestComposeFields:
    def test_identity_left(self, rng):
        v = DisplacementField(rng.uniform(-1, 1, (3, 5, 5, 5)))
        out = compose_fields(DisplacementField.zeros((5, 5, 5)), v)
        np.testing.assert_allclose(out.vectors, v.vectors, atol=1e-12)

    def test_identity_right(self, rng):
        phi = DisplacementField(rng.uniform(-1, 1, (3, 5, 5, 5)))
        out = compose_fields(phi, DisplacementField.zeros((5, 5, 5)))
        np.testing.assert_allclose(out.vectors, phi.vectors, atol=1e-12)

    def test_constant_fields_add(self):
        a = DisplacementField(np.full((3, 6, 6, 6), 0.5))
        b = DisplacementField(np.full((3, 6, 6, 6), 0.25))
        out = compose_fields(a, b)
        np.testing.assert_allclose(out.vectors, np.full((3, 6, 6, 6), 0.75),
                                   atol=1e-12)

    def test_grid_mismatch_raises(self):
        with pytest.raises(ShapeError):
            compose_fields(DisplacementField.zeros((4, 4, 4)),
                           DisplacementField.zeros((5, 4, 4)))

    def test_sequential_warp_consistency(self, rng):
        # warp(warp(v, phi), s) == warp(v, compose(phi, s)) on the interior
        e = 16
        vol = Volume(np.sin(np.linspace(0, 3, e))[:, None, None]
                     * np.cos(np.linspace(0, 2, e))[None, :, None]
                     * np.ones((1, 1, e)))
        phi = DisplacementField(smooth_field(rng, (e, e, e), 1.0))
        small = DisplacementField(smooth_field(rng, (e, e, e), 0.5))
        lhs = warp_volume(warp_volume(vol, phi), small)
        rhs = warp_volume(vol, compose_fields(phi, small))
        crop = (slice(3, e - 3),) * 3
        assert np.max(np.abs(lhs.data[crop] - rhs.data[crop])) < 1e-2

    def test_point_and_volume_transport_agree(self, rng):
        # a delta-like bump transported by the field lands where the warped
        # volume's intensity peak sits, within half a voxel
        e = 16
        q = np.array([9.0, 7.0, 8.0])
        gx, gy, gz = np.meshgrid(*[np.arange(e, dtype=float)] * 3,
                                 indexing="ij")
        bump = np.exp(-(((gx - q[0]) ** 2 + (gy - q[1]) ** 2
                         + (gz - q[2]) ** 2) / 4.0))
        phi = DisplacementField(smooth_field(rng, (e, e, e), 1.2))
        warped = warp_volume(Volume(bump), phi)
        ix, iy, iz = np.unravel_index(np.argmax(warped.data),
                                      warped.data.shape)
        # sub-voxel peak: intensity centroid in a window around the argmax
        window = warped.data[ix - 2:ix + 3, iy - 2:iy + 3, iz - 2:iz + 3]
        offs = np.stack(np.meshgrid(*[np.arange(-2.0, 3.0)] * 3,
                                    indexing="ij"))
        peak = (np.array([ix, iy, iz], dtype=float)
                + (window * offs).sum(axis=(1, 2, 3)) / window.sum())
        back = displace_points(LandmarkSet(peak[None]), phi).points[0]
        assert np.linalg.norm(back - q) <= 0.5


class TestJacobian:
    def test_zero_field_gives_unit_determinant(self):
        detj = jacobian_determinant(DisplacementField.zeros((5, 5, 5)))
        np.testing.assert_allclose(detj, np.ones((5, 5, 5)), atol=1e-12)

    def test_uniform_dilation(self):
        e = 6
        base = np.stack(np.meshgrid(*[np.arange(e)] * 3, indexing="ij"))
        detj = jacobian_determinant(
            DisplacementField(0.1 * base.astype(np.float64)))
        np.testing.assert_allclose(detj[1:-1, 1:-1, 1:-1], 1.1 ** 3,
                                   atol=1e-9)

    def test_affine_field_matches_closed_form_everywhere(self, rng):
        e = 6
        a = rng.uniform(-0.1, 0.1, size=(3, 3))
        base = np.stack(np.meshgrid(*[np.arange(e)] * 3,
                                    indexing="ij")).astype(np.float64)
        vec = np.einsum("ij,jxyz->ixyz", a, base)
        detj = jacobian_determinant(DisplacementField(vec))
        np.testing.assert_allclose(detj, np.linalg.det(np.eye(3) + a),
                                   rtol=1e-6)

    def test_random_field_matches_oracle(self, rng):
        vec = smooth_field(rng, (6, 6, 6), 1.0)
        detj = jacobian_determinant(DisplacementField(vec))
        np.testing.assert_allclose(detj, jacobian_det_ref(vec),
                                   rtol=1e-6, atol=1e-9)

    def test_small_extent_rejected(self):
        with pytest.raises(ShapeError):
            jacobian_determinant(DisplacementField.zeros((2, 5, 5)))


class TestJacobianStats:
    def test_identity_statistics(self):
        std, neg = jacobian_stats(np.ones((4, 4, 4)))
        assert std == 0.0 and neg == 0.0

    def test_single_negative_voxel_fraction(self):
        detj = np.ones((4, 4, 4))
        detj[1, 2, 3] = -0.5
        _, neg = jacobian_stats(detj)
        assert neg == pytest.approx(1 / 64)

    def test_matches_streaming_oracle(self, rng):
        detj = rng.standard_normal((5, 6, 4))
        # Welford-style streaming mean/variance as the independent route
        mean, m2, count, negs = 0.0, 0.0, 0, 0
        for v in detj.ravel():
            count += 1
            delta = v - mean
            mean += delta / count
            m2 += delta * (v - mean)
            negs += v < 0
        std, neg = jacobian_stats(detj)
        assert std == pytest.approx(np.sqrt(m2 / count), rel=1e-12)
        assert neg == pytest.approx(negs / count, rel=1e-12)

    def test_mask_restricts_statistics(self, rng):
        detj = np.ones((4, 4, 4))
        detj[0] = -1.0
        mask = np.zeros((4, 4, 4), dtype=bool)
        mask[1:] = True
        _, neg = jacobian_stats(detj, mask)
        assert neg == 0.0

    def test_empty_rejected(self):
        with pytest.raises(ShapeError):
            jacobian_stats(np.ones((4, 4, 4)), np.zeros((4, 4, 4), bool))


def test_volume_validation():
    with pytest.raises(ShapeError):
        Volume(np.zeros((4, 4)))
    with pytest.raises(ShapeError):
        Volume(np.zeros((4, 4, 4)), spacing=(1.0, 0.0, 1.0))


def test_field_validation():
    with pytest.raises(ShapeError):
        DisplacementField(np.zeros((2, 4, 4, 4)))


def test_sample_field_at_points_matches_manual(rng):
    vec = rng.standard_normal((3, 5, 5, 5))
    phi = DisplacementField(vec)
    p = np.array([[1.5, 2.0, 3.25]])
    got = sample_field_at_points(phi, p)
    want = np.zeros(3)
    x0, y0, z0 = 1, 2, 3
    fx, fy, fz = 0.5, 0.0, 0.25
    for i in (0, 1):
        for j in (0, 1):
            for k in (0, 1):
                wgt = ((fx if i else 1 - fx) * (fy if j else 1 - fy)
                       * (fz if k else 1 - fz))
                want += wgt * vec[:, x0 + i, y0 + j, z0 + k]
    np.testing.assert_allclose(got[0], want, atol=1e-12)
