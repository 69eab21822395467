import numpy as np
import pytest

from odereg.errors import ConfigError, ShapeError
from odereg.evaluation import tre_groupwise
from odereg.fields import (DisplacementField, Volume, jacobian_determinant,
                           jacobian_stats, warp_volume)
from odereg.integrator import Trajectory
from odereg.synth import (AugmentConfig, MotionModel, augment, gaussian_blur,
                          generate_sequence, ground_truth_field, invert_field,
                          make_motion_model, make_phantom, random_affine,
                          random_contrast, random_elastic)


@pytest.fixture(scope="module")
def phantom():
    return make_phantom((32, 32, 32), seed=42)


@pytest.fixture(scope="module")
def model():
    return make_motion_model((32, 32, 32), seed=42, max_amplitude=4.0,
                             t_phases=6)


@pytest.fixture(scope="module")
def sequence(phantom, model):
    return generate_sequence(phantom, model, n_landmarks=40, seed=7)


class TestPhantom:
    def test_deterministic_per_seed(self):
        a = make_phantom((16, 16, 16), seed=3)
        b = make_phantom((16, 16, 16), seed=3)
        np.testing.assert_array_equal(a.data, b.data)
        c = make_phantom((16, 16, 16), seed=4)
        assert not np.array_equal(a.data, c.data)

    def test_intensities_in_unit_range(self, phantom):
        assert phantom.data.min() >= 0.0
        assert phantom.data.max() <= 1.0

    def test_interior_windows_have_texture(self, phantom):
        # windowed variance > 0 for at least 90% of interior 9^3 windows
        data = phantom.data.astype(np.float64)
        r = 4
        count = 0
        textured = 0
        for ix in range(r, 32 - r, 2):
            for iy in range(r, 32 - r, 2):
                for iz in range(r, 32 - r, 2):
                    win = data[ix - r:ix + r + 1, iy - r:iy + r + 1,
                               iz - r:iz + r + 1]
                    count += 1
                    textured += win.var() > 0
        assert textured / count >= 0.9

    def test_indivisible_extents_rejected(self):
        with pytest.raises(ShapeError):
            make_phantom((30, 32, 32), seed=0)


class TestMotionModel:
    def test_zero_at_cycle_endpoints(self, model):
        np.testing.assert_array_equal(ground_truth_field(model, 0).vectors,
                                      0.0)
        np.testing.assert_array_equal(
            ground_truth_field(model, model.t_phases).vectors, 0.0)

    def test_peak_displacement_at_half_cycle(self, model):
        half = ground_truth_field(model, model.t_phases / 2)
        norms = np.linalg.norm(half.vectors, axis=0)
        assert norms.max() == pytest.approx(4.0, rel=1e-6)
        for t in range(model.t_phases):
            other = ground_truth_field(model, t)
            assert np.linalg.norm(other.vectors, axis=0).max() \
                <= norms.max() + 1e-9

    def test_all_phases_fold_free(self, model):
        for t in range(model.t_phases):
            detj = jacobian_determinant(ground_truth_field(model, t))
            _, neg = jacobian_stats(detj)
            assert neg == 0.0
            assert detj.min() > 0.0

    def test_amplitude_is_band_limited(self, model):
        # no spectral content above the configured cutoff (plus envelope)
        spec = np.abs(np.fft.fftn(model.amplitude[0]))
        kx = np.fft.fftfreq(32) * 32
        gx, gy, gz = np.meshgrid(kx, kx, kx, indexing="ij")
        radius = np.sqrt(gx ** 2 + gy ** 2 + gz ** 2)
        high = spec[radius > model.cutoff + 1e-9]
        assert high.max() <= 1e-8 * spec.max()

    def test_out_of_range_time_rejected(self, model):
        with pytest.raises(ConfigError):
            ground_truth_field(model, -0.5)


class TestInvertField:
    def test_inverse_composes_to_identity(self, model):
        phi = ground_truth_field(model, 3).vectors
        psi = invert_field(phi)
        # phi(q + psi(q)) + psi(q) should vanish
        from odereg import backend
        comp = backend.warp_trilinear(np.ascontiguousarray(phi),
                                      np.ascontiguousarray(psi)) + psi
        interior = (slice(None),) + (slice(6, 26),) * 3
        assert np.abs(comp[interior]).max() < 1e-6


class TestGenerateSequence:
    def test_frame_zero_is_phantom(self, phantom, sequence):
        volumes, _ = sequence
        np.testing.assert_array_equal(volumes[0].data, phantom.data)

    def test_deterministic(self, phantom, model):
        a = generate_sequence(phantom, model, n_landmarks=10, seed=5)
        b = generate_sequence(phantom, model, n_landmarks=10, seed=5)
        for va, vb in zip(a[0], b[0]):
            np.testing.assert_array_equal(va.data, vb.data)
        for la, lb in zip(a[1], b[1]):
            np.testing.assert_array_equal(la.points, lb.points)

    def test_landmarks_follow_ground_truth_exactly(self, model, sequence):
        _, landmark_sets = sequence
        p0 = landmark_sets[0].points
        idx = tuple(p0.astype(np.int64).T)
        for t, lm in enumerate(landmark_sets):
            g = model.phase_weight(t)
            expected = p0 + g * model.amplitude[(slice(None),) + idx].T
            np.testing.assert_allclose(lm.points, expected, atol=1e-12)

    def test_landmarks_stay_inside_bounds(self, sequence):
        volumes, landmark_sets = sequence
        for lm in landmark_sets:
            lm.check_inside(volumes[0].extents)

    def test_no_registration_tre_matches_direct_mean(self, model, sequence):
        volumes, landmark_sets = sequence
        zero = {t: DisplacementField.zeros((32, 32, 32))
                for t in range(len(volumes))}
        report = tre_groupwise(Trajectory(zero), landmark_sets, (1, 1, 1))
        p0 = landmark_sets[0].points
        idx = tuple(p0.astype(np.int64).T)
        amps = model.amplitude[(slice(None),) + idx].T
        direct = np.mean([
            np.linalg.norm(model.phase_weight(t) * amps, axis=1).mean()
            for t in range(1, len(volumes))])
        assert report.mean_mm == pytest.approx(direct, rel=1e-9)

    def test_warping_frames_back_recovers_phantom(self, phantom, model,
                                                  sequence):
        volumes, _ = sequence
        interior = (slice(7, 25),) * 3
        for t in range(1, len(volumes)):
            recovered = warp_volume(volumes[t], ground_truth_field(model, t))
            mae = np.abs(recovered.data[interior].astype(np.float64)
                         - phantom.data[interior]).mean()
            assert mae <= 0.01, (t, mae)

    def test_frame_intensities_stay_in_unit_range(self, sequence):
        for vol in sequence[0]:
            assert vol.data.min() >= 0.0 and vol.data.max() <= 1.0


class TestAugment:
    def test_transforms_preserve_shape_and_range(self, phantom, rng):
        for fn in (lambda v: random_affine(v, rng),
                   lambda v: gaussian_blur(v, 0.8),
                   lambda v: random_elastic(v, rng),
                   lambda v: random_contrast(v, rng)):
            out = fn(phantom)
            assert out.extents == phantom.extents
            assert np.all(np.isfinite(out.data))

    def test_blur_reduces_variance(self, phantom):
        out = gaussian_blur(phantom, 1.5)
        assert out.data.var() < phantom.data.var()

    def test_augment_is_deterministic_per_rng_state(self, phantom):
        cfg = AugmentConfig(p_affine=1.0, p_blur=1.0, p_elastic=1.0,
                            p_contrast=1.0)
        a = augment(phantom, np.random.default_rng(11), cfg)
        b = augment(phantom, np.random.default_rng(11), cfg)
        np.testing.assert_array_equal(a.data, b.data)
        assert a.data.min() >= 0.0 and a.data.max() <= 1.0

    def test_zero_probabilities_leave_volume_unchanged(self, phantom):
        out = augment(phantom, np.random.default_rng(1), AugmentConfig())
        np.testing.assert_array_equal(out.data, phantom.data)


def test_motion_model_validation():
    with pytest.raises(ShapeError):
        MotionModel(np.zeros((2, 4, 4, 4)), 6)
    with pytest.raises(ConfigError):
        MotionModel(np.zeros((3, 4, 4, 4)), 1)
