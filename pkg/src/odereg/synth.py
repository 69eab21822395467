"""Synthetic phantoms with analytic cyclic motion.

The phantom is a smooth background plus ellipsoidal organ blobs and a
band-limited texture component (so windowed correlation has signal
everywhere). Motion is a separable model phi(p, t) = g(t) * A(p) with
g(t) = sin^2(pi t / T): a smooth, band-limited amplitude field dominated
by a bulk translation envelope, softened until the peak-phase warp is
safely fold-free. Frames are produced by warping the phantom with the
numerically inverted field, so transported landmarks p + g(t) A(p) are
exact ground truth by construction.
"""

from dataclasses import dataclass

import numpy as np

from . import backend
from .errors import ConfigError, ShapeError
from .fields import DisplacementField, LandmarkSet, Volume, \
    jacobian_determinant


def _bandlimited(rng, extents, cutoff):
    """White noise low-passed to <= cutoff cycles per volume, unit max."""
    white = rng.standard_normal(extents)
    spec = np.fft.rfftn(white)
    freqs = [np.fft.fftfreq(e) * e for e in extents[:-1]]
    freqs.append(np.fft.rfftfreq(extents[-1]) * extents[-1])
    kx, ky, kz = np.meshgrid(*freqs, indexing="ij")
    mask = (kx ** 2 + ky ** 2 + kz ** 2) <= cutoff ** 2
    out = np.fft.irfftn(spec * mask, s=extents, axes=(0, 1, 2))
    peak = np.abs(out).max()
    return out / peak if peak > 0 else out


def make_phantom(extents, seed, dtype=np.float32) -> Volume:
    """Deterministic textured phantom with intensities in [0, 1]."""
    extents = tuple(int(e) for e in extents)
    if any(e % 4 for e in extents):
        raise ShapeError(f"extents must be divisible by 4, got {extents}")
    rng = np.random.default_rng(seed)
    img = 0.5 + 0.24 * _bandlimited(rng, extents, 2)

    grids = np.meshgrid(*[np.arange(e, dtype=np.float64) for e in extents],
                        indexing="ij")
    for _ in range(4):
        center = [rng.uniform(0.3 * e, 0.7 * e) for e in extents]
        axes = [rng.uniform(0.12 * e, 0.3 * e) for e in extents]
        q = sum(((g - c) / a) ** 2 for g, c, a in zip(grids, center, axes))
        edge = 1.0 / (1.0 + np.exp((q - 1.0) / 0.16))
        img += rng.uniform(-0.28, 0.28) * edge

    # texture bands kept smooth enough that two trilinear resamplings stay
    # within ~0.01 mean absolute error of the original
    img += 0.055 * _bandlimited(rng, extents, 3.5)
    img += 0.018 * _bandlimited(rng, extents, 6)

    lo, hi = img.min(), img.max()
    img = 0.02 + 0.96 * (img - lo) / (hi - lo)
    return Volume(img.astype(dtype))


@dataclass
class MotionModel:
    """Separable cyclic motion: displacement g(t) * A(p) in voxels."""

    amplitude: np.ndarray       # (3, H, W, D)
    t_phases: int
    cutoff: float = 2.0

    def __post_init__(self):
        self.amplitude = np.asarray(self.amplitude, dtype=np.float64)
        if self.amplitude.ndim != 4 or self.amplitude.shape[0] != 3:
            raise ShapeError(f"amplitude must be (3, H, W, D), "
                             f"got {self.amplitude.shape}")
        if self.t_phases < 2:
            raise ConfigError(f"need >= 2 phases, got {self.t_phases}")

    def phase_weight(self, t):
        if t % self.t_phases == 0:
            return 0.0  # exact cyclic closure; sin(pi) is not float zero
        return float(np.sin(np.pi * t / self.t_phases) ** 2)

    @property
    def extents(self):
        return self.amplitude.shape[1:]


def make_motion_model(extents, seed, max_amplitude=4.0, t_phases=6,
                      cutoff=2.0, min_det=0.2) -> MotionModel:
    """Bulk translation modulated by a smooth envelope plus a small
    band-limited wiggle, blended toward pure translation until the
    peak-phase Jacobian stays comfortably positive."""
    extents = tuple(int(e) for e in extents)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x0DE]))
    direction = rng.uniform(0.4, 1.0, size=3) * rng.choice([-1.0, 1.0], 3)
    direction /= np.linalg.norm(direction)
    envelope = 0.55 + 0.45 * _bandlimited(rng, extents, 1)
    amp = direction[:, None, None, None] * envelope[None]
    wiggle = np.stack([_bandlimited(rng, extents, cutoff)
                       for _ in range(3)])
    amp = amp + 0.12 * wiggle

    bulk = amp.mean(axis=(1, 2, 3), keepdims=True)
    for _ in range(12):
        scaled = amp * (max_amplitude
                        / np.linalg.norm(amp, axis=0).max())
        detj = jacobian_determinant(DisplacementField(scaled))
        if detj.min() >= min_det:
            return MotionModel(scaled, t_phases, cutoff)
        amp = 0.5 * (amp + bulk)
    raise ConfigError("could not build a fold-free motion model; lower the "
                      "amplitude or raise the smoothing")


def ground_truth_field(model: MotionModel, t) -> DisplacementField:
    """phi(p, t) = g(t) * A(p) on the full-resolution grid."""
    if not 0 <= t <= model.t_phases:
        raise ConfigError(f"t must lie in [0, {model.t_phases}], got {t}")
    return DisplacementField(model.phase_weight(t) * model.amplitude)


def invert_field(vectors, iterations=30):
    """Fixed-point inverse: psi(q) = -phi(q + psi(q)).

    Converges for the smooth, moderately scaled fields used here; needed
    to synthesize frames whose forward ground truth is exactly g * A.
    """
    phi = np.ascontiguousarray(vectors.astype(np.float64))
    psi = -phi.copy()
    for _ in range(iterations):
        psi = -backend.warp_trilinear(phi, np.ascontiguousarray(psi))
    return psi


def pick_landmarks(phantom: Volume, rng, n_landmarks, margin,
                   min_separation=2.0):
    """Integer-voxel landmarks at high-gradient interior positions."""
    gx, gy, gz = np.gradient(phantom.data.astype(np.float64))
    strength = np.sqrt(gx ** 2 + gy ** 2 + gz ** 2)
    interior = np.zeros_like(strength, dtype=bool)
    sl = tuple(slice(margin, e - margin) for e in phantom.extents)
    interior[sl] = True
    strength[~interior] = -1.0
    order = np.argsort(strength.ravel())[::-1]
    coords = np.stack(np.unravel_index(order, phantom.extents), axis=1)
    chosen = []
    for c in coords:
        if strength[tuple(c)] <= 0:
            break
        if all(np.linalg.norm(c - p) >= min_separation for p in chosen):
            chosen.append(c.astype(np.float64))
            if len(chosen) == n_landmarks:
                break
    if len(chosen) < n_landmarks:
        raise ConfigError(
            f"only found {len(chosen)} separated landmarks, "
            f"wanted {n_landmarks}")
    rng.shuffle(chosen)
    return np.asarray(chosen)


def generate_sequence(phantom: Volume, model: MotionModel, t_phases=None,
                      n_landmarks=64, seed=0):
    """Warped frame sequence plus exact landmark trajectories.

    Frame t shows the phantom moved forward by g(t) * A, i.e. it is the
    phantom resampled through the numerically inverted field, so that
    warping frame t by the ground-truth field recovers the phantom and a
    landmark at p in phase 0 sits at p + g(t) A(p) in phase t.
    """
    t_phases = t_phases or model.t_phases
    if n_landmarks < 1:
        raise ConfigError("need at least one landmark")
    if phantom.extents != model.extents:
        raise ShapeError(f"phantom {phantom.extents} and motion "
                         f"{model.extents} grids differ")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A2]))
    max_disp = np.linalg.norm(model.amplitude, axis=0).max()
    margin = int(np.ceil(max_disp)) + 2
    points0 = pick_landmarks(phantom, rng, n_landmarks, margin)

    volumes = [Volume(phantom.data.copy(), phantom.spacing)]
    landmark_sets = [LandmarkSet(points0, 0)]
    src = phantom.data.astype(np.float64)[None]
    idx = tuple(points0.astype(np.int64).T)
    for t in range(1, t_phases):
        g = model.phase_weight(t)
        psi = invert_field(g * model.amplitude)
        frame = backend.warp_trilinear(np.ascontiguousarray(src),
                                       np.ascontiguousarray(psi))[0]
        volumes.append(Volume(frame.astype(phantom.data.dtype),
                              phantom.spacing))
        moved = points0 + g * model.amplitude[(slice(None),) + idx].T
        landmark_sets.append(LandmarkSet(moved, t))
    return volumes, landmark_sets


# randomized training-time transforms

def random_affine(vol: Volume, rng, max_rotate_deg=5.0, max_scale=0.05):
    """Small rotation about z plus isotropic scaling, border clamped."""
    h, w, d = vol.extents
    angle = np.deg2rad(rng.uniform(-max_rotate_deg, max_rotate_deg))
    scale = 1.0 + rng.uniform(-max_scale, max_scale)
    c, s = np.cos(angle), np.sin(angle)
    center = (np.asarray(vol.extents, dtype=np.float64) - 1) / 2
    grids = np.stack(np.meshgrid(*[np.arange(e, dtype=np.float64)
                                   for e in vol.extents], indexing="ij"))
    rel = grids - center[:, None, None, None]
    mapped = np.empty_like(rel)
    mapped[0] = scale * (c * rel[0] - s * rel[1])
    mapped[1] = scale * (s * rel[0] + c * rel[1])
    mapped[2] = scale * rel[2]
    field = mapped - rel
    out = backend.warp_trilinear(
        np.ascontiguousarray(vol.data.astype(np.float64)[None]),
        np.ascontiguousarray(field))[0]
    return Volume(out.astype(vol.data.dtype), vol.spacing)


def gaussian_blur(vol: Volume, sigma):
    """Separable Gaussian via the Fourier domain."""
    if sigma <= 0:
        return Volume(vol.data.copy(), vol.spacing)
    data = vol.data.astype(np.float64)
    spec = np.fft.rfftn(data)
    freqs = [np.fft.fftfreq(e) for e in vol.extents[:-1]]
    freqs.append(np.fft.rfftfreq(vol.extents[-1]))
    kx, ky, kz = np.meshgrid(*freqs, indexing="ij")
    gauss = np.exp(-2 * (np.pi * sigma) ** 2 * (kx ** 2 + ky ** 2 + kz ** 2))
    out = np.fft.irfftn(spec * gauss, s=vol.extents, axes=(0, 1, 2))
    return Volume(out.astype(vol.data.dtype), vol.spacing)


def random_elastic(vol: Volume, rng, amplitude=1.0, cutoff=3.0):
    field = np.stack([_bandlimited(rng, vol.extents, cutoff)
                      for _ in range(3)]) * amplitude
    out = backend.warp_trilinear(
        np.ascontiguousarray(vol.data.astype(np.float64)[None]),
        np.ascontiguousarray(field))[0]
    return Volume(out.astype(vol.data.dtype), vol.spacing)


def random_contrast(vol: Volume, rng, gamma_range=(0.7, 1.4)):
    gamma = rng.uniform(*gamma_range)
    out = np.clip(vol.data.astype(np.float64), 0.0, 1.0) ** gamma
    return Volume(out.astype(vol.data.dtype), vol.spacing)


@dataclass
class AugmentConfig:
    p_affine: float = 0.0
    p_blur: float = 0.0
    p_elastic: float = 0.0
    p_contrast: float = 0.0
    blur_sigma: float = 0.8
    elastic_amplitude: float = 1.0


def augment(vol: Volume, rng, cfg: AugmentConfig) -> Volume:
    """Apply each configured transform with its probability; output is
    clipped back to [0, 1]."""
    out = vol
    if rng.random() < cfg.p_affine:
        out = random_affine(out, rng)
    if rng.random() < cfg.p_blur:
        out = gaussian_blur(out, cfg.blur_sigma)
    if rng.random() < cfg.p_elastic:
        out = random_elastic(out, rng, cfg.elastic_amplitude)
    if rng.random() < cfg.p_contrast:
        out = random_contrast(out, rng)
    return Volume(np.clip(out.data, 0.0, 1.0), out.spacing)
