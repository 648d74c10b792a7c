"""Synthetic speckle images and ground-truth deformation sequences.

Random streams come from numpy's PCG64 bit generator seeded through
``SeedSequence([seed, frame])``, so each frame's noise is reproducible on its
own and independent of rendering order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import MotionTooLarge, StdicError
from .image import MARGIN, GrayImage, ImageSequence, build_interpolant

SPECKLE_GAIN = 2.5
BACKGROUND = 10.0
FOREGROUND = 245.0


def rng_for(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *stream])))


def speckle_array(width: int, height: int, seed: int = 0, speckle_radius: float = 2.5,
                  density: float = 0.02) -> np.ndarray:
    """Periodic speckle intensities, see :func:`make_speckle`."""
    if width < 64 or height < 64:
        raise StdicError("speckle images must be at least 64x64")
    rng = rng_for(seed)
    n = int(round(density * width * height))
    cx = rng.uniform(0.0, width, n)
    cy = rng.uniform(0.0, height, n)
    total = np.zeros((height, width))
    if n:
        half = int(math.ceil(4.0 * speckle_radius))
        off = np.arange(-half, half + 1)
        gx = np.floor(cx).astype(int)[:, None] + off
        gy = np.floor(cy).astype(int)[:, None] + off
        wx = np.exp(-((gx - cx[:, None]) ** 2) / speckle_radius ** 2)
        wy = np.exp(-((gy - cy[:, None]) ** 2) / speckle_radius ** 2)
        # blobs wrap around the borders so the pattern tiles seamlessly
        np.add.at(total, ((gy % height)[:, :, None], (gx % width)[:, None, :]),
                  wy[:, :, None] * wx[:, None, :])
    arr = BACKGROUND + (FOREGROUND - BACKGROUND) * (1.0 - np.exp(-SPECKLE_GAIN * total))
    if n:
        arr = _drop_nyquist(arr)
    return arr


def make_speckle(width: int, height: int, seed: int = 0, speckle_radius: float = 2.5,
                 density: float = 0.02) -> GrayImage:
    """Render a seamless random speckle pattern.

    Gaussian blobs of radius ``speckle_radius`` are scattered at ``density``
    blobs per pixel, summed, and mapped through a saturating curve onto
    ``[10, 245]``.  Nyquist-frequency content of even-sized axes is removed,
    which makes :func:`fourier_shift` exactly invertible on the result.
    """
    return build_interpolant(speckle_array(width, height, seed, speckle_radius, density))


def _drop_nyquist(arr):
    spec = np.fft.fft2(arr)
    h, w = arr.shape
    if h % 2 == 0:
        spec[h // 2, :] = 0.0
    if w % 2 == 0:
        spec[:, w // 2] = 0.0
    return np.fft.ifft2(spec).real


def _phase_ramp(n, shift):
    k = np.fft.fftfreq(n)
    ramp = np.exp(-2j * np.pi * k * shift)
    if n % 2 == 0:
        # a real-valued Nyquist factor keeps the spectrum Hermitian
        ramp[n // 2] = np.cos(np.pi * shift)
    return ramp


def fourier_shift_array(arr, dx: float, dy: float) -> np.ndarray:
    """Translate content by ``(+dx, +dy)`` with a frequency-domain phase ramp."""
    arr = np.asarray(arr, dtype=float)
    h, w = arr.shape
    spec = np.fft.fft2(arr)
    spec *= _phase_ramp(h, dy)[:, None]
    spec *= _phase_ramp(w, dx)[None, :]
    return np.fft.ifft2(spec).real


def fourier_shift(img, dx: float, dy: float) -> GrayImage:
    arr = img.intensities if isinstance(img, GrayImage) else img
    return build_interpolant(fourier_shift_array(arr, dx, dy))


# --- motion programs --------------------------------------------------------

@dataclass(frozen=True)
class MotionProgram:
    """Displacement history of the whole image.

    ``kind`` is one of ``translation`` (``u = step * frame``), ``vibration``
    (damped sinusoids in seconds), ``uniform_strain`` (``u = rate_x * frame *
    (x - cx)``) or ``constant_velocity``.  Frame 0 is the undeformed
    reference; frames ``1..frame_count`` follow.
    """

    kind: str = "translation"
    frame_count: int = 20
    frame_interval: float = 1.0
    step: float = 0.05
    rate_x: float = 0.0
    rate_y: float = 0.0
    u_t: float = 0.0
    v_t: float = 0.0
    center: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("translation", "vibration", "uniform_strain", "constant_velocity"):
            raise StdicError(f"unknown motion kind {self.kind!r}")
        if self.frame_count < 1:
            raise StdicError("frame_count must be >= 1")

    @property
    def uniform(self) -> bool:
        return self.kind != "uniform_strain"

    def time(self, frame):
        return np.asarray(frame, dtype=float) * self.frame_interval

    def displacement(self, frame):
        """Rigid ``(u, v)`` of a frame for the uniform kinds."""
        frame = np.asarray(frame, dtype=float)
        if self.kind == "translation":
            return self.step * frame, np.zeros_like(frame)
        if self.kind == "constant_velocity":
            return self.u_t * frame, self.v_t * frame
        if self.kind == "vibration":
            t = self.time(frame)
            return (10.0 * np.exp(-2.0 * t) * np.sin(10.0 * t),
                    10.0 * np.exp(-3.0 * t) * np.sin(5.0 * t))
        raise StdicError("uniform_strain has no rigid displacement")

    def strain(self, frame):
        frame = np.asarray(frame, dtype=float)
        if self.kind == "uniform_strain":
            return self.rate_x * frame, self.rate_y * frame
        return np.zeros_like(frame), np.zeros_like(frame)


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise StdicError("noise level must be non-negative")

    @property
    def sigma(self) -> float:
        return self.level * 255.0


@dataclass(frozen=True)
class GroundTruth:
    motion: MotionProgram
    shape: tuple
    center: tuple

    @property
    def frames(self):
        return range(self.motion.frame_count + 1)

    def displacement_at(self, frame, x, y):
        """True ``(u, v)`` of reference points ``(x, y)`` in ``frame``."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.motion.uniform:
            u, v = self.motion.displacement(frame)
            return np.full(x.shape, float(u)), np.full(y.shape, float(v))
        ex, ey = self.motion.strain(frame)
        return ex * (x - self.center[0]), ey * (y - self.center[1])

    def strain_at(self, frame):
        return tuple(float(e) for e in self.motion.strain(frame))

    def max_displacement(self) -> float:
        h, w = self.shape
        frames = np.arange(self.motion.frame_count + 1)
        if self.motion.uniform:
            u, v = self.motion.displacement(frames)
            return float(np.max(np.hypot(u, v)))
        ex, ey = self.motion.strain(frames)
        reach_x = max(self.center[0], w - 1 - self.center[0])
        reach_y = max(self.center[1], h - 1 - self.center[1])
        return float(np.max(np.hypot(ex * reach_x, ey * reach_y)))

    def rows(self):
        """``(frame, t_seconds, u_true, v_true)``; strain programs report the
        displacement of the expansion centre."""
        for f in self.frames:
            u, v = self.displacement_at(f, self.center[0], self.center[1])
            yield f, float(self.motion.time(f)), float(u), float(v)


def roi_inset(truth: GroundTruth) -> int:
    """Border width that wrapped or resampled content never reaches."""
    return int(math.ceil(truth.max_displacement())) + 5


@dataclass(frozen=True, eq=False)
class RenderedSequence:
    sequence: ImageSequence
    truth: GroundTruth
    clean: tuple = field(repr=False)
    noise: NoiseSpec = NoiseSpec()


def _noisy(arr, noise: NoiseSpec, frame: int, quantize: bool):
    if noise.level > 0:
        arr = arr + noise.sigma * rng_for(noise.seed, frame).standard_normal(arr.shape)
    if quantize:
        arr = np.clip(np.rint(arr), 0.0, 255.0)
    return arr


def render_clean(base, motion: MotionProgram):
    """Noise-free frames ``0..frame_count`` and their ground truth."""
    arr = base.intensities if isinstance(base, GrayImage) else np.asarray(base, dtype=float)
    h, w = arr.shape
    center = motion.center if motion.center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
    truth = GroundTruth(motion, (h, w), tuple(center))
    if truth.max_displacement() >= min(h, w) / 4.0:
        raise MotionTooLarge(
            f"peak displacement {truth.max_displacement():.2f} px is too large for a {w}x{h} image")
    frames = []
    if motion.uniform:
        for f in truth.frames:
            u, v = motion.displacement(f)
            frames.append(fourier_shift_array(arr, float(u), float(v)))
    else:
        # Backward warp through the interpolant of a periodically padded base,
        # so border pixels map to valid sample points.
        pad = int(math.ceil(truth.max_displacement())) + MARGIN + 2
        wrapped = build_interpolant(np.pad(arr, pad, mode="wrap"))
        yy, xx = np.mgrid[0:h, 0:w].astype(float)
        for f in truth.frames:
            ex, ey = motion.strain(f)
            sx = center[0] + (xx - center[0]) / (1.0 + ex)
            sy = center[1] + (yy - center[1]) / (1.0 + ey)
            frames.append(wrapped.sample(sx + pad, sy + pad))
    return frames, truth


def render_sequence(base, motion: MotionProgram, noise: NoiseSpec = NoiseSpec(),
                    quantize_8bit: bool = False) -> RenderedSequence:
    """Deform ``base`` per ``motion`` and add seeded Gaussian noise.

    Uniform motions use exact Fourier shifts; strain fields are resampled
    through the bicubic interpolant.  Noise of standard deviation
    ``level * 255`` is drawn independently per frame, frame 0 included.
    """
    clean, truth = render_clean(base, motion)
    noisy = [_noisy(a, noise, f, quantize_8bit) for f, a in enumerate(clean)]
    seq = ImageSequence.from_arrays(noisy, frame_interval=motion.frame_interval)
    return RenderedSequence(seq, truth, tuple(clean), noise)


def add_noise(clean, noise: NoiseSpec, quantize_8bit: bool = False, frame_interval=1.0):
    """Re-noise pre-rendered clean frames (cheap way to sweep noise levels)."""
    noisy = [_noisy(a, noise, f, quantize_8bit) for f, a in enumerate(clean)]
    return ImageSequence.from_arrays(noisy, frame_interval=frame_interval)
