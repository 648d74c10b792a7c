"""Grayscale images with bicubic B-spline sampling and analytic gradients.

Pixel ``(x, y)`` addresses column ``x`` and row ``y`` of the intensity array,
i.e. ``intensities[y, x]``.  Sampling is only defined on the valid interior
``MARGIN <= x <= width - 1 - MARGIN`` (same for ``y``); anything outside
raises :class:`~stdic.errors.OutOfDomain` instead of extrapolating.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numba
import numpy as np
from scipy.ndimage import spline_filter

from .errors import DimensionTooSmall, OutOfDomain, StdicError

MARGIN = 2
# Odd-reflection padding before prefiltering. The mirror boundary used by the
# prefilter perturbs coefficients by ~0.268**d at distance d from the padded
# edge; 24 px keeps that below 1e-13 inside the image.
_PAD = 24

F64_MAGIC = b"STDICF64"


@numba.njit(cache=True, inline="always")
def _weights(f):
    g = 1.0 - f
    f2 = f * f
    f3 = f2 * f
    return (g * g * g / 6.0,
            (3.0 * f3 - 6.0 * f2 + 4.0) / 6.0,
            (-3.0 * f3 + 3.0 * f2 + 3.0 * f + 1.0) / 6.0,
            f3 / 6.0)


@numba.njit(cache=True, inline="always")
def _dweights(f):
    g = 1.0 - f
    f2 = f * f
    return (-0.5 * g * g,
            0.5 * (3.0 * f2 - 4.0 * f),
            0.5 * (-3.0 * f2 + 2.0 * f + 1.0),
            0.5 * f2)


@numba.njit(cache=True)
def _eval_values(c, xs, ys, pad):
    n = xs.shape[0]
    out = np.empty(n)
    for k in range(n):
        ix = int(np.floor(xs[k]))
        iy = int(np.floor(ys[k]))
        wx = _weights(xs[k] - ix)
        wy = _weights(ys[k] - iy)
        r0 = iy + pad - 1
        c0 = ix + pad - 1
        acc = 0.0
        for a in range(4):
            row = 0.0
            for b in range(4):
                row += c[r0 + a, c0 + b] * wx[b]
            acc += wy[a] * row
        out[k] = acc
    return out


@numba.njit(cache=True)
def _eval_with_gradient(c, xs, ys, pad):
    n = xs.shape[0]
    val = np.empty(n)
    gx = np.empty(n)
    gy = np.empty(n)
    for k in range(n):
        ix = int(np.floor(xs[k]))
        iy = int(np.floor(ys[k]))
        fx = xs[k] - ix
        fy = ys[k] - iy
        wx = _weights(fx)
        dwx = _dweights(fx)
        wy = _weights(fy)
        dwy = _dweights(fy)
        r0 = iy + pad - 1
        c0 = ix + pad - 1
        v = 0.0
        sx = 0.0
        sy = 0.0
        for a in range(4):
            row = 0.0
            drow = 0.0
            for b in range(4):
                cc = c[r0 + a, c0 + b]
                row += cc * wx[b]
                drow += cc * dwx[b]
            v += wy[a] * row
            sx += wy[a] * drow
            sy += dwy[a] * row
        val[k] = v
        gx[k] = sx
        gy[k] = sy
    return val, gx, gy


@numba.njit(cache=True)
def _inside(xs, ys, xmax, ymax):
    for k in range(xs.shape[0]):
        # written so that NaN fails the test
        if not (xs[k] >= MARGIN and xs[k] <= xmax and ys[k] >= MARGIN and ys[k] <= ymax):
            return False
    return True


@numba.njit(cache=True)
def _eval_frames(coeffs, xs, ys, npx, pad, xmax, ymax, with_gradient):
    """Evaluate block ``i`` of ``npx`` points on ``coeffs[i]``.

    Returns ``ok=False`` (and unfilled outputs) if any point leaves the
    valid interior.
    """
    n = xs.shape[0]
    val = np.empty(n)
    gx = np.empty(n if with_gradient else 0)
    gy = np.empty(n if with_gradient else 0)
    if not _inside(xs, ys, xmax, ymax):
        return val, gx, gy, False
    for i in range(len(coeffs)):
        lo = i * npx
        hi = lo + npx
        if with_gradient:
            v, a, b = _eval_with_gradient(coeffs[i], xs[lo:hi], ys[lo:hi], pad)
            gx[lo:hi] = a
            gy[lo:hi] = b
        else:
            v = _eval_values(coeffs[i], xs[lo:hi], ys[lo:hi], pad)
        val[lo:hi] = v
    return val, gx, gy, True


def sample_frames(frames, xs, ys, with_gradient=False):
    """Sample consecutive equal-sized blocks of points on successive frames.

    ``xs`` and ``ys`` hold ``len(frames)`` blocks; block ``i`` is evaluated on
    ``frames[i]``.  Returns values, or values and both gradients.
    """
    h, w = frames[0].shape
    xs = np.ascontiguousarray(xs, dtype=float)
    ys = np.ascontiguousarray(ys, dtype=float)
    npx = xs.size // len(frames)
    coeffs = tuple(f.coeffs for f in frames)
    val, gx, gy, ok = _eval_frames(coeffs, xs, ys, npx, _PAD, w - 1 - MARGIN, h - 1 - MARGIN,
                                   with_gradient)
    if not ok:
        raise OutOfDomain("sample point outside the valid interior")
    return (val, gx, gy) if with_gradient else val


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Immutable intensity grid plus its precomputed spline coefficients.

    Build instances with :func:`build_interpolant`; the constructor does not
    validate or prefilter.
    """

    intensities: np.ndarray
    coeffs: np.ndarray = field(repr=False)

    @property
    def height(self) -> int:
        return self.intensities.shape[0]

    @property
    def width(self) -> int:
        return self.intensities.shape[1]

    @property
    def shape(self):
        return self.intensities.shape

    def in_domain(self, x, y) -> bool:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.size == 0:
            return True
        # NaN compares false, so it is rejected too
        return bool(x.min() >= MARGIN and x.max() <= self.width - 1 - MARGIN
                    and y.min() >= MARGIN and y.max() <= self.height - 1 - MARGIN
                    and not (np.isnan(x).any() or np.isnan(y).any()))

    def _check(self, x, y):
        if not self.in_domain(x, y):
            raise OutOfDomain("sample point outside the valid interior")

    def sample(self, x, y):
        """Interpolated intensity at subpixel ``(x, y)`` (scalars or arrays)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        self._check(x, y)
        out = _eval_values(self.coeffs, x.ravel(), y.ravel(), _PAD)
        return out.reshape(x.shape) if x.ndim else out[0]

    def gradient(self, x, y):
        """Analytic ``(dI/dx, dI/dy)`` of the interpolant."""
        _, gx, gy = self.sample_with_gradient(x, y)
        return gx, gy

    def sample_with_gradient(self, x, y):
        """Value and both partial derivatives from a single tap gather."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x, y = np.broadcast_arrays(x, y)
        self._check(x, y)
        v, gx, gy = _eval_with_gradient(self.coeffs, x.ravel(), y.ravel(), _PAD)
        if x.ndim == 0:
            return v[0], gx[0], gy[0]
        return v.reshape(x.shape), gx.reshape(x.shape), gy.reshape(x.shape)

    @cached_property
    def pixel_gradients(self):
        """Spline gradient at every integer pixel, shape ``(2, H, W)``.

        At integer nodes the cubic B-spline derivative reduces to a central
        difference of the coefficients, so no gather is needed.
        """
        c = self.coeffs[_PAD - 1:_PAD + self.height + 1, _PAD - 1:_PAD + self.width + 1]
        dxc = (c[:, 2:] - c[:, :-2]) / 2.0
        gx = (dxc[:-2] + 4.0 * dxc[1:-1] + dxc[2:]) / 6.0
        dyc = (c[2:, :] - c[:-2, :]) / 2.0
        gy = (dyc[:, :-2] + 4.0 * dyc[:, 1:-1] + dyc[:, 2:]) / 6.0
        out = np.stack([gx, gy])
        out.setflags(write=False)
        return out


def build_interpolant(raw) -> GrayImage:
    """Prefilter a raw intensity grid into an immutable :class:`GrayImage`.

    Integer inputs are widened to float64 without rescaling.
    """
    arr = np.array(raw, dtype=np.float64)
    if arr.ndim != 2:
        raise StdicError(f"expected a 2-D intensity grid, got shape {arr.shape}")
    if arr.shape[0] < 5 or arr.shape[1] < 5:
        raise DimensionTooSmall(f"image {arr.shape[1]}x{arr.shape[0]} is smaller than 5x5")
    padded = np.pad(arr, _PAD, mode="reflect", reflect_type="odd")
    coeffs = spline_filter(padded, order=3, mode="mirror")
    arr.setflags(write=False)
    coeffs.setflags(write=False)
    return GrayImage(arr, coeffs)


def sample(img: GrayImage, x, y):
    return img.sample(x, y)


def gradient(img: GrayImage, x, y):
    return img.gradient(x, y)


@dataclass(frozen=True, eq=False)
class ImageSequence:
    """Equal-sized frames; frame 0 is the reference by convention."""

    frames: tuple
    frame_interval: float = 1.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise StdicError("an image sequence needs at least one frame")
        shape = frames[0].shape
        for i, f in enumerate(frames):
            if f.shape != shape:
                raise StdicError(f"frame {i} has shape {f.shape}, expected {shape}")
        object.__setattr__(self, "frames", frames)

    def __len__(self):
        return len(self.frames)

    def __getitem__(self, i) -> GrayImage:
        return self.frames[i]

    @property
    def shape(self):
        return self.frames[0].shape

    @classmethod
    def from_arrays(cls, arrays, frame_interval=1.0):
        return cls(tuple(build_interpolant(a) for a in arrays), frame_interval)


@dataclass(frozen=True)
class SubsetRegion:
    """Square subset of side ``2 * half_width + 1`` centred on an integer pixel."""

    center: tuple
    half_width: int

    def __post_init__(self):
        if self.half_width < 2:
            raise StdicError("subset size must be odd and >= 5")

    @property
    def size(self) -> int:
        return 2 * self.half_width + 1

    def offsets(self):
        """Local ``(dx, dy)`` for every pixel, row-major (y outer, x inner)."""
        r = np.arange(-self.half_width, self.half_width + 1, dtype=float)
        dy, dx = np.meshgrid(r, r, indexing="ij")
        return dx.ravel(), dy.ravel()

    def fits(self, shape, extra: float = 0.0) -> bool:
        h, w = shape
        xc, yc = self.center
        reach = self.half_width + extra
        return (xc - reach >= MARGIN and xc + reach <= w - 1 - MARGIN
                and yc - reach >= MARGIN and yc + reach <= h - 1 - MARGIN)


# --- file formats -----------------------------------------------------------

def read_pgm(path) -> np.ndarray:
    """Read a binary (P5) PGM, returning a float64 array."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise StdicError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    dtype = ">u1" if maxval < 256 else ">u2"
    count = width * height
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos)
    return arr.reshape(height, width).astype(np.float64)


def write_pgm(path, arr, maxval: int = 255) -> None:
    """Write a P5 PGM; values are rounded and clipped to ``[0, maxval]``."""
    arr = np.asarray(arr, dtype=float)
    h, w = arr.shape
    dtype = ">u1" if maxval < 256 else ">u2"
    q = np.clip(np.rint(arr), 0, maxval).astype(dtype)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(q.tobytes())


def write_f64(path, arr) -> None:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(F64_MAGIC + struct.pack("<II", w, h))
        fh.write(arr.tobytes())


def read_f64(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != F64_MAGIC:
        raise StdicError(f"{path}: missing STDICF64 header")
    w, h = struct.unpack("<II", data[8:16])
    return np.frombuffer(data, dtype="<f8", count=w * h, offset=16).reshape(h, w).copy()


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".pgm":
        return read_pgm(path)
    return read_f64(path)
