"""Unified spatial-temporal shape functions and their warp-matrix algebra.

Every shape function is a selection from one fixed monomial table::

    1, dx, dy, dt, dx*dt, dy*dt, dx^2, dx*dy, dy^2, dt^2

and the displacement in each image direction is a dot product of a parameter
row with the active monomials.  Parameter names follow the same order
(``u, ux, uy, ut, uxt, uyt, uxx, uxy, uyy, utt`` and likewise for ``v``).

Warp matrices act on an *extended* coordinate: the active monomials plus
``x`` and ``y`` themselves when the spatial order is zero.  Rows for the
constant and for pure-time monomials are unit rows; rows for the cross
monomials ``x*t``/``y*t`` are the truncated product of the ``x``/``y`` row with
``t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import SingularWarp, StdicError, UnsupportedSpec

# (name, power of x, power of y, power of t)
MONOMIALS = (
    ("1", 0, 0, 0),
    ("x", 1, 0, 0),
    ("y", 0, 1, 0),
    ("t", 0, 0, 1),
    ("xt", 1, 0, 1),
    ("yt", 0, 1, 1),
    ("xx", 2, 0, 0),
    ("xy", 1, 1, 0),
    ("yy", 0, 2, 0),
    ("tt", 0, 0, 2),
)
_POWERS = {name: (px, py, pt) for name, px, py, pt in MONOMIALS}
_ORDER = [name for name, *_ in MONOMIALS]


def param_names(monomials, prefix):
    """Column names such as ``u, ux, uxt`` for a list of monomials."""
    return [prefix if m == "1" else prefix + m for m in monomials]


@dataclass(frozen=True)
class ShapeFunctionSpec:
    spatial_order: int = 1
    temporal_order: int = 0
    cross_terms: frozenset = frozenset()
    window: int = 1

    def __post_init__(self):
        object.__setattr__(self, "cross_terms", frozenset(self.cross_terms))
        if self.spatial_order not in (0, 1, 2) or self.temporal_order not in (0, 1, 2):
            raise StdicError("spatial and temporal orders must be 0, 1 or 2")
        if not self.cross_terms <= {"xt", "yt"}:
            raise StdicError(f"unknown cross terms {sorted(self.cross_terms)}")
        if self.window < 1 or self.window % 2 == 0:
            raise StdicError("temporal window must be an odd frame count")
        if (self.temporal_order >= 1 or self.cross_terms) and self.window < 3:
            raise StdicError("temporal terms need a window of at least 3 frames")

    @cached_property
    def monomials(self) -> tuple:
        """Active monomial names in the library-wide order."""
        active = []
        for name, px, py, pt in MONOMIALS:
            if name in ("xt", "yt"):
                if name in self.cross_terms:
                    active.append(name)
            elif pt == 0 and px + py <= self.spatial_order:
                active.append(name)
            elif px + py == 0 and pt <= self.temporal_order:
                active.append(name)
        return tuple(active)

    @property
    def k(self) -> int:
        return len(self.monomials)

    @property
    def n_params(self) -> int:
        return 2 * self.k

    @property
    def half_window(self) -> int:
        return (self.window - 1) // 2

    @property
    def warp_capable(self) -> bool:
        return self.spatial_order <= 1

    @property
    def has_gradients(self) -> bool:
        return "x" in self.monomials and "y" in self.monomials

    def names(self):
        return param_names(self.monomials, "u") + param_names(self.monomials, "v")

    @cached_property
    def _embedding(self):
        if not self.warp_capable:
            raise UnsupportedSpec(
                f"spatial order {self.spatial_order} has no warp-matrix embedding")
        ext = [m for m in _ORDER if m in self.monomials or m in ("x", "y")]
        return _Embedding(self, tuple(ext))


def _powers(names):
    return np.array([_POWERS[n] for n in names], dtype=float)


def basis_at(spec: ShapeFunctionSpec, dx, dy, dt=0.0):
    """Monomial values for local offsets; shape ``(..., k)``."""
    dx = np.asarray(dx, dtype=float)
    dy = np.asarray(dy, dtype=float)
    dt = np.asarray(dt, dtype=float)
    cols = []
    for name in spec.monomials:
        px, py, pt = _POWERS[name]
        cols.append(dx ** px * dy ** py * dt ** pt)
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


@dataclass(frozen=True, eq=False)
class ParamSet:
    """Displacement parameters; ``u`` and ``v`` rows over the spec's monomials."""

    spec: ShapeFunctionSpec
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.array(self.u, dtype=float).reshape(-1)
        v = np.array(self.v, dtype=float).reshape(-1)
        if u.size != self.spec.k or v.size != self.spec.k:
            raise StdicError(f"expected {self.spec.k} parameters per direction")
        u.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @classmethod
    def zero(cls, spec):
        return cls(spec, np.zeros(spec.k), np.zeros(spec.k))

    @classmethod
    def from_vector(cls, spec, vec):
        vec = np.asarray(vec, dtype=float)
        return cls(spec, vec[:spec.k], vec[spec.k:])

    @classmethod
    def from_dict(cls, spec, values):
        names = spec.names()
        unknown = set(values) - set(names)
        if unknown:
            raise StdicError(f"parameters {sorted(unknown)} are not in this shape function")
        return cls.from_vector(spec, [values.get(n, 0.0) for n in names])

    def as_vector(self):
        return np.concatenate([self.u, self.v])

    def as_dict(self):
        return dict(zip(self.spec.names(), self.as_vector()))

    def __getitem__(self, name):
        return self.as_dict()[name]

    def __add__(self, other):
        return ParamSet(self.spec, self.u + other.u, self.v + other.v)

    @property
    def displacement(self):
        return float(self.u[0]), float(self.v[0])


def warp_point(p: ParamSet, dx, dy, dt=0.0):
    """Deformed local position ``(dx + u.X, dy + v.X)``."""
    b = basis_at(p.spec, dx, dy, dt)
    return np.asarray(dx) + b @ p.u, np.asarray(dy) + b @ p.v


def shape_jacobian(spec: ShapeFunctionSpec, dx, dy, dt=0.0):
    """Block matrix ``[[X^T, 0], [0, X^T]]``; shape ``(..., 2, 2k)``."""
    b = basis_at(spec, dx, dy, dt)
    z = np.zeros_like(b)
    return np.stack([np.concatenate([b, z], axis=-1),
                     np.concatenate([z, b], axis=-1)], axis=-2)


class _Embedding:
    """Index bookkeeping for a warp-capable spec's homogeneous form."""

    def __init__(self, spec, ext):
        self.spec = spec
        self.ext = ext
        self.d = len(ext)
        idx = {m: i for i, m in enumerate(ext)}
        self.ix = idx["x"]
        self.iy = idx["y"]
        self.param_cols = np.array([idx[m] for m in spec.monomials])
        # Each cross row (x*t, y*t) copies its source row shifted by one power
        # of t; entries whose product is not an extended coordinate are dropped.
        self.cross = []
        for m in ext:
            if m in ("xt", "yt"):
                src = self.ix if m == "xt" else self.iy
                pairs = []
                for j, n in enumerate(ext):
                    px, py, pt = _POWERS[n]
                    target = _name_of(px, py, pt + 1)
                    if target in idx:
                        pairs.append((j, idx[target]))
                self.cross.append((idx[m], src, pairs))
        self.unit_rows = [i for i, m in enumerate(ext) if m not in ("x", "y", "xt", "yt")]
        self.ext_powers = _powers(ext)

    def coords(self, dx, dy, dt=0.0):
        dx = np.asarray(dx, dtype=float)
        dy = np.asarray(dy, dtype=float)
        dt = np.asarray(dt, dtype=float)
        cols = [dx ** px * dy ** py * dt ** pt for px, py, pt in self.ext_powers]
        return np.stack(np.broadcast_arrays(*cols), axis=-1)

    def fill_cross(self, w):
        for row, src, pairs in self.cross:
            w[row, :] = 0.0
            for j, target in pairs:
                w[row, target] = w[src, j]
        return w

    def project(self, w):
        """Restore the structural rows exactly; keep the x/y rows' free entries."""
        out = np.zeros_like(w)
        for i in self.unit_rows:
            out[i, i] = 1.0
        for r, own in ((self.ix, self.ix), (self.iy, self.iy)):
            out[r, self.param_cols] = w[r, self.param_cols]
            out[r, own] = w[r, own]
        return self.fill_cross(out)


def _name_of(px, py, pt):
    for name, a, b, c in MONOMIALS:
        if (a, b, c) == (px, py, pt):
            return name
    return None


@dataclass(frozen=True, eq=False)
class WarpMatrix:
    """Homogeneous warp, stored as its offset from the identity.

    Keeping ``W - I`` rather than ``W`` lets parameters round-trip through the
    matrix without the ``1 + u_x - 1`` rounding loss.
    """

    spec: ShapeFunctionSpec
    delta: np.ndarray

    @property
    def matrix(self):
        return np.eye(self.delta.shape[0]) + self.delta

    @classmethod
    def identity(cls, spec):
        return cls(spec, np.zeros((spec._embedding.d,) * 2))


def to_warp(p: ParamSet) -> WarpMatrix:
    """Homogeneous warp matrix of a parameter set."""
    emb = p.spec._embedding
    delta = np.zeros((emb.d, emb.d))
    delta[emb.ix, emb.param_cols] = p.u
    delta[emb.iy, emb.param_cols] = p.v
    # cross rows of W are derived from full rows, identity part included
    w = emb.fill_cross(np.eye(emb.d) + delta)
    for row, _, _ in emb.cross:
        delta[row] = w[row]
        delta[row, row] -= 1.0
    return WarpMatrix(p.spec, delta)


def from_warp(w: WarpMatrix) -> ParamSet:
    """Read parameters back off the ``x``/``y`` rows of a warp matrix."""
    emb = w.spec._embedding
    return ParamSet(w.spec, w.delta[emb.ix, emb.param_cols], w.delta[emb.iy, emb.param_cols])


def compose(a: WarpMatrix, b: WarpMatrix) -> WarpMatrix:
    """Matrix product ``a @ b``."""
    return WarpMatrix(a.spec, a.delta + b.delta + a.delta @ b.delta)


def invert(w: WarpMatrix) -> WarpMatrix:
    """Matrix inverse re-projected onto the spec's structural form."""
    emb = w.spec._embedding
    m = w.matrix
    if not abs(np.linalg.det(m)) > 1e-12:
        raise SingularWarp("warp matrix is singular")
    inv = emb.project(np.linalg.inv(m))
    return WarpMatrix(w.spec, inv - np.eye(emb.d))


def warp_coords(w: WarpMatrix, dx, dy, dt=0.0):
    """Apply a warp matrix to local offsets, returning the x/y rows."""
    emb = w.spec._embedding
    xh = emb.coords(dx, dy, dt)
    return xh @ w.matrix[emb.ix], xh @ w.matrix[emb.iy]


def warp_generators(spec: ShapeFunctionSpec):
    """``dW/dp_j`` for each parameter; shape ``(2k, d, d)``.

    Warp entries are affine in the parameters, so these are constant.
    """
    gens = []
    for j in range(spec.n_params):
        e = np.zeros(spec.n_params)
        e[j] = 1.0
        gens.append(to_warp(ParamSet.from_vector(spec, e)).delta)
    return np.array(gens)


def extended_coords(spec: ShapeFunctionSpec, dx, dy, dt=0.0):
    return spec._embedding.coords(dx, dy, dt)
