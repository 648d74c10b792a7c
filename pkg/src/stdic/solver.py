"""Gauss-Newton engines for subset matching.

Three update strategies share one residual definition:

* forward additive (FA): ``p <- p + dp`` with the Jacobian rebuilt from
  the warped image gradient every iteration;
* forward compositional (FC): ``W(p) <- W(p) W(dp)``;
* inverse compositional (IC): ``W(p) <- W(p) W(dp)^-1`` with a Jacobian built
  once from the reference gradient, so its pseudo-inverse is precomputed.

Each frame of a temporal window is sampled at the positions given by the
shape function evaluated with that frame's time offset, and all frames are
stacked into a single residual vector.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import shapefn
from .criterion import CriterionKind, SubsetSample, residual, step_scale
from .errors import (FlatSubset, OutOfDomain, Singular, SingularWarp, StdicError,
                     UnsupportedSpec, WindowOutOfRange)
from .image import GrayImage, ImageSequence, SubsetRegion, sample_frames
from .shapefn import ParamSet, ShapeFunctionSpec

log = logging.getLogger(__name__)

COND_LIMIT = 1e12


class Optimizer(str, Enum):
    FA = "fa"
    FC = "fc"
    IC = "ic"
    AUTO = "auto"


class Failure(str, Enum):
    SINGULAR = "singular"
    DIVERGED = "diverged"
    OUT_OF_DOMAIN = "out_of_domain"
    FLAT_SUBSET = "flat_subset"
    NOT_FOUND = "not_found"


@dataclass(frozen=True)
class SolveSettings:
    optimizer: Optimizer = Optimizer.IC
    max_iterations: int = 50
    convergence_tol: float = 1e-4
    divergence_guard: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        if self.max_iterations < 1:
            raise StdicError("max_iterations must be >= 1")
        if not self.convergence_tol > 0:
            raise StdicError("convergence_tol must be positive")

    def resolve(self, spec: ShapeFunctionSpec) -> Optimizer:
        if self.optimizer is Optimizer.AUTO:
            return Optimizer.IC if spec.warp_capable else Optimizer.FA
        if self.optimizer is not Optimizer.FA and not spec.warp_capable:
            raise UnsupportedSpec(
                f"{self.optimizer.value.upper()} needs a warp-capable shape function; "
                "use the forward-additive optimizer")
        return self.optimizer


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    params: ParamSet
    iterations: int
    final_residual_norm: float
    converged: bool
    failure: Failure | None = None
    initial_residual_norm: float = float("nan")


# --- linear algebra ---------------------------------------------------------

def _spd_solve(h, g):
    """Solve ``h x = g`` for symmetric positive-definite ``h``."""
    ev = np.linalg.eigvalsh(h)
    if ev[0] <= 0 or ev[-1] > COND_LIMIT * ev[0]:
        raise Singular("normal matrix is singular or ill-conditioned")
    return cho_solve(cho_factor(h), g)


def linear_lsq_solve(design, offset):
    """Minimiser of ``||A p + b||^2``: ``p = -(A^T A)^-1 A^T b``."""
    a = np.asarray(design, dtype=float)
    b = np.asarray(offset, dtype=float)
    return -_spd_solve(a.T @ a, a.T @ b)


def gauss_newton_step(jacobian, resid):
    """Gauss-Newton increment ``-(J^T J)^-1 J^T r``."""
    return linear_lsq_solve(jacobian, resid)


# --- subset stacks ----------------------------------------------------------

class SubsetStack:
    """Geometry of one subset over a temporal window.

    Rows are ordered frame by frame (ascending time offset), row-major within
    each frame.
    """

    def __init__(self, region: SubsetRegion, spec: ShapeFunctionSpec):
        self.region = region
        self.spec = spec
        dx, dy = region.offsets()
        h = spec.half_window
        self.dts = np.arange(-h, h + 1)
        npx = dx.size
        self.npx = npx
        self.dx = np.tile(dx, spec.window)
        self.dy = np.tile(dy, spec.window)
        self.dt = np.repeat(self.dts.astype(float), npx)
        self.basis = shapefn.basis_at(spec, self.dx, self.dy, self.dt)
        self.xc = float(region.center[0])
        self.yc = float(region.center[1])

    def frames(self, sequence: ImageSequence, central: int):
        lo = central + int(self.dts[0])
        hi = central + int(self.dts[-1])
        if lo < 0 or hi >= len(sequence):
            raise WindowOutOfRange(
                f"window [{lo}, {hi}] around frame {central} exceeds {len(sequence)} frames")
        return [sequence[central + int(d)] for d in self.dts]

    def positions(self, p: ParamSet):
        return (self.xc + self.dx + self.basis @ p.u,
                self.yc + self.dy + self.basis @ p.v)

    def sample(self, frames, x, y, with_gradient=False):
        return sample_frames(frames, x, y, with_gradient)

    def reference_sample(self, reference: GrayImage) -> SubsetSample:
        r = self.region.half_width
        xc, yc = self.region.center
        if not self.region.fits(reference.shape):
            raise OutOfDomain(f"subset at {self.region.center} does not fit the reference image")
        f = reference.intensities[yc - r:yc + r + 1, xc - r:xc + r + 1].ravel()
        return SubsetSample.from_values(np.tile(f, self.spec.window),
                                        n=self.region.size, m=self.spec.window)

    def reference_gradients(self, reference: GrayImage):
        r = self.region.half_width
        xc, yc = self.region.center
        g = reference.pixel_gradients[:, yc - r:yc + r + 1, xc - r:xc + r + 1]
        return (np.tile(g[0].ravel(), self.spec.window),
                np.tile(g[1].ravel(), self.spec.window))


# --- iteration driver -------------------------------------------------------

def _norm(r):
    return float(np.sqrt(r @ r))


def _run(stack, frames, ref_sample, criterion, init, settings, step_fn):
    """Common Gauss-Newton loop; ``step_fn(p, g_sample, r)`` returns the new p
    together with the displacement part of the increment."""
    p = init
    first_norm = float("nan")
    iterations = 0
    converged = False
    try:
        for iterations in range(1, settings.max_iterations + 1):
            r, g = _evaluate(stack, frames, ref_sample, criterion, p, step_fn.needs_gradient)
            if iterations == 1:
                first_norm = _norm(r)
            p, du, dv = step_fn(p, g, r)
            step = float(np.hypot(du, dv))
            if not np.isfinite(step) or step > settings.divergence_guard:
                return SolveOutcome(p, iterations, float("nan"), False, Failure.DIVERGED, first_norm)
            if step < settings.convergence_tol:
                converged = True
                break
        r, _ = _evaluate(stack, frames, ref_sample, criterion, p, False)
    except OutOfDomain:
        return SolveOutcome(p, iterations, float("nan"), False, Failure.OUT_OF_DOMAIN, first_norm)
    except FlatSubset:
        return SolveOutcome(p, iterations, float("nan"), False, Failure.FLAT_SUBSET, first_norm)
    except (Singular, SingularWarp):
        return SolveOutcome(p, iterations, float("nan"), False, Failure.SINGULAR, first_norm)
    return SolveOutcome(p, iterations, _norm(r), converged, None, first_norm)


class _Sampled:
    __slots__ = ("sample", "gx", "gy")

    def __init__(self, sample, gx=None, gy=None):
        self.sample = sample
        self.gx = gx
        self.gy = gy


def _evaluate(stack, frames, ref_sample, criterion, p, with_gradient):
    x, y = stack.positions(p)
    if with_gradient:
        vals, gx, gy = stack.sample(frames, x, y, with_gradient=True)
    else:
        vals, gx, gy = stack.sample(frames, x, y), None, None
    g = _Sampled(SubsetSample.from_values(vals, n=ref_sample.n, m=ref_sample.m), gx, gy)
    return residual(criterion, ref_sample, g.sample), g


def _prepare(reference, sequence, region, spec, init, settings, frame):
    settings = settings or SolveSettings()
    stack = SubsetStack(region, spec)
    if frame is None:
        frame = len(sequence) // 2
    frames = stack.frames(sequence, frame)
    init = init if init is not None else ParamSet.zero(spec)
    return stack, frames, settings, init


def solve_fa(reference: GrayImage, sequence: ImageSequence, region: SubsetRegion,
             spec: ShapeFunctionSpec, criterion=CriterionKind.ZNSSD, init=None,
             settings=None, frame=None) -> SolveOutcome:
    """Forward-additive Gauss-Newton.

    The Jacobian is the warped-image gradient times the shape-function
    Jacobian at the reference offsets; ZNSSD scales the SSD step by the
    warped subset's deviation.
    """
    stack, frames, settings, init = _prepare(reference, sequence, region, spec, init,
                                             settings, frame)
    ref_sample = stack.reference_sample(reference)
    k = spec.k

    def step(p, g, r):
        jac = np.empty((r.size, 2 * k))
        jac[:, :k] = -g.gx[:, None] * stack.basis
        jac[:, k:] = -g.gy[:, None] * stack.basis
        scale = step_scale(criterion, "forward", ref_sample, g.sample)
        dp = scale * gauss_newton_step(jac, r)
        return ParamSet.from_vector(spec, p.as_vector() + dp), dp[0], dp[k]

    step.needs_gradient = True
    return _run(stack, frames, ref_sample, criterion, init, settings, step)


def solve_fc(reference: GrayImage, sequence: ImageSequence, region: SubsetRegion,
             spec: ShapeFunctionSpec, criterion=CriterionKind.ZNSSD, init=None,
             settings=None, frame=None) -> SolveOutcome:
    """Forward-compositional Gauss-Newton, ``W(p) <- W(p) W(dp)``."""
    if not spec.warp_capable:
        raise UnsupportedSpec("forward-compositional updates need a warp-capable shape function")
    stack, frames, settings, init = _prepare(reference, sequence, region, spec, init,
                                             settings, frame)
    ref_sample = stack.reference_sample(reference)
    emb = spec._embedding
    xh = shapefn.extended_coords(spec, stack.dx, stack.dy, stack.dt)
    gens = shapefn.warp_generators(spec)

    def step(p, g, r):
        w = shapefn.to_warp(p).matrix
        # d/d(dp_j) of the x/y rows of W(p) W(dp) X
        rows = np.einsum("rd,jde->jre", w[[emb.ix, emb.iy]], gens)
        jac = -(g.gx[:, None] * (xh @ rows[:, 0, :].T) + g.gy[:, None] * (xh @ rows[:, 1, :].T))
        scale = step_scale(criterion, "forward", ref_sample, g.sample)
        dp = ParamSet.from_vector(spec, scale * gauss_newton_step(jac, r))
        new = shapefn.from_warp(shapefn.compose(shapefn.to_warp(p), shapefn.to_warp(dp)))
        return new, dp.u[0], dp.v[0]

    step.needs_gradient = True
    return _run(stack, frames, ref_sample, criterion, init, settings, step)


@dataclass(frozen=True, eq=False)
class PrecomputedIC:
    """Reference-side quantities for inverse-compositional solves."""

    region: SubsetRegion
    spec: ShapeFunctionSpec
    jacobian: np.ndarray
    pseudo_inverse: np.ndarray
    ref_sample: SubsetSample
    stack: SubsetStack = field(repr=False)


def precompute_ic(reference: GrayImage, region: SubsetRegion, spec: ShapeFunctionSpec,
                  criterion=CriterionKind.ZNSSD) -> PrecomputedIC:
    """Build the IC Jacobian (SSD form) and its pseudo-inverse once."""
    if not spec.warp_capable:
        raise UnsupportedSpec("inverse-compositional updates need a warp-capable shape function")
    stack = SubsetStack(region, spec)
    ref_sample = stack.reference_sample(reference)
    if CriterionKind(criterion) is CriterionKind.ZNSSD:
        ref_sample.require_texture()
    fx, fy = stack.reference_gradients(reference)
    k = spec.k
    jac = np.empty((fx.size, 2 * k))
    jac[:, :k] = fx[:, None] * stack.basis
    jac[:, k:] = fy[:, None] * stack.basis
    hess = jac.T @ jac
    pinv = _spd_solve(hess, jac.T)
    return PrecomputedIC(region, spec, jac, pinv, ref_sample, stack)


def solve_ic(pre: PrecomputedIC, sequence: ImageSequence, region: SubsetRegion = None,
             spec: ShapeFunctionSpec = None, criterion=CriterionKind.ZNSSD, init=None,
             settings=None, frame=None) -> SolveOutcome:
    """Inverse-compositional Gauss-Newton, ``W(p) <- W(p) W(dp)^-1``."""
    if region is not None and region != pre.region:
        raise StdicError("region differs from the precomputed one")
    if spec is not None and spec != pre.spec:
        raise StdicError("shape function differs from the precomputed one")
    spec = pre.spec
    stack = pre.stack
    settings = settings or SolveSettings()
    if frame is None:
        frame = len(sequence) // 2
    frames = stack.frames(sequence, frame)
    init = init if init is not None else ParamSet.zero(spec)

    def step(p, g, r):
        scale = step_scale(criterion, "inverse", pre.ref_sample, g.sample)
        dp = ParamSet.from_vector(spec, -scale * (pre.pseudo_inverse @ r))
        w = shapefn.compose(shapefn.to_warp(p), shapefn.invert(shapefn.to_warp(dp)))
        return shapefn.from_warp(w), dp.u[0], dp.v[0]

    step.needs_gradient = False
    return _run(stack, frames, pre.ref_sample, criterion, init, settings, step)


def solve(reference: GrayImage, sequence: ImageSequence, region: SubsetRegion,
          spec: ShapeFunctionSpec, criterion=CriterionKind.ZNSSD, init=None,
          settings=None, frame=None, pre: PrecomputedIC | None = None) -> SolveOutcome:
    """Dispatch on ``settings.optimizer``."""
    settings = settings or SolveSettings()
    which = settings.resolve(spec)
    if which is Optimizer.IC:
        if pre is None:
            try:
                pre = precompute_ic(reference, region, spec, criterion)
            except Singular:
                return SolveOutcome(init or ParamSet.zero(spec), 0, float("nan"), False,
                                    Failure.SINGULAR)
            except FlatSubset:
                return SolveOutcome(init or ParamSet.zero(spec), 0, float("nan"), False,
                                    Failure.FLAT_SUBSET)
        return solve_ic(pre, sequence, criterion=criterion, init=init, settings=settings,
                        frame=frame)
    fn = solve_fa if which is Optimizer.FA else solve_fc
    return fn(reference, sequence, region, spec, criterion, init, settings, frame)
