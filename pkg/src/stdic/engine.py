"""Full-field analysis: grid layout, integer initial guess and per-point solves.

The reference is always frame 0 of the sequence.  For a central frame ``c``
and a window of ``m`` frames, the deformed subsets come from frames
``c - (m-1)/2 .. c + (m-1)/2``; central frames without a full window are
not analysed.
"""

from __future__ import annotations

import csv
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numba
import numpy as np

from .criterion import CriterionKind
from .errors import FlatSubset, OutOfDomain, Singular, StdicError, WindowOutOfRange
from .image import GrayImage, ImageSequence, SubsetRegion
from .shapefn import ParamSet, ShapeFunctionSpec
from .solver import (Failure, Optimizer, SolveOutcome, SolveSettings,
                     precompute_ic, solve)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalysisPlan:
    """How to lay out and solve the measurement grid.

    ``roi`` is ``(x0, y0, x1, y1)`` (inclusive); every subset lies inside it.
    """

    roi: tuple
    spec: ShapeFunctionSpec = ShapeFunctionSpec()
    subset_half_width: int = 15
    grid_step: int = 10
    criterion: CriterionKind = CriterionKind.ZNSSD
    settings: SolveSettings = SolveSettings()
    search_radius: int = 10
    min_zncc: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "criterion", CriterionKind(self.criterion))
        object.__setattr__(self, "roi", tuple(int(v) for v in self.roi))
        if self.grid_step < 1:
            raise StdicError("grid_step must be >= 1")
        if not self.grid_points():
            raise StdicError(f"ROI {self.roi} holds no complete subset")

    @property
    def window(self) -> int:
        return self.spec.window

    def grid_points(self):
        x0, y0, x1, y1 = self.roi
        r = self.subset_half_width
        xs = range(x0 + r, x1 - r + 1, self.grid_step)
        ys = range(y0 + r, y1 - r + 1, self.grid_step)
        return [(x, y) for y in ys for x in xs]

    def digest(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class DisplacementField:
    frame_index: int
    points: tuple
    plan: AnalysisPlan = field(repr=False)

    @property
    def provenance(self) -> str:
        return self.plan.digest()

    @property
    def spec(self):
        return self.plan.spec

    def __len__(self):
        return len(self.points)

    @property
    def converged_fraction(self) -> float:
        return sum(o.converged for _, _, o in self.points) / len(self.points)

    def coords(self):
        return (np.array([p[0] for p in self.points], dtype=float),
                np.array([p[1] for p in self.points], dtype=float))

    def converged_mask(self):
        return np.array([o.converged for _, _, o in self.points], dtype=bool)

    def param(self, name):
        return np.array([o.params[name] for _, _, o in self.points])


@numba.njit(cache=True)
def _zncc_map(tmpl, area):
    n0, n1 = tmpl.shape
    out = np.empty((area.shape[0] - n0 + 1, area.shape[1] - n1 + 1))
    count = n0 * n1
    tz = tmpl - tmpl.mean()
    tn = np.sqrt(np.sum(tz * tz))
    for a in range(out.shape[0]):
        for b in range(out.shape[1]):
            s = 0.0
            ss = 0.0
            cross = 0.0
            for i in range(n0):
                for j in range(n1):
                    g = area[a + i, b + j]
                    s += g
                    ss += g * g
                    cross += g * tz[i, j]
            var = ss - s * s / count
            denom = tn * np.sqrt(var) if var > 0.0 else 0.0
            out[a, b] = cross / denom if denom > 0.0 else -1.0
    return out


def zncc_map(template, area):
    """ZNCC of ``template`` against every placement inside ``area``.

    Placements with a flat template or window score -1.
    """
    return _zncc_map(np.ascontiguousarray(template, dtype=float),
                     np.ascontiguousarray(area, dtype=float))


class Guess(NamedTuple):
    u: int
    v: int
    zncc: float


def initial_guess(reference: GrayImage, target: GrayImage, region: SubsetRegion,
                  search_radius: int = 10) -> Guess:
    """Integer shift maximising ZNCC within ``search_radius``.

    Shifts that would move the subset off the target are skipped.  Ties go
    to the smallest shift, then to the lexicographically smallest ``(u, v)``.
    """
    r = region.half_width
    xc, yc = region.center
    h, w = reference.shape
    if xc - r < 0 or yc - r < 0 or xc + r >= w or yc + r >= h:
        raise OutOfDomain(f"subset at {region.center} leaves the reference image")
    tmpl = reference.intensities[yc - r:yc + r + 1, xc - r:xc + r + 1]
    umin = max(-search_radius, r - xc)
    umax = min(search_radius, w - 1 - r - xc)
    vmin = max(-search_radius, r - yc)
    vmax = min(search_radius, h - 1 - r - yc)
    area = target.intensities[yc + vmin - r:yc + vmax + r + 1, xc + umin - r:xc + umax + r + 1]
    zncc = zncc_map(tmpl, area)
    best = zncc.max()
    vv, uu = np.nonzero(zncc == best)
    cands = sorted(((u + umin) ** 2 + (v + vmin) ** 2, u + umin, v + vmin)
                   for u, v in zip(uu, vv))
    _, u, v = cands[0]
    return Guess(int(u), int(v), float(best))


def seed_params(reference: GrayImage, sequence: ImageSequence, region: SubsetRegion,
                spec: ShapeFunctionSpec, central: int, search_radius: int, cache=None):
    """Initial parameters from integer guesses on every window frame.

    Displacement and pure-time terms are a least-squares fit of the integer
    guesses over the window's time offsets; everything else starts at zero.
    Returns the parameters and the central frame's ZNCC peak.  ``cache`` maps
    ``(center, frame)`` to guesses so overlapping windows search each frame
    once.
    """
    h = spec.half_window
    dts = np.arange(-h, h + 1)
    cache = {} if cache is None else cache
    guesses = []
    for d in dts:
        key = (region.center, central + int(d))
        if key not in cache:
            cache[key] = initial_guess(reference, sequence[key[1]], region, search_radius)
        guesses.append(cache[key])
    peak = guesses[h].zncc
    values = dict.fromkeys(spec.names(), 0.0)
    time_terms = [m for m in ("1", "t", "tt") if m in spec.monomials]
    powers = {"1": 0, "t": 1, "tt": 2}
    design = np.stack([dts.astype(float) ** powers[m] for m in time_terms], axis=1)
    gu = np.array([g.u for g in guesses], dtype=float)
    gv = np.array([g.v for g in guesses], dtype=float)
    cu, *_ = np.linalg.lstsq(design, gu, rcond=None)
    cv, *_ = np.linalg.lstsq(design, gv, rcond=None)
    for m, a, b in zip(time_terms, cu, cv):
        values["u" if m == "1" else "u" + m] = float(a)
        values["v" if m == "1" else "v" + m] = float(b)
    return ParamSet.from_dict(spec, values), peak


def _check_window(sequence, plan, central):
    h = plan.spec.half_window
    if central - h < 0 or central + h >= len(sequence):
        raise WindowOutOfRange(
            f"frame {central} needs frames {central - h}..{central + h}, "
            f"sequence has {len(sequence)}")


def _precompute_all(reference, plan):
    """IC precomputation per grid point; failures map to a Failure tag."""
    out = {}
    if plan.settings.resolve(plan.spec) is not Optimizer.IC:
        return out
    for xy in plan.grid_points():
        region = SubsetRegion(xy, plan.subset_half_width)
        try:
            out[xy] = precompute_ic(reference, region, plan.spec, plan.criterion)
        except Singular:
            out[xy] = Failure.SINGULAR
        except FlatSubset:
            out[xy] = Failure.FLAT_SUBSET
        except OutOfDomain:
            out[xy] = Failure.OUT_OF_DOMAIN
    return out


def _solve_point(sequence, plan, central, xy, pre, cache):
    spec = plan.spec
    region = SubsetRegion(xy, plan.subset_half_width)
    zero = ParamSet.zero(spec)
    if isinstance(pre, Failure):
        return SolveOutcome(zero, 0, float("nan"), False, pre)
    try:
        init, peak = seed_params(sequence[0], sequence, region, spec, central,
                                 plan.search_radius, cache)
    except OutOfDomain:
        return SolveOutcome(zero, 0, float("nan"), False, Failure.OUT_OF_DOMAIN)
    if not peak >= plan.min_zncc:
        return SolveOutcome(init, 0, float("nan"), False, Failure.NOT_FOUND)
    return solve(sequence[0], sequence, region, spec, plan.criterion, init, plan.settings,
                 frame=central, pre=pre)


def analyze_frame(sequence: ImageSequence, plan: AnalysisPlan, central_frame: int,
                  _pre=None, _guesses=None) -> DisplacementField:
    """Solve every grid point for one central frame.

    Per-point failures are recorded in the outcome, never raised.
    """
    _check_window(sequence, plan, central_frame)
    pre = _pre if _pre is not None else _precompute_all(sequence[0], plan)
    guesses = _guesses if _guesses is not None else {}
    points = []
    for xy in plan.grid_points():
        outcome = _solve_point(sequence, plan, central_frame, xy, pre.get(xy), guesses)
        points.append((xy[0], xy[1], outcome))
    field_ = DisplacementField(central_frame, tuple(points), plan)
    log.debug("frame %d: %.0f%% converged", central_frame, 100 * field_.converged_fraction)
    return field_


def analysable_frames(sequence: ImageSequence, plan: AnalysisPlan):
    """Central frames with a complete window, excluding the reference."""
    h = plan.spec.half_window
    return list(range(max(h, 1), len(sequence) - h))


def analyze_sequence(sequence: ImageSequence, plan: AnalysisPlan, frames=None,
                     threads: int = 1):
    """Analyse several central frames; results come back in frame order.

    Frames are independent, so any ``threads`` value gives identical output.
    """
    frames = analysable_frames(sequence, plan) if frames is None else list(frames)
    for f in frames:
        _check_window(sequence, plan, f)
    pre = _precompute_all(sequence[0], plan)
    guesses = {}

    def run(f):
        return analyze_frame(sequence, plan, f, _pre=pre, _guesses=guesses)

    if threads and threads > 1 and len(frames) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, frames))
    return [run(f) for f in frames]


# --- CSV --------------------------------------------------------------------

def field_columns(spec: ShapeFunctionSpec):
    names = spec.names()
    k = spec.k
    return ["frame", "x", "y", "converged", "iterations", "residual_norm", "u", "v",
            *names[1:k], *names[k + 1:]]


def _fmt(v) -> str:
    return repr(float(v))


def field_rows(fld: DisplacementField):
    spec = fld.spec
    k = spec.k
    for x, y, o in fld.points:
        vec = o.params.as_vector()
        yield [str(fld.frame_index), str(x), str(y), "true" if o.converged else "false",
               str(o.iterations), _fmt(o.final_residual_norm), _fmt(vec[0]), _fmt(vec[k]),
               *(_fmt(a) for a in vec[1:k]), *(_fmt(a) for a in vec[k + 1:])]


def write_fields_csv(path, fields) -> None:
    fields = list(fields)
    if not fields:
        raise StdicError("no fields to write")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(field_columns(fields[0].spec))
        for fld in fields:
            wr.writerows(field_rows(fld))


def read_fields_csv(path):
    """Rows of a field CSV as dicts of floats (``converged`` as bool)."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for key, val in row.items():
                if key == "converged":
                    rec[key] = val == "true"
                elif key in ("frame", "x", "y", "iterations"):
                    rec[key] = int(val)
                else:
                    rec[key] = float(val)
            out.append(rec)
    return out
