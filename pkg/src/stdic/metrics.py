"""Error and field statistics for measured displacement fields.

Errors are computed per displacement component over converged points only;
the number of points used is always reported alongside.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (DegenerateAbscissa, EmptyAfterFilter, LengthMismatch,
                     NoConvergedPoints, SpecLacksGradients, StdicError)

METRICS_COLUMNS = ["frame", "method", "noise_level", "mean_l1_u", "sd_u",
                   "mean_l1_v", "sd_v", "n_converged"]


@dataclass(frozen=True)
class FrameError:
    """Mean absolute error and signed-deviation SD of one frame."""

    frame: int
    mean_l1_u: float
    sd_u: float
    mean_l1_v: float
    sd_v: float
    n_points: int

    def mean_l1(self, component: str = "u") -> float:
        return self.mean_l1_u if component == "u" else self.mean_l1_v

    def sd(self, component: str = "u") -> float:
        return self.sd_u if component == "u" else self.sd_v


def errors_from_arrays(frame, u_meas, v_meas, u_true, v_true) -> FrameError:
    du = np.asarray(u_meas, dtype=float) - np.asarray(u_true, dtype=float)
    dv = np.asarray(v_meas, dtype=float) - np.asarray(v_true, dtype=float)
    if du.size == 0:
        raise NoConvergedPoints(f"frame {frame} has no converged points")
    return FrameError(int(frame), float(np.mean(np.abs(du))), float(np.std(du)),
                      float(np.mean(np.abs(dv))), float(np.std(dv)), int(du.size))


def frame_error(field, truth) -> FrameError:
    """Mean L1 error of a field against the ground truth, per component.

    Raises
    ------
    NoConvergedPoints
        If no point of the field converged.
    """
    mask = field.converged_mask()
    if not mask.any():
        raise NoConvergedPoints(f"frame {field.frame_index} has no converged points")
    x, y = field.coords()
    ut, vt = truth.displacement_at(field.frame_index, x[mask], y[mask])
    return errors_from_arrays(field.frame_index, field.param("u")[mask],
                              field.param("v")[mask], ut, vt)


def _frame_values(errors, component, frame_filter):
    out = {}
    for i, e in enumerate(errors):
        if isinstance(e, FrameError):
            frame, val = e.frame, e.mean_l1(component)
        else:
            frame, val = i, float(e)
        if frame_filter is None or frame_filter(frame):
            out[frame] = val
    return out


def error_ratio(errors_a, errors_b, frame_filter=None, component: str = "u") -> float:
    """Mean of ``errors_a`` over frames divided by the mean of ``errors_b``.

    Items are :class:`FrameError` records (filtered by their frame number) or
    plain numbers (filtered by list position).

    Raises
    ------
    EmptyAfterFilter
        If no frame survives ``frame_filter``.
    """
    a = _frame_values(errors_a, component, frame_filter)
    b = _frame_values(errors_b, component, frame_filter)
    if not a or not b:
        raise EmptyAfterFilter("no frames left after filtering")
    if set(a) != set(b):
        raise LengthMismatch("error lists cover different frames")
    frames = sorted(a)
    num = np.mean([a[f] for f in frames])
    den = np.mean([b[f] for f in frames])
    if num == den:
        return 1.0
    return float(num / den)


class StrainStats(NamedTuple):
    mean_ux: float
    mean_vy: float
    sd_ux: float
    sd_vy: float
    n_points: int


def strain_stats(field) -> StrainStats:
    """Mean and SD of the solved ``ux``/``vy`` parameters over converged points."""
    if not field.spec.has_gradients:
        raise SpecLacksGradients("shape function has no displacement gradients")
    mask = field.converged_mask()
    if not mask.any():
        raise NoConvergedPoints(f"frame {field.frame_index} has no converged points")
    ux = field.param("ux")[mask]
    vy = field.param("vy")[mask]
    return StrainStats(float(ux.mean()), float(vy.mean()), float(ux.std()),
                       float(vy.std()), int(mask.sum()))


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    # set when y has zero variance and R^2 was defined as 0
    flat: bool = False


def linear_fit(x, y) -> LinearFit:
    """Ordinary least-squares line through ``(x, y)``.

    For constant ``y`` the coefficient of determination is 0/0; it is
    reported as 0 with ``flat=True``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch("x and y must be 1-D and of equal length")
    if x.size < 3:
        raise StdicError("linear fit needs at least 3 points")
    xc = x - x.mean()
    sxx = float(xc @ xc)
    if sxx <= 1e-24 * max(1.0, float(np.abs(x).max()) ** 2):
        raise DegenerateAbscissa("all x values are equal")
    yc = y - y.mean()
    slope = float(xc @ yc) / sxx
    intercept = float(y.mean() - slope * x.mean())
    ss_tot = float(yc @ yc)
    if ss_tot == 0.0:
        return LinearFit(slope, intercept, 0.0, True)
    res = y - (slope * x + intercept)
    r2 = 1.0 - float(res @ res) / ss_tot
    return LinearFit(slope, intercept, float(np.clip(r2, 0.0, 1.0)))


# --- tables -----------------------------------------------------------------

def _fmt(v):
    return repr(float(v))


def metrics_rows(records):
    """CSV rows from ``(method, noise_level, FrameError)`` records."""
    for method, level, e in records:
        yield [str(e.frame), method, _fmt(level), _fmt(e.mean_l1_u), _fmt(e.sd_u),
               _fmt(e.mean_l1_v), _fmt(e.sd_v), str(e.n_points)]


def write_metrics_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(METRICS_COLUMNS)
        wr.writerows(metrics_rows(records))


def read_metrics_csv(path):
    """``(method, noise_level, FrameError)`` records from a metrics CSV."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise StdicError(f"{path}: unexpected columns {reader.fieldnames}")
        for row in reader:
            e = FrameError(int(row["frame"]), float(row["mean_l1_u"]), float(row["sd_u"]),
                           float(row["mean_l1_v"]), float(row["sd_v"]),
                           int(row["n_converged"]))
            out.append((row["method"], float(row["noise_level"]), e))
    return out


def ratio_table(errors, reference: str, methods, frame_filter=None, component="u"):
    """Ratios to ``reference`` laid out as rows of noise levels.

    ``errors`` maps ``(method, noise_level)`` to a list of FrameError.
    Returns ``(header, rows)`` with one column per entry of ``methods``.
    """
    levels = sorted({lvl for _, lvl in errors})
    header = ["noise_level", *methods]
    rows = []
    for lvl in levels:
        ref = errors[(reference, lvl)]
        rows.append([lvl, *(error_ratio(errors[(m, lvl)], ref, frame_filter, component)
                            for m in methods)])
    return header, rows


def write_table_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(header)
        for row in rows:
            wr.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
