"""SSD and ZNSSD residuals over stacked spatial-temporal subsets.

Samples are flat vectors in subset row-major order, frames concatenated by
ascending time offset.  ``sdev`` is the root-sum-square deviation
``sqrt(sum((v - mean)**2))`` -- not divided by the sample count -- so the
normalised residual matches the unit-norm form of ZNSSD up to a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import FlatSubset, LengthMismatch


class CriterionKind(str, Enum):
    SSD = "ssd"
    ZNSSD = "znssd"


@dataclass(frozen=True, eq=False)
class SubsetSample:
    values: np.ndarray
    mean: float
    sdev: float
    # subset side n and frame count m, used for the flatness threshold
    n: int = 0
    m: int = 1

    @classmethod
    def from_values(cls, values, n=0, m=1):
        values = np.asarray(values, dtype=float)
        mean = float(values.mean())
        sdev = float(np.sqrt(np.sum((values - mean) ** 2)))
        if n == 0:
            n = int(round(math.sqrt(values.size / m)))
        return cls(values, mean, sdev, n, m)

    def __len__(self):
        return self.values.size

    @property
    def flat_threshold(self) -> float:
        return 1e-6 * self.n * math.sqrt(self.m)

    def require_texture(self):
        if self.sdev < self.flat_threshold:
            raise FlatSubset(f"subset deviation {self.sdev:.3g} below {self.flat_threshold:.3g}")


def _check_lengths(a, b):
    if len(a) != len(b):
        raise LengthMismatch(f"subset lengths differ: {len(a)} vs {len(b)}")


def residual_ssd(ref: SubsetSample, warped: SubsetSample):
    _check_lengths(ref, warped)
    return ref.values - warped.values


def residual_znssd(ref: SubsetSample, warped: SubsetSample):
    _check_lengths(ref, warped)
    ref.require_texture()
    warped.require_texture()
    return (ref.values - ref.mean) / ref.sdev - (warped.values - warped.mean) / warped.sdev


def residual(kind: CriterionKind, ref: SubsetSample, warped: SubsetSample):
    if CriterionKind(kind) is CriterionKind.SSD:
        return residual_ssd(ref, warped)
    return residual_znssd(ref, warped)


def step_scale(kind: CriterionKind, family: str, ref: SubsetSample, warped: SubsetSample) -> float:
    """Factor turning an SSD pseudo-inverse step into the criterion's step.

    ZNSSD's Jacobian is the SSD one divided by the deviation of whichever
    subset carries the gradient: the warped one for forward methods, the
    reference for inverse ones.
    """
    if CriterionKind(kind) is CriterionKind.SSD:
        return 1.0
    if family == "forward":
        warped.require_texture()
        return warped.sdev
    if family == "inverse":
        ref.require_texture()
        return ref.sdev
    raise ValueError(f"unknown optimizer family {family!r}")
