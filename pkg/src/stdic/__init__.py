"""Spatial-temporal digital image correlation.

Subset-based subpixel displacement measurement in which the shape function,
the matching criterion and the optimizer are chosen independently, plus a
synthetic-experiment harness.
"""

from .criterion import CriterionKind, SubsetSample, residual, residual_ssd, residual_znssd
from .engine import (AnalysisPlan, DisplacementField, analyze_frame, analyze_sequence,
                     initial_guess, read_fields_csv, write_fields_csv)
from .errors import *  # noqa: F401,F403
from .image import (GrayImage, ImageSequence, SubsetRegion, build_interpolant, gradient,
                    read_image, sample)
from .metrics import (FrameError, LinearFit, error_ratio, frame_error, linear_fit,
                      strain_stats)
from .shapefn import (ParamSet, ShapeFunctionSpec, WarpMatrix, basis_at, compose, from_warp,
                      invert, to_warp)
from .solver import (Failure, Optimizer, PrecomputedIC, SolveOutcome, SolveSettings,
                     gauss_newton_step, linear_lsq_solve, precompute_ic, solve, solve_fa,
                     solve_fc, solve_ic)
from .synth import (GroundTruth, MotionProgram, NoiseSpec, fourier_shift, make_speckle,
                    render_sequence)

__version__ = "0.1.0"
