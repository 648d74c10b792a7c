"""Synthesis, analysis and metrics stages plus the canned experiments.

Each stage reads and writes plain files under one output directory::

    effective_config.json
    synth/noise_<level>/frame_0000.f64 ... truth.csv metadata.txt
    analysis/noise_<level>/<method>.csv
    analysis/run.log
    metrics/metrics.csv ratios.csv curves.csv strain.csv fit.csv plot_*.csv
    summary.txt                              (reproduce only)

Nothing timing-dependent is written, so identical configs give identical
bytes.
"""

from __future__ import annotations

import csv
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, MethodConfig
from .criterion import CriterionKind
from .engine import AnalysisPlan, analyze_sequence, read_fields_csv, write_fields_csv
from .errors import ConfigError, StdicError
from .image import ImageSequence, read_image, write_f64, write_pgm
from .metrics import (errors_from_arrays, linear_fit, ratio_table, write_metrics_csv,
                      write_table_csv)
from .synth import GroundTruth, MotionProgram, NoiseSpec, add_noise, render_clean, roi_inset, \
    speckle_array

log = logging.getLogger(__name__)

CANNED = ("translation", "vibration", "expansion")


def canned_config(name: str) -> ExperimentConfig:
    """Parameters of the built-in experiments."""
    cfg = ExperimentConfig(name=name)
    if name == "translation":
        cfg.noise.levels = [0.0, 0.01, 0.02, 0.03, 0.04, 0.05]
    elif name == "vibration":
        cfg.image.width = cfg.image.height = 96
        cfg.motion.kind = "vibration"
        cfg.motion.frame_count = 200
        cfg.motion.frame_interval = 0.01
        cfg.noise.levels = [0.01, 0.02, 0.03, 0.04, 0.05]
        cfg.methods = [MethodConfig("spatial"),
                       MethodConfig("st-order-1", 1, 1, [], 5),
                       MethodConfig("st-order-2", 1, 2, [], 5)]
        cfg.metrics.component = "v"
        cfg.metrics.t_min = 1.0
    elif name == "expansion":
        cfg.image.width = cfg.image.height = 256
        cfg.motion.kind = "uniform_strain"
        cfg.motion.frame_count = 60
        cfg.motion.rate_x = cfg.motion.rate_y = 20e-6
        cfg.noise.levels = [0.02]
        cfg.analysis.subset_size = 51
        cfg.analysis.grid_step = 15
    else:
        raise ConfigError(f"unknown experiment {name!r}; choose from {', '.join(CANNED)}")
    return cfg.validate()


def level_dir(level: float) -> str:
    return f"noise_{level:g}"


# --- synthesis --------------------------------------------------------------

def _write_metadata(path, cfg: ExperimentConfig, truth: GroundTruth, level, inset, fmt):
    m = truth.motion
    items = [
        ("motion", m.kind), ("frame_count", m.frame_count), ("frame_interval", m.frame_interval),
        ("step", m.step), ("rate_x", m.rate_x), ("rate_y", m.rate_y),
        ("u_t", m.u_t), ("v_t", m.v_t),
        ("center_x", truth.center[0]), ("center_y", truth.center[1]),
        ("width", truth.shape[1]), ("height", truth.shape[0]),
        ("noise_level", level), ("noise_sigma", level * 255.0),
        ("quantize_8bit", str(cfg.noise.quantize_8bit).lower()),
        ("seed", cfg.seed), ("rng", "PCG64 SeedSequence([seed, frame])"),
        ("roi_inset", inset), ("frame_format", fmt),
    ]
    with open(path, "w", newline="\n") as fh:
        for key, val in items:
            fh.write(f"{key}={val!r}\n" if isinstance(val, float) else f"{key}={val}\n")


def read_metadata(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line and not line.startswith("#"):
            key, _, val = line.partition("=")
            out[key.strip()] = val.strip()
    return out


def truth_from_metadata(meta: dict) -> GroundTruth:
    try:
        motion = MotionProgram(meta["motion"], int(meta["frame_count"]),
                               float(meta["frame_interval"]), float(meta["step"]),
                               float(meta["rate_x"]), float(meta["rate_y"]),
                               float(meta["u_t"]), float(meta["v_t"]))
        center = (float(meta["center_x"]), float(meta["center_y"]))
        shape = (int(meta["height"]), int(meta["width"]))
    except KeyError as exc:
        raise StdicError(f"metadata lacks key {exc}") from exc
    return GroundTruth(motion, shape, center)


def write_truth_csv(path, truth: GroundTruth):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(["frame", "t_seconds", "u_true", "v_true"])
        for f, t, u, v in truth.rows():
            wr.writerow([f, repr(t), repr(u), repr(v)])


def run_synth(cfg: ExperimentConfig, out: Path):
    """Render the speckle, deform it and write one frame set per noise level."""
    out = Path(out)
    base = speckle_array(cfg.image.width, cfg.image.height, cfg.seed,
                         cfg.image.speckle_radius, cfg.image.density)
    clean, truth = render_clean(base, cfg.motion.program())
    inset = roi_inset(truth)
    fmt = "pgm" if cfg.noise.quantize_8bit else "f64"
    for level in cfg.noise.levels:
        d = out / "synth" / level_dir(level)
        d.mkdir(parents=True, exist_ok=True)
        noise = NoiseSpec(level, cfg.seed)
        seq = add_noise(clean, noise, cfg.noise.quantize_8bit, cfg.motion.frame_interval)
        for i, img in enumerate(seq):
            if fmt == "pgm":
                write_pgm(d / f"frame_{i:04d}.pgm", img.intensities)
            else:
                write_f64(d / f"frame_{i:04d}.f64", img.intensities)
        write_truth_csv(d / "truth.csv", truth)
        _write_metadata(d / "metadata.txt", cfg, truth, level, inset, fmt)
    return truth


# --- analysis ---------------------------------------------------------------

def load_frames(directory, frame_count: int) -> ImageSequence:
    """Frames ``0..frame_count`` from ``directory`` (f64 preferred over pgm)."""
    directory = Path(directory)
    arrays = []
    for i in range(frame_count + 1):
        path = directory / f"frame_{i:04d}.f64"
        if not path.exists():
            alt = directory / f"frame_{i:04d}.pgm"
            if not alt.exists():
                raise StdicError(f"missing frame: {path}")
            path = alt
        arrays.append(read_image(path))
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise StdicError(f"frames in {directory} differ in size: {sorted(shapes)}")
    return ImageSequence.from_arrays(arrays)


def common_frames(cfg: ExperimentConfig, n_frames: int):
    if cfg.analysis.frames is not None:
        return [int(f) for f in cfg.analysis.frames]
    h = max(m.spec().half_window for m in cfg.methods)
    return list(range(max(h, 1), n_frames - h))


def plan_for(cfg: ExperimentConfig, method: MethodConfig, shape, inset: int) -> AnalysisPlan:
    a = cfg.analysis
    h, w = shape
    roi = a.roi if a.roi is not None else (inset, inset, w - 1 - inset, h - 1 - inset)
    return AnalysisPlan(tuple(roi), method.spec(), (a.subset_size - 1) // 2, a.grid_step,
                        CriterionKind(a.criterion), a.settings.settings(), a.search_radius,
                        a.min_zncc)


def _log_lines(method, level, fields):
    n = sum(len(f) for f in fields)
    conv = sum(int(f.converged_mask().sum()) for f in fields)
    its = [o.iterations for f in fields for _, _, o in f.points if o.converged]
    fails = defaultdict(int)
    for f in fields:
        for x, y, o in f.points:
            if not o.converged:
                fails[o.failure.value if o.failure else "max_iterations"] += 1
    mean_its = f"{np.mean(its):.3f}" if its else "nan"
    line = (f"noise={level:g} method={method} frames={len(fields)} points={n} "
            f"converged={conv} mean_iterations={mean_its}")
    if fails:
        line += " failures=" + ",".join(f"{k}:{v}" for k, v in sorted(fails.items()))
    return [line]


def run_analyze(cfg: ExperimentConfig, out: Path, threads: int = 1, source: Path | None = None):
    """Analyse every noise level with every method."""
    out = Path(out)
    source = Path(source) if source is not None else out / "synth"
    log_lines = []
    for level in cfg.noise.levels:
        src = source / level_dir(level)
        seq = load_frames(src, cfg.motion.frame_count)
        meta_path = src / "metadata.txt"
        if meta_path.exists():
            inset = int(read_metadata(meta_path)["roi_inset"])
        else:
            truth = GroundTruth(cfg.motion.program(), seq.shape,
                                ((seq.shape[1] - 1) / 2, (seq.shape[0] - 1) / 2))
            inset = roi_inset(truth)
        frames = common_frames(cfg, len(seq))
        dest = out / "analysis" / level_dir(level)
        dest.mkdir(parents=True, exist_ok=True)
        for method in cfg.methods:
            plan = plan_for(cfg, method, seq.shape, inset)
            fields = analyze_sequence(seq, plan, frames, threads=threads)
            write_fields_csv(dest / f"{method.name}.csv", fields)
            log_lines += _log_lines(method.name, level, fields)
            log.info(log_lines[-1])
    (out / "analysis").mkdir(parents=True, exist_ok=True)
    with open(out / "analysis" / "run.log", "w", newline="\n") as fh:
        fh.write("\n".join(log_lines) + "\n")


# --- metrics ----------------------------------------------------------------

REQUIRED_FIELD_COLUMNS = {"frame", "x", "y", "converged", "u", "v"}


def _load_truth(synth_dir: Path, cfg: ExperimentConfig) -> GroundTruth:
    meta = read_metadata(synth_dir / "metadata.txt")
    truth = truth_from_metadata(meta)
    truth_csv = synth_dir / "truth.csv"
    with open(truth_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        f = int(row["frame"])
        u, v = truth.displacement_at(f, truth.center[0], truth.center[1])
        if abs(float(row["u_true"]) - float(u)) > 1e-9 or abs(float(row["v_true"]) - float(v)) > 1e-9:
            raise StdicError(f"{truth_csv} disagrees with {synth_dir / 'metadata.txt'} at frame {f}")
    return truth


def _frame_groups(rows):
    groups = defaultdict(list)
    for r in rows:
        groups[r["frame"]].append(r)
    return dict(sorted(groups.items()))


def run_metrics(cfg: ExperimentConfig, out: Path, source: Path | None = None):
    """Per-frame errors, ratio table, noise curves and strain statistics."""
    out = Path(out)
    source = Path(source) if source is not None else out / "synth"
    dest = out / "metrics"
    dest.mkdir(parents=True, exist_ok=True)
    records = []
    errors = {}
    strain_rows = []
    fits = []
    method_names = [m.name for m in cfg.methods]
    for level in cfg.noise.levels:
        truth = _load_truth(source / level_dir(level), cfg)
        for method in cfg.methods:
            path = out / "analysis" / level_dir(level) / f"{method.name}.csv"
            if not path.exists():
                raise StdicError(f"missing analysis file: {path}")
            rows = read_fields_csv(path)
            if rows and not REQUIRED_FIELD_COLUMNS <= set(rows[0]):
                raise StdicError(f"{path}: missing columns "
                                 f"{sorted(REQUIRED_FIELD_COLUMNS - set(rows[0]))}")
            per_frame = []
            strain_series = []
            for frame, grp in _frame_groups(rows).items():
                ok = [r for r in grp if r["converged"]]
                if not ok:
                    log.warning("noise %g %s frame %d: no converged points", level,
                                method.name, frame)
                    continue
                x = np.array([r["x"] for r in ok], dtype=float)
                y = np.array([r["y"] for r in ok], dtype=float)
                ut, vt = truth.displacement_at(frame, x, y)
                e = errors_from_arrays(frame, [r["u"] for r in ok], [r["v"] for r in ok], ut, vt)
                per_frame.append(e)
                records.append((method.name, level, e))
                if "ux" in ok[0] and "vy" in ok[0]:
                    ux = np.array([r["ux"] for r in ok])
                    vy = np.array([r["vy"] for r in ok])
                    strain_series.append((frame, ux.mean(), vy.mean(), ux.std(), vy.std()))
                    strain_rows.append([frame, method.name, level, ux.mean(), ux.std(),
                                        vy.mean(), vy.std(), len(ok)])
            errors[(method.name, level)] = per_frame
            _write_plot(dest / f"plot_{method.name}_{level_dir(level)}.csv", per_frame,
                        truth, cfg.metrics.component)
            if truth.motion.kind == "uniform_strain" and len(strain_series) >= 3:
                t = [float(truth.motion.time(s[0])) for s in strain_series]
                for comp, col in (("ux", 1), ("vy", 2)):
                    try:
                        fit = linear_fit(t, [s[col] for s in strain_series])
                    except StdicError:
                        continue
                    fits.append([method.name, level, comp, fit])
    records.sort(key=lambda r: (method_names.index(r[0]), r[1], r[2].frame))
    write_metrics_csv(dest / "metrics.csv", records)
    _write_curves(dest / "curves.csv", errors, cfg)
    ratios = None
    others = [m for m in method_names if m != cfg.metrics.reference_method]
    if cfg.metrics.reference_method in method_names and others:
        tmin = cfg.metrics.t_min
        interval = cfg.motion.frame_interval

        def keep(frame):
            return tmin is None or frame * interval > tmin + 1e-12

        header, rows = ratio_table(errors, cfg.metrics.reference_method, others, keep,
                                   cfg.metrics.component)
        write_table_csv(dest / "ratios.csv", header, rows)
        ratios = (header, rows)
    if strain_rows:
        with open(dest / "strain.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\r\n")
            wr.writerow(["frame", "method", "noise_level", "mean_ux", "sd_ux", "mean_vy",
                         "sd_vy", "n_converged"])
            for r in strain_rows:
                wr.writerow([r[0], r[1], *(repr(float(v)) for v in r[2:7]), r[7]])
    if fits:
        with open(dest / "fit.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\r\n")
            wr.writerow(["method", "noise_level", "component", "slope", "intercept",
                         "r_squared"])
            for name, level, comp, fit in fits:
                wr.writerow([name, repr(float(level)), comp, repr(fit.slope),
                             repr(fit.intercept), repr(fit.r_squared)])
    return errors, ratios, fits


def _write_plot(path, per_frame, truth, component):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\r\n")
        wr.writerow(["t_seconds", f"mean_l1_{component}"])
        for e in per_frame:
            wr.writerow([repr(float(truth.motion.time(e.frame))), repr(e.mean_l1(component))])


def noise_curves(errors, cfg: ExperimentConfig):
    """Frame-averaged error and SD per method and noise level."""
    out = []
    for m in cfg.methods:
        for level in cfg.noise.levels:
            per = errors.get((m.name, level), [])
            if not per:
                continue
            out.append([level, m.name,
                        float(np.mean([e.mean_l1_u for e in per])),
                        float(np.mean([e.sd_u for e in per])),
                        float(np.mean([e.mean_l1_v for e in per])),
                        float(np.mean([e.sd_v for e in per]))])
    return out


def _write_curves(path, errors, cfg):
    write_table_csv(path, ["noise_level", "method", "mean_l1_u", "sd_u", "mean_l1_v", "sd_v"],
                    noise_curves(errors, cfg))


def _summary(cfg, errors, ratios, fits):
    lines = [f"experiment={cfg.name}", f"seed={cfg.seed}", "",
             "frame-averaged errors (px): noise method mean_l1_u sd_u mean_l1_v sd_v"]
    for row in noise_curves(errors, cfg):
        lines.append(f"{row[0]:g} {row[1]} " + " ".join(f"{v:.6f}" for v in row[2:]))
    if ratios is not None:
        header, rows = ratios
        lines += ["", f"mean error ratio ({cfg.metrics.component}) vs "
                      f"{cfg.metrics.reference_method}"
                  + (f", t > {cfg.metrics.t_min:g} s" if cfg.metrics.t_min is not None else ""),
                  " ".join(header)]
        for row in rows:
            lines.append(f"{row[0]:g} " + " ".join(f"{v:.4f}" for v in row[1:]))
    if fits:
        lines += ["", "linear fit of mean strain vs time: method noise component slope r_squared"]
        for name, level, comp, fit in fits:
            lines.append(f"{name} {level:g} {comp} {fit.slope:.6e} {fit.r_squared:.6f}")
    return "\n".join(lines) + "\n"


def run_reproduce(cfg: ExperimentConfig, out: Path, threads: int = 1):
    out = Path(out)
    run_synth(cfg, out)
    run_analyze(cfg, out, threads)
    errors, ratios, fits = run_metrics(cfg, out)
    (out / "summary.txt").write_text(_summary(cfg, errors, ratios, fits))
    return errors, ratios, fits
