"""Acceptance suite: one PASS/FAIL line per criterion.

Each test records its line through the ``acceptance`` fixture; the lines are
echoed immediately and repeated in the terminal summary.  Tolerances and
runtime budgets are pinned at the top of the file.
"""

import time

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from stdic.criterion import CriterionKind
from stdic.engine import initial_guess
from stdic.experiments import canned_config, run_reproduce
from stdic.image import ImageSequence, SubsetRegion, build_interpolant
from stdic.metrics import read_metrics_csv
from stdic.shapefn import ParamSet, ShapeFunctionSpec
from stdic.solver import (Optimizer, SolveSettings, SubsetStack, gauss_newton_step,
                          linear_lsq_solve, precompute_ic, solve)
from stdic.synth import fourier_shift_array, speckle_array

pytestmark = pytest.mark.acceptance

# criterion 1
LSQ_REL_TOL = 1e-9
BUDGET_1 = 1.0
# criterion 2
JAC_REL_TOL = 1e-4
BUDGET_2 = 10.0
# criterion 3
AGREE_TOL = 1e-4
BUDGET_3 = 30.0
# criterion 4
EQUIV_TOL = 1e-5
BUDGET_4 = 10.0
# criterion 5
ZERO_NOISE_MAX = 0.02
MATCH_BAND = 0.35
BUDGET_5 = 180.0
# criterion 6
SPATIAL_BAND = (1.10, 1.60)
ORDER2_BAND = (1.02, 1.30)
BUDGET_6 = 600.0
# criterion 7
SLOPE_REL_TOL = 0.02
R2_MIN = 0.999
TRUE_RATE = 20e-6
BUDGET_7 = 180.0


def _line(n, ok, detail):
    return f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"


# --- 1 ------------------------------------------------------------------------

def test_criterion_1_linear_least_squares(acceptance):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    one_step = 0.0
    for _ in range(200):
        m, n = rng.integers(8, 40), rng.integers(1, 8)
        a = rng.normal(size=(m, n))
        b = rng.normal(size=m)
        # closed form -(A^T A)^-1 A^T b through an independent QR route
        q, r = np.linalg.qr(a)
        ref = -np.linalg.solve(r, q.T @ b)
        got = gauss_newton_step(a, b)
        worst = max(worst, np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
        p0 = rng.normal(size=n) * 5
        p1 = p0 + gauss_newton_step(a, a @ p0 + b)
        one_step = max(one_step, np.max(np.abs(p1 - linear_lsq_solve(a, b))))
    dt = time.perf_counter() - t0
    ok = worst < LSQ_REL_TOL and one_step < 1e-9 and dt < BUDGET_1
    acceptance(_line(1, ok, f"max rel err {worst:.2e}, one-step gap {one_step:.2e}, "
                            f"{dt:.2f} s"))
    assert ok


# --- 2 ------------------------------------------------------------------------

def test_criterion_2_ic_jacobian(acceptance):
    t0 = time.perf_counter()
    img = build_interpolant(speckle_array(128, 128, seed=202))
    specs = [ShapeFunctionSpec(), ShapeFunctionSpec(1, 1, frozenset(), 5),
             ShapeFunctionSpec(1, 1, {"xt", "yt"}, 5)]
    rng = np.random.default_rng(202)
    h = 1e-5
    worst = 0.0
    for spec in specs:
        for _ in range(20):
            hw = int(rng.integers(5, 16))
            xc, yc = rng.integers(hw + 12, 128 - hw - 12, 2)
            region = SubsetRegion((int(xc), int(yc)), hw)
            pre = precompute_ic(img, region, spec, CriterionKind.SSD)
            stack = SubsetStack(region, spec)
            fd = np.empty_like(pre.jacobian)
            for j in range(spec.n_params):
                e = np.zeros(spec.n_params)
                e[j] = h
                xp, yp = stack.positions(ParamSet.from_vector(spec, e))
                xm, ym = stack.positions(ParamSet.from_vector(spec, -e))
                fd[:, j] = (img.sample(xp, yp) - img.sample(xm, ym)) / (2 * h)
            rel = np.linalg.norm(pre.jacobian - fd, axis=0) / np.linalg.norm(fd, axis=0)
            worst = max(worst, float(rel.max()))
    dt = time.perf_counter() - t0
    ok = worst < JAC_REL_TOL and dt < BUDGET_2
    acceptance(_line(2, ok, f"max column rel err {worst:.2e} over 3 specs x 20 subsets, "
                            f"{dt:.2f} s"))
    assert ok


# --- 3 ------------------------------------------------------------------------

def _affine_warp(interp, pad, shape, a):
    """Image whose content at ``X`` moves to ``X + A(X - c) + t`` (fixed point)."""
    u0, ux, uy, v0, vx, vy, cx, cy = a
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    sx, sy = xx.copy(), yy.copy()
    for _ in range(40):
        du = u0 + ux * (sx - cx) + uy * (sy - cy)
        dv = v0 + vx * (sx - cx) + vy * (sy - cy)
        sx, sy = xx - du, yy - dv
    return interp.sample(sx + pad, sy + pad)


def test_criterion_3_optimizer_agreement(acceptance):
    t0 = time.perf_counter()
    # mild pre-blur so the resampled warp is (nearly) exact for the interpolant;
    # with model error the IC fixed point drifts from the FA/FC minimum
    base = gaussian_filter(speckle_array(96, 96, seed=303), 1.0, mode="wrap")
    pad = 12
    interp = build_interpolant(np.pad(base, pad, mode="wrap"))
    ref = build_interpolant(base)
    rng = np.random.default_rng(303)
    methods = (Optimizer.FA, Optimizer.FC, Optimizer.IC)
    settings = {o: SolveSettings(o, convergence_tol=1e-8, max_iterations=100) for o in methods}
    worst, n_ok = 0.0, 0
    for _ in range(50):
        u0, v0 = rng.uniform(-2, 2, 2)
        strains = rng.uniform(-0.01, 0.01, 4)
        xc, yc = (int(c) for c in rng.integers(30, 66, 2))
        a = (u0, strains[0], strains[1], v0, strains[2], strains[3], xc, yc)
        seq = ImageSequence((ref, build_interpolant(_affine_warp(interp, pad, base.shape, a))))
        region = SubsetRegion((xc, yc), 15)
        g = initial_guess(ref, seq[1], region)
        init = ParamSet.from_dict(ShapeFunctionSpec(), {"u": g.u, "v": g.v})
        res = []
        for o in methods:
            out = solve(ref, seq, region, ShapeFunctionSpec(), init=init, settings=settings[o],
                        frame=1)
            n_ok += out.converged
            res.append(np.array(out.params.displacement))
        for i in range(3):
            for j in range(i + 1, 3):
                worst = max(worst, float(np.max(np.abs(res[i] - res[j]))))
    dt = time.perf_counter() - t0
    ok = worst < AGREE_TOL and n_ok == 150 and dt < BUDGET_3
    acceptance(_line(3, ok, f"max pairwise FA/FC/IC gap {worst:.2e} px, {n_ok}/150 converged, "
                            f"{dt:.2f} s"))
    assert ok


# --- 4 ------------------------------------------------------------------------

def test_criterion_4_criterion_equivalence(acceptance):
    t0 = time.perf_counter()
    # band-limited pattern and a 41x41 subset keep interpolation model error,
    # which separates the SSD and ZNSSD minima, below the tolerance
    base = gaussian_filter(speckle_array(128, 128, seed=404), 3.0, mode="wrap")
    rng = np.random.default_rng(404)
    region = SubsetRegion((64, 64), 20)
    spec = ShapeFunctionSpec()
    tight = SolveSettings(convergence_tol=1e-10, max_iterations=100)
    gap, invariance, ssd_bias = 0.0, 0.0, np.inf
    for _ in range(10):
        u, v = rng.uniform(-1, 1, 2)
        g = fourier_shift_array(base, u, v)
        plain = ImageSequence.from_arrays([base, g])
        mapped = ImageSequence.from_arrays([base, 1.7 * g + 20.0])
        ssd = solve(plain[0], plain, region, spec, CriterionKind.SSD, settings=tight, frame=1)
        zn = solve(mapped[0], mapped, region, spec, CriterionKind.ZNSSD, settings=tight, frame=1)
        zn_plain = solve(plain[0], plain, region, spec, CriterionKind.ZNSSD, settings=tight,
                         frame=1)
        bad = solve(mapped[0], mapped, region, spec, CriterionKind.SSD, settings=tight, frame=1)
        d_ssd = np.array(ssd.params.displacement)
        gap = max(gap, float(np.max(np.abs(np.array(zn.params.displacement) - d_ssd))))
        invariance = max(invariance, float(np.max(np.abs(
            np.subtract(zn.params.displacement, zn_plain.params.displacement)))))
        bias = np.inf if not bad.converged else float(
            np.max(np.abs(np.array(bad.params.displacement) - d_ssd)))
        ssd_bias = min(ssd_bias, bias)
    dt = time.perf_counter() - t0
    ok = gap < EQUIV_TOL and ssd_bias > 10 * EQUIV_TOL and dt < BUDGET_4
    acceptance(_line(4, ok, f"ZNSSD(mapped) vs SSD(plain) max gap {gap:.2e} px, "
                            f"ZNSSD mapped vs plain {invariance:.1e} px, "
                            f"smallest SSD(mapped) bias {ssd_bias:.2e} px, {dt:.2f} s"))
    assert ok


# --- 5 and 8 ------------------------------------------------------------------

@pytest.fixture(scope="module")
def translation_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("translation")
    cfg = canned_config("translation")
    runs = []
    for threads in (1, 4):
        out = root / f"threads{threads}"
        t0 = time.perf_counter()
        run_reproduce(cfg, out, threads)
        runs.append((out, time.perf_counter() - t0))
    return cfg, runs


def _curves(out):
    table = {}
    for method, level, e in read_metrics_csv(out / "metrics" / "metrics.csv"):
        table.setdefault((method, level), []).append(e)
    return {k: (np.mean([e.mean_l1_u for e in v]), np.mean([e.sd_u for e in v]))
            for k, v in table.items()}


@pytest.mark.slow
def test_criterion_5_translation(acceptance, translation_runs):
    cfg, runs = translation_runs
    out, dt = runs[0]
    c = _curves(out)
    sp, st = "spatial", "st-order-1"
    zero = max(c[(sp, 0.0)][0], c[(st, 0.0)][0])
    ok_a = zero < ZERO_NOISE_MAX
    levels = [lvl for lvl in cfg.noise.levels if lvl >= 0.01]
    ok_b = all(c[(st, lvl)][0] < c[(sp, lvl)][0] and c[(st, lvl)][1] < c[(sp, lvl)][1]
               for lvl in levels)
    ratio = c[(st, 0.05)][0] / c[(sp, 0.03)][0]
    sd_ratio = c[(st, 0.05)][1] / c[(sp, 0.03)][1]
    ok_c = abs(ratio - 1.0) <= MATCH_BAND
    ok = ok_a and ok_b and ok_c and dt < BUDGET_5
    sp_over_st = " ".join(f"{c[(sp, lvl)][0] / c[(st, lvl)][0]:.3f}" for lvl in levels)
    acceptance(_line(5, ok, f"(a) zero-noise max mean L1 {zero:.4f} px [{ok_a}]; "
                            f"(b) ST below spatial at 1-5% [{ok_b}], spatial/ST {sp_over_st}; "
                            f"(c) ST@5% / spatial@3% mean {ratio:.3f}, SD {sd_ratio:.3f} "
                            f"[{ok_c}]; {dt:.1f} s"))
    assert ok


def _tree(root):
    return {p.relative_to(root).as_posix(): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.mark.slow
def test_criterion_8_determinism(acceptance, translation_runs):
    _, runs = translation_runs
    a, b = _tree(runs[0][0]), _tree(runs[1][0])
    csvs = sorted(k for k in a if k.endswith(".csv"))
    ok = bool(csvs) and a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    acceptance(_line(8, ok, f"{len(csvs)} CSVs and {len(a) - len(csvs)} other files "
                            f"byte-identical with --threads 1 and 4"))
    assert ok


# --- 6 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_6_vibration(acceptance, tmp_path):
    cfg = canned_config("vibration")
    t0 = time.perf_counter()
    _, ratios, _ = run_reproduce(cfg, tmp_path, threads=1)
    dt = time.perf_counter() - t0
    header, rows = ratios
    i_sp, i_o2 = header.index("spatial"), header.index("st-order-2")
    band_ok, order_ok = True, True
    parts = []
    for row in rows:
        lvl, sp, o2 = row[0], row[i_sp], row[i_o2]
        band_ok &= SPATIAL_BAND[0] <= sp <= SPATIAL_BAND[1] and ORDER2_BAND[0] <= o2 <= ORDER2_BAND[1]
        order_ok &= sp > o2 > 1.0
        parts.append(f"{lvl:g}: {sp:.3f}/{o2:.3f}")
    # near the extrema the linear temporal model is under-matched
    early = {}
    for method, level, e in read_metrics_csv(tmp_path / "metrics" / "metrics.csv"):
        if e.frame * cfg.motion.frame_interval < 1.0:
            early.setdefault((method, level), []).append(e.mean_l1_u)
    under_ok = all(np.mean(early[("st-order-2", lvl)]) < np.mean(early[("st-order-1", lvl)])
                   for lvl in cfg.noise.levels)
    ok = band_ok and order_ok and under_ok and dt < BUDGET_6
    acceptance(_line(6, ok, f"ratios spatial/order-2 vs order-1 (v, t > 1 s) "
                            f"{'; '.join(parts)}; bands [{band_ok}], ordering [{order_ok}], "
                            f"order-2 < order-1 for t < 1 s [{under_ok}]; {dt:.1f} s"))
    assert ok


# --- 7 ------------------------------------------------------------------------

@pytest.mark.slow
def test_criterion_7_expansion(acceptance, tmp_path):
    cfg = canned_config("expansion")
    t0 = time.perf_counter()
    _, _, fits = run_reproduce(cfg, tmp_path, threads=1)
    dt = time.perf_counter() - t0
    st = [f for f in fits if f[0] == "st-order-1"]
    fit_ok = len(st) == 2 and all(
        abs(fit.slope / TRUE_RATE - 1) < SLOPE_REL_TOL and fit.r_squared > R2_MIN
        for _, _, _, fit in st)
    sds = {}
    lines = (tmp_path / "metrics" / "strain.csv").read_text().splitlines()[1:]
    for line in lines:
        frame, method, _, _, sd_ux, _, sd_vy, _ = line.split(",")
        sds.setdefault(method, []).append((float(sd_ux), float(sd_vy)))
    sd_sp = np.mean(sds["spatial"], axis=0)
    sd_st = np.mean(sds["st-order-1"], axis=0)
    sd_ok = bool(np.all(sd_st <= sd_sp))
    ok = fit_ok and sd_ok and dt < BUDGET_7
    desc = ", ".join(f"{comp} slope/true {fit.slope / TRUE_RATE:.4f} R2 {fit.r_squared:.5f}"
                     for _, _, comp, fit in st)
    acceptance(_line(7, ok, f"ST-DIC {desc} [{fit_ok}]; strain SD ux/vy ST "
                            f"{sd_st[0]:.2e}/{sd_st[1]:.2e} vs spatial "
                            f"{sd_sp[0]:.2e}/{sd_sp[1]:.2e} [{sd_ok}]; {dt:.1f} s"))
    assert ok
