import numpy as np
import pytest
from hypothesis import given, strategies as st

from stdic.errors import SingularWarp, StdicError, UnsupportedSpec
from stdic.shapefn import (MONOMIALS, ParamSet, ShapeFunctionSpec, WarpMatrix, basis_at, compose,
                           extended_coords, from_warp, invert, shape_jacobian, to_warp,
                           warp_coords, warp_generators, warp_point)

S10 = ShapeFunctionSpec(1, 0, frozenset(), 1)
S11 = ShapeFunctionSpec(1, 1, frozenset(), 3)
S11X = ShapeFunctionSpec(1, 1, {"xt", "yt"}, 5)
S12 = ShapeFunctionSpec(1, 2, frozenset(), 5)
S22 = ShapeFunctionSpec(2, 2, frozenset(), 5)
S00 = ShapeFunctionSpec(0, 0, frozenset(), 1)
S01 = ShapeFunctionSpec(0, 1, frozenset(), 3)
WARP_SPECS = [S10, S11, S11X, S12, S00, S01]
ALL_SPECS = WARP_SPECS + [S22, ShapeFunctionSpec(2, 0, frozenset(), 1)]


def _random_params(spec, rng, scale=0.05):
    return ParamSet.from_vector(spec, rng.uniform(-scale, scale, spec.n_params))


def test_ordering_table():
    names = [m[0] for m in MONOMIALS]
    assert names == ["1", "x", "y", "t", "xt", "yt", "xx", "xy", "yy", "tt"]
    for spec in ALL_SPECS:
        active = list(spec.monomials)
        assert active[0] == "1"
        assert active == [n for n in names if n in active]
        assert spec.names()[:spec.k][0] == "u" and spec.names()[spec.k] == "v"


def test_basis_examples():
    np.testing.assert_array_equal(basis_at(S10, 2, 3, 0), [1, 2, 3])
    np.testing.assert_array_equal(basis_at(S11X, 1, -2, 2), [1, 1, -2, 2, 2, -4])
    assert S22.monomials == ("1", "x", "y", "t", "xx", "xy", "yy", "tt")
    np.testing.assert_array_equal(basis_at(S22, 1, 1, 1), np.ones(8))
    np.testing.assert_array_equal(basis_at(S22, 2, 3, -1), [1, 2, 3, -1, 4, 6, 9, 1])


def test_spec_validation():
    with pytest.raises(StdicError):
        ShapeFunctionSpec(1, 1, frozenset(), 1)
    with pytest.raises(StdicError):
        ShapeFunctionSpec(1, 0, {"xt"}, 1)
    with pytest.raises(StdicError):
        ShapeFunctionSpec(1, 0, frozenset(), 4)
    with pytest.raises(StdicError):
        ShapeFunctionSpec(3, 0)
    with pytest.raises(StdicError):
        ShapeFunctionSpec(1, 0, {"zt"}, 3)
    assert S11X.k == 6 and S11X.n_params == 12 and S11X.half_window == 2


def test_param_names():
    assert S11X.names() == ["u", "ux", "uy", "ut", "uxt", "uyt",
                            "v", "vx", "vy", "vt", "vxt", "vyt"]
    p = ParamSet.from_dict(S11, {"u": 0.5, "vt": -0.1})
    assert p["u"] == 0.5 and p["vt"] == -0.1 and p["ux"] == 0.0
    assert p.displacement == (0.5, 0.0)
    with pytest.raises(StdicError):
        ParamSet.from_dict(S10, {"ut": 1.0})
    with pytest.raises(StdicError):
        ParamSet(S10, [0.0] * 2, [0.0] * 3)


def test_warp_point_examples():
    p = ParamSet.from_dict(S11, {"u": 0.5, "ut": 0.1})
    x, y = warp_point(p, 0.0, 0.0, 1.0)
    assert x == pytest.approx(0.6, abs=1e-15) and y == 0.0
    x, _ = warp_point(p, 0.0, 0.0, 2.0)
    assert x == pytest.approx(0.7, abs=1e-15)
    z = ParamSet.zero(S11X)
    x, y = warp_point(z, np.array([1.5, -3.0]), np.array([2.0, 4.0]), np.array([1.0, -2.0]))
    np.testing.assert_array_equal(x, [1.5, -3.0])
    np.testing.assert_array_equal(y, [2.0, 4.0])


def test_warp_point_matches_affine_matrix():
    rng = np.random.default_rng(0)
    vec = rng.normal(0, 0.3, 6)
    p = ParamSet.from_vector(S10, vec)
    u, ux, uy, v, vx, vy = vec
    m = np.array([[1 + ux, uy, u], [vx, 1 + vy, v]])
    pts = rng.uniform(-15, 15, (100, 2))
    x, y = warp_point(p, pts[:, 0], pts[:, 1])
    ref = (m @ np.c_[pts, np.ones(100)].T).T
    np.testing.assert_allclose(x, ref[:, 0], atol=1e-12)
    np.testing.assert_allclose(y, ref[:, 1], atol=1e-12)


def test_shape_jacobian_examples():
    j = shape_jacobian(S10, 4.0, -2.0)
    np.testing.assert_array_equal(j, [[1, 4, -2, 0, 0, 0], [0, 0, 0, 1, 4, -2]])
    for spec in ALL_SPECS:
        j = shape_jacobian(spec, 0.0, 0.0, 0.0)
        expect = np.zeros((2, 2 * spec.k))
        expect[0, 0] = expect[1, spec.k] = 1.0
        np.testing.assert_array_equal(j, expect)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=str)
def test_shape_jacobian_finite_difference(spec):
    rng = np.random.default_rng(1)
    p = _random_params(spec, rng)
    dx, dy, dt = 3.0, -5.0, float(spec.half_window)
    j = shape_jacobian(spec, dx, dy, dt)
    h = 1e-6
    for i in range(spec.n_params):
        e = np.zeros(spec.n_params)
        e[i] = h
        a = np.array(warp_point(ParamSet.from_vector(spec, p.as_vector() + e), dx, dy, dt))
        b = np.array(warp_point(ParamSet.from_vector(spec, p.as_vector() - e), dx, dy, dt))
        fd = (a - b) / (2 * h)
        np.testing.assert_allclose(fd, j[:, i], rtol=1e-10, atol=1e-8)


def test_identity_warp():
    for spec in WARP_SPECS:
        w = to_warp(ParamSet.zero(spec))
        np.testing.assert_array_equal(w.matrix, np.eye(w.matrix.shape[0]))
        np.testing.assert_array_equal(invert(w).matrix, np.eye(w.matrix.shape[0]))


def test_affine_warp_matrix():
    p = ParamSet.from_vector(S10, [0.3, 0.01, -0.02, -0.4, 0.03, 0.04])
    expected = np.array([[1, 0, 0], [0.3, 1.01, -0.02], [-0.4, 0.03, 1.04]])
    np.testing.assert_allclose(to_warp(p).matrix, expected, atol=1e-15)


def test_spatial_temporal_warp_matrix_rows():
    names = S11X.names()
    vals = dict(zip(names, [0.3, 0.01, -0.02, 0.05, 0.004, -0.003,
                            -0.4, 0.03, 0.04, -0.06, 0.002, 0.001]))
    w = to_warp(ParamSet.from_dict(S11X, vals)).matrix
    u, ux, uy, ut, uxt, uyt = (vals[n] for n in names[:6])
    v, vx, vy, vt, vxt, vyt = (vals[n] for n in names[6:])
    # extended coordinate [1, x, y, t, xt, yt]
    expected = np.array([
        [1, 0, 0, 0, 0, 0],
        [u, 1 + ux, uy, ut, uxt, uyt],
        [v, vx, 1 + vy, vt, vxt, vyt],
        [0, 0, 0, 1, 0, 0],
        [0, 0, 0, u, 1 + ux, uy],
        [0, 0, 0, v, vx, 1 + vy],
    ])
    for row in range(6):
        np.testing.assert_allclose(w[row], expected[row], atol=1e-15)


@pytest.mark.parametrize("spec", WARP_SPECS, ids=str)
def test_param_roundtrip_exact(spec):
    rng = np.random.default_rng(2)
    for _ in range(20):
        p = ParamSet.from_vector(spec, rng.normal(0, 1, spec.n_params))
        assert np.array_equal(from_warp(to_warp(p)).as_vector(), p.as_vector())


@pytest.mark.parametrize("spec", WARP_SPECS, ids=str)
def test_warp_rows_match_warp_point(spec):
    rng = np.random.default_rng(3)
    p = _random_params(spec, rng, 0.5)
    pts = rng.uniform(-15, 15, (50, 2))
    dt = rng.integers(-spec.half_window, spec.half_window + 1, 50).astype(float)
    a = warp_coords(to_warp(p), pts[:, 0], pts[:, 1], dt)
    b = warp_point(p, pts[:, 0], pts[:, 1], dt)
    np.testing.assert_allclose(a[0], b[0], atol=1e-12)
    np.testing.assert_allclose(a[1], b[1], atol=1e-12)


def test_second_order_spatial_unsupported():
    for spec in (S22, ShapeFunctionSpec(2, 0)):
        assert not spec.warp_capable
        with pytest.raises(UnsupportedSpec):
            to_warp(ParamSet.zero(spec))
        with pytest.raises(UnsupportedSpec):
            extended_coords(spec, 0.0, 0.0)


@pytest.mark.parametrize("spec", WARP_SPECS, ids=str)
def test_compose_identity_and_inverse(spec):
    rng = np.random.default_rng(4)
    p = _random_params(spec, rng)
    w = to_warp(p)
    ident = WarpMatrix.identity(spec)
    np.testing.assert_array_equal(compose(w, ident).delta, w.delta)
    back = from_warp(compose(w, invert(w))).as_vector()
    # exact group for affine and pure-time specs, truncated for cross terms
    tol = 1e-12 if not spec.cross_terms else 1e-3
    np.testing.assert_allclose(back, 0.0, atol=tol)


@given(st.lists(st.floats(-0.5, 0.5), min_size=12, max_size=12))
def test_affine_group_closure(vals):
    a = to_warp(ParamSet.from_vector(S10, vals[:6]))
    b = to_warp(ParamSet.from_vector(S10, vals[6:]))
    c = compose(a, b).matrix
    np.testing.assert_allclose(c[0], [1, 0, 0], atol=0)
    if abs(np.linalg.det(b.matrix)) > 1e-6:
        inv = invert(b).matrix
        np.testing.assert_allclose(inv, np.linalg.inv(b.matrix), atol=1e-9)
        np.testing.assert_allclose(from_warp(compose(b, invert(b))).as_vector(), 0, atol=1e-9)


def _function_compose(pa, pb, dx, dy, dt):
    """x -> W_a(W_b(x)): apply b, then a at the warped point (same time)."""
    xb, yb = warp_point(pb, dx, dy, dt)
    return warp_point(pa, xb, yb, dt)


def test_compose_matches_function_composition():
    rng = np.random.default_rng(5)
    pts = rng.uniform(-15, 15, (40, 2))
    dt = rng.integers(-2, 3, 40).astype(float)
    for _ in range(20):
        pa = _random_params(S11X, rng, 1e-4)
        pb = _random_params(S11X, rng, 1e-4)
        c = compose(to_warp(pa), to_warp(pb))
        x, y = warp_coords(c, pts[:, 0], pts[:, 1], dt)
        fx, fy = _function_compose(pa, pb, pts[:, 0], pts[:, 1], dt)
        assert np.max(np.abs(np.r_[x - fx, y - fy])) < 1e-6


def test_compose_truncation_is_second_order():
    rng = np.random.default_rng(6)
    pts = rng.uniform(-15, 15, (40, 2))
    dt = rng.integers(-2, 3, 40).astype(float)
    base_a = rng.uniform(-1, 1, S11X.n_params)
    base_b = rng.uniform(-1, 1, S11X.n_params)
    errs = []
    for s in (1e-2, 1e-3):
        pa = ParamSet.from_vector(S11X, s * base_a)
        pb = ParamSet.from_vector(S11X, s * base_b)
        x, y = warp_coords(compose(to_warp(pa), to_warp(pb)), pts[:, 0], pts[:, 1], dt)
        fx, fy = _function_compose(pa, pb, pts[:, 0], pts[:, 1], dt)
        errs.append(np.max(np.abs(np.r_[x - fx, y - fy])))
    assert errs[1] < errs[0] / 50


@pytest.mark.parametrize("spec", [S10, S12, S00, S01], ids=str)
def test_exact_group_specs_compose_exactly(spec):
    rng = np.random.default_rng(7)
    pts = rng.uniform(-15, 15, (30, 2))
    dt = rng.integers(-spec.half_window, spec.half_window + 1, 30).astype(float)
    pa, pb = _random_params(spec, rng, 0.1), _random_params(spec, rng, 0.1)
    x, y = warp_coords(compose(to_warp(pa), to_warp(pb)), pts[:, 0], pts[:, 1], dt)
    fx, fy = _function_compose(pa, pb, pts[:, 0], pts[:, 1], dt)
    np.testing.assert_allclose(x, fx, atol=1e-12)
    np.testing.assert_allclose(y, fy, atol=1e-12)


def test_invert_restores_structure():
    rng = np.random.default_rng(8)
    w = to_warp(_random_params(S11X, rng, 0.05))
    inv = invert(w).matrix
    assert np.array_equal(inv[0], [1, 0, 0, 0, 0, 0])
    assert np.array_equal(inv[3], [0, 0, 0, 1, 0, 0])
    # cross rows re-derived from the x/y rows
    np.testing.assert_array_equal(inv[4, 3:], inv[1, [0, 1, 2]])
    np.testing.assert_array_equal(inv[5, 3:], inv[2, [0, 1, 2]])
    assert np.all(inv[4, :3] == 0) and np.all(inv[5, :3] == 0)


def test_invert_singular():
    p = ParamSet.from_vector(S10, [0, -1, 0, 0, 0, 0])
    with pytest.raises(SingularWarp):
        invert(to_warp(p))


def test_generators_are_unit_param_warps():
    for spec in WARP_SPECS:
        gens = warp_generators(spec)
        assert gens.shape[0] == spec.n_params
        for j, g in enumerate(gens):
            e = np.zeros(spec.n_params)
            e[j] = 1.0
            assert np.array_equal(from_warp(WarpMatrix(spec, g)).as_vector(), e)
