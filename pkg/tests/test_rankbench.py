import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hodlrdd import rankbench as rb
from hodlrdd.chebyshev import min_interpolation_rank
from hodlrdd.errors import GuardError, NumericalError
from hodlrdd.geometry import HyperCube
from hodlrdd.kernels import get_kernel


def within_envelope(got, want):
    return abs(got - want) <= max(3, 0.1 * want)


# -- geometry -----------------------------------------------------------------

def test_far_1d_geometry():
    g = rb.pair_geometry(1, "far", 4)
    assert g.X_points.shape == g.Y_points.shape == (4, 1)
    assert np.all((g.X_points >= -2) & (g.X_points <= -1))
    assert np.all((g.Y_points >= 0) & (g.Y_points <= 1))
    np.testing.assert_allclose(g.Y_points[:, 0], [0.2, 0.4, 0.6, 0.8])
    np.testing.assert_allclose(g.Y_points - g.X_points, 2.0)
    assert g.d_prime is None and g.N == 4


def test_vertex_2d_geometry():
    g = rb.pair_geometry(2, "surface:0", 3)
    assert np.all((g.X_points > -1) & (g.X_points < 0))
    assert np.all((g.Y_points > 0) & (g.Y_points < 1))
    assert g.N == 9 and g.d_prime == 0


def test_face_3d_geometry():
    g = rb.pair_geometry(3, "face", 2)
    assert g.d_prime == 2
    x, y = g.X_points, g.Y_points
    # X = [-1,0] x [0,1]^2: boxes share the square x0 = 0
    assert np.all((x[:, 0] > -1) & (x[:, 0] < 0))
    assert np.all((x[:, 1:] > 0) & (x[:, 1:] < 1))
    np.testing.assert_allclose(y[:, 1:], x[:, 1:])


def test_center_and_random_modes():
    c = rb.pair_geometry(1, "far", 4, mode="center")
    np.testing.assert_allclose(c.Y_points[:, 0], [0.125, 0.375, 0.625, 0.875])
    r1 = rb.pair_geometry(2, "vertex", 5, mode="random", seed=3)
    r2 = rb.pair_geometry(2, "vertex", 5, mode="random", seed=3)
    np.testing.assert_array_equal(r1.X_points, r2.X_points)
    assert r1.X_points.shape == (25, 2)
    with pytest.raises(ValueError):
        rb.pair_geometry(1, "far", 4, mode="chebyshev")


@pytest.mark.parametrize("args", [(2, "surface:2", 3), (1, "edge", 3), (5, "far", 2),
                                  (2, "far", 1), (2, "surface:-1", 3), (2, "bogus", 3)])
def test_geometry_errors(args):
    with pytest.raises(ValueError):
        rb.pair_geometry(*args)


def test_interaction_labels():
    assert rb.parse_interaction("far") is None
    assert rb.parse_interaction("vertex") == 0
    assert rb.parse_interaction("surface:3") == 3
    assert rb.interaction_label(None) == "far"
    assert rb.interaction_label(1) == "surface:1"


# -- epsilon rank ---------------------------------------------------------------

def test_rank_one_outer_product():
    rng = np.random.default_rng(0)
    a = np.outer(rng.standard_normal(30), rng.standard_normal(20))
    assert rb.epsilon_rank(a, 1e-12) == 1
    assert rb.epsilon_rank_formal(a, 1e-12) == 2


def test_identity():
    for eps in (1e-12, 0.5, 0.999):
        assert rb.epsilon_rank(np.eye(5), eps) == 5
        assert rb.epsilon_rank_formal(np.eye(5), eps) == 5


def test_count_convention_oracle():
    s = np.array([1.0, 1e-3, 1e-9, 1e-13])
    rng = np.random.default_rng(1)
    q1, _ = np.linalg.qr(rng.standard_normal((6, 4)))
    q2, _ = np.linalg.qr(rng.standard_normal((5, 4)))
    a = q1 @ np.diag(s) @ q2.T
    assert rb.epsilon_rank(a, 1e-12) == 3
    assert rb.epsilon_rank_formal(a, 1e-12) == 4
    assert rb.epsilon_rank(a, 1e-6) == 2


def test_non_finite_and_zero():
    a = np.ones((3, 3))
    a[1, 1] = np.nan
    with pytest.raises(NumericalError):
        rb.epsilon_rank(a, 1e-12)
    with pytest.raises(NumericalError):
        rb.epsilon_rank(np.zeros((3, 3)), 1e-12)
    with pytest.raises(ValueError):
        rb.epsilon_rank(np.zeros((0, 3)), 1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-14, 1e-1), st.floats(1e-14, 1e-1), st.integers(0, 1000))
def test_monotone_in_epsilon(e1, e2, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((20, 20)) @ np.diag(np.logspace(0, -14, 20)) @ rng.standard_normal((20, 20))
    lo, hi = sorted((e1, e2))
    assert rb.epsilon_rank(a, lo) >= rb.epsilon_rank(a, hi)


def test_far_1d_log_rank():
    g = rb.pair_geometry(1, "far", 1000)
    assert rb.block_rank(g, "log_r")[0] == 7


def test_f8_separable_rank_one():
    g = rb.pair_geometry(1, "far", 1000)
    assert rb.block_rank(g, "F8")[0] == 1


@pytest.mark.parametrize("d,inter,n,want", [(1, "vertex", 1000, 22), (2, "edge", 40, 216),
                                            (3, "face", 10, 312)])
def test_reference_cells(d, inter, n, want):
    g = rb.pair_geometry(d, inter, n)
    got, method = rb.block_rank(g, "one_over_r")
    assert method == "dense"
    assert within_envelope(got, want)


def test_complex_family():
    # F3 is the Hankel pair J2 + i Y2; the rank must be at least that of one part
    g = rb.pair_geometry(1, "far", 500)
    r = rb.block_rank(g, "F3")[0]
    r_re = rb.block_rank(g, "hankel2_real")[0]
    assert r >= r_re and within_envelope(r, 7)


def test_sketch_matches_dense():
    g = rb.pair_geometry(2, "vertex", 40)
    dense, _ = rb.block_rank(g, "one_over_r", method="dense")
    sketch, _ = rb.block_rank(g, "one_over_r", method="sketch")
    assert abs(dense - sketch) <= 1
    with pytest.raises(ValueError):
        rb.block_rank(g, "one_over_r", method="qr")


# -- tables and CSV -------------------------------------------------------------

def test_rank_table_and_csv(tmp_path):
    recs, skipped = rb.rank_table(["log_r", "F2"], "far", 1, [100, 400], guard={1: 200})
    assert [(r.kernel, r.N) for r in recs] == [("log_r", 100), ("F2", 100)]
    assert len(skipped) == 2 and "guard" in skipped[0][2]
    path = tmp_path / "ranks.csv"
    rb.write_rank_csv(recs, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == rb.CSV_FIELDS
    assert rows[0]["interaction"] == "far" and rows[0]["dprime"] == ""
    assert all(1 <= int(r["rank"]) <= int(r["N"]) for r in rows)
    series = rb.plot_series(recs)
    assert series[("log_r", 1, "far")] == [(100, recs[0].rank)]


def test_rank_table_perfect_power():
    with pytest.raises(ValueError):
        rb.rank_table(["log_r"], "vertex", 2, [1000])


def test_reference_series_lookup():
    s = rb.reference_series(2, "edge", "F2")
    assert s[0] == (1600, 99) and s[-1] == (40000, 423)
    with pytest.raises(ValueError):
        rb.reference_series(2, "face", "F1")


# -- growth fits ----------------------------------------------------------------

def test_fit_far_field_constant():
    n, r = zip(*rb.reference_series(2, "far", "F1"))
    fit = rb.fit_growth(n, r)
    assert fit.best == "constant" and fit.spread <= 1.3


def test_fit_vertex_log():
    n, r = zip(*rb.reference_series(2, "vertex", "F1"))
    fit = rb.fit_growth(n, r)
    assert fit.best == "log"
    assert fit.residuals["log"] < fit.residuals["power"]
    assert fit.exponent < 0.2


def test_fit_edge_exponent():
    n, r = zip(*rb.reference_series(2, "edge", "F2"))
    fit = rb.fit_growth(n, r)
    assert fit.best == "power"
    assert abs(fit.exponent - 0.5) <= 0.1


def test_fit_synthetic_oracles():
    n = np.array([100, 400, 1600, 6400, 25600])
    assert rb.fit_growth(n, 3 + 2 * np.log(n)).best == "log"
    fit = rb.fit_growth(n, 0.7 * n ** 0.5)
    assert fit.best == "power" and fit.exponent == pytest.approx(0.5, abs=1e-6)
    np.testing.assert_allclose(fit.predict(n), 0.7 * n ** 0.5, rtol=1e-6)


def test_fit_drops_saturated_and_refuses_short():
    with pytest.raises(ValueError):
        rb.fit_growth([10, 20, 30], [1, 2, 3])
    # N=8 with rank 8 is saturated and removed, leaving three points
    with pytest.raises(ValueError):
        rb.fit_growth([8, 100, 200, 300], [8, 5, 5, 5])
    with pytest.raises(ValueError):
        rb.fit_growth([1, 2, 3, 4], [1, 1])


# -- max-norm rank --------------------------------------------------------------

def test_max_norm_rank_examples():
    rng = np.random.default_rng(2)
    a = np.outer(rng.standard_normal(10), rng.standard_normal(12))
    assert rb.max_norm_rank(a, 1e-10) == 1
    delta = 0.1
    assert rb.max_norm_rank(np.diag([1.0, delta / 2]), delta) == 1
    assert rb.max_norm_rank(np.zeros((3, 3)), 0.1) == 0


def test_max_norm_rank_bounded_by_spectral():
    rng = np.random.default_rng(3)
    for _ in range(5):
        a = rng.standard_normal((50, 6)) @ rng.standard_normal((6, 50)) + 1e-6 * rng.standard_normal((50, 50))
        scale = np.abs(a).max()
        s = np.linalg.svd(a, compute_uv=False)
        prev = None
        for delta in (1e-2, 1e-5, 1e-8):
            r = rb.max_norm_rank(a, delta)
            # truncation at the spectral count has max error <= sigma_{k+1} < delta*scale
            k = int(np.sum(s >= delta * scale))
            assert r <= max(k, 1)
            assert prev is None or r >= prev
            prev = r


def test_max_norm_guard():
    with pytest.raises(GuardError):
        rb.max_norm_rank(np.ones((1001, 1000)), 0.1)


@pytest.mark.parametrize("d,n", [(1, 400), (2, 20)])
def test_chebyshev_bound_on_max_norm_rank(d, n):
    g = rb.pair_geometry(d, "far", n)
    spec = get_kernel("log_r")
    k = spec.block(g.X_points, g.Y_points)
    delta = 1e-8
    res = min_interpolation_rank(spec, g.X_points, g.Y_points, HyperCube((0.0,) * d, 1.0), delta)
    assert res is not None
    assert res[1] >= rb.max_norm_rank(k, delta)
