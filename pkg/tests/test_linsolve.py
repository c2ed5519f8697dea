import numpy as np
import pytest
import scipy.linalg as sla

from hodlrdd.errors import ConvergenceError, GuardError
from hodlrdd.linsolve import (
    Accel,
    GmresConfig,
    IeProblem,
    assemble_ie_operator,
    gmres,
    manufactured_check,
)


def test_identity_one_iteration():
    f = np.random.default_rng(0).standard_normal(30)
    x, it, res = gmres(lambda v: v, f, GmresConfig(tol=1e-12))
    np.testing.assert_allclose(x, f, rtol=1e-14)
    assert it == 1 and res <= 1e-12


def test_diagonal_closed_form():
    a = np.diag(np.arange(1.0, 11.0))
    out = gmres(a, np.ones(10), GmresConfig(tol=1e-10))
    assert out.converged
    np.testing.assert_allclose(out.x, 1.0 / np.arange(1, 11), atol=1e-9)


def test_spd_within_n_iterations():
    rng = np.random.default_rng(1)
    m = rng.standard_normal((50, 50))
    a = m.T @ m + np.eye(50)
    f = rng.standard_normal(50)
    out = gmres(a, f, GmresConfig(tol=1e-8, max_iter=50))
    assert out.converged and out.iterations <= 50
    assert np.linalg.norm(f - a @ out.x) / np.linalg.norm(f) <= 1e-8
    # oracle: direct solve
    np.testing.assert_allclose(out.x, sla.solve(a, f, assume_a="pos"), rtol=1e-5, atol=1e-8)


def test_residual_history_monotone():
    rng = np.random.default_rng(2)
    a = np.eye(80) + 0.3 * rng.standard_normal((80, 80)) / np.sqrt(80)
    out = gmres(a, rng.standard_normal(80), GmresConfig(tol=1e-12))
    h = np.array(out.history)
    assert np.all(np.diff(h) <= 1e-15 * h[:-1] + np.finfo(float).eps)


def test_restart_still_converges():
    rng = np.random.default_rng(3)
    a = np.eye(60) + 0.5 * rng.standard_normal((60, 60)) / np.sqrt(60)
    f = rng.standard_normal(60)
    out = gmres(a, f, GmresConfig(tol=1e-10, max_iter=400, restart=5))
    assert out.converged
    assert np.linalg.norm(f - a @ out.x) <= 1e-9 * np.linalg.norm(f)


def test_max_iter_not_converged():
    rng = np.random.default_rng(4)
    a = np.diag(np.logspace(0, 8, 100))
    out = gmres(a, rng.standard_normal(100), GmresConfig(tol=1e-14, max_iter=3))
    assert not out.converged and out.iterations == 3
    assert out.x.shape == (100,)


def test_breakdown_flag():
    # f lies in a two-dimensional invariant subspace: Arnoldi norm vanishes at step 2
    a = np.diag([2.0, 3.0, 5.0, 7.0])
    f = np.array([1.0, 1.0, 0.0, 0.0])
    out = gmres(a, f, GmresConfig(tol=1e-20))
    assert out.converged and out.iterations == 2
    np.testing.assert_allclose(out.x, [0.5, 1 / 3, 0, 0], atol=1e-14)


def test_zero_rhs():
    out = gmres(np.eye(3), np.zeros(3))
    assert out.converged and out.iterations == 0
    np.testing.assert_array_equal(out.x, 0.0)


def test_operator_with_matvec_attribute():
    class Op:
        def matvec(self, v):
            return 4.0 * v

    x, _, _ = gmres(Op(), np.ones(5), GmresConfig(tol=1e-12))
    np.testing.assert_allclose(x, 0.25)


@pytest.mark.parametrize("kw", [dict(tol=0.0), dict(tol=-1.0), dict(max_iter=0), dict(restart=0)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        GmresConfig(**kw)


def test_problem_invariants():
    p = IeProblem(4, 6)
    assert p.N == 1296 and p.points.shape == (1296, 4)
    assert p.weight == pytest.approx((2 / 6) ** 4)
    assert np.all(np.abs(p.points) < 1)
    assert p.kernel.name == "laplace4d"
    with pytest.raises(ValueError):
        IeProblem(0, 3)


def test_single_cell_is_identity():
    op = assemble_ie_operator(IeProblem(4, 1), "dense")
    np.testing.assert_array_equal(op.matvec(np.array([2.5])), [2.5])
    op = assemble_ie_operator(IeProblem(2, 1), "hodlrdd")
    np.testing.assert_array_equal(op.matvec(np.array([-1.0])), [-1.0])


def test_dense_operator_oracle():
    p = IeProblem(2, 5)
    op = assemble_ie_operator(p, "dense")
    x = np.random.default_rng(5).standard_normal(p.N)
    pts = p.points
    r = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    with np.errstate(divide="ignore"):
        f = np.where(r > 0, -1.0 / (4 * np.pi ** 2 * r ** 2), 0.0)
    np.testing.assert_allclose(op.matvec(x), x + p.weight * f @ x, rtol=1e-12)


@pytest.fixture(scope="module")
def ops_4d():
    p = IeProblem(4, 6)
    return p, assemble_ie_operator(p, "dense"), assemble_ie_operator(p, "hodlrdd", epsilon=1e-6)


def test_dense_and_hodlrdd_agree(ops_4d):
    p, dense, fast = ops_4d
    x = np.random.default_rng(6).standard_normal((p.N, 5))
    for k in range(5):
        a, b = dense.matvec(x[:, k]), fast.matvec(x[:, k])
        assert np.linalg.norm(a - b) <= 1e-5 * np.linalg.norm(a)
        fa, fb = dense.kernel_matvec(x[:, k]), fast.kernel_matvec(x[:, k])
        assert np.linalg.norm(fa - fb) <= 1e-5 * np.linalg.norm(fa)


@pytest.mark.parametrize("accel", ["strong", "weak_all"])
def test_other_policies_agree(accel):
    p = IeProblem(3, 9)
    dense = assemble_ie_operator(p, "dense")
    fast = assemble_ie_operator(p, accel, epsilon=1e-6, n_max=27)
    x = np.random.default_rng(7).standard_normal(p.N)
    assert np.linalg.norm(dense.matvec(x) - fast.matvec(x)) <= 1e-5 * np.linalg.norm(dense.matvec(x))


def test_contraction(ops_4d):
    p, dense, _ = ops_4d
    x = np.random.default_rng(8).standard_normal(p.N)
    x /= np.linalg.norm(x)
    assert np.linalg.norm(p.weight * dense.kernel_matvec(x)) < 1.0


def test_manufactured_dense(ops_4d):
    p, dense, _ = ops_4d
    rep = manufactured_check(p, cfg=GmresConfig(tol=1e-6), operator=dense)
    assert rep.converged and rep.error <= 1e-5
    assert rep.accel == "dense" and rep.N == 1296


def test_manufactured_hodlrdd(ops_4d):
    p, _, fast = ops_4d
    rep = manufactured_check(p, cfg=GmresConfig(tol=1e-6), operator=fast)
    assert rep.error <= 1e-4


def test_error_tracks_tolerance(ops_4d):
    p, _, fast = ops_4d
    errs = [manufactured_check(p, cfg=GmresConfig(tol=t), operator=fast).error
            for t in (1e-2, 1e-4, 1e-6)]
    for e, t in zip(errs, (1e-2, 1e-4, 1e-6)):
        assert t / 100 <= e <= 10 * t
    assert errs[0] > errs[1] > errs[2]


def test_non_convergence_propagates(ops_4d):
    p, _, fast = ops_4d
    with pytest.raises(ConvergenceError):
        manufactured_check(p, cfg=GmresConfig(tol=1e-12, max_iter=1), operator=fast)


def test_dense_cap():
    with pytest.raises(GuardError):
        assemble_ie_operator(IeProblem(2, 10), "dense", dense_cap=100)


def test_accel_parse():
    assert Accel.parse("HODLRdD") is Accel.HODLRDD
    assert Accel.parse("weak-all") is Accel.WEAK_ALL
    assert Accel.parse("h") is Accel.STRONG
    assert Accel.DENSE.policy is None
    with pytest.raises(ValueError):
        Accel.parse("fmm")
