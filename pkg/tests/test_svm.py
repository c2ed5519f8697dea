import numpy as np
import pytest

from hodlrdd import get_kernel
from hodlrdd.errors import ConvergenceError, HodlrError
from hodlrdd.svm import (
    KernelProduct,
    SvmDataset,
    SvmModel,
    evaluate,
    generate_synthetic,
    gradient,
    load_dataset,
    save_dataset,
    step_bound,
    train,
)


def test_1d_labels_are_signs():
    ds = generate_synthetic(4, 1, seed=3)
    assert ds.points.shape == (4, 1)
    np.testing.assert_array_equal(ds.labels, np.where(ds.points[:, 0] >= 0, 1, -1))


def test_4d_sizes_and_split():
    ds = generate_synthetic(8, 4, seed=0)
    assert ds.points.shape == (4096, 4)
    assert np.all(np.abs(ds.points) <= 1)
    assert set(np.unique(ds.labels)) == {-1, 1}
    assert abs(ds.test.size - 0.15 * 4096) <= 2  # one per class of rounding
    for c in (-1, 1):
        n_c = np.sum(ds.labels == c)
        n_test = np.sum(ds.labels[ds.test] == c)
        assert abs(n_test - 0.15 * n_c) <= 1
    assert np.intersect1d(ds.train, ds.test).size == 0
    assert np.union1d(ds.train, ds.test).size == 4096


def test_tensor_grid_structure():
    ds = generate_synthetic(5, 3, seed=1)
    for k in range(3):
        assert np.unique(ds.points[:, k]).size == 5


def test_deterministic():
    a, b = generate_synthetic(6, 3, seed=11), generate_synthetic(6, 3, seed=11)
    np.testing.assert_array_equal(a.points, b.points)
    np.testing.assert_array_equal(a.train, b.train)
    c = generate_synthetic(6, 3, seed=12)
    assert not np.array_equal(a.points, c.points)


def test_bad_generation_arguments():
    with pytest.raises(ValueError):
        generate_synthetic(1, 2)
    with pytest.raises(ValueError):
        generate_synthetic(3, 0)


def test_dataset_validation():
    pts = np.zeros((3, 1))
    with pytest.raises(ValueError):
        SvmDataset(pts, np.array([1, 0, -1]), np.array([0, 1]), np.array([2]))
    with pytest.raises(ValueError):
        SvmDataset(pts, np.array([1, 1, -1]), np.array([0, 1]), np.array([1, 2]))
    with pytest.raises(ValueError):
        SvmDataset(pts, np.array([1, 1, -1]), np.array([0]), np.array([2]))


def _model(ds, alpha, beta=1.0, kernel="exp_neg_r"):
    return SvmModel(alpha, 0.0, 10.0, 1e-3, beta, get_kernel(kernel), 0,
                    ds.x_train, ds.y_train)


def test_gradient_at_zero():
    ds = generate_synthetic(5, 2, seed=0)
    g = gradient(_model(ds, np.zeros(ds.train.size)), ds)
    np.testing.assert_array_equal(g, 1.0)


def test_gradient_single_point_no_penalty():
    pts = np.array([[0.2, -0.4], [0.5, 0.5]])
    ds = SvmDataset(pts, np.array([1, -1]), np.array([0]), np.array([1]))
    m = _model(ds, np.array([0.7]), beta=0.0)
    g = gradient(m, ds)
    # K(x, x) = 1 for exp(-r)
    np.testing.assert_allclose(g, [1.0 - 1.0 * 0.7], rtol=1e-15)


def test_gradient_formula_dense_oracle():
    ds = generate_synthetic(6, 2, seed=2)
    rng = np.random.default_rng(0)
    alpha = rng.uniform(0, 2, ds.train.size)
    beta = 0.5
    x, y = ds.x_train, ds.y_train
    r = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    k = np.exp(-r)
    v = y * alpha
    expected = 1 - y * (k @ v) - beta * v.sum() * y
    np.testing.assert_allclose(gradient(_model(ds, alpha, beta), ds), expected, rtol=1e-12, atol=1e-12)


def test_fast_vs_dense_gradient():
    ds = generate_synthetic(15, 2, seed=4)  # 225 points, about 190 training
    alpha = np.random.default_rng(1).uniform(0, 1, ds.train.size)
    m = _model(ds, alpha)
    gd = gradient(m, ds, fast=False)
    gf = gradient(m, ds, fast=True, n_max=20, epsilon=1e-10)
    assert np.linalg.norm(gf - gd) <= 1e-6 * np.linalg.norm(gd)


def test_iters_zero():
    ds = generate_synthetic(4, 2, seed=0)
    m = train(ds, iters=0)
    np.testing.assert_array_equal(m.alpha, 0.0)
    assert m.bias == 0.0 and m.iterations == 0


def test_projection_invariant_every_step():
    ds = generate_synthetic(7, 2, seed=5)
    seen = []

    def check(it, alpha):
        seen.append(it)
        assert alpha.min() >= 0.0 and alpha.max() <= 0.5

    train(ds, lam=0.5, eta=0.05, iters=60, callback=check, cap_eta=False)
    assert seen == list(range(60))


def test_toy_1d_separable():
    pts = np.linspace(-1, 1, 12)[:, None]
    pts = pts[np.abs(pts[:, 0]) > 0.1]  # 10 points, gap at the origin
    labels = np.where(pts[:, 0] > 0, 1, -1)
    ds = SvmDataset(pts, labels, np.arange(10), np.array([], dtype=int))
    m = train(ds, iters=500)
    assert np.mean(m.predict(ds.x_train) == labels) == 1.0


def test_all_positive_model_half_accuracy():
    pts = np.array([[-0.5], [-0.2], [0.3], [0.6]])
    ds = SvmDataset(pts, np.array([-1, -1, 1, 1]), np.array([0, 3]), np.array([1, 2]))
    m = SvmModel(np.zeros(2), 1.0, 10.0, 1e-3, 1.0, get_kernel("exp_neg_r"), 0,
                 ds.x_train, ds.y_train)
    s = evaluate(m, ds)
    assert s.oa == 50.0 and s.a1 == 100.0 and s.a2 == 0.0


def test_empty_class_accuracy_absent():
    pts = np.array([[-0.5], [0.3], [0.6]])
    ds = SvmDataset(pts, np.array([-1, 1, 1]), np.array([0, 1]), np.array([2]))
    s = evaluate(train(ds, iters=10), ds)
    assert s.a2 is None and s.a1 is not None


def test_decision_ignores_training_diagonal():
    ds = generate_synthetic(5, 2, seed=8)
    alpha = np.random.default_rng(3).uniform(0, 1, ds.train.size)
    a = _model(ds, alpha, kernel="exp_neg_r")
    b = SvmModel(alpha, 0.0, 10.0, 1e-3, 1.0, get_kernel("exp_neg_r", diagonal_value=5.0), 0,
                 ds.x_train, ds.y_train)
    np.testing.assert_array_equal(a.predict(ds.x_test), b.predict(ds.x_test))


def test_divergence_detected():
    # log r is not positive definite: with an effectively open box and a large
    # step the ascent runs away
    ds = generate_synthetic(6, 2, seed=0)
    with pytest.raises(ConvergenceError, match="diverged"):
        train(ds, kernel="log_r", lam=1e12, eta=10.0, iters=200, beta=0.0, cap_eta=False)


def test_step_cap_applied_for_large_sets():
    ds = generate_synthetic(7, 4, seed=0)
    op = KernelProduct(ds.x_train, get_kernel("exp_neg_r"), False)
    bound = step_bound(ds.y_train, op, 1.0)
    # oracle: dense eigenvalue of Y K Y + y y^T
    y = ds.y_train
    x = ds.x_train
    k = np.exp(-np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1)))
    top = np.linalg.eigvalsh(y[:, None] * k * y[None] + np.outer(y, y))[-1]
    assert top <= bound <= 1.1 * top
    m = train(ds, iters=1, operator=op)
    assert m.eta == pytest.approx(1.0 / bound)
    assert train(ds, iters=1, operator=op, cap_eta=False).eta == 1e-3


def test_bad_hyperparameters():
    ds = generate_synthetic(3, 1)
    for kw in (dict(lam=0.0), dict(eta=-1.0), dict(beta=-1.0), dict(iters=-1)):
        with pytest.raises(ValueError):
            train(ds, **kw)


def test_csv_round_trip(tmp_path):
    ds = generate_synthetic(4, 3, seed=9)
    path = tmp_path / "ds.csv"
    save_dataset(ds, path)
    header = path.read_text().splitlines()[0]
    assert header == "x0,x1,x2,label,split"
    back = load_dataset(path)
    np.testing.assert_array_equal(back.points, ds.points)
    np.testing.assert_array_equal(back.labels, ds.labels)
    np.testing.assert_array_equal(back.train, ds.train)
    np.testing.assert_array_equal(back.test, ds.test)


def test_separator_degenerate_raises():
    with pytest.raises(HodlrError):
        generate_synthetic(2, 1, seed=0, attempts=0)


def test_accuracy_4d_matern_large():
    ds = generate_synthetic(8, 4, seed=0)
    m = train(ds, kernel="exp_neg_r", iters=1000, fast=False)
    assert evaluate(m, ds).oa >= 90.0


def test_fast_and_dense_training_agree():
    ds = generate_synthetic(6, 4, seed=1)  # 1296 points
    checked = []
    dense = KernelProduct(ds.x_train, get_kernel("exp_neg_r"), False)
    fast = KernelProduct(ds.x_train, get_kernel("exp_neg_r"), True, epsilon=1e-10, n_max=100)
    y = ds.y_train

    mf = train(ds, iters=50, operator=fast)

    def compare(it, alpha):
        if it % 10 == 0:
            gd = 1 - y * dense(y * alpha) - (y * alpha).sum() * y
            gf = 1 - y * fast(y * alpha) - (y * alpha).sum() * y
            checked.append(np.linalg.norm(gf - gd) / np.linalg.norm(gd))

    md = train(ds, iters=50, operator=dense, callback=compare)
    assert len(checked) == 5 and max(checked) <= 1e-9
    assert np.abs(mf.alpha - md.alpha).max() <= 1e-4 * np.abs(md.alpha).max()
