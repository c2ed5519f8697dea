"""Binary kernel SVM trained by projected gradient ascent on the dual.

Each step needs one kernel product ``K v`` with ``v = y * alpha``.  The
dense variant multiplies by the stored Gram matrix; the fast variant builds
a hierarchical operator over the training points once and reuses it.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, HodlrError
from .geometry import AdmissibilityPolicy, HyperCube
from .hmatrix import dense_matvec, initialize
from .kernels import KernelSpec, get_kernel

__all__ = [
    "SvmDataset",
    "SvmModel",
    "SvmScores",
    "KernelProduct",
    "generate_synthetic",
    "gradient",
    "train",
    "step_bound",
    "evaluate",
    "save_dataset",
    "load_dataset",
]

DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True, eq=False)
class SvmDataset:
    points: np.ndarray
    labels: np.ndarray
    train: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if not np.all(np.isin(lab, (-1, 1))):
            raise ValueError("labels must be +1 or -1")
        tr, te = np.asarray(self.train), np.asarray(self.test)
        if np.intersect1d(tr, te).size:
            raise ValueError("train and test overlap")
        if tr.size + te.size != lab.size or np.union1d(tr, te).size != lab.size:
            raise ValueError("train and test must partition the points")

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def x_train(self):
        return self.points[self.train]

    @property
    def y_train(self):
        return self.labels[self.train].astype(float)

    @property
    def x_test(self):
        return self.points[self.test]

    @property
    def y_test(self):
        return self.labels[self.test].astype(float)


def separator(points: np.ndarray, offset: float = 0.0) -> np.ndarray:
    """``s(x) = sum_k x_k - offset``."""
    return points.sum(axis=1) - offset


def _stratified_split(labels: np.ndarray, rng, test_fraction: float):
    train, test = [], []
    for c in (1, -1):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_test = int(round(test_fraction * idx.size))
        if idx.size > 1:
            n_test = min(max(n_test, 1), idx.size - 1)
        else:
            n_test = 0
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def generate_synthetic(n_per_dim: int, d: int, seed: int = 0, test_fraction: float = 0.15,
                       attempts: int = 5) -> SvmDataset:
    """Tensor grid of ``n_per_dim`` random coordinates per axis in ``[-1, 1]``,
    labelled by the sign of :func:`separator`, split 85/15 within each class."""
    if n_per_dim < 2 or d < 1:
        raise ValueError("need n_per_dim >= 2 and d >= 1")
    rng = np.random.default_rng(seed)
    axes = [np.sort(rng.uniform(-1.0, 1.0, n_per_dim)) for _ in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    offset = 0.0
    for _ in range(attempts):
        labels = np.where(separator(pts, offset) >= 0, 1, -1)
        if np.unique(labels).size == 2:
            train, test = _stratified_split(labels, rng, test_fraction)
            return SvmDataset(pts, labels, train, test)
        # shift the separator towards the data median and try again
        offset = float(np.median(separator(pts))) + rng.uniform(-1e-3, 1e-3)
    raise HodlrError(f"could not produce two non-empty classes in {attempts} attempts")


class KernelProduct:
    """``v -> K(X, X) v`` over training points, dense or hierarchical.

    The hierarchical operator caches its low-rank panels by default since it
    is applied once per training step.
    """

    def __init__(self, points: np.ndarray, kernel: KernelSpec, fast: bool, *,
                 epsilon: float = 1e-10, n_max: int = 500, policy="weak_dd", workers: int = 1,
                 cache_panels: bool = True):
        t0 = time.perf_counter()
        self.fast = fast
        self.report = None
        if fast:
            pad = 1e-9
            lo = points.min(axis=0) - pad
            side = float((points.max(axis=0) - lo).max()) + 2 * pad
            domain = HyperCube(tuple(lo), side)
            self._H, self.report = initialize(points, domain, kernel, AdmissibilityPolicy.parse(policy),
                                              n_max, epsilon, workers=workers,
                                              cache_panels=cache_panels)
            self._apply = self._H.matvec
        else:
            mat = kernel.block(points, points)
            self._apply = lambda v: mat @ v
        self.build_seconds = time.perf_counter() - t0

    def __call__(self, v):
        return self._apply(v)


@dataclass
class SvmModel:
    alpha: np.ndarray
    bias: float
    lam: float
    eta: float
    beta: float
    kernel: KernelSpec
    iterations: int
    support_points: np.ndarray = field(repr=False)
    support_labels: np.ndarray = field(repr=False)
    iter_seconds: float = 0.0
    build_seconds: float = 0.0

    def decision(self, x: np.ndarray) -> np.ndarray:
        """``f(x) = sum_i alpha_i y_i K(x_i, x) + b``."""
        w = self.alpha * self.support_labels
        return dense_matvec(self.kernel, x, self.support_points, w) + self.bias

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.where(self.decision(x) >= 0, 1, -1)


def _grad(alpha, y, kv_op, beta):
    v = y * alpha
    kv = kv_op(v)
    return 1.0 - y * kv - beta * v.sum() * y, kv


def gradient(model: SvmModel, dataset: SvmDataset, fast: bool = False,
             operator: KernelProduct | None = None, **build) -> np.ndarray:
    """``1 - y .* (K v) - beta sum(v) y`` with ``v = y .* alpha`` over the training set."""
    op = operator or KernelProduct(dataset.x_train, model.kernel, fast, **build)
    return _grad(model.alpha, dataset.y_train, op, model.beta)[0]


def step_bound(y: np.ndarray, kv_op, beta: float, iters: int = 20, seed: int = 0) -> float:
    """Estimate of ``||Y K Y + beta y y^T||_2``, the curvature of the dual objective.

    Plain gradient ascent is only stable for ``eta < 2 / L``; the estimate
    comes from a few power iterations, inflated by 5%.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(y.size)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(iters):
        w = y * kv_op(y * x) + beta * y * (y @ x)
        lam = float(np.linalg.norm(w))
        if lam == 0.0:
            break
        x = w / lam
    return 1.05 * lam


def _bias(alpha, y, kv, lam, tol=1e-12):
    margin = (alpha > tol * lam) & (alpha < lam * (1 - tol))
    if not margin.any():
        return 0.0
    return float(np.mean(y[margin] - kv[margin]))


def train(dataset: SvmDataset, kernel: KernelSpec | str = "exp_neg_r", lam: float = 10.0,
          eta: float = 1e-3, beta: float = 1.0, iters: int = 1000, fast: bool = False,
          operator: KernelProduct | None = None, callback=None, cap_eta: bool = True,
          **build) -> SvmModel:
    """Projected gradient ascent ``alpha <- clip(alpha + eta DL(alpha), 0, lam)``.

    With ``cap_eta`` the step is reduced to ``1 / L`` (see :func:`step_bound`)
    when ``eta`` is larger; otherwise large training sets just oscillate
    between the box faces.  ``model.eta`` is the step actually used.
    ``callback(it, alpha)`` is called after every step when given.
    """
    if isinstance(kernel, str):
        kernel = get_kernel(kernel)
    if not (lam > 0 and eta > 0 and beta >= 0) or iters < 0:
        raise ValueError("need lam > 0, eta > 0, beta >= 0, iters >= 0")
    op = operator or KernelProduct(dataset.x_train, kernel, fast, **build)
    y = dataset.y_train
    if cap_eta and iters:
        bound = step_bound(y, op, beta)
        if bound > 0:
            eta = min(eta, 1.0 / bound)
    alpha = np.zeros(y.size)
    t0 = time.perf_counter()
    for it in range(iters):
        g, _ = _grad(alpha, y, op, beta)
        alpha = np.clip(alpha + eta * g, 0.0, lam)
        norm = np.linalg.norm(alpha)
        if not np.isfinite(norm) or norm > DIVERGENCE_LIMIT:
            raise ConvergenceError(
                f"alpha diverged at iteration {it + 1} (||alpha|| = {norm:.3e}); reduce eta"
            )
        if callback is not None:
            callback(it, alpha)
    per_iter = (time.perf_counter() - t0) / iters if iters else 0.0
    kv = op(y * alpha) if iters else np.zeros_like(y)
    b = _bias(alpha, y, kv, lam)
    return SvmModel(alpha, b, lam, eta, beta, kernel, iters, dataset.x_train, y,
                    per_iter, op.build_seconds)


@dataclass
class SvmScores:
    """Per-class and overall test accuracies in percent; None for an empty class."""

    a1: float | None
    a2: float | None
    oa: float


def evaluate(model: SvmModel, dataset: SvmDataset) -> SvmScores:
    y = dataset.y_test
    if y.size == 0:
        raise ValueError("empty test set")
    pred = model.predict(dataset.x_test)
    acc = {}
    for c in (1, -1):
        m = y == c
        acc[c] = 100.0 * float(np.mean(pred[m] == c)) if m.any() else None
    return SvmScores(acc[1], acc[-1], 100.0 * float(np.mean(pred == y)))


def save_dataset(ds: SvmDataset, path) -> None:
    """One row per point: coordinates, label, split tag."""
    tag = np.empty(ds.labels.size, dtype=object)
    tag[ds.train] = "train"
    tag[ds.test] = "test"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(ds.d)] + ["label", "split"])
        for p, lab, t in zip(ds.points, ds.labels, tag):
            w.writerow([repr(float(c)) for c in p] + [int(lab), t])


def load_dataset(path) -> SvmDataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    d = len(rows[0]) - 2
    pts = np.array([[float(c) for c in r[:d]] for r in body]).reshape(-1, d)
    labels = np.array([int(r[d]) for r in body])
    split = np.array([r[d + 1] for r in body])
    return SvmDataset(pts, labels, np.flatnonzero(split == "train"), np.flatnonzero(split == "test"))
