"""GMRES and a second-kind Fredholm integral equation on ``[-1, 1]^d``.

The integral equation ``sigma(x) + int F(x, y) sigma(y) dy = f(x)`` is
collocated with piecewise-constant elements at cell centres, giving
``A = I + h^d F`` where the singular self-cell term is set to zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .errors import ConvergenceError, GuardError
from .geometry import AdmissibilityPolicy, HyperCube
from .hmatrix import initialize
from .kernels import DENSE_ENTRY_CAP, KernelSpec, get_kernel

__all__ = [
    "GmresConfig",
    "GmresResult",
    "gmres",
    "IeProblem",
    "Accel",
    "IeOperator",
    "IeReport",
    "assemble_ie_operator",
    "manufactured_check",
]


@dataclass(frozen=True)
class GmresConfig:
    tol: float = 1e-6
    max_iter: int = 500
    restart: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.restart is not None and self.restart < 1:
            raise ValueError("restart must be >= 1")


@dataclass
class GmresResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool
    breakdown: bool = False
    history: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.x, self.iterations, self.residual))


def _as_apply(op) -> Callable[[np.ndarray], np.ndarray]:
    if callable(op):
        return op
    if hasattr(op, "matvec"):
        return op.matvec
    a = np.asarray(op)
    return lambda v: a @ v


def gmres(op, f: np.ndarray, cfg: GmresConfig = GmresConfig(), x0: np.ndarray | None = None) -> GmresResult:
    """Restarted GMRES with modified Gram-Schmidt Arnoldi and Givens rotations.

    ``op`` is a callable, an object with ``matvec`` or a dense array.  Stops
    when ``||f - A x|| / ||f|| <= cfg.tol``; ``history`` holds the relative
    residual after every iteration.
    """
    apply = _as_apply(op)
    f = np.asarray(f, dtype=float)
    n = f.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    fnorm = np.linalg.norm(f)
    if fnorm == 0:
        return GmresResult(np.zeros(n), 0, 0.0, True)
    m = cfg.restart or min(cfg.max_iter, n)
    m = max(1, min(m, n))
    history = []
    total = 0
    r = f - apply(x)
    beta = np.linalg.norm(r)
    rel = beta / fnorm
    if rel <= cfg.tol:
        return GmresResult(x, 0, float(rel), True, history=history)
    breakdown = False
    while total < cfg.max_iter:
        V = np.zeros((m + 1, n))
        H = np.zeros((m + 1, m))
        cs = np.zeros(m)
        sn = np.zeros(m)
        g = np.zeros(m + 1)
        g[0] = beta
        V[0] = r / beta
        k_used = 0
        for k in range(m):
            w = apply(V[k])
            for i in range(k + 1):
                H[i, k] = w @ V[i]
                w = w - H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            small = H[k + 1, k] <= 1e-14 * max(1.0, np.abs(H[: k + 1, k]).max())
            if not small:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                t = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = t
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k], sn[k] = (1.0, 0.0) if denom == 0 else (H[k, k] / denom, H[k + 1, k] / denom)
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k_used = k + 1
            rel = abs(g[k + 1]) / fnorm
            history.append(float(rel))
            if rel <= cfg.tol or small or total >= cfg.max_iter:
                breakdown = small and rel > cfg.tol
                break
        y = np.linalg.solve(np.triu(H[:k_used, :k_used]), g[:k_used]) if k_used else np.zeros(0)
        x = x + V[:k_used].T @ y
        r = f - apply(x)
        beta = np.linalg.norm(r)
        rel = beta / fnorm
        if rel <= cfg.tol or breakdown:
            break
    converged = rel <= cfg.tol or breakdown
    return GmresResult(x, total, float(rel), bool(converged), breakdown, history)


class Accel(str, Enum):
    DENSE = "dense"
    HODLRDD = "hodlrdd"
    STRONG = "strong"
    WEAK_ALL = "weak_all"

    @classmethod
    def parse(cls, v) -> "Accel":
        if isinstance(v, cls):
            return v
        key = str(v).strip().lower().replace("-", "_")
        aliases = {"weak_dd": "hodlrdd", "hodlr4d": "hodlrdd", "h": "strong",
                   "hodlr": "weak_all", "weakall": "weak_all"}
        return cls(aliases.get(key, key))

    @property
    def policy(self) -> AdmissibilityPolicy | None:
        return {
            Accel.DENSE: None,
            Accel.HODLRDD: AdmissibilityPolicy.WEAK_DD,
            Accel.STRONG: AdmissibilityPolicy.STRONG,
            Accel.WEAK_ALL: AdmissibilityPolicy.WEAK_ALL,
        }[self]


@dataclass(frozen=True, eq=False)
class IeProblem:
    """Uniform cell-centred grid on ``[-1, 1]^d`` with ``n_per_dim`` cells per axis."""

    d: int
    n_per_dim: int
    kernel: KernelSpec = field(default_factory=lambda: get_kernel("laplace4d"))

    def __post_init__(self):
        if self.d < 1 or self.n_per_dim < 1:
            raise ValueError("d and n_per_dim must be positive")

    @property
    def N(self) -> int:
        return self.n_per_dim ** self.d

    @property
    def h(self) -> float:
        return 2.0 / self.n_per_dim

    @property
    def weight(self) -> float:
        return self.h ** self.d

    @property
    def points(self) -> np.ndarray:
        t = -1.0 + (np.arange(self.n_per_dim) + 0.5) * self.h
        mesh = np.meshgrid(*([t] * self.d), indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, self.d)

    @property
    def domain(self) -> HyperCube:
        return HyperCube((-1.0,) * self.d, 2.0)


@dataclass(eq=False)
class IeOperator:
    """``x -> x + weight * F x`` with ``F`` dense or hierarchical."""

    problem: IeProblem
    accel: Accel
    _apply_f: Callable = field(repr=False)
    build_seconds: float = 0.0
    report: object = None

    @property
    def shape(self):
        return self.problem.N, self.problem.N

    def kernel_matvec(self, x):
        return self._apply_f(x)

    def matvec(self, x):
        x = np.asarray(x, dtype=float)
        return x + self.problem.weight * self._apply_f(x)

    __call__ = matvec


def assemble_ie_operator(problem: IeProblem, accel="hodlrdd", *, epsilon: float = 1e-6,
                         n_max: int = 1000, workers: int = 1,
                         dense_cap: int = DENSE_ENTRY_CAP) -> IeOperator:
    accel = Accel.parse(accel)
    kernel = problem.kernel.with_diagonal(0.0)
    pts = problem.points
    t0 = time.perf_counter()
    if accel is Accel.DENSE:
        if problem.N ** 2 > dense_cap:
            raise GuardError(f"dense operator of {problem.N ** 2} entries exceeds cap {dense_cap}")
        mat = kernel.block(pts, pts)
        return IeOperator(problem, accel, lambda x: mat @ x, time.perf_counter() - t0)
    H, report = initialize(pts, problem.domain, kernel, accel.policy, n_max, epsilon,
                           workers=workers, dense_cap=dense_cap)
    return IeOperator(problem, accel, H.matvec, time.perf_counter() - t0, report)


@dataclass
class IeReport:
    error: float
    iterations: int
    residual: float
    converged: bool
    build_seconds: float
    solve_seconds: float
    N: int
    accel: str


def manufactured_check(problem: IeProblem, accel="hodlrdd", cfg: GmresConfig = GmresConfig(),
                       seed: int = 0, operator: IeOperator | None = None, **build) -> IeReport:
    """Solve ``A s = A sigma`` for random ``sigma`` and report ``||s - sigma|| / ||sigma||``."""
    op = operator or assemble_ie_operator(problem, accel, **build)
    rng = np.random.default_rng(seed)
    sigma = rng.standard_normal(problem.N)
    f = op.matvec(sigma)
    t0 = time.perf_counter()
    res = gmres(op, f, cfg)
    solve = time.perf_counter() - t0
    if not res.converged:
        raise ConvergenceError(
            f"GMRES stopped after {res.iterations} iterations at relative residual {res.residual:.3e}"
        )
    err = float(np.linalg.norm(res.x - sigma) / np.linalg.norm(sigma))
    return IeReport(err, res.iterations, res.residual, res.converged, op.build_seconds, solve,
                    problem.N, op.accel.value)
