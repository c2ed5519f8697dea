"""Numerical-rank experiments on pairs of unit hyper-cubes.

``Y = [0,1]^d`` and ``X`` is a translate of it that is either one box away
(far field), touches ``Y`` only at the origin (vertex) or shares a face of
dimension ``d'``.  Ranks are measured with dense SVD for moderate ``N`` and
with a seeded randomized range finder above that, tabulated as CSV and fitted
against constant / logarithmic / power growth laws.
"""

from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.optimize import OptimizeWarning, curve_fit

from .errors import GuardError, NumericalError
from .kernels import CATALOG, KERNEL_FAMILIES, KernelSpec, get_kernel

__all__ = [
    "PairGeometry",
    "RankRecord",
    "GrowthFit",
    "parse_interaction",
    "interaction_label",
    "pair_geometry",
    "epsilon_rank",
    "epsilon_rank_formal",
    "sketched_epsilon_rank",
    "block_rank",
    "rank_table",
    "write_rank_csv",
    "plot_series",
    "fit_growth",
    "max_norm_rank",
    "RANK_GUARD",
    "REFERENCE_RANKS",
    "reference_series",
]

# Largest N per dimension for which a rank cell is attempted.
RANK_GUARD = {1: 40_000, 2: 20_000, 3: 8_000, 4: 4_096}
DENSE_SVD_LIMIT = 4_096
MAX_NORM_GUARD = 1000 * 1000
CSV_FIELDS = ["kernel", "d", "interaction", "dprime", "N", "epsilon", "rank", "seconds"]


def parse_interaction(spec: str | int | None, d: int | None = None) -> int | None:
    """``'far'`` -> None; ``'surface:k'``/``'vertex'``/``'edge'``/``'face'`` -> d'."""
    if spec is None:
        return None
    if isinstance(spec, (int, np.integer)):
        return int(spec)
    key = str(spec).strip().lower()
    if key in {"far", "far-field", "farfield", "far_field"}:
        return None
    named = {"vertex": 0, "edge": 1, "face": 2}
    if key in named:
        return named[key]
    if key.startswith("surface:"):
        try:
            return int(key.split(":", 1)[1])
        except ValueError:
            pass
    raise ValueError(f"unknown interaction {spec!r}; use far, vertex, edge, face or surface:k")


def interaction_label(dprime: int | None) -> str:
    return "far" if dprime is None else f"surface:{dprime}"


@dataclass(frozen=True, eq=False)
class PairGeometry:
    d: int
    d_prime: int | None
    n: int
    X_points: np.ndarray
    Y_points: np.ndarray
    description: str = ""

    @property
    def N(self) -> int:
        return self.n ** self.d


def _axis_samples(n: int, mode: str, rng) -> np.ndarray:
    if mode == "interior":
        return np.arange(1, n + 1) / (n + 1)
    if mode == "center":
        return (np.arange(n) + 0.5) / n
    raise ValueError(f"unknown grid mode {mode!r}")


def _tensor(axes: Sequence[np.ndarray]) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, len(axes))


def pair_geometry(d: int, interaction, n_per_dim: int, mode: str = "interior",
                  seed: int = 0) -> PairGeometry:
    """Target/source point sets for a far-field or d'-surface-sharing box pair.

    ``mode='interior'`` puts ``n`` points per axis at ``i/(n+1)``;
    ``'center'`` uses cell centres ``(i+0.5)/n``; ``'random'`` draws ``n^d``
    uniform points per box from ``seed``.
    """
    if not 1 <= d <= 4:
        raise ValueError("d must be in 1..4")
    if n_per_dim < 2:
        raise ValueError("n_per_dim must be >= 2")
    dprime = parse_interaction(interaction, d)
    if dprime is not None and not 0 <= dprime <= d - 1:
        raise ValueError(f"d' = {dprime} invalid for d = {d}")
    if dprime is None:
        shift = np.zeros(d)
        shift[0] = -2.0
        desc = "X=[-2,-1]x[0,1]^%d, Y=[0,1]^%d" % (d - 1, d)
    else:
        shift = np.zeros(d)
        shift[: d - dprime] = -1.0
        desc = "X=[-1,0]^%d x [0,1]^%d, Y=[0,1]^%d" % (d - dprime, dprime, d)
    rng = np.random.default_rng(seed)
    if mode == "random":
        y = rng.uniform(0.0, 1.0, size=(n_per_dim ** d, d))
        x = rng.uniform(0.0, 1.0, size=(n_per_dim ** d, d)) + shift
    else:
        t = _axis_samples(n_per_dim, mode, rng)
        y = _tensor([t] * d)
        x = y + shift
    return PairGeometry(d, dprime, n_per_dim, x, y, desc)


def _check_finite(s) -> None:
    if not np.all(np.isfinite(s)):
        raise NumericalError("non-finite entries in matrix")


def _count_above(s: np.ndarray, epsilon: float) -> int:
    if s.size == 0 or s[0] == 0:
        raise NumericalError("matrix is zero")
    return int(np.count_nonzero(s >= epsilon * s[0]))


def epsilon_rank(matrix: np.ndarray, epsilon: float) -> int:
    """Number of singular values ``>= epsilon * sigma_1`` (the tabulated convention)."""
    a = np.asarray(matrix)
    if min(a.shape) < 1:
        raise ValueError("matrix must be non-empty")
    _check_finite(a)
    return _count_above(sla.svdvals(a, check_finite=False), epsilon)


def epsilon_rank_formal(matrix: np.ndarray, epsilon: float) -> int:
    """``min{k : sigma_k < epsilon sigma_1}`` (1-based), or min-dimension if never crossed."""
    a = np.asarray(matrix)
    cnt = epsilon_rank(a, epsilon)
    return cnt + 1 if cnt < min(a.shape) else cnt


class _KernelBlock:
    """Matrix-free kernel block, possibly complex (real part + i imaginary part)."""

    def __init__(self, parts: Sequence[KernelSpec], x: np.ndarray, y: np.ndarray,
                 chunk_entries: int = 20_000_000):
        self.parts = list(parts)
        self.x, self.y = x, y
        self.step = max(1, chunk_entries // max(1, y.shape[0]))
        self.dtype = complex if len(self.parts) == 2 else float

    @property
    def shape(self):
        return self.x.shape[0], self.y.shape[0]

    def _rows(self, s):
        xs = self.x[s:s + self.step]
        blk = self.parts[0].block(xs, self.y)
        if len(self.parts) == 2:
            blk = blk + 1j * self.parts[1].block(xs, self.y)
        return blk

    def dense(self):
        return np.vstack([self._rows(s) for s in range(0, self.shape[0], self.step)])

    def matmat(self, w):
        out = np.empty((self.shape[0], w.shape[1]), dtype=np.result_type(self.dtype, w.dtype))
        for s in range(0, self.shape[0], self.step):
            b = self._rows(s)
            out[s:s + b.shape[0]] = b @ w
        return out

    def rmatmat(self, w):
        """``K^H w``."""
        out = np.zeros((self.shape[1], w.shape[1]), dtype=np.result_type(self.dtype, w.dtype))
        for s in range(0, self.shape[0], self.step):
            b = self._rows(s)
            out += b.conj().T @ w[s:s + b.shape[0]]
        return out


def sketched_epsilon_rank(op, epsilon: float, width: int = 64, power: int = 1,
                          oversample: int = 16, seed: int = 0) -> int:
    """Randomized range finder estimate of :func:`epsilon_rank` (matrix-free).

    ``op`` exposes ``shape``, ``matmat`` and ``rmatmat`` (adjoint).  The
    sketch width doubles until the count leaves ``oversample`` spare columns.
    """
    m, n = op.shape
    rng = np.random.default_rng(seed)
    width = min(width, m, n)
    while True:
        omega = rng.standard_normal((n, width))
        q, _ = np.linalg.qr(op.matmat(omega))
        for _ in range(power):
            z, _ = np.linalg.qr(op.rmatmat(q))
            q, _ = np.linalg.qr(op.matmat(z))
        b = op.rmatmat(q).conj().T
        s = sla.svdvals(b, check_finite=False)
        _check_finite(s)
        k = _count_above(s, epsilon)
        if k + oversample <= width or width >= min(m, n):
            return k
        width = min(2 * width, m, n)


def _kernel_parts(name: str) -> tuple[str, list[KernelSpec]]:
    key = name.strip()
    fam = KERNEL_FAMILIES.get(key.upper())
    if fam is not None:
        return key.upper(), [CATALOG[k] for k in fam]
    spec = get_kernel(key)
    return spec.name, [spec]


def block_rank(geometry: PairGeometry, kernel: str, epsilon: float = 1e-12,
               method: str = "auto", seed: int = 0) -> tuple[int, str]:
    """ε-rank of ``K(X, Y)``; ``method`` is ``dense``, ``sketch`` or ``auto``."""
    _, parts = _kernel_parts(kernel)
    op = _KernelBlock(parts, geometry.X_points, geometry.Y_points)
    if method == "auto":
        method = "dense" if geometry.N <= DENSE_SVD_LIMIT else "sketch"
    if method == "dense":
        return epsilon_rank(op.dense(), epsilon), method
    if method == "sketch":
        return sketched_epsilon_rank(op, epsilon, seed=seed), method
    raise ValueError(f"unknown rank method {method!r}")


@dataclass
class RankRecord:
    kernel: str
    d: int
    interaction: str
    dprime: int | None
    N: int
    epsilon: float
    rank: int
    seconds: float
    method: str = "dense"

    def csv_row(self) -> dict:
        row = asdict(self)
        row.pop("method")
        row["dprime"] = "" if self.dprime is None else self.dprime
        row["seconds"] = f"{self.seconds:.3f}"
        row["epsilon"] = f"{self.epsilon:g}"
        return row


def _root(N: int, d: int) -> int:
    n = int(round(N ** (1.0 / d)))
    for c in (n - 1, n, n + 1):
        if c >= 1 and c ** d == N:
            return c
    raise ValueError(f"N={N} is not a perfect {d}-th power")


def rank_table(kernels: Iterable[str], interaction, d: int, N_list: Iterable[int],
               epsilon: float = 1e-12, mode: str = "interior", method: str = "auto",
               seed: int = 0, guard: dict | None = None):
    """One :class:`RankRecord` per (kernel, N); guard breaches become ``(kernel, N, reason)`` skips."""
    guard = RANK_GUARD if guard is None else guard
    dprime = parse_interaction(interaction, d)
    records, skipped = [], []
    kernels = list(kernels)
    for N in N_list:
        n = _root(int(N), d)
        limit = guard.get(d, 0)
        if N > limit:
            for k in kernels:
                skipped.append((k, int(N), f"N={N} exceeds rank guard {limit} for d={d}"))
            continue
        geo = pair_geometry(d, dprime, n, mode=mode, seed=seed)
        for k in kernels:
            label, _ = _kernel_parts(k)
            t0 = time.perf_counter()
            rank, used = block_rank(geo, k, epsilon, method, seed)
            records.append(RankRecord(label, d, interaction_label(dprime), dprime, int(N),
                                      float(epsilon), rank, time.perf_counter() - t0, used))
    return records, skipped


def write_rank_csv(records: Iterable[RankRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow(r.csv_row())


def plot_series(records: Iterable[RankRecord]) -> dict[tuple, list[tuple[int, int]]]:
    """``(kernel, d, interaction) -> [(N, rank), ...]`` sorted by N."""
    out: dict[tuple, list] = {}
    for r in records:
        out.setdefault((r.kernel, r.d, r.interaction), []).append((r.N, r.rank))
    return {k: sorted(v) for k, v in out.items()}


@dataclass
class GrowthFit:
    best: str
    params: dict
    residuals: dict
    exponent: float
    spread: float

    def predict(self, N, model: str | None = None):
        model = model or self.best
        N = np.asarray(N, dtype=float)
        p = self.params[model]
        if model == "constant":
            return np.full_like(N, p["a"])
        if model == "log":
            return p["a"] + p["b"] * np.log(N)
        return p["a"] * N ** p["c"]


def fit_growth(N_values: Sequence[int], ranks: Sequence[float], flat_ratio: float = 1.3,
               drop_saturated: float | None = 0.5) -> GrowthFit:
    """Least-squares fits of rank vs ``a``, ``a + b log N`` and ``a N^c``.

    Records whose rank exceeds ``drop_saturated * N`` only measure the matrix
    size and are dropped.  The constant model is chosen when the ranks vary by
    at most ``flat_ratio``; otherwise the better of the log and power models
    by residual sum of squares.
    """
    N = np.asarray(N_values, dtype=float)
    r = np.asarray(ranks, dtype=float)
    if N.shape != r.shape:
        raise ValueError("N_values and ranks differ in length")
    if drop_saturated is not None:
        keep = r <= drop_saturated * N
        N, r = N[keep], r[keep]
    if np.unique(N).size < 4:
        raise ValueError("need at least 4 distinct N values to fit a growth law")
    if np.any(r <= 0):
        raise ValueError("ranks must be positive")
    params, resid = {}, {}
    params["constant"] = {"a": float(r.mean())}
    resid["constant"] = float(((r - r.mean()) ** 2).sum())

    a_log = np.vstack([np.ones_like(N), np.log(N)]).T
    (a0, b0), *_ = np.linalg.lstsq(a_log, r, rcond=None)
    params["log"] = {"a": float(a0), "b": float(b0)}
    resid["log"] = float(((r - a_log @ [a0, b0]) ** 2).sum())

    # log-log start, then refine in rank space so the residuals are comparable
    c0, la0 = np.polyfit(np.log(N), np.log(r), 1)
    try:
        with warnings.catch_warnings():
            # flat series give a singular covariance; only the optimum is used
            warnings.simplefilter("ignore", OptimizeWarning)
            (pa, pc), _ = curve_fit(lambda x, a, c: a * x ** c, N, r, p0=[np.exp(la0), c0],
                                    maxfev=20000)
    except RuntimeError:
        pa, pc = np.exp(la0), c0
    params["power"] = {"a": float(pa), "c": float(pc)}
    resid["power"] = float(((r - pa * N ** pc) ** 2).sum())

    spread = float(r.max() / r.min())
    if spread <= flat_ratio:
        best = "constant"
    else:
        best = "log" if resid["log"] <= resid["power"] else "power"
    return GrowthFit(best, params, resid, float(pc), spread)


def max_norm_rank(matrix: np.ndarray, delta: float) -> int:
    """Smallest SVD truncation rank ``r`` with ``max|K - K_r| < delta max|K|``.

    Truncated SVD is not optimal in the max norm, so this is an upper bound
    on the numerical max-rank.
    """
    a = np.asarray(matrix, dtype=float)
    if a.size > MAX_NORM_GUARD:
        raise GuardError(f"max-norm rank limited to {MAX_NORM_GUARD} entries, got {a.size}")
    _check_finite(a)
    scale = np.abs(a).max()
    if scale == 0:
        return 0
    u, s, vt = sla.svd(a, full_matrices=False)
    approx = np.zeros_like(a)
    for k in range(s.size):
        approx += s[k] * np.outer(u[:, k], vt[k])
        if np.abs(a - approx).max() < delta * scale:
            return k + 1
    return int(s.size)


# Reference ε-ranks (ε = 1e-12) for the interior-grid geometries above,
# keyed by (d, interaction) with columns F1..F8.
_F = ("F1", "F2", "F3", "F4", "F5", "F6", "F7", "F8")
_RAW = {
    (1, "far"): [
        (1000, 7, 7, 7, 8, 2, 2, 6, 1), (5000, 7, 7, 7, 8, 2, 2, 6, 1),
        (10000, 7, 7, 7, 8, 2, 2, 6, 1), (15000, 7, 7, 7, 8, 2, 2, 6, 1),
        (20000, 7, 7, 7, 8, 2, 2, 6, 1), (25000, 7, 7, 7, 8, 2, 2, 6, 1),
        (30000, 7, 7, 7, 8, 2, 2, 6, 1), (40000, 7, 7, 7, 8, 2, 2, 6, 1),
    ],
    (1, "surface:0"): [
        (1000, 22, 20, 22, 22, 2, 2, 7, 1), (5000, 27, 23, 27, 26, 2, 2, 7, 1),
        (10000, 29, 25, 29, 27, 2, 2, 7, 1), (15000, 30, 26, 30, 28, 2, 2, 7, 1),
        (20000, 31, 26, 31, 29, 2, 2, 7, 1), (25000, 31, 27, 31, 30, 2, 2, 7, 1),
        (30000, 32, 27, 32, 30, 2, 2, 7, 1), (40000, 33, 27, 33, 31, 2, 2, 7, 1),
    ],
    (2, "far"): [
        (1600, 42, 21, 43, 49, 33, 38, 33, 38), (2500, 42, 21, 42, 49, 32, 38, 33, 38),
        (5625, 42, 21, 42, 48, 32, 38, 33, 37), (10000, 42, 21, 42, 48, 32, 37, 33, 37),
        (22500, 42, 19, 42, 47, 32, 37, 33, 37), (40000, 42, 19, 42, 47, 31, 37, 33, 37),
    ],
    (2, "surface:0"): [
        (1600, 81, 34, 82, 94, 59, 64, 59, 66), (2500, 87, 36, 87, 102, 64, 67, 63, 70),
        (5625, 96, 39, 97, 114, 67, 72, 66, 74), (10000, 104, 41, 104, 122, 70, 73, 69, 78),
        (22500, 112, 44, 113, 135, 72, 77, 71, 81), (40000, 119, 45, 119, 143, 76, 81, 76, 84),
    ],
    (2, "surface:1"): [
        (1600, 216, 99, 217, 241, 158, 162, 157, 165),
        (2500, 266, 120, 266, 296, 191, 195, 187, 198),
        (5625, 382, 172, 382, 434, 253, 260, 249, 276),
        (10000, 495, 223, 496, 570, 316, 323, 310, 335),
        (22500, 717, 323, 718, 842, 431, 442, 422, 461),
        (40000, 936, 423, 938, 1112, 536, 550, 525, 576),
    ],
    (3, "far"): [
        (125, 91, 106, 92, 112, 100, 103, 101, 106),
        (1000, 149, 188, 151, 238, 149, 172, 160, 184),
        (3375, 148, 191, 149, 249, 151, 171, 160, 184),
        (8000, 147, 190, 147, 246, 146, 169, 157, 182),
        (15625, 143, 188, 147, 243, 144, 169, 156, 180),
        (27000, 143, 186, 146, 241, 143, 164, 154, 180),
        (42875, 141, 186, 144, 241, 142, 163, 152, 180),
        (64000, 140, 185, 144, 241, 142, 163, 152, 178),
    ],
    (3, "surface:0"): [
        (125, 74, 93, 77, 97, 86, 93, 86, 92),
        (1000, 132, 175, 132, 214, 138, 153, 142, 164),
        (3375, 162, 213, 165, 269, 162, 185, 172, 192),
        (8000, 180, 241, 180, 309, 179, 199, 189, 216),
        (15625, 198, 259, 200, 344, 190, 210, 198, 228),
        (27000, 207, 269, 211, 367, 198, 219, 209, 238),
        (42875, 220, 281, 220, 388, 203, 223, 217, 247),
        (64000, 225, 292, 230, 410, 208, 230, 228, 252),
    ],
    (3, "surface:1"): [
        (125, 86, 104, 89, 109, 97, 102, 97, 102),
        (1000, 189, 260, 191, 302, 205, 215, 209, 228),
        (3375, 271, 371, 273, 458, 272, 292, 281, 310),
        (8000, 345, 466, 346, 600, 336, 354, 349, 382),
        (15625, 416, 552, 418, 741, 384, 410, 397, 446),
        (27000, 483, 637, 485, 877, 435, 457, 450, 503),
        (42875, 546, 711, 548, 1006, 469, 505, 489, 557),
        (64000, 602, 783, 605, 1136, 511, 563, 531, 604),
    ],
    (3, "surface:2"): [
        (125, 98, 118, 99, 119, 111, 115, 108, 113),
        (1000, 312, 422, 312, 465, 335, 348, 332, 360),
        (3375, 610, 815, 609, 964, 627, 642, 619, 668),
        (8000, 1003, 1314, 1003, 1623, 983, 1006, 978, 1046),
        (15625, 1491, 1931, 1494, 2443, 1392, 1430, 1401, 1497),
        (27000, 2077, 2641, 2082, 3419, 1874, 1914, 1887, 2012),
        (42875, 2764, 3465, 2766, 4556, 2393, 2460, 2397, 2587),
        (64000, 3547, 4373, 3551, 5751, 2960, 3030, 2965, 3224),
    ],
    (4, "far"): [
        (1296, 641, 599, 656, 630, 529, 598, 533, 632),
        (2401, 791, 735, 814, 791, 605, 709, 628, 772),
        (4096, 902, 808, 931, 928, 636, 750, 661, 855),
        (10000, 990, 836, 1008, 1034, 650, 776, 685, 894),
        (20736, 994, 842, 1012, 1037, 645, 775, 680, 898),
        (38416, 985, 836, 1012, 1035, 635, 765, 670, 899),
        (50625, 982, 831, 1009, 1031, 633, 759, 666, 897),
    ],
    (4, "surface:0"): [
        (1296, 369, 345, 382, 392, 288, 339, 295, 380),
        (2401, 446, 401, 459, 462, 326, 383, 337, 427),
        (4096, 506, 444, 517, 511, 360, 425, 366, 479),
        (10000, 582, 505, 592, 605, 404, 481, 420, 537),
        (20736, 643, 551, 657, 671, 437, 516, 458, 600),
        (38416, 690, 597, 705, 738, 472, 547, 485, 642),
        (50625, 714, 614, 735, 758, 486, 566, 496, 662),
    ],
    (4, "surface:1"): [
        (1296, 482, 450, 496, 492, 378, 426, 376, 460),
        (2401, 585, 555, 601, 606, 447, 491, 449, 554),
        (4096, 693, 629, 705, 706, 495, 560, 502, 633),
        (10000, 862, 773, 879, 891, 595, 671, 608, 772),
        (20736, 1029, 898, 1044, 1065, 682, 761, 696, 891),
        (38416, 1179, 1008, 1197, 1226, 743, 840, 767, 994),
        (50625, 1251, 1058, 1269, 1298, 774, 880, 798, 1031),
    ],
    (4, "surface:2"): [
        (1296, 639, 624, 651, 649, 526, 565, 522, 599),
        (2401, 856, 825, 873, 862, 673, 725, 669, 784),
        (4096, 1082, 1018, 1096, 1080, 810, 875, 807, 965),
        (10000, 1555, 1432, 1568, 1562, 1096, 1186, 1107, 1332),
        (20736, 2071, 1873, 2091, 2096, 1394, 1504, 1408, 1717),
        (38416, 2640, 2341, 2653, 2683, 1693, 1830, 1716, 2102),
        (50625, 2949, 2585, 2964, 2996, 1845, 1991, 1873, 2297),
    ],
    (4, "surface:3"): [
        (1296, 842, 857, 846, 841, 752, 782, 733, 802),
        (2401, 1251, 1267, 1266, 1245, 1093, 1135, 1075, 1177),
        (4096, 1755, 1763, 1767, 1741, 1486, 1542, 1448, 1638),
        (10000, 3114, 3059, 3127, 3056, 2509, 2584, 2475, 2759),
        (20736, 4963, 4807, 4973, 4901, 3917, 4006, 3853, 4303),
        (38416, 7461, 7122, 7473, 7337, 5736, 5894, 5677, 6254),
        (50625, 8925, 8496, 8940, 8814, 6813, 7010, 6755, 7440),
    ],
}

REFERENCE_RANKS: dict[tuple[int, str], dict[str, dict[int, int]]] = {
    key: {f: {row[0]: row[i + 1] for row in rows} for i, f in enumerate(_F)}
    for key, rows in _RAW.items()
}


def reference_series(d: int, interaction, family: str) -> list[tuple[int, int]]:
    """Reference ``(N, rank)`` pairs for a geometry and kernel family ``F1..F8``."""
    key = (d, interaction_label(parse_interaction(interaction, d)))
    try:
        col = REFERENCE_RANKS[key][family.upper()]
    except KeyError:
        raise ValueError(f"no reference ranks for {key} / {family}") from None
    return sorted(col.items())
