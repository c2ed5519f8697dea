"""Hierarchical kernel matrices on a balanced 2^d tree.

Every admissible pair of the tree's interaction lists is compressed with
:func:`hodlrdd.aca.compress`; the leaf self blocks and the leaf near field
are stored dense.  The matrix-vector product walks the levels and adds the
low-rank contributions and then the dense leaf contributions.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from . import aca
from .errors import GuardError
from .geometry import (
    AdmissibilityPolicy,
    ClusterTree,
    HyperCube,
    build_tree,
    classify_offset,
)
from .kernels import DENSE_ENTRY_CAP, KernelSpec

__all__ = [
    "BuildReport",
    "HMatrix",
    "initialize",
    "bounding_cube",
    "dense_matvec",
    "relative_error",
    "ORACLE_GUARD",
]

ORACLE_GUARD = 20_000


@dataclass
class BuildReport:
    init_seconds: float = 0.0
    memory_bytes: int = 0
    max_block_rank: int = 0
    num_low_rank_blocks: int = 0
    num_dense_entries: int = 0
    num_unconverged: int = 0
    low_rank_bytes: int = 0
    dense_bytes: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass(eq=False)
class HMatrix:
    """Assembled hierarchical operator; immutable after :func:`initialize`."""

    tree: ClusterTree
    kernel: KernelSpec
    policy: AdmissibilityPolicy
    epsilon: float
    low_rank: dict[tuple[int, int, int], aca.ACAFactor]
    dense_self: dict[int, np.ndarray]
    dense_near: dict[tuple[int, int], np.ndarray]
    workers: int = 1
    _blocks: dict = field(default_factory=dict, repr=False)

    @property
    def n(self) -> int:
        return self.tree.n_points

    @property
    def shape(self) -> tuple[int, int]:
        return self.n, self.n

    @property
    def dtype(self):
        return np.dtype(float)

    def _range(self, level: int, node: int) -> slice:
        s, e = self.tree.index_range(level, node)
        return slice(s, e)

    def _low_rank_terms(self, keys, qt):
        b = np.zeros_like(qt)
        for key in keys:
            level, i, j = key
            si, sj = self._range(level, i), self._range(level, j)
            b[si] += aca.apply(self.low_rank[key], self._blocks[key], qt[sj])
        return b

    def _dense_terms(self, qt):
        b = np.zeros_like(qt)
        leaf = self.tree.depth
        for i, mat in self.dense_self.items():
            s = self._range(leaf, i)
            b[s] += mat @ qt[s]
        for (i, j), mat in self.dense_near.items():
            b[self._range(leaf, i)] += mat @ qt[self._range(leaf, j)]
        return b

    def matvec_tree_order(self, qt: np.ndarray) -> np.ndarray:
        """Product with a vector already permuted into tree order."""
        keys = list(self.low_rank)
        if self.workers > 1 and len(keys) > 1:
            chunks = [keys[k::self.workers] for k in range(self.workers)]
            with ThreadPoolExecutor(self.workers) as pool:
                parts = list(pool.map(lambda c: self._low_rank_terms(c, qt), chunks))
            b = sum(parts)
        else:
            b = self._low_rank_terms(keys, qt)
        return b + self._dense_terms(qt)

    def matvec(self, q: np.ndarray) -> np.ndarray:
        """``H @ q`` with ``q`` (vector or ``(N, k)``) in the original point order."""
        q = np.asarray(q, dtype=float)
        if q.shape[0] != self.n:
            raise ValueError(f"vector length {q.shape[0]} != {self.n}")
        bt = self.matvec_tree_order(q[self.tree.perm])
        out = np.empty_like(bt)
        out[self.tree.perm] = bt
        return out

    __matmul__ = matvec

    def as_linear_operator(self):
        from scipy.sparse.linalg import LinearOperator

        return LinearOperator(self.shape, matvec=self.matvec, matmat=self.matvec, dtype=float)

    def structure_rows(self) -> list[dict]:
        """One row per stored block: level, block_i, block_j, class, rank, bytes."""
        rows = []
        tree = self.tree
        for (level, i, j), fac in sorted(self.low_rank.items()):
            gi = np.asarray(tree.box_index(level, i).grid)
            gj = np.asarray(tree.box_index(level, j).grid)
            rows.append(dict(level=level, block_i=i, block_j=j,
                             **{"class": classify_offset(gi - gj).label()},
                             rank=fac.rank, bytes=fac.nbytes))
        leaf = tree.depth
        for i, mat in sorted(self.dense_self.items()):
            rows.append(dict(level=leaf, block_i=i, block_j=i, **{"class": "self"},
                             rank=min(mat.shape), bytes=mat.nbytes))
        for (i, j), mat in sorted(self.dense_near.items()):
            gi = np.asarray(tree.box_index(leaf, i).grid)
            gj = np.asarray(tree.box_index(leaf, j).grid)
            rows.append(dict(level=leaf, block_i=i, block_j=j,
                             **{"class": classify_offset(gi - gj).label()},
                             rank=min(mat.shape), bytes=mat.nbytes))
        return rows

    def write_structure_csv(self, path) -> None:
        fields = ["level", "block_i", "block_j", "class", "rank", "bytes"]
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(self.structure_rows())

    def coverage(self) -> np.ndarray:
        """Count of stored blocks covering each ``(i, j)`` entry (tree order); for tests."""
        n = self.n
        if n * n > 4_000_000:
            raise GuardError("coverage map only for small N")
        cov = np.zeros((n, n), dtype=np.int32)
        for level, i, j in self.low_rank:
            cov[self._range(level, i), self._range(level, j)] += 1
        leaf = self.tree.depth
        for i in self.dense_self:
            s = self._range(leaf, i)
            cov[s, s] += 1
        for i, j in self.dense_near:
            cov[self._range(leaf, i), self._range(leaf, j)] += 1
        return cov


def bounding_cube(points: np.ndarray, pad: float = 1e-9) -> HyperCube:
    """Smallest axis-aligned cube containing ``points``, slightly padded."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    lo = pts.min(axis=0)
    side = float((pts.max(axis=0) - lo).max())
    side = side if side > 0 else 1.0
    margin = pad * side
    return HyperCube(tuple(lo - margin), side + 2 * margin)


def initialize(
    points: np.ndarray,
    domain: HyperCube | None,
    kernel: KernelSpec,
    policy: AdmissibilityPolicy | str = AdmissibilityPolicy.WEAK_DD,
    n_max: int = 1000,
    epsilon: float = 1e-6,
    *,
    max_rank: int | None = None,
    cache_panels: bool = False,
    workers: int = 1,
    dense_cap: int = DENSE_ENTRY_CAP,
) -> tuple[HMatrix, BuildReport]:
    """Build the tree, compress all interaction-list blocks, store the leaf blocks dense."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    t0 = time.perf_counter()
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if domain is None:
        domain = bounding_cube(pts)
    policy = AdmissibilityPolicy.parse(policy)
    tree = build_tree(pts, domain, n_max, policy)
    report = BuildReport()

    def block(level, i, j):
        si, ei = tree.index_range(level, i)
        sj, ej = tree.index_range(level, j)
        if ei == si or ej == sj:
            return None
        return aca.BlockSpec(kernel, tree.points[si:ei], tree.points[sj:ej])

    tasks = []
    for level, pairs in tree.iter_levels():
        for i, j in pairs:
            b = block(level, int(i), int(j))
            if b is not None:
                tasks.append(((level, int(i), int(j)), b))

    def run(task):
        key, b = task
        fac = aca.compress(b, epsilon, max_rank)
        if cache_panels:
            fac = fac.with_panels(b)
        return key, fac

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    low_rank, blocks = {}, {}
    for (key, fac), (_, b) in zip(results, tasks):
        low_rank[key] = fac
        blocks[key] = b
        report.low_rank_bytes += fac.nbytes
        if fac._panels is not None:
            report.low_rank_bytes += sum(p.nbytes for p in fac._panels)
        report.max_block_rank = max(report.max_block_rank, fac.rank)
        report.num_unconverged += int(not fac.converged)
    report.num_low_rank_blocks = len(low_rank)

    leaf = tree.depth
    dense_self, dense_near = {}, {}
    entries = 0
    for i in range(tree.n_nodes(leaf)):
        s, e = tree.index_range(leaf, i)
        if e > s:
            entries += (e - s) ** 2
    for i, j in tree.near_pairs:
        si, ei = tree.index_range(leaf, int(i))
        sj, ej = tree.index_range(leaf, int(j))
        entries += (ei - si) * (ej - sj)
    if entries > dense_cap:
        raise GuardError(f"dense leaf storage of {entries} entries exceeds cap {dense_cap}")
    for i in range(tree.n_nodes(leaf)):
        s, e = tree.index_range(leaf, i)
        if e > s:
            x = tree.points[s:e]
            dense_self[i] = kernel.block(x, x)
    for i, j in tree.near_pairs:
        b = block(leaf, int(i), int(j))
        if b is not None:
            dense_near[(int(i), int(j))] = b.dense()
    report.num_dense_entries = int(entries)
    report.dense_bytes = int(entries) * 8
    report.memory_bytes = report.low_rank_bytes + report.dense_bytes
    report.init_seconds = time.perf_counter() - t0
    H = HMatrix(tree, kernel, policy, float(epsilon), low_rank, dense_self, dense_near,
                workers=max(1, int(workers)), _blocks=blocks)
    return H, report


def dense_matvec(kernel: KernelSpec, targets: np.ndarray, sources: np.ndarray, q: np.ndarray,
                 chunk_entries: int = 20_000_000) -> np.ndarray:
    """``K(targets, sources) @ q`` in row chunks without storing ``K``."""
    x = np.asarray(targets, dtype=float)
    y = np.asarray(sources, dtype=float)
    x = x[:, None] if x.ndim == 1 else x
    y = y[:, None] if y.ndim == 1 else y
    q = np.asarray(q, dtype=float)
    out = np.empty((x.shape[0],) + q.shape[1:])
    step = max(1, chunk_entries // max(1, y.shape[0]))
    for s in range(0, x.shape[0], step):
        out[s:s + step] = kernel.block(x[s:s + step], y) @ q
    return out


def relative_error(H: HMatrix, trials: int = 20, seed: int = 0,
                   points: np.ndarray | None = None, guard: int = ORACLE_GUARD) -> float:
    """``max_q ||(K - H) q|| / ||K q||`` over random unit vectors, dense oracle."""
    if H.n > guard:
        raise GuardError(
            f"N={H.n} exceeds the dense-oracle guard {guard}; estimate the error on sampled rows instead"
        )
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((H.n, trials))
    q /= np.linalg.norm(q, axis=0)
    pts = H.tree.points[H.tree.iperm] if points is None else points
    exact = dense_matvec(H.kernel, pts, pts, q)
    approx = H.matvec(q)
    err = np.linalg.norm(exact - approx, axis=0) / np.linalg.norm(exact, axis=0)
    return float(err.max())
