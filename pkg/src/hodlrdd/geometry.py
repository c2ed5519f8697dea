"""Hyper-cubes, balanced 2^d cluster trees and interaction lists.

Nodes of a :class:`ClusterTree` are addressed by ``(level, node)`` where
``node`` is the C-order flat index of the box's integer grid coordinates at
that level (axis 0 varies slowest).  Points are permuted into Morton order,
so every node owns a contiguous slice ``[start, stop)`` of the permuted
point array.

A pair of same-level boxes is classified purely from the integer offset of
their grid coordinates:

* all offsets zero                -> self block
* some ``|offset| >= 2``          -> far field
* otherwise                       -> shared hyper-surface of dimension
  ``d' = #{k : offset_k == 0}`` (``d' == 0`` is a shared vertex)
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import GeometryError

__all__ = [
    "HyperCube",
    "BoxIndex",
    "InteractionClass",
    "AdmissibilityPolicy",
    "ClusterTree",
    "classify_pair",
    "build_tree",
    "interaction_list",
    "leaf_near_field",
]

# Morton codes are packed into uint64.
_MAX_CODE_BITS = 63


@dataclass(frozen=True)
class HyperCube:
    """Axis-aligned cube ``lower + [0, side]^d``."""

    lower: tuple[float, ...]
    side: float

    def __post_init__(self):
        object.__setattr__(self, "lower", tuple(float(v) for v in self.lower))
        if not self.side > 0:
            raise GeometryError(f"cube side must be positive, got {self.side}")
        if len(self.lower) == 0:
            raise GeometryError("cube must have at least one dimension")

    @classmethod
    def from_bounds(cls, lo: float, hi: float, d: int) -> "HyperCube":
        return cls((lo,) * d, hi - lo)

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def upper(self) -> tuple[float, ...]:
        return tuple(v + self.side for v in self.lower)

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.lower) + 0.5 * self.side

    def child(self, offset: Sequence[int]) -> "HyperCube":
        h = 0.5 * self.side
        return HyperCube(tuple(lo + h * o for lo, o in zip(self.lower, offset)), h)

    def subdivide(self) -> list["HyperCube"]:
        """The 2^d children in C order of their 0/1 offsets."""
        return [self.child(o) for o in itertools.product((0, 1), repeat=self.dim)]

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Closed-cube membership test for an ``(n, d)`` array."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        lo = np.asarray(self.lower)
        return np.all((pts >= lo) & (pts <= lo + self.side), axis=1)


@dataclass(frozen=True, order=True)
class BoxIndex:
    """Integer address of a box in the uniform subdivision at ``level``."""

    level: int
    grid: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if self.level < 0:
            raise GeometryError("level must be non-negative")
        n = 1 << self.level
        if any(g < 0 or g >= n for g in self.grid):
            raise GeometryError(f"grid {self.grid} invalid at level {self.level}")

    @property
    def dim(self) -> int:
        return len(self.grid)

    def parent(self) -> "BoxIndex":
        if self.level == 0:
            raise GeometryError("root has no parent")
        return BoxIndex(self.level - 1, tuple(g >> 1 for g in self.grid))


class _Kind(enum.Enum):
    SELF = "self"
    SURFACE = "surface"
    FAR = "far"


@dataclass(frozen=True)
class InteractionClass:
    """Self block, shared hyper-surface of dimension ``dprime``, or far field."""

    kind: _Kind
    dprime: int | None = None

    Kind = _Kind

    @classmethod
    def self_block(cls) -> "InteractionClass":
        return cls(_Kind.SELF)

    @classmethod
    def shared_surface(cls, dprime: int) -> "InteractionClass":
        return cls(_Kind.SURFACE, int(dprime))

    @classmethod
    def far_field(cls) -> "InteractionClass":
        return cls(_Kind.FAR)

    @property
    def is_self(self) -> bool:
        return self.kind is _Kind.SELF

    @property
    def is_far(self) -> bool:
        return self.kind is _Kind.FAR

    @property
    def is_vertex(self) -> bool:
        return self.kind is _Kind.SURFACE and self.dprime == 0

    def label(self) -> str:
        if self.kind is _Kind.SURFACE:
            return f"surface:{self.dprime}"
        return self.kind.value

    def __str__(self) -> str:
        return self.label()


class AdmissibilityPolicy(enum.Enum):
    """Which same-level block classes are compressed."""

    WEAK_DD = "weak_dd"  # far field + vertex sharing
    STRONG = "strong"  # far field only
    WEAK_ALL = "weak_all"  # every non-self block

    @classmethod
    def parse(cls, value: "str | AdmissibilityPolicy") -> "AdmissibilityPolicy":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"hodlrdd": "weak_dd", "weakdd": "weak_dd", "h": "strong",
                   "hodlr": "weak_all", "weakall": "weak_all"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key:
                return member
        raise ValueError(f"unknown admissibility policy {value!r}")

    def admits(self, cls: InteractionClass) -> bool:
        if cls.is_self:
            return False
        if self is AdmissibilityPolicy.WEAK_ALL:
            return True
        if self is AdmissibilityPolicy.STRONG:
            return cls.is_far
        return cls.is_far or cls.is_vertex

    def admits_offsets(self, offsets: np.ndarray) -> np.ndarray:
        """Vectorised :meth:`admits` for an ``(m, d)`` array of grid offsets."""
        a = np.abs(np.atleast_2d(offsets))
        is_self = np.all(a == 0, axis=1)
        far = np.max(a, axis=1) >= 2
        if self is AdmissibilityPolicy.WEAK_ALL:
            return ~is_self
        if self is AdmissibilityPolicy.STRONG:
            return far
        vertex = np.all(a == 1, axis=1)
        return far | vertex


def classify_offset(offset: Sequence[int]) -> InteractionClass:
    a = [abs(int(o)) for o in offset]
    if all(v == 0 for v in a):
        return InteractionClass.self_block()
    if max(a) >= 2:
        return InteractionClass.far_field()
    return InteractionClass.shared_surface(sum(1 for v in a if v == 0))


def classify_pair(a: BoxIndex, b: BoxIndex) -> InteractionClass:
    """Classify two same-level boxes by the dimension of their shared boundary."""
    if a.level != b.level:
        raise GeometryError(f"level mismatch: {a.level} != {b.level}")
    if a.dim != b.dim:
        raise GeometryError(f"dimension mismatch: {a.dim} != {b.dim}")
    return classify_offset([x - y for x, y in zip(a.grid, b.grid)])


def _grids(level: int, d: int) -> np.ndarray:
    """All grid coordinates at ``level`` in flat (C) order, shape ``(2^(d l), d)``."""
    n = 1 << level
    return np.indices((n,) * d).reshape(d, -1).T.astype(np.int64)


def _morton(grid: np.ndarray, bits: int) -> np.ndarray:
    """Interleave ``bits`` low bits of each axis; axis 0 is most significant."""
    grid = np.asarray(grid, dtype=np.uint64)
    d = grid.shape[1]
    code = np.zeros(grid.shape[0], dtype=np.uint64)
    for b in range(bits):
        for k in range(d):
            bit = (grid[:, k] >> np.uint64(b)) & np.uint64(1)
            code |= bit << np.uint64(b * d + (d - 1 - k))
    return code


def _box_coords(t: np.ndarray, level: int) -> np.ndarray:
    """Grid coordinates of unit-cube points; internal-face ties go to the lower box."""
    n = 1 << level
    g = np.ceil(t * n).astype(np.int64) - 1
    return np.clip(g, 0, n - 1)


@dataclass(frozen=True, eq=False)
class ClusterTree:
    """Balanced 2^d tree with per-level interaction lists.

    ``perm[k]`` is the original index of the k-th point in tree order and
    ``iperm`` its inverse.  ``interactions[l]`` holds the admissible
    ``(i, j)`` node pairs at level ``l`` (both orientations), and
    ``near_pairs`` the non-admissible, non-self leaf pairs.
    """

    domain: HyperCube
    depth: int
    n_max: int
    policy: AdmissibilityPolicy
    points: np.ndarray
    perm: np.ndarray
    iperm: np.ndarray
    starts: list[np.ndarray]
    stops: list[np.ndarray]
    interactions: list[np.ndarray]
    near_pairs: np.ndarray
    _il_ptr: list[np.ndarray] = field(repr=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def n_nodes(self, level: int) -> int:
        return 1 << (self.dim * level)

    @property
    def leaf_level(self) -> int:
        return self.depth

    def box_index(self, level: int, node: int) -> BoxIndex:
        n = 1 << level
        return BoxIndex(level, np.unravel_index(node, (n,) * self.dim))

    def node_id(self, box: BoxIndex) -> int:
        if box.dim != self.dim:
            raise GeometryError("box dimension does not match tree")
        if box.level > self.depth:
            raise GeometryError(f"level {box.level} exceeds tree depth {self.depth}")
        n = 1 << box.level
        return int(np.ravel_multi_index(box.grid, (n,) * self.dim))

    def cube(self, level: int, node: int) -> HyperCube:
        box = self.box_index(level, node)
        h = self.domain.side / (1 << level)
        return HyperCube(tuple(lo + g * h for lo, g in zip(self.domain.lower, box.grid)), h)

    def index_range(self, level: int, node: int) -> tuple[int, int]:
        return int(self.starts[level][node]), int(self.stops[level][node])

    def size(self, level: int, node: int) -> int:
        s, e = self.index_range(level, node)
        return e - s

    def original_indices(self, level: int, node: int) -> np.ndarray:
        s, e = self.index_range(level, node)
        return self.perm[s:e]

    def children(self, level: int, node: int) -> np.ndarray:
        if level >= self.depth:
            return np.empty(0, dtype=np.int64)
        g = np.asarray(self.box_index(level, node).grid)
        offs = _grids(1, self.dim)
        n = 1 << (level + 1)
        return np.ravel_multi_index(tuple((2 * g + offs).T), (n,) * self.dim)

    def interaction_list(self, level: int, node: int) -> np.ndarray:
        """Node ids (same level) compressed against ``node``, ascending."""
        if level == 0:
            return np.empty(0, dtype=np.int64)
        ptr = self._il_ptr[level]
        return self.interactions[level][ptr[node]:ptr[node + 1], 1]

    def leaf_near_field(self, node: int) -> np.ndarray:
        ids = self.near_pairs
        lo, hi = np.searchsorted(ids[:, 0], [node, node + 1])
        return ids[lo:hi, 1]

    def iter_levels(self):
        """Yield ``(level, pairs)`` for every level with admissible blocks."""
        for level in range(1, self.depth + 1):
            yield level, self.interactions[level]


def _pair_lists(level: int, d: int, policy: AdmissibilityPolicy):
    """Admissible and near (non-admissible, non-self) pairs at ``level``.

    A child pair is examined only when its parents were neither the same
    node nor an already-compressed admissible pair, i.e. the candidates of a
    box are the children of its parent's non-admissible neighbours.  This
    places every admissible pair at exactly one level.
    """
    grids = _grids(level, d)
    n = 1 << level
    parent = grids >> 1
    il, near = [], []
    ids = np.arange(grids.shape[0], dtype=np.int64)
    for off in itertools.product(range(-3, 4), repeat=d):
        o = np.asarray(off, dtype=np.int64)
        if not o.any():
            continue
        other = grids + o
        valid = np.all((other >= 0) & (other < n), axis=1)
        if not valid.any():
            continue
        src = ids[valid]
        other = other[valid]
        po = (other >> 1) - parent[valid]
        pa = np.abs(po)
        parent_same = np.all(pa == 0, axis=1)
        parent_near = (np.max(pa, axis=1) <= 1) & ~policy.admits_offsets(po)
        keep = parent_same | parent_near
        if not keep.any():
            continue
        dst = np.ravel_multi_index(tuple(other[keep].T), (n,) * d)
        pairs = np.stack([src[keep], dst], axis=1)
        if policy.admits_offsets(o[None, :])[0]:
            il.append(pairs)
        else:
            near.append(pairs)

    def _sorted(chunks):
        if not chunks:
            return np.empty((0, 2), dtype=np.int64)
        p = np.concatenate(chunks)
        return p[np.lexsort((p[:, 1], p[:, 0]))]

    return _sorted(il), _sorted(near)


def _csr_ptr(pairs: np.ndarray, n_nodes: int) -> np.ndarray:
    return np.searchsorted(pairs[:, 0], np.arange(n_nodes + 1)).astype(np.int64)


def build_tree(
    points: np.ndarray,
    domain: HyperCube,
    n_max: int,
    policy: AdmissibilityPolicy | str = AdmissibilityPolicy.WEAK_DD,
) -> ClusterTree:
    """Build the balanced tree of depth ``min{l : every box holds <= n_max points}``."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise ValueError("point set is empty")
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    d = domain.dim
    if pts.shape[1] != d:
        raise GeometryError(f"points have dimension {pts.shape[1]}, domain has {d}")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("non-finite point coordinates")
    inside = domain.contains(pts)
    if not inside.all():
        bad = int(np.flatnonzero(~inside)[0])
        raise GeometryError(f"point {bad} lies outside the domain: {pts[bad]}")
    policy = AdmissibilityPolicy.parse(policy)

    t = (pts - np.asarray(domain.lower)) / domain.side
    max_depth = _MAX_CODE_BITS // d
    depth = 0
    while True:
        g = _box_coords(t, depth)
        flat = np.ravel_multi_index(tuple(g.T), (1 << depth,) * d)
        counts = np.bincount(flat, minlength=1 << (d * depth))
        if counts.max() <= n_max:
            break
        depth += 1
        if depth > max_depth:
            raise GeometryError(
                f"more than {n_max} points cannot be separated within {max_depth} levels "
                "(duplicate points?)"
            )

    leaf = _box_coords(t, depth)
    codes = _morton(leaf, depth)
    perm = np.argsort(codes, kind="stable")
    codes = codes[perm]
    iperm = np.empty_like(perm)
    iperm[perm] = np.arange(perm.size)

    starts, stops = [], []
    for level in range(depth + 1):
        shift = np.uint64(d * (depth - level))
        level_codes = codes >> shift
        node_codes = _morton(_grids(level, d), level)
        starts.append(np.searchsorted(level_codes, node_codes, side="left").astype(np.int64))
        stops.append(np.searchsorted(level_codes, node_codes, side="right").astype(np.int64))

    interactions = [np.empty((0, 2), dtype=np.int64)]
    il_ptr = [np.zeros(2, dtype=np.int64)]
    near = np.empty((0, 2), dtype=np.int64)
    for level in range(1, depth + 1):
        il, nr = _pair_lists(level, d, policy)
        interactions.append(il)
        il_ptr.append(_csr_ptr(il, 1 << (d * level)))
        if level == depth:
            near = nr

    return ClusterTree(
        domain=domain,
        depth=depth,
        n_max=int(n_max),
        policy=policy,
        points=pts[perm],
        perm=perm,
        iperm=iperm,
        starts=starts,
        stops=stops,
        interactions=interactions,
        near_pairs=near,
        _il_ptr=il_ptr,
    )


def interaction_list(tree: ClusterTree, box: BoxIndex) -> list[BoxIndex]:
    """Same-level boxes compressed against ``box`` (empty for the root)."""
    node = tree.node_id(box)
    return [tree.box_index(box.level, int(j)) for j in tree.interaction_list(box.level, node)]


def leaf_near_field(tree: ClusterTree, box: BoxIndex) -> list[BoxIndex]:
    """Leaves stored densely against leaf ``box`` besides the self block."""
    if box.level != tree.depth:
        raise ValueError(f"{box} is not a leaf (tree depth {tree.depth})")
    node = tree.node_id(box)
    return [tree.box_index(box.level, int(j)) for j in tree.leaf_near_field(node)]
