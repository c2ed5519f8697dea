"""Tensor-product Chebyshev interpolation of kernels along the source variable.

The interpolant ``F~(x, y) = sum_k F(x, y^k) R_k(y)`` uses the extrema nodes
``cos(pi k / p)`` per axis, mapped affinely into the source cube, and
``R_k`` is the product of 1-D Lagrange polynomials.  Its term count bounds
the numerical rank of the kernel block, which is how the rank theorems are
checked empirically.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import HyperCube
from .kernels import KernelSpec

__all__ = [
    "ChebyshevGrid",
    "nodes",
    "lagrange_weights",
    "interpolant_factors",
    "v_d_constant",
    "interpolation_decay",
    "fit_decay",
    "min_interpolation_rank",
]


def nodes(p: int) -> np.ndarray:
    """``p + 1`` reference nodes ``cos(pi k / p)``, k = 0..p (descending); ``[0]`` for p = 0."""
    if p < 0:
        raise ValueError("p must be non-negative")
    if p == 0:
        return np.zeros(1)
    return np.cos(np.pi * np.arange(p + 1) / p)


def lagrange_weights(grid_axis: Sequence[float], y) -> np.ndarray:
    """Lagrange basis ``L_j(y)`` on ``grid_axis``.

    Scalar ``y`` gives a vector of length ``p + 1``; an array of ``m``
    values gives an ``(m, p + 1)`` matrix.
    """
    xs = np.asarray(grid_axis, dtype=float)
    if np.unique(xs).size != xs.size:
        raise ValueError("interpolation nodes must be distinct")
    ya = np.asarray(y, dtype=float)
    scalar = ya.ndim == 0
    ya = np.atleast_1d(ya)
    n = xs.size
    out = np.ones((ya.size, n))
    for j in range(n):
        for k in range(n):
            if k != j:
                out[:, j] *= (ya - xs[k]) / (xs[j] - xs[k])
    return out[0] if scalar else out


@dataclass(frozen=True)
class ChebyshevGrid:
    """Tensor Chebyshev grid of degree ``p`` mapped into ``cube``.

    ``points`` enumerates multi-indices lexicographically, axis 0 slowest.
    """

    p: int
    cube: HyperCube

    @property
    def d(self) -> int:
        return self.cube.dim

    def axis_nodes(self, axis: int) -> np.ndarray:
        lo = self.cube.lower[axis]
        return lo + 0.5 * self.cube.side * (1.0 + nodes(self.p))

    @property
    def points(self) -> np.ndarray:
        return self.subgrid(range(self.d))

    def subgrid(self, axes: Sequence[int]) -> np.ndarray:
        """Tensor nodes over ``axes`` only, shape ``((p+1)^|axes|, |axes|)``."""
        per_axis = [self.axis_nodes(a) for a in axes]
        return np.array(list(itertools.product(*per_axis))).reshape(-1, len(per_axis))

    def weights(self, coords: np.ndarray, axes: Sequence[int]) -> np.ndarray:
        """Tensor Lagrange weights ``R_k(y)`` over ``axes``; shape ``(m, n_points)``."""
        ref = nodes(self.p)
        lo = np.asarray(self.cube.lower)
        out = np.ones((1, coords.shape[0]))
        for a in axes:
            t = 2.0 * (coords[:, a] - lo[a]) / self.cube.side - 1.0
            w = lagrange_weights(ref, t).T  # (p+1, n)
            out = (out[:, None, :] * w[None, :, :]).reshape(-1, coords.shape[0])
        return out


def _points(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a[:, None] if a.ndim == 1 else a


def interpolant_factors(
    spec: KernelSpec,
    targets: np.ndarray,
    sources: np.ndarray,
    cube: HyperCube,
    p: int,
    axes: Sequence[int] | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Low-rank factors ``U @ V ~= K(targets, sources)`` from interpolation in ``cube``.

    With ``axes`` covering every dimension ``U = F(targets, chebgrid)`` has
    ``(p+1)^d`` columns.  With a proper subset, the sources are grouped by
    their coordinates on the remaining axes and each group gets its own
    ``(p+1)^|axes|`` interpolation nodes whose free coordinates take the
    group's values, giving ``groups * (p+1)^|axes|`` terms.
    """
    if p < 0:
        raise ValueError("p must be non-negative")
    x = _points(targets)
    y = _points(sources)
    d = cube.dim
    if x.shape[1] != d or y.shape[1] != d:
        raise ValueError("targets/sources dimension must match cube")
    axes = tuple(range(d)) if axes is None else tuple(sorted(set(int(a) for a in axes)))
    if not axes:
        raise ValueError("axes must be non-empty")
    if any(a < 0 or a >= d for a in axes):
        raise ValueError(f"axes {axes} out of range for d={d}")
    grid = ChebyshevGrid(p, cube)
    sub = grid.subgrid(axes)
    w = grid.weights(y, axes)
    free = [a for a in range(d) if a not in axes]
    if not free:
        return spec.block(x, sub), w

    keys, group = np.unique(y[:, free], axis=0, return_inverse=True)
    group = np.asarray(group).reshape(-1)
    m = sub.shape[0]
    nodes_full = np.empty((keys.shape[0] * m, d))
    for g in range(keys.shape[0]):
        blk = nodes_full[g * m:(g + 1) * m]
        blk[:, list(axes)] = sub
        blk[:, free] = keys[g]
    u = spec.block(x, nodes_full)
    v = np.zeros((keys.shape[0] * m, y.shape[0]))
    for g in range(keys.shape[0]):
        cols = np.flatnonzero(group == g)
        v[g * m:(g + 1) * m, cols] = w[:, cols]
    return u, v


def v_d_constant(d: int, rho: float) -> float:
    """Dimension constant of the tensor Chebyshev error bound; independent of p."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if not rho > 1:
        raise ValueError("rho must exceed 1")
    q = 1.0 - 1.0 / rho
    total = float(d)
    for l in range(2, d + 1):
        total += 2.0 ** (l - 1) * ((l - 1) + 2.0 ** (l - 1) - 1) / q ** (l - 1)
    return total


def _sample_grid(cube: HyperCube, per_axis: int, cap: int) -> np.ndarray:
    d = cube.dim
    per_axis = max(2, min(per_axis, int(np.floor(cap ** (1.0 / d)))))
    axes = [np.linspace(lo, lo + cube.side, per_axis) for lo in cube.lower]
    return np.array(list(itertools.product(*axes)))


def interpolation_decay(
    spec: KernelSpec,
    targets: np.ndarray,
    cube: HyperCube,
    p_list: Sequence[int],
    axes: Sequence[int] | None = None,
    samples_per_axis: int = 20,
    sample_cap: int = 50**4,
) -> list[tuple[int, float]]:
    """Max interpolation error over targets x a sample grid of ``cube``, per degree."""
    x = _points(targets)
    y = _sample_grid(cube, samples_per_axis, sample_cap)
    exact = spec.block(x, y)
    out = []
    for p in p_list:
        u, v = interpolant_factors(spec, x, y, cube, int(p), axes)
        out.append((int(p), float(np.max(np.abs(exact - u @ v)))))
    return out


def fit_decay(records: Sequence[tuple[int, float]], floor: float = 0.0) -> tuple[float, float, float]:
    """Least-squares fit ``err ~ C rho^-p`` in log space.

    Records with ``err <= floor`` (round-off plateau) are dropped.  Returns
    ``(C, rho, residual)`` with the residual the RMS misfit of ``log err``.
    """
    pts = [(p, e) for p, e in records if e > floor and e > 0]
    if len(pts) < 2:
        raise ValueError("need at least two errors above the floor to fit a decay rate")
    p = np.array([q for q, _ in pts], dtype=float)
    le = np.log([e for _, e in pts])
    a = np.vstack([np.ones_like(p), -p]).T
    coef, *_ = np.linalg.lstsq(a, le, rcond=None)
    resid = le - a @ coef
    return float(np.exp(coef[0])), float(np.exp(coef[1])), float(np.sqrt(np.mean(resid**2)))


def min_interpolation_rank(
    spec: KernelSpec,
    targets: np.ndarray,
    sources: np.ndarray,
    cube: HyperCube,
    delta: float,
    p_max: int = 40,
) -> tuple[int, int] | None:
    """Smallest ``p`` with ``max|K - K~| < delta max|K|``; returns ``(p, (p+1)^d)``."""
    k = spec.block(_points(targets), _points(sources))
    scale = np.max(np.abs(k))
    for p in range(p_max + 1):
        u, v = interpolant_factors(spec, targets, sources, cube, p)
        if np.max(np.abs(k - u @ v)) < delta * scale:
            return p, (p + 1) ** cube.dim
    return None
