"""Kernel catalog and dense kernel-matrix assembly.

All catalog kernels are radial: ``F(x, y) = f(||x - y||_2)``.  Complex
kernels are split into independent real and imaginary kernels.  Where
``x == y`` the matrix entry is the kernel's ``diagonal_value``; singular
kernels default to 0, smooth ones to ``f(0)``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
from scipy import special

from .errors import GuardError, KernelEvaluationError

__all__ = [
    "KernelSpec",
    "CATALOG",
    "KERNEL_FAMILIES",
    "get_kernel",
    "kernel_ids",
    "eval_kernel",
    "assemble_dense",
    "distances",
    "DENSE_ENTRY_CAP",
]

DENSE_ENTRY_CAP = 400_000_000


def _safe(f):
    def wrapped(r):
        with np.errstate(divide="ignore", invalid="ignore"):
            return f(r)
    return wrapped


@dataclass(frozen=True)
class KernelSpec:
    """A kernel function plus its convention on the diagonal ``x == y``.

    ``radial`` kernels take an array of distances; non-radial ones take
    ``(targets, sources)`` coordinate arrays and return the full block.
    """

    name: str
    func: Callable
    singular: bool = False
    diagonal_value: float | None = None
    radial: bool = True

    def with_diagonal(self, value: float | None) -> "KernelSpec":
        return replace(self, diagonal_value=value)

    def of_r(self, r: np.ndarray) -> np.ndarray:
        """Evaluate on distances, applying the diagonal convention at r == 0."""
        if not self.radial:
            raise TypeError(f"kernel {self.name!r} is not radial")
        r = np.asarray(r, dtype=float)
        out = np.asarray(_safe(self.func)(r), dtype=float)
        zero = r == 0
        if zero.any():
            if self.diagonal_value is None:
                if self.singular:
                    raise KernelEvaluationError(
                        f"kernel {self.name!r} is singular at r == 0 and has no diagonal value"
                    )
            else:
                out = np.where(zero, self.diagonal_value, out)
        return out

    def block(self, targets: np.ndarray, sources: np.ndarray) -> np.ndarray:
        """Kernel matrix ``K[i, j] = F(targets[i], sources[j])``."""
        x = _as_points(targets)
        y = _as_points(sources)
        if x.shape[1] != y.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
        if self.radial:
            return self.of_r(distances(x, y))
        out = np.asarray(self.func(x, y), dtype=float)
        if out.shape != (x.shape[0], y.shape[0]):
            raise KernelEvaluationError(
                f"callback returned shape {out.shape}, expected {(x.shape[0], y.shape[0])}"
            )
        return out

    def __call__(self, x, y) -> float:
        return eval_kernel(self, x, y)

    @classmethod
    def from_callable(
        cls,
        func: Callable,
        name: str = "user",
        *,
        radial: bool = False,
        diagonal_value: float | None = None,
    ) -> "KernelSpec":
        """Wrap a user kernel.  Non-radial callbacks map ``(X, Y) -> block``."""
        return cls(name=name, func=func, singular=False,
                   diagonal_value=diagonal_value, radial=radial)


def _as_points(p) -> np.ndarray:
    a = np.asarray(p, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[:, None]
    return a


def distances(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix without the cancellation of the Gram trick."""
    if x.shape[1] == 1:
        return np.abs(x[:, 0:1] - y[:, 0][None, :])
    # per-axis accumulation: cheaper than cdist for the many small blocks
    r2 = np.square(x[:, 0:1] - y[:, 0])
    for k in range(1, x.shape[1]):
        r2 += np.square(x[:, k:k + 1] - y[:, k])
    return np.sqrt(r2, out=r2)


def _hankel2_real(r):
    return special.jv(2, r)


def _hankel2_imag(r):
    return special.yv(2, r)


def _make_catalog() -> dict[str, KernelSpec]:
    smooth = [
        ("r", lambda r: r),
        ("sin_r", np.sin),
        ("inv_sqrt_1pr", lambda r: 1.0 / np.sqrt(1.0 + r)),
        ("exp_neg_r", lambda r: np.exp(-r)),
        ("exp_neg_r2", lambda r: np.exp(-r * r)),
    ]
    singular = [
        ("one_over_r", lambda r: 1.0 / r),
        ("log_r", np.log),
        ("helmholtz3d_real", lambda r: np.cos(r) / r),
        ("helmholtz3d_imag", lambda r: np.sin(r) / r),
        ("hankel2_real", _hankel2_real),
        ("hankel2_imag", _hankel2_imag),
        ("laplace4d", lambda r: -1.0 / (4.0 * np.pi**2 * r * r)),
    ]
    cat = {}
    for name, f in singular:
        cat[name] = KernelSpec(name, f, singular=True, diagonal_value=0.0)
    for name, f in smooth:
        cat[name] = KernelSpec(name, f, singular=False, diagonal_value=float(f(np.float64(0.0))))
    return cat


CATALOG: dict[str, KernelSpec] = _make_catalog()

# F1..F8 of the rank experiments; F3 and F4 appear as real/imag pairs.
KERNEL_FAMILIES: dict[str, tuple[str, ...]] = {
    "F1": ("one_over_r",),
    "F2": ("log_r",),
    "F3": ("helmholtz3d_real", "helmholtz3d_imag"),
    "F4": ("hankel2_real", "hankel2_imag"),
    "F5": ("r",),
    "F6": ("sin_r",),
    "F7": ("inv_sqrt_1pr",),
    "F8": ("exp_neg_r",),
}

_ALIASES = {
    "inverse_r": "one_over_r", "1/r": "one_over_r", "f1": "one_over_r",
    "log": "log_r", "f2": "log_r",
    "matern": "exp_neg_r", "f8": "exp_neg_r",
    "gaussian": "exp_neg_r2",
    "f5": "r", "f6": "sin_r", "f7": "inv_sqrt_1pr",
}


def kernel_ids() -> list[str]:
    return sorted(CATALOG)


def get_kernel(name: str, diagonal_value: float | None | str = "default") -> KernelSpec:
    """Look up a catalog kernel by id (``"log_r"``, ``"one_over_r"``, ...)."""
    key = name.strip().lower()
    key = _ALIASES.get(key, key)
    try:
        spec = CATALOG[key]
    except KeyError:
        raise ValueError(f"unknown kernel {name!r}; choose from {', '.join(kernel_ids())}") from None
    if diagonal_value != "default":
        spec = spec.with_diagonal(diagonal_value)
    return spec


def eval_kernel(spec: KernelSpec, x, y) -> float:
    """Single kernel entry ``F(x, y)``."""
    xa = np.atleast_1d(np.asarray(x, dtype=float))
    ya = np.atleast_1d(np.asarray(y, dtype=float))
    if xa.shape != ya.shape or xa.ndim != 1:
        raise ValueError(f"points must be 1-D of equal length, got {xa.shape} and {ya.shape}")
    return float(spec.block(xa[None, :], ya[None, :])[0, 0])


def assemble_dense(
    spec: KernelSpec,
    targets: np.ndarray,
    sources: np.ndarray,
    cap: int = DENSE_ENTRY_CAP,
) -> np.ndarray:
    """Dense ``T x N`` kernel matrix in row-major (C) order."""
    x = _as_points(targets)
    y = _as_points(sources)
    if x.shape[0] == 0 or y.shape[0] == 0:
        raise ValueError("targets and sources must be non-empty")
    entries = x.shape[0] * y.shape[0]
    if entries > cap:
        raise GuardError(f"dense assembly of {entries} entries exceeds cap {cap}")
    return spec.block(x, y)
