"""Positive-definite kernels over states and state-action pairs.

Gaussian kernels use the length-scale convention ``exp(-|x - y|^2 / h^2)``.
The median heuristic returns the squared length-scale ``(alpha * med)^2``,
so a kernel built from it uses ``h = sqrt(median_bandwidth(...))``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# K @ v is formed blockwise above FULL_GRAM_MAX points
FULL_GRAM_MAX = 2048
BLOCK_ROWS = 256


class KernelError(ValueError):
    pass


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[:, None] if x.ndim == 1 else x


def sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Pairwise squared Euclidean distances.

    Computed from explicit differences so that ``sq_dists(x, y) ==
    sq_dists(y, x).T`` bit for bit; the expanded |x|^2 - 2xy + |y|^2 form
    is neither exact at zero nor symmetric under rounding.
    """
    diff = x[:, None, :] - y[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class GaussianKernel:
    """exp(-|x - y|^2 / h^2) on state vectors."""

    h: float = 0.5

    def __post_init__(self):
        if not self.h > 0:
            raise KernelError(f"bandwidth must be positive, got {self.h}")

    kind = "gaussian-rbf"

    def eval(self, x, y) -> float:
        x, y = np.atleast_1d(np.asarray(x, float)), np.atleast_1d(np.asarray(y, float))
        if x.shape != y.shape:
            raise KernelError(f"dimension mismatch {x.shape} vs {y.shape}")
        d = x - y
        return float(np.exp(-np.dot(d, d) / self.h**2))

    def cross(self, x, y) -> np.ndarray:
        x, y = _as_points(x), _as_points(y)
        if x.shape[1] != y.shape[1]:
            raise KernelError(f"dimension mismatch {x.shape[1]} vs {y.shape[1]}")
        return np.exp(-sq_dists(x, y) / self.h**2)

    def gram(self, points) -> np.ndarray:
        p = _as_points(points)
        return self.cross(p, p)

    def diag(self, points) -> np.ndarray:
        return np.ones(len(_as_points(points)))

    def matvec(self, points, v: np.ndarray) -> np.ndarray:
        """K @ v, blockwise so large batches never hold the full Gram matrix."""
        p = _as_points(points)
        n = len(p)
        if n <= FULL_GRAM_MAX:
            return self.gram(p) @ v
        out = np.empty(n)
        for start in range(0, n, BLOCK_ROWS):
            out[start:start + BLOCK_ROWS] = self.cross(p[start:start + BLOCK_ROWS], p) @ v
        return out


@dataclass(frozen=True)
class StateActionKernel:
    """exp(-(|s - s'|^2 + |a - a'|^2) / h^2) over concatenated [s, a] rows.

    ``state_dim`` splits the row; ``action_weight = 0`` drops the action part,
    which gives the plain state kernel on the same rows.
    """

    h: float
    state_dim: int
    action_weight: float = 1.0

    kind = "state-action-rbf"

    def __post_init__(self):
        if not self.h > 0:
            raise KernelError(f"bandwidth must be positive, got {self.h}")

    def _split(self, z):
        z = _as_points(z)
        return z[:, : self.state_dim], z[:, self.state_dim:]

    def eval(self, x, y) -> float:
        return float(self.cross(np.atleast_2d(x), np.atleast_2d(y))[0, 0])

    def cross(self, x, y) -> np.ndarray:
        xs, xa = self._split(x)
        ys, ya = self._split(y)
        d2 = sq_dists(xs, ys)
        if self.action_weight and xa.shape[1]:
            d2 = d2 + self.action_weight * sq_dists(xa, ya)
        return np.exp(-d2 / self.h**2)

    def gram(self, points) -> np.ndarray:
        return self.cross(points, points)

    def diag(self, points) -> np.ndarray:
        return np.ones(len(_as_points(points)))

    def matvec(self, points, v):
        return self.gram(points) @ v


@dataclass(frozen=True)
class LinearFeatureKernel:
    """phi(x)^T phi(y) for a feature map acting on a batch of states."""

    features: Callable[[np.ndarray], np.ndarray]

    kind = "linear-feature"

    def eval(self, x, y) -> float:
        fx = self.features(np.atleast_2d(np.asarray(x, float)))[0]
        fy = self.features(np.atleast_2d(np.asarray(y, float)))[0]
        if fx.shape != fy.shape:
            raise KernelError("feature dimension mismatch")
        return float(fx @ fy)

    def cross(self, x, y) -> np.ndarray:
        return self.features(_as_points(x)) @ self.features(_as_points(y)).T

    def gram(self, points) -> np.ndarray:
        F = self.features(_as_points(points))
        return F @ F.T

    def diag(self, points) -> np.ndarray:
        F = self.features(_as_points(points))
        return np.einsum("ij,ij->i", F, F)

    def matvec(self, points, v):
        F = self.features(_as_points(points))
        return F @ (F.T @ v)


@dataclass(frozen=True)
class MatrixKernel:
    """Kernel over integer state ids given by an explicit symmetric matrix."""

    K: np.ndarray

    kind = "matrix"

    def _idx(self, points):
        return _as_points(points)[:, 0].astype(int)

    def eval(self, x, y) -> float:
        return float(self.K[int(np.ravel(x)[0]), int(np.ravel(y)[0])])

    def cross(self, x, y):
        return self.K[np.ix_(self._idx(x), self._idx(y))]

    def gram(self, points):
        i = self._idx(points)
        return self.K[np.ix_(i, i)]

    def diag(self, points):
        i = self._idx(points)
        return self.K[i, i]

    def matvec(self, points, v):
        # aggregate by state id: O(n + S^2) instead of O(n^2)
        i = self._idx(points)
        S = self.K.shape[0]
        agg = np.bincount(i, weights=v, minlength=S)
        return (self.K @ agg)[i]


def median_bandwidth(points, alpha: float = 1.0) -> float:
    """(alpha * median pairwise distance)^2 over all n(n-1)/2 pairs."""
    p = _as_points(points)
    if len(p) < 2:
        raise KernelError("median heuristic needs at least 2 points")
    iu = np.triu_indices(len(p), k=1)
    dist = np.sqrt(sq_dists(p, p)[iu])
    med = float(np.median(dist))
    if med == 0.0:
        raise KernelError("median pairwise distance is zero (identical points)")
    return (alpha * med) ** 2


def gram_matrix(kernel, points) -> np.ndarray:
    return kernel.gram(points)


def make_kernel(kind: str, h: float | None = None, features=None, state_dim: int | None = None):
    """Build a kernel from config values (``kernel.kind``, ``kernel.h``)."""
    if kind in ("gaussian", "gaussian-rbf", "rbf"):
        return GaussianKernel(0.5 if h is None else h)
    if kind in ("linear", "linear-feature"):
        if features is None:
            raise KernelError("linear-feature kernel needs a feature map")
        return LinearFeatureKernel(features)
    if kind == "state-action-rbf":
        if h is None or state_dim is None:
            raise KernelError("state-action kernel needs h and state_dim")
        return StateActionKernel(h, state_dim)
    raise KernelError(f"unknown kernel kind {kind!r}; valid: gaussian-rbf, linear-feature, state-action-rbf")
