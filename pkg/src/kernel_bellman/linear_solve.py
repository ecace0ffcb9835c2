"""Closed-form solutions for linear value functions.

With ``Z = X - gamma X'`` the TD fixed point solves ``(X^T Z) theta = X^T r``
and the linear-kernel V-statistic loss ``|X^T (r - Z theta)|^2 / n^2`` is
minimized by ``(Z^T X X^T Z)^{-1} Z^T X X^T r``. Both coincide whenever
``X^T Z`` is invertible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .envs.dataset import TransitionDataset


class SingularSystemError(np.linalg.LinAlgError):
    def __init__(self, msg: str, cond: float):
        super().__init__(f"{msg} (condition number estimate {cond:.3e})")
        self.cond = cond


@dataclass
class LinearSystemBundle:
    X: np.ndarray  # (n, d) features of s_i
    Xp: np.ndarray  # (n, d) features of s'_i, zero rows for terminal transitions
    r: np.ndarray  # (n,)
    gamma: float

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, float))
        self.Xp = np.atleast_2d(np.asarray(self.Xp, float))
        self.r = np.asarray(self.r, float).reshape(-1)
        if self.X.shape != self.Xp.shape or len(self.r) != len(self.X):
            raise ValueError("X, X' and r dimensions are inconsistent")

    @property
    def Z(self) -> np.ndarray:
        return self.X - self.gamma * self.Xp

    @classmethod
    def from_dataset(cls, ds: TransitionDataset, features, gamma: float) -> "LinearSystemBundle":
        Xp = features(ds.next_states) * (~ds.terminals)[:, None]
        return cls(features(ds.states), Xp, ds.rewards, gamma)


# LU solves above this condition number are refused rather than trusted
COND_LIMIT = 1e12


def _solve(A: np.ndarray, b: np.ndarray, what: str, ridge: float = 0.0) -> np.ndarray:
    if ridge:
        A = A + ridge * np.eye(len(A))
    cond = float(np.linalg.cond(A))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularSystemError(f"{what} is singular", cond)
    lu, piv = scipy.linalg.lu_factor(A)
    theta = scipy.linalg.lu_solve((lu, piv), b)
    # backward-error check on the pivoted solve
    resid = np.linalg.norm(A @ theta - b)
    if resid > 1e-8 * (np.linalg.norm(A) * np.linalg.norm(theta) + np.linalg.norm(b)):
        raise SingularSystemError(f"{what} solve residual {resid:.3e} too large", cond)
    return theta


def td_closed_form(bundle: LinearSystemBundle) -> np.ndarray:
    X, Z = bundle.X, bundle.Z
    return _solve(X.T @ Z, X.T @ bundle.r, "X^T Z")


def kloss_closed_form(bundle: LinearSystemBundle, ridge: float = 0.0) -> np.ndarray:
    """Minimizer of the linear-kernel V-statistic loss.

    ``ridge`` adds ``ridge * I`` to ``X X^T`` (off by default), which keeps
    the TD/kernel-loss equivalence while regularizing rank-deficient data.
    """
    X, Z, r = bundle.X, bundle.Z, bundle.r
    if ridge:
        G = X @ X.T + ridge * np.eye(len(X))
        return _solve(Z.T @ G @ Z, Z.T @ G @ r, "Z^T (X X^T + eps I) Z")
    XtZ = X.T @ Z
    return _solve(XtZ.T @ XtZ, XtZ.T @ (X.T @ r), "Z^T X X^T Z")


def neu_loss(bundle: LinearSystemBundle, theta) -> float:
    """|X^T delta|^2 / n^2 with delta = r - Z theta."""
    delta = bundle.r - bundle.Z @ np.asarray(theta, float)
    u = bundle.X.T @ delta
    return float(u @ u) / len(delta) ** 2


def neu_grad(bundle: LinearSystemBundle, theta) -> np.ndarray:
    X, Z = bundle.X, bundle.Z
    delta = bundle.r - Z @ np.asarray(theta, float)
    return -2.0 / len(delta) ** 2 * (Z.T @ (X @ (X.T @ delta)))


def certainty_equivalence(ds: TransitionDataset, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """Value of the empirical MDP built from transition counts.

    States are the distinct rows of ``ds.states``; returns (state_keys,
    values). A next state that never appears as a source (and is not
    flagged terminal) has no outgoing data and raises ValueError.
    """
    keys, src = np.unique(ds.states, axis=0, return_inverse=True)
    src = src.reshape(-1)
    index = {tuple(k): i for i, k in enumerate(keys)}
    S = len(keys)
    counts = np.zeros((S, S))
    nonterm = ~ds.terminals
    for i in np.flatnonzero(nonterm):
        j = index.get(tuple(ds.next_states[i]))
        if j is None:
            raise ValueError(f"next state {ds.next_states[i].tolist()} has no outgoing transitions")
        counts[src[i], j] += 1
    visits = np.bincount(src, minlength=S).astype(float)
    P_hat = counts / visits[:, None]
    r_hat = np.bincount(src, weights=ds.rewards, minlength=S) / visits
    V = np.linalg.solve(np.eye(S) - gamma * P_hat, r_hat)
    return keys, V


def one_hot_bundle(ds: TransitionDataset, gamma: float) -> tuple[np.ndarray, LinearSystemBundle]:
    """One-hot features over the distinct source states of ``ds``."""
    keys, src = np.unique(ds.states, axis=0, return_inverse=True)
    src = src.reshape(-1)
    index = {tuple(k): i for i, k in enumerate(keys)}
    S = len(keys)
    X = np.eye(S)[src]
    Xp = np.zeros_like(X)
    for i in range(len(ds)):
        if not ds.terminals[i]:
            j = index.get(tuple(ds.next_states[i]))
            if j is None:
                raise ValueError(f"next state {ds.next_states[i].tolist()} has no outgoing transitions")
            Xp[i, j] = 1.0
    return keys, LinearSystemBundle(X, Xp, ds.rewards, gamma)
