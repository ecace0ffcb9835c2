"""Dataset collection and grid-discretized ground-truth values."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..tabular import TabularMDP, TabularPolicy, solve_value_function
from .control import ControlEnv
from .dataset import TransitionDataset
from .rng import stream

MODES = ("uniform-state", "on-policy-rollout")


def collect_dataset(env: ControlEnv, n: int, mode: str = "uniform-state", seed: int = 0,
                    policy=None, policy_id: str = "scripted", shards: int = 1) -> TransitionDataset:
    """n transitions under ``policy`` (default: the env's scripted policy).

    Shard k of ``shards`` draws from ``stream(seed, k)`` and covers a
    contiguous block of indices; output order is shard then step.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; valid: {', '.join(MODES)}")
    policy = env.policy if policy is None else policy
    parts = []
    for k, idx in enumerate(np.array_split(np.arange(n), shards)):
        if not len(idx):
            continue
        rng = stream(seed, k)
        if mode == "uniform-state":
            parts.append(_uniform_block(env, policy, len(idx), rng))
        else:
            parts.append(_rollout_block(env, policy, len(idx), rng))
    ds = TransitionDataset.concat(parts)
    ds.mode, ds.seed, ds.env, ds.policy_id = mode, seed, env.name, policy_id
    return ds


def _uniform_block(env, policy, n, rng) -> TransitionDataset:
    s = env.sample_uniform(n, rng)
    a = policy(s, rng)
    sp, r, term = env.step(s, a, rng)
    return TransitionDataset(s, np.asarray(a, float).reshape(n, -1), r, sp, term)


def _rollout_block(env, policy, n, rng) -> TransitionDataset:
    rows = []
    s = env.initial_states(1, rng)
    t = 0
    while len(rows) < n:
        a = policy(s, rng)
        sp, r, term = env.step(s, a, rng)
        rows.append((s[0], np.atleast_1d(np.asarray(a, float))[0], r[0], sp[0], term[0]))
        t += 1
        if term[0] or t >= env.episode_horizon:
            s, t = env.initial_states(1, rng), 0
        else:
            s = sp
    S, A, R, SP, T = zip(*rows)
    return TransitionDataset(np.array(S), np.array(A)[:, None], np.array(R), np.array(SP), np.array(T))


@dataclass
class GridValueTable:
    """Values of a discretized policy-evaluation problem on a regular grid.

    ``edges[k]`` are the cell boundaries along ``dims[k]``; ``values`` has
    one entry per cell in C order over the grid shape.
    """

    dims: tuple[int, ...]
    edges: list[np.ndarray]
    values: np.ndarray
    centers: np.ndarray  # (n_cells, len(dims))
    unreachable: np.ndarray  # cells with no incoming transitions
    reference_state: np.ndarray
    gamma: float

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(e) - 1 for e in self.edges)

    def cell_index(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, float))
        idx = []
        for k, d in enumerate(self.dims):
            e = self.edges[k]
            i = np.searchsorted(e, s[:, d], side="right") - 1
            idx.append(np.clip(i, 0, len(e) - 2))
        return np.ravel_multi_index(idx, self.shape)

    def lookup(self, states) -> np.ndarray:
        """Nearest-cell value for full-dimensional states."""
        return self.values[self.cell_index(states)]

    def eval_states(self) -> np.ndarray:
        """Full-dimensional states at cell centers."""
        out = np.tile(self.reference_state, (len(self.centers), 1))
        out[:, list(self.dims)] = self.centers
        return out


def discretized_true_values(env: ControlEnv, gamma: float, grid: tuple[int, ...] | None = None,
                            samples_per_cell: int = 200, seed: int = 0, policy=None) -> GridValueTable:
    """Grid MDP from Monte-Carlo transitions out of each cell center, solved exactly.

    The grid covers ``env.value_dims`` of the state box; other coordinates
    are held at ``env.reference_state``. Terminal outcomes go to one extra
    absorbing state.
    """
    grid = tuple(env.default_grid if grid is None else grid)
    if len(grid) != len(env.value_dims):
        raise ValueError(f"grid needs {len(env.value_dims)} resolutions, got {len(grid)}")
    if any(g < 1 for g in grid):
        raise ValueError("grid resolutions must be positive")
    policy = env.policy if policy is None else policy
    edges = [np.linspace(env.low[d], env.high[d], g + 1) for d, g in zip(env.value_dims, grid)]
    mids = [(e[:-1] + e[1:]) / 2 for e in edges]
    centers = np.stack([m.ravel() for m in np.meshgrid(*mids, indexing="ij")], axis=1)
    n_cells = len(centers)
    table = GridValueTable(tuple(env.value_dims), edges, np.zeros(n_cells), centers,
                           np.zeros(n_cells, bool), np.asarray(env.reference_state, float), gamma)
    starts = np.repeat(table.eval_states(), samples_per_cell, axis=0)
    rng = stream(seed, 0)
    a = policy(starts, rng)
    nxt, r, term = env.step(starts, a, rng)
    src = np.repeat(np.arange(n_cells), samples_per_cell)
    dst = np.where(term, n_cells, table.cell_index(nxt))
    S = n_cells + 1
    counts = np.zeros((S, S))
    np.add.at(counts, (src, dst), 1.0)
    counts[n_cells, n_cells] = 1.0
    P = counts / counts.sum(axis=1, keepdims=True)
    R = np.zeros(S)
    R[:n_cells] = np.bincount(src, weights=r, minlength=n_cells) / samples_per_cell
    term_mask = np.zeros(S, bool)
    term_mask[n_cells] = True
    mdp = TabularMDP(P[:, None, :], R[:, None], gamma, term_mask)
    V = solve_value_function(mdp, TabularPolicy(np.ones((S, 1))), tol=1e-9)
    table.values = V[:n_cells]
    incoming = counts[:n_cells, :n_cells].sum(axis=0)
    table.unreachable = incoming == 0
    return table
