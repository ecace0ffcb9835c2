"""Transition datasets and their CSV + sidecar-metadata file format."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np


class Transition(NamedTuple):
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    terminal: bool


@dataclass
class TransitionDataset:
    states: np.ndarray  # (n, d)
    actions: np.ndarray  # (n, k); discrete actions stored as a single column
    rewards: np.ndarray  # (n,)
    next_states: np.ndarray  # (n, d)
    terminals: np.ndarray  # (n,) bool
    mode: str = "uniform-state"
    seed: int = 0
    env: str = ""
    policy_id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        self.next_states = np.atleast_2d(np.asarray(self.next_states, dtype=float))
        self.actions = np.asarray(self.actions, dtype=float).reshape(len(self.states), -1)
        self.rewards = np.asarray(self.rewards, dtype=float).reshape(-1)
        self.terminals = np.asarray(self.terminals, dtype=bool).reshape(-1)
        n = len(self.states)
        if n == 0:
            raise ValueError("dataset must be nonempty")
        if self.next_states.shape != self.states.shape:
            raise ValueError("state and next_state dimensions differ")
        if not (len(self.rewards) == len(self.terminals) == n):
            raise ValueError("reward/terminal lengths do not match the number of states")
        if not np.all(np.isfinite(self.rewards)):
            raise ValueError("rewards must be finite")

    def __len__(self) -> int:
        return len(self.states)

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]

    def __iter__(self) -> Iterator[Transition]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Transition:
        return Transition(self.states[i], self.actions[i], float(self.rewards[i]),
                          self.next_states[i], bool(self.terminals[i]))

    def subset(self, idx) -> "TransitionDataset":
        idx = np.asarray(idx)
        return TransitionDataset(self.states[idx], self.actions[idx], self.rewards[idx],
                                 self.next_states[idx], self.terminals[idx], self.mode,
                                 self.seed, self.env, self.policy_id, dict(self.meta))

    def mapped(self, fn) -> "TransitionDataset":
        """Copy with ``fn`` applied to states and next states (e.g. normalization)."""
        return TransitionDataset(fn(self.states), self.actions, self.rewards, fn(self.next_states),
                                 self.terminals, self.mode, self.seed, self.env, self.policy_id,
                                 dict(self.meta))

    @classmethod
    def concat(cls, parts: list["TransitionDataset"]) -> "TransitionDataset":
        first = parts[0]
        return cls(
            np.concatenate([p.states for p in parts]),
            np.concatenate([p.actions for p in parts]),
            np.concatenate([p.rewards for p in parts]),
            np.concatenate([p.next_states for p in parts]),
            np.concatenate([p.terminals for p in parts]),
            first.mode, first.seed, first.env, first.policy_id, dict(first.meta),
        )


def write_kv(path, items: dict) -> None:
    lines = [f"{k} = {v}" for k, v in items.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_kv(path) -> dict:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def save_dataset(ds: TransitionDataset, path) -> tuple[Path, Path]:
    """Write ``path`` (CSV) and ``path + '.meta'`` (flat key-value)."""
    path = Path(path)
    d, k = ds.state_dim, ds.actions.shape[1]
    header = ([f"s_{i}" for i in range(d)] + [f"a_{i}" for i in range(k)] + ["r"]
              + [f"sp_{i}" for i in range(d)] + ["terminal", "seed"])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(ds)):
            row = ([repr(float(x)) for x in ds.states[i]] + [repr(float(x)) for x in ds.actions[i]]
                   + [repr(float(ds.rewards[i]))] + [repr(float(x)) for x in ds.next_states[i]]
                   + [str(int(ds.terminals[i])), str(ds.seed)])
            w.writerow(row)
    meta_path = Path(str(path) + ".meta")
    write_kv(meta_path, {"env": ds.env, "policy": ds.policy_id, "mode": ds.mode, "seed": ds.seed,
                         "n": len(ds), "state_dim": d, "action_dim": k, **ds.meta})
    return path, meta_path


def load_dataset(path) -> TransitionDataset:
    path = Path(path)
    with path.open() as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array(rows[1:], dtype=float)
    d = sum(1 for h in header if h.startswith("s_"))
    k = sum(1 for h in header if h.startswith("a_"))
    meta_path = Path(str(path) + ".meta")
    meta = read_kv(meta_path) if meta_path.exists() else {}
    extra = {key: v for key, v in meta.items()
             if key not in ("env", "policy", "mode", "seed", "n", "state_dim", "action_dim")}
    return TransitionDataset(
        body[:, :d], body[:, d:d + k], body[:, d + k], body[:, d + k + 1:2 * d + k + 1],
        body[:, 2 * d + k + 1].astype(bool), meta.get("mode", "uniform-state"),
        int(meta.get("seed", body[0, -1])), meta.get("env", ""), meta.get("policy", ""), extra,
    )
