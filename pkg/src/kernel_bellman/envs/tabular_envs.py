"""Finite-state linear-feature instances: the stochastic TVR chain and Baird's star."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..approx import TableFeatures
from ..tabular import StateDistribution, TabularMDP, TabularPolicy, solve_value_function
from .dataset import TransitionDataset
from .rng import stream

TVR_TRUE_WEIGHTS = np.array([0.8, 1.0, 0.0])


@dataclass
class LinearChainSpec:
    name: str
    mdp: TabularMDP
    policy: TabularPolicy
    features: np.ndarray  # Phi, one row per state
    sampling: StateDistribution  # distribution of source states in collected data
    true_weights: np.ndarray | None = None

    def __post_init__(self):
        if self.features.shape[0] != self.mdp.n_states:
            raise ValueError("feature rows must match the number of states")
        if self.true_weights is not None:
            V = solve_value_function(self.mdp, self.policy)
            gap = np.max(np.abs(self.features @ self.true_weights - V))
            assert gap <= 1e-8, f"{self.name}: true weights do not realize V^pi (gap {gap:.2e})"

    @property
    def feature_map(self) -> TableFeatures:
        return TableFeatures(self.features)

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def true_values(self) -> np.ndarray:
        return solve_value_function(self.mdp, self.policy)

    def eval_states(self) -> np.ndarray:
        return np.arange(self.mdp.n_states, dtype=float)[:, None]


def make_tvr_chain() -> LinearChainSpec:
    """Stochastic 4+1-state chain, one action, gamma = 1.

    States 0..3 are nonterminal, 4 is terminal. Features:
    s0 -> w1, s1 -> w2, s2 -> w3, s3 -> 2 w3, terminal -> 0.
    Transitions:
        s0 -> s1 (0.8), s2 (0.2)
        s1 -> s3 (0.1), terminal (0.9)
        s2 -> s3
        s3 -> s0 (0.05), s2 (0.03), s3 (0.9), terminal (0.02)
    Rewards are solved so that V^pi = Phi [0.8, 1.0, 0] exactly. Sampling
    source states uniformly makes the expected TD update matrix have a
    negative eigenvalue, so TD(0) and FVI are unstable, and the
    s0/s1 branching biases the residual-gradient minimizer.
    """
    Phi = np.array([[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 2], [0, 0, 0]], dtype=float)
    P = np.zeros((5, 1, 5))
    P[0, 0] = [0, 0.8, 0.2, 0, 0]
    P[1, 0] = [0, 0, 0, 0.1, 0.9]
    P[2, 0] = [0, 0, 0, 1.0, 0]
    P[3, 0] = [0.05, 0, 0.03, 0.9, 0.02]
    P[4, 0] = [0, 0, 0, 0, 1.0]
    term = np.array([False, False, False, False, True])
    V = Phi @ TVR_TRUE_WEIGHTS
    P_next = P[:, 0].copy()
    P_next[term] = 0.0
    R = (V - P_next @ V)[:, None]
    R[term] = 0.0
    mdp = TabularMDP(P, R, 1.0, term)
    sampling = StateDistribution(np.array([0.25, 0.25, 0.25, 0.25, 0.0]))
    return LinearChainSpec("tvr-chain", mdp, TabularPolicy(np.ones((5, 1))), Phi, sampling,
                           TVR_TRUE_WEIGHTS.copy())


def make_baird_star(discount: float = 0.99) -> LinearChainSpec:
    """Baird's 7-state star with 8 features and zero rewards.

    The evaluated policy always moves to the hub (state 6); data is sampled
    with source states uniform over all 7 states, the off-policy regime in
    which semi-gradient TD diverges.
    """
    Phi = np.zeros((7, 8))
    for i in range(6):
        Phi[i, i] = 2.0
        Phi[i, 7] = 1.0
    Phi[6, 6] = 1.0
    Phi[6, 7] = 2.0
    P = np.zeros((7, 1, 7))
    P[:, 0, 6] = 1.0
    mdp = TabularMDP(P, np.zeros((7, 1)), discount)
    return LinearChainSpec("baird-star", mdp, TabularPolicy(np.ones((7, 1))), Phi,
                           StateDistribution.uniform(7), np.zeros(8))


BAIRD_INIT = np.array([1, 1, 1, 1, 1, 1, 10, 1], dtype=float)


def step_tabular(mdp: TabularMDP, policy: TabularPolicy, states: np.ndarray, rng: np.random.Generator):
    """Vectorized (a, r, s', terminal) for integer source states."""
    s = np.asarray(states, dtype=int)
    n = len(s)
    u = rng.random(n)
    a = np.minimum((policy.probs[s].cumsum(axis=1) < u[:, None]).sum(axis=1), mdp.n_actions - 1)
    u2 = rng.random(n)
    sp = np.minimum((mdp.transition[s, a].cumsum(axis=1) < u2[:, None]).sum(axis=1), mdp.n_states - 1)
    return a, mdp.reward[s, a], sp, mdp.terminal_mask[sp]


def collect_tabular(spec: LinearChainSpec, n: int, seed: int, shards: int = 1) -> TransitionDataset:
    """n transitions with source states drawn from ``spec.sampling``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    parts = []
    for k, idx in enumerate(np.array_split(np.arange(n), shards)):
        if not len(idx):
            continue
        rng = stream(seed, k)
        s = rng.choice(spec.mdp.n_states, size=len(idx), p=spec.sampling.mu)
        a, r, sp, term = step_tabular(spec.mdp, spec.policy, s, rng)
        parts.append(TransitionDataset(s[:, None].astype(float), a[:, None], r, sp[:, None].astype(float),
                                       term, "uniform-state", seed, spec.name, "fixed"))
    return TransitionDataset.concat(parts)
