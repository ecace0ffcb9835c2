"""Exact finite-MDP computations used as ground truth.

Everything here works on dense numpy arrays and is cheap for a few dozen
states: policy evaluation, Bellman residuals, the exact kernel loss, the
dual kernel with its backward conditional, and the eigen/RKHS identities.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

PROB_TOL = 1e-12


class MDPError(ValueError):
    """Invalid tabular inputs (dimensions, probabilities, symmetry)."""


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class TabularMDP:
    transition: np.ndarray  # P[s, a, s']
    reward: np.ndarray  # R[s, a]
    discount: float
    terminal_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise MDPError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise MDPError(f"reward shape {R.shape} does not match transition {P.shape[:2]}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > PROB_TOL:
            raise MDPError("transition rows must be nonnegative and sum to 1")
        if not 0.0 <= self.discount <= 1.0:
            raise MDPError(f"discount must lie in [0, 1], got {self.discount}")
        term = self.terminal_mask
        term = np.zeros(P.shape[0], dtype=bool) if term is None else np.asarray(term, dtype=bool)
        if term.shape != (P.shape[0],):
            raise MDPError("terminal_mask must have one entry per state")
        for s in np.flatnonzero(term):
            if not np.allclose(P[s, :, s], 1.0) or np.any(R[s] != 0.0):
                raise MDPError(f"terminal state {s} must self-loop with zero reward")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "terminal_mask", term)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


@dataclass(frozen=True)
class TabularPolicy:
    probs: np.ndarray  # pi[s, a]

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 2:
            raise MDPError("policy probs must be a matrix")
        if np.any(p < 0) or np.max(np.abs(p.sum(axis=1) - 1.0)) > PROB_TOL:
            raise MDPError("policy rows must be nonnegative and sum to 1")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True)
class StateDistribution:
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        if mu.ndim != 1 or np.any(mu < 0) or abs(mu.sum() - 1.0) > PROB_TOL:
            raise MDPError("mu must be a nonnegative vector summing to 1")
        object.__setattr__(self, "mu", mu)

    @classmethod
    def uniform(cls, n: int) -> "StateDistribution":
        return cls(np.full(n, 1.0 / n))


def _check_policy(mdp: TabularMDP, policy: TabularPolicy) -> None:
    if policy.probs.shape != (mdp.n_states, mdp.n_actions):
        raise MDPError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({mdp.n_states}, {mdp.n_actions})"
        )


def _check_vector(mdp: TabularMDP, v: np.ndarray, name: str = "V") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (mdp.n_states,):
        raise MDPError(f"{name} must have length {mdp.n_states}, got shape {v.shape}")
    return v


def policy_matrices(mdp: TabularMDP, policy: TabularPolicy) -> tuple[np.ndarray, np.ndarray]:
    """State-to-state transition matrix and expected reward under ``policy``."""
    _check_policy(mdp, policy)
    P_pi = np.einsum("sa,sat->st", policy.probs, mdp.transition)
    r_pi = np.einsum("sa,sa->s", policy.probs, mdp.reward)
    # terminal states are absorbing with zero value: no outgoing mass
    P_pi[mdp.terminal_mask] = 0.0
    return P_pi, r_pi


def bellman_operator(mdp: TabularMDP, policy: TabularPolicy, V: np.ndarray) -> np.ndarray:
    P_pi, r_pi = policy_matrices(mdp, policy)
    V = _check_vector(mdp, V)
    return r_pi + mdp.discount * P_pi @ V


def linear_solve_values(mdp: TabularMDP, policy: TabularPolicy) -> np.ndarray:
    """Direct solve of (I - gamma P_pi) V = r_pi with terminal values pinned to 0."""
    P_pi, r_pi = policy_matrices(mdp, policy)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * P_pi, r_pi)


def solve_value_function(
    mdp: TabularMDP,
    policy: TabularPolicy,
    tol: float = 1e-10,
    max_iter: int = 1_000_000,
) -> np.ndarray:
    """Iterative policy evaluation, warm-started and checked by a direct solve.

    The returned V satisfies ``max|B_pi V - V| <= tol``. When gamma = 1 the
    chain must be absorbed in terminal states; otherwise ConvergenceError.
    """
    _check_policy(mdp, policy)
    P_pi, r_pi = policy_matrices(mdp, policy)
    try:
        V = linear_solve_values(mdp, policy)
        if not np.all(np.isfinite(V)):
            raise np.linalg.LinAlgError
    except np.linalg.LinAlgError:
        V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        new = r_pi + mdp.discount * P_pi @ V
        if np.max(np.abs(new - V)) <= tol:
            return new
        V = new
    raise ConvergenceError(
        f"policy evaluation did not converge in {max_iter} iterations "
        "(gamma = 1 chain without absorption?)"
    )


def exact_bellman_residual(mdp: TabularMDP, policy: TabularPolicy, V: np.ndarray) -> np.ndarray:
    """R_pi V = B_pi V - V, elementwise over states."""
    V = _check_vector(mdp, V)
    return bellman_operator(mdp, policy, V) - V


def kernel_matrix(kernel, points: np.ndarray) -> np.ndarray:
    """Gram matrix of a kernel (object with ``gram``) or pass through an explicit matrix."""
    if hasattr(kernel, "gram"):
        return kernel.gram(points)
    return np.asarray(kernel, dtype=float)


def _state_gram(mdp: TabularMDP, kernel, points) -> np.ndarray:
    if points is None:
        points = np.arange(mdp.n_states, dtype=float)[:, None]
    K = kernel_matrix(kernel, points)
    if K.shape != (mdp.n_states, mdp.n_states):
        raise MDPError(f"kernel matrix shape {K.shape} does not match {mdp.n_states} states")
    if np.max(np.abs(K - K.T)) > 1e-12:
        raise MDPError("kernel is not symmetric on the state set")
    return K


def exact_kernel_loss(
    mdp: TabularMDP,
    policy: TabularPolicy,
    mu: StateDistribution,
    kernel,
    V: np.ndarray,
    points: np.ndarray | None = None,
) -> float:
    """Sum over state pairs of mu(s) mu(t) k(s, t) R V(s) R V(t).

    ``kernel`` is either a kernel object evaluated on ``points`` (state
    embeddings, one row per state) or an explicit (S, S) matrix.
    """
    K = _state_gram(mdp, kernel, points)
    w = mu.mu * exact_bellman_residual(mdp, policy, V)
    return float(w @ K @ w)


def backward_conditional(mdp: TabularMDP, policy: TabularPolicy, mu: StateDistribution) -> np.ndarray:
    """D[s', s] = sum_a pi(a|s) P(s'|s,a) mu(s) / mu(s').

    Left unnormalized; rows only sum to one when mu is stationary.
    """
    P_pi, _ = policy_matrices(mdp, policy)
    flow = (mu.mu[:, None] * P_pi).T  # flow[s', s] = mu(s) P_pi(s, s')
    reached = flow.sum(axis=1) > 0
    if np.any(mu.mu[reached] <= 0):
        bad = np.flatnonzero(reached & (mu.mu <= 0))
        raise MDPError(f"states {bad.tolist()} are reachable but have mu = 0")
    D = np.zeros_like(flow)
    D[reached] = flow[reached] / mu.mu[reached, None]
    return D


def dual_kernel(
    mdp: TabularMDP,
    policy: TabularPolicy,
    mu: StateDistribution,
    kernel,
    points: np.ndarray | None = None,
) -> np.ndarray:
    """k*(s', t') such that the kernel loss equals the k*-norm of V - V^pi.

    Each backward expectation integrates only the variable it binds:

        k*(x, y) = k(x, y) - g E_{s|x} k(s, y) - g E_{t|y} k(x, t)
                   + g^2 E_{s|x, t|y} k(s, t)

    with E_{s|x} f(s) = sum_s d*(s|x) f(s) and d* left unnormalized. When mu
    is stationary d* is a proper conditional and this equals averaging the
    whole bracket.
    """
    K = _state_gram(mdp, kernel, points)
    D = backward_conditional(mdp, policy, mu)
    g = mdp.discount
    DK = D @ K
    return K - g * DK - g * DK.T + g * g * DK @ D.T


def dual_norm_sq(mu: StateDistribution, kstar: np.ndarray, err: np.ndarray) -> float:
    w = mu.mu * err
    return float(w @ kstar @ w)


def l2_bellman_loss(mdp: TabularMDP, policy: TabularPolicy, mu: StateDistribution, V) -> float:
    res = exact_bellman_residual(mdp, policy, V)
    return float(mu.mu @ res**2)


class MercerResult(NamedTuple):
    lhs: float
    rhs: float
    bound: float
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray


def mercer_decomposition(K: np.ndarray, mu: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the mu-weighted integral operator of K.

    Returns (lam, E) with columns of E orthonormal under mu:
    ``E.T @ diag(mu) @ E = I`` and ``K = E diag(lam) E.T``.
    """
    if np.any(mu <= 0):
        raise MDPError("Mercer decomposition needs mu > 0 on every state")
    sq = np.sqrt(mu)
    lam, U = np.linalg.eigh(sq[:, None] * K * sq[None, :])
    return lam, U / sq[:, None]


def mercer_check(mdp, mu, kernel, V, policy, points=None) -> MercerResult:
    """Eigen-expansion of the kernel loss and its lambda_max * L2 bound.

    ``bound`` is lambda_max * L2(V); lhs <= bound holds up to rounding.
    """
    K = _state_gram(mdp, kernel, points)
    res = exact_bellman_residual(mdp, policy, V)
    lam, E = mercer_decomposition(K, mu.mu)
    proj = E.T @ (mu.mu * res)  # <R V, e_i>_mu
    lhs = exact_kernel_loss(mdp, policy, mu, K, V)
    rhs = float(np.sum(lam * proj**2))
    bound = float(lam.max() * l2_bellman_loss(mdp, policy, mu, V))
    return MercerResult(lhs, rhs, bound, lam, E)


def rkhs_witness_check(mdp, mu, kernel, V, policy, points=None) -> tuple[float, float]:
    """(kernel loss, squared RKHS norm of the witness f* = E_mu[R V(s) k(s, .)]).

    The witness is expanded as f* = sum_s alpha_s k(s, .) with
    alpha = mu * R V, so its squared norm is alpha^T K alpha by the
    reproducing property.
    """
    K = _state_gram(mdp, kernel, points)
    alpha = mu.mu * exact_bellman_residual(mdp, policy, V)
    witness_values = K @ alpha  # f*(t) for every state t
    norm_sq = float(alpha @ witness_values)
    return exact_kernel_loss(mdp, policy, mu, K, V), norm_sq


class RGBias(NamedTuple):
    empirical_rg_mean: float
    l2_plus_variance: float
    standard_error: float
    l2: float
    variance: float


def bootstrap_variance(mdp: TabularMDP, policy: TabularPolicy, mu: StateDistribution, V) -> float:
    """E_{s~mu}[Var(r + gamma V(s') | s)] with a ~ pi(.|s), s' ~ P(.|s,a)."""
    V = _check_vector(mdp, V)
    g = mdp.discount
    target = mdp.reward[:, :, None] + g * V[None, None, :]  # outcome value per (s, a, s')
    w = policy.probs[:, :, None] * mdp.transition
    mean = np.einsum("sat,sat->s", w, target)
    second = np.einsum("sat,sat->s", w, target**2)
    var = second - mean**2
    var[mdp.terminal_mask] = 0.0
    return float(mu.mu @ var)


def sample_transitions(mdp, policy, mu, n, rng: np.random.Generator):
    """i.i.d. (s, a, r, s') index arrays with s ~ mu."""
    s = rng.choice(mdp.n_states, size=n, p=mu.mu)
    u = rng.random(n)
    a = (policy.probs[s].cumsum(axis=1) < u[:, None]).sum(axis=1)
    a = np.minimum(a, mdp.n_actions - 1)
    u2 = rng.random(n)
    sp = (mdp.transition[s, a].cumsum(axis=1) < u2[:, None]).sum(axis=1)
    sp = np.minimum(sp, mdp.n_states - 1)
    r = mdp.reward[s, a]
    return s, a, r, sp


def rg_bias_check(mdp, policy, mu, V, n_samples: int, seed: int) -> RGBias:
    """Monte-Carlo mean of the squared TD error against L2 + bootstrap variance."""
    V = _check_vector(mdp, V)
    rng = np.random.Generator(np.random.Philox(seed))
    s, a, r, sp = sample_transitions(mdp, policy, mu, n_samples, rng)
    nonterm = ~mdp.terminal_mask[s]
    td = np.where(nonterm, r + mdp.discount * V[sp] - V[s], -V[s])
    sq = td**2
    l2 = l2_bellman_loss(mdp, policy, mu, V)
    var = bootstrap_variance(mdp, policy, mu, V)
    se = float(sq.std(ddof=1) / np.sqrt(n_samples))
    return RGBias(float(sq.mean()), l2 + var, se, l2, var)


# -- text serialization ---------------------------------------------------


def _fmt(values) -> str:
    return " ".join(repr(float(x)) for x in np.ravel(values))


def dumps_mdp(mdp: TabularMDP, policy: TabularPolicy | None = None, mu: StateDistribution | None = None) -> str:
    lines = [
        "[mdp]",
        f"n_states = {mdp.n_states}",
        f"n_actions = {mdp.n_actions}",
        f"discount = {mdp.discount!r}",
        f"terminal = {' '.join(str(int(t)) for t in mdp.terminal_mask)}",
        f"transition = {_fmt(mdp.transition)}",
        f"reward = {_fmt(mdp.reward)}",
    ]
    if policy is not None:
        lines += ["", "[policy]", f"probs = {_fmt(policy.probs)}"]
    if mu is not None:
        lines += ["", "[mu]", f"mu = {_fmt(mu.mu)}"]
    return "\n".join(lines) + "\n"


def loads_mdp(text: str, row_tol: float = 1e-9):
    """Parse the ``[mdp]``/``[policy]``/``[mu]`` format.

    Rows are renormalized only after passing the ``row_tol`` check, so files
    written with limited precision still load as exact distributions.
    """
    cp = configparser.ConfigParser()
    cp.read_string(text)
    if "mdp" not in cp:
        raise MDPError("missing [mdp] section")
    sec = cp["mdp"]
    try:
        S = int(sec["n_states"])
        A = int(sec["n_actions"])
        gamma = float(sec["discount"])
        P = np.array(sec["transition"].split(), dtype=float)
        R = np.array(sec["reward"].split(), dtype=float)
        term = np.array(sec.get("terminal", " ".join(["0"] * S)).split(), dtype=int).astype(bool)
    except KeyError as e:
        raise MDPError(f"missing key {e} in [mdp]") from None
    if P.size != S * A * S or R.size != S * A:
        raise MDPError("transition/reward sizes do not match n_states, n_actions")
    P = P.reshape(S, A, S)
    _check_rows(P.reshape(-1, S), row_tol, "transition")
    P = P / P.sum(axis=2, keepdims=True)
    mdp = TabularMDP(P, R.reshape(S, A), gamma, term)
    policy = mu = None
    if "policy" in cp:
        pi = np.array(cp["policy"]["probs"].split(), dtype=float)
        if pi.size != S * A:
            raise MDPError("policy size does not match n_states * n_actions")
        pi = pi.reshape(S, A)
        _check_rows(pi, row_tol, "policy")
        policy = TabularPolicy(pi / pi.sum(axis=1, keepdims=True))
    if "mu" in cp:
        m = np.array(cp["mu"]["mu"].split(), dtype=float)
        if m.size != S:
            raise MDPError("mu size does not match n_states")
        _check_rows(m[None, :], row_tol, "mu")
        mu = StateDistribution(m / m.sum())
    return mdp, policy, mu


def _check_rows(rows: np.ndarray, tol: float, name: str) -> None:
    if np.any(rows < 0):
        raise MDPError(f"{name} has negative entries")
    bad = np.flatnonzero(np.abs(rows.sum(axis=1) - 1.0) > tol)
    if bad.size:
        raise MDPError(f"{name} rows {bad.tolist()} do not sum to 1 within {tol}")


def random_mdp(
    n_states: int,
    n_actions: int,
    discount: float,
    rng: np.random.Generator,
    sparsity: float = 0.0,
) -> TabularMDP:
    """Random dense MDP with Dirichlet transition rows and normal rewards."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        P = P * (rng.random(P.shape) >= sparsity)
        P[..., 0] += (P.sum(axis=2) == 0)
        P = P / P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(n_states, n_actions))
    return TabularMDP(P, R, discount)


def random_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> TabularPolicy:
    return TabularPolicy(rng.dirichlet(np.ones(n_actions), size=n_states))


def random_distribution(n: int, rng: np.random.Generator, floor: float = 0.05) -> StateDistribution:
    mu = rng.dirichlet(np.ones(n)) + floor
    return StateDistribution(mu / mu.sum())
