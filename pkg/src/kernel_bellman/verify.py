"""Identity suite over random tabular instances, reported as a pass/fail table."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .envs.dataset import TransitionDataset
from .envs.rng import stream
from .kernels import GaussianKernel
from .linear_solve import LinearSystemBundle, certainty_equivalence, kloss_closed_form, one_hot_bundle, td_closed_form
from .tabular import (
    TabularMDP,
    dual_kernel,
    dual_norm_sq,
    exact_kernel_loss,
    linear_solve_values,
    mercer_check,
    random_distribution,
    random_mdp,
    random_policy,
    rg_bias_check,
    rkhs_witness_check,
    sample_transitions,
    solve_value_function,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float  # largest observed error (or smallest margin for positivity checks)
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark}  {self.name:<28} worst={self.worst:.3e}  tol={self.tolerance:.0e}  {self.detail}"


@dataclass
class Instance:
    mdp: TabularMDP
    policy: object
    mu: object
    points: np.ndarray  # state embeddings for the Gaussian kernel
    kernel: GaussianKernel
    V_pi: np.ndarray


def random_instance(rng: np.random.Generator, n_states: int = 6, n_actions: int = 2, gamma: float = 0.9,
                    dim: int = 2) -> Instance:
    mdp = random_mdp(n_states, n_actions, gamma, rng)
    policy = random_policy(n_states, n_actions, rng)
    mu = random_distribution(n_states, rng)
    points = rng.normal(size=(n_states, dim))
    kernel = GaussianKernel(float(rng.uniform(0.5, 2.0)))
    return Instance(mdp, policy, mu, points, kernel, solve_value_function(mdp, policy))


def _max_over(instances, fn: Callable[[Instance, np.random.Generator], float], rng) -> float:
    return max(fn(inst, rng) for inst in instances)


def check_value_solve(instances, rng) -> CheckResult:
    worst = max(float(np.max(np.abs(i.V_pi - linear_solve_values(i.mdp, i.policy)))) for i in instances)
    return CheckResult("value solve vs dense solve", worst <= 1e-8, worst, 1e-8)


def check_zero_at_fixed_point(instances, rng) -> CheckResult:
    worst = max(exact_kernel_loss(i.mdp, i.policy, i.mu, i.kernel, i.V_pi, i.points) for i in instances)
    return CheckResult("kernel loss at V^pi", worst <= 1e-10, worst, 1e-10)


def check_positive_elsewhere(instances, rng, per_instance: int = 100) -> CheckResult:
    smallest = np.inf
    for i in instances:
        for _ in range(per_instance):
            V = i.V_pi + rng.normal(size=i.mdp.n_states)
            smallest = min(smallest, exact_kernel_loss(i.mdp, i.policy, i.mu, i.kernel, V, i.points))
    return CheckResult("kernel loss > 0 off V^pi", smallest > 0, smallest, 0.0, "(smallest loss)")


def check_dual_kernel(instances, rng) -> CheckResult:
    worst = 0.0
    for i in instances:
        ks = dual_kernel(i.mdp, i.policy, i.mu, i.kernel, i.points)
        for _ in range(20):
            V = i.V_pi + rng.normal(size=i.mdp.n_states)
            lk = exact_kernel_loss(i.mdp, i.policy, i.mu, i.kernel, V, i.points)
            worst = max(worst, abs(lk - dual_norm_sq(i.mu, ks, V - i.V_pi)))
    return CheckResult("dual-kernel identity", worst <= 1e-8, worst, 1e-8)


def check_mercer(instances, rng) -> list[CheckResult]:
    eq, slack = 0.0, -np.inf
    for i in instances:
        V = rng.normal(size=i.mdp.n_states)
        m = mercer_check(i.mdp, i.mu, i.kernel, V, i.policy, i.points)
        eq = max(eq, abs(m.lhs - m.rhs))
        slack = max(slack, m.lhs - m.bound)
    return [CheckResult("eigen-expansion identity", eq <= 1e-8, eq, 1e-8),
            CheckResult("L_k <= lambda_max L_2", slack <= 1e-10, slack, 1e-10, "(max of L_k - bound)")]


def check_witness(instances, rng) -> CheckResult:
    worst = 0.0
    for i in instances:
        V = rng.normal(size=i.mdp.n_states)
        loss, norm_sq = rkhs_witness_check(i.mdp, i.mu, i.kernel, V, i.policy, i.points)
        worst = max(worst, abs(loss - norm_sq))
    return CheckResult("RKHS witness norm", worst <= 1e-10, worst, 1e-10)


def random_bundle(rng: np.random.Generator, n: int = 200, d: int = 5, gamma: float = 0.9) -> LinearSystemBundle:
    """Random features with a well-conditioned X^T Z (resampled until cond < 1e6)."""
    while True:
        X = rng.normal(size=(n, d))
        Xp = 0.5 * X + 0.5 * rng.normal(size=(n, d))
        b = LinearSystemBundle(X, Xp, rng.normal(size=n), gamma)
        if np.linalg.cond(b.X.T @ b.Z) < 1e6:
            return b


def check_td_equivalence(rng, n_bundles: int = 100) -> CheckResult:
    worst = 0.0
    for _ in range(n_bundles):
        b = random_bundle(rng)
        td, kb = td_closed_form(b), kloss_closed_form(b)
        worst = max(worst, float(np.linalg.norm(kb - td) / np.linalg.norm(td)))
    return CheckResult("TD = kernel-loss minimizer", worst <= 1e-8, worst, 1e-8, "(relative)")


def random_finite_dataset(rng: np.random.Generator, n_states: int = 5, n: int = 300,
                          gamma: float = 0.9) -> TransitionDataset:
    """Transitions of a random MDP with every state appearing as a source."""
    inst = random_instance(rng, n_states, 2, gamma)
    s, a, r, sp = sample_transitions(inst.mdp, inst.policy, inst.mu, n, rng)
    s[:n_states] = np.arange(n_states)
    r = inst.mdp.reward[s, a]
    return TransitionDataset(s[:, None].astype(float), a[:, None], r, sp[:, None].astype(float),
                             np.zeros(n, bool))


def check_certainty_equivalence(rng, n_datasets: int = 20, gamma: float = 0.9) -> CheckResult:
    worst = 0.0
    for _ in range(n_datasets):
        ds = random_finite_dataset(rng, gamma=gamma)
        keys, V = certainty_equivalence(ds, gamma)
        keys2, b = one_hot_bundle(ds, gamma)
        assert np.array_equal(keys, keys2)
        worst = max(worst, float(np.max(np.abs(kloss_closed_form(b) - V))))
    return CheckResult("certainty equivalence", worst <= 1e-8, worst, 1e-8)


def coin_flip_mdp(gamma: float = 0.9) -> TabularMDP:
    """3 states, one action; state 0 branches, 1 and 2 are deterministic."""
    P = np.zeros((3, 1, 3))
    P[0, 0] = [0.0, 0.5, 0.5]
    P[1, 0] = [0.3, 0.0, 0.7]
    P[2, 0] = [1.0, 0.0, 0.0]
    R = np.array([[1.0], [0.0], [-1.0]])
    return TabularMDP(P, R, gamma)


def check_rg_bias(seed: int, n_samples: int = 100_000) -> CheckResult:
    from .tabular import StateDistribution, TabularPolicy

    mdp = coin_flip_mdp()
    V = np.array([0.5, -1.0, 2.0])
    res = rg_bias_check(mdp, TabularPolicy(np.ones((3, 1))), StateDistribution.uniform(3), V, n_samples, seed)
    z = abs(res.empirical_rg_mean - res.l2_plus_variance) / res.standard_error
    return CheckResult("RG bias = bootstrap variance", z <= 3.0, z, 3.0, "(gap in standard errors)")


def run_suite(seed: int = 0, n_instances: int = 20) -> list[CheckResult]:
    rng = stream(seed, 7)
    instances = [random_instance(rng) for _ in range(n_instances)]
    out = [
        check_value_solve(instances, rng),
        check_zero_at_fixed_point(instances, rng),
        check_positive_elsewhere(instances, rng),
        check_dual_kernel(instances, rng),
        *check_mercer(instances, rng),
        check_witness(instances, rng),
        check_td_equivalence(rng),
        check_certainty_equivalence(rng),
        check_rg_bias(seed),
    ]
    return out


def format_table(results: list[CheckResult]) -> str:
    lines = [r.line() for r in results]
    n_pass = sum(r.passed for r in results)
    lines.append(f"{n_pass}/{len(results)} checks passed")
    return "\n".join(lines)
