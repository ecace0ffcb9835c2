"""Ready-made evaluation problems: model, kernel and ground truth per environment."""

from __future__ import annotations

import numpy as np

from .approx import LinearValueFunction, MLPValueFunction, init_params
from .envs import TABULAR_ENVS, ControlEnv, GridValueTable, LinearChainSpec, discretized_true_values, make_env
from .envs.rng import stream
from .kernels import GaussianKernel, LinearFeatureKernel
from .trainer import EvalProblem


def linear_chain_problem(spec: LinearChainSpec, kernel_kind: str = "linear", h: float = 0.5,
                         init_scale: float = 0.0, init=None) -> EvalProblem:
    """Linear value function on the chain's features.

    The initial weights are ``init`` if given, else ``init_scale`` times a
    seeded standard normal draw (zeros by default).
    """
    feats = spec.feature_map
    d = spec.n_features

    def make_vf(seed: int):
        if init is not None:
            theta = np.array(init, float)
        else:
            theta = init_scale * stream(seed, 0).standard_normal(d)
        return LinearValueFunction(feats, d, 1, theta, name=spec.name)

    if kernel_kind in ("linear", "linear-feature"):
        kernel = LinearFeatureKernel(feats)
    else:
        kernel = GaussianKernel(h)
    return EvalProblem(spec.name, make_vf, kernel, spec.eval_states(), spec.true_values(),
                       lambda s: spec.true_values()[np.asarray(s)[:, 0].astype(int)])


def control_problem(env: ControlEnv | str, gamma: float, hidden: int = 80, activation: str = "relu",
                    h: float = 0.5, grid=None, samples_per_cell: int = 200, oracle_seed: int = 0,
                    table: GridValueTable | None = None) -> EvalProblem:
    env = make_env(env) if isinstance(env, str) else env
    if table is None:
        table = discretized_true_values(env, gamma, grid, samples_per_cell, oracle_seed)
    keep = ~table.unreachable
    eval_states = env.normalize(table.eval_states()[keep])
    widths = [env.dim, hidden, 1]

    def make_vf(seed: int):
        return MLPValueFunction(widths, activation, init_params(widths, seed))

    def lookup(x):
        return table.lookup(env.low + np.asarray(x) * (env.high - env.low))

    problem = EvalProblem(env.name, make_vf, GaussianKernel(h), eval_states, table.values[keep], lookup)
    problem.env = env
    problem.table = table
    return problem


def make_problem(env_name: str, gamma: float | None = None, **kw) -> EvalProblem:
    if env_name in TABULAR_ENVS:
        spec = TABULAR_ENVS[env_name]()
        return linear_chain_problem(spec, **kw)
    return control_problem(env_name, 0.98 if gamma is None else gamma, **kw)
