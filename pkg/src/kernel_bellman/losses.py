"""Value-learning objectives on sampled transitions.

TD residuals are ``delta_i = r_i + gamma (1 - terminal_i) V(s'_i) - V(s_i)``.
The kernel loss averages ``k(s_i, s_j) delta_i delta_j`` over pairs (V-stat
keeps the diagonal, U-stat drops it); residual gradient squares the TD
error and differentiates through both values; fitted value iteration and
TD(0) regress onto bootstrapped targets held constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .approx import ValueFunction
from .envs.dataset import Transition, TransitionDataset

LOSS_IDS = ("kloss-v", "kloss-u", "rg", "fvi", "td0")


@dataclass
class LossEstimate:
    loss: float
    grad: np.ndarray
    estimator: str
    batch_size: int


class TDResidualBatch(NamedTuple):
    residuals: np.ndarray  # (n,)
    grads: np.ndarray | None  # (n, |theta|) rows are grad of delta_i


def _bootstrap_weight(batch: TransitionDataset, gamma: float) -> np.ndarray:
    return gamma * (~batch.terminals).astype(float)


def td_residuals(vf: ValueFunction, batch: TransitionDataset, gamma: float,
                 with_grads: bool = False, theta=None) -> TDResidualBatch:
    w = _bootstrap_weight(batch, gamma)
    if not with_grads:
        delta = batch.rewards + w * vf.values(batch.next_states, theta) - vf.values(batch.states, theta)
        return TDResidualBatch(delta, None)
    v, J = vf.values_and_jacobian(batch.states, theta)
    vp, Jp = vf.values_and_jacobian(batch.next_states, theta)
    return TDResidualBatch(batch.rewards + w * vp - v, w[:, None] * Jp - J)


def _residual_vjp(vf, batch, gamma, c, theta=None) -> np.ndarray:
    """sum_i c_i * grad(delta_i), via one vjp over stacked states."""
    w = _bootstrap_weight(batch, gamma)
    states = np.concatenate([batch.states, batch.next_states])
    cot = np.concatenate([-c, w * c])
    return vf.vjp(states, cot, theta)


def _kernel_points(batch, kernel_points):
    return batch.states if kernel_points is None else kernel_points


def kernel_loss_vstat(vf: ValueFunction, batch: TransitionDataset, kernel, gamma: float,
                      kernel_points=None, theta=None) -> LossEstimate:
    """(1/n^2) sum_ij k(s_i, s_j) delta_i delta_j and its parameter gradient.

    ``kernel_points`` overrides the rows the kernel sees (default: the
    batch states); it must have one row per transition.
    """
    n = len(batch)
    delta = td_residuals(vf, batch, gamma, theta=theta).residuals
    u = kernel.matvec(_kernel_points(batch, kernel_points), delta)
    loss = float(delta @ u) / n**2
    grad = _residual_vjp(vf, batch, gamma, 2.0 * u / n**2, theta)
    return LossEstimate(loss, grad, "v-stat", n)


def kernel_loss_ustat(vf: ValueFunction, batch: TransitionDataset, kernel, gamma: float,
                      kernel_points=None, theta=None) -> LossEstimate:
    """Off-diagonal average (1/(n(n-1))) sum_{i != j} k_ij delta_i delta_j; may be negative."""
    n = len(batch)
    if n < 2:
        raise ValueError("U-statistics need at least 2 transitions")
    pts = _kernel_points(batch, kernel_points)
    delta = td_residuals(vf, batch, gamma, theta=theta).residuals
    u = kernel.matvec(pts, delta) - kernel.diag(pts) * delta
    scale = 1.0 / (n * (n - 1))
    loss = float(delta @ u) * scale
    grad = _residual_vjp(vf, batch, gamma, 2.0 * scale * u, theta)
    return LossEstimate(loss, grad, "u-stat", n)


def rg_loss(vf: ValueFunction, batch: TransitionDataset, gamma: float, theta=None) -> LossEstimate:
    """Mean squared TD error, differentiated through V(s) and V(s')."""
    n = len(batch)
    delta = td_residuals(vf, batch, gamma, theta=theta).residuals
    grad = _residual_vjp(vf, batch, gamma, 2.0 * delta / n, theta)
    return LossEstimate(float(delta @ delta) / n, grad, "rg", n)


def fvi_targets(vf: ValueFunction, target_params, batch: TransitionDataset, gamma: float) -> np.ndarray:
    target_params = np.asarray(target_params, float)
    if target_params.shape != (vf.n_params,):
        raise ValueError(f"target params have length {target_params.size}, expected {vf.n_params}")
    return batch.rewards + _bootstrap_weight(batch, gamma) * vf.values(batch.next_states, target_params)


def fvi_step_loss(vf: ValueFunction, target_params, batch: TransitionDataset, gamma: float,
                  theta=None) -> LossEstimate:
    """(1/n) sum (V(s_i) - y_i)^2 with y from frozen target params; grad through V(s_i) only."""
    n = len(batch)
    y = fvi_targets(vf, target_params, batch, gamma)
    err = vf.values(batch.states, theta) - y
    grad = vf.vjp(batch.states, 2.0 * err / n, theta)
    return LossEstimate(float(err @ err) / n, grad, "fvi", n)


def td0_semigradient(vf: ValueFunction, batch: TransitionDataset, gamma: float, theta=None) -> LossEstimate:
    """Minibatch TD(0): the FVI gradient with the current parameters as target."""
    theta = vf.theta if theta is None else theta
    return fvi_step_loss(vf, theta, batch, gamma, theta)


def td0_update(vf: ValueFunction, transition: Transition, gamma: float, lr: float, theta=None) -> np.ndarray:
    """theta + lr * delta * grad V(s); the next-state value is not differentiated."""
    theta = vf.theta if theta is None else np.asarray(theta, float)
    s = np.atleast_2d(transition.state)
    sp = np.atleast_2d(transition.next_state)
    v, J = vf.values_and_jacobian(s, theta)
    boot = 0.0 if transition.terminal else gamma * vf.values(sp, theta)[0]
    delta = transition.reward + boot - v[0]
    return theta + lr * delta * J[0]


def compute_loss(loss_id: str, vf, batch, gamma, kernel=None, target_params=None,
                 kernel_points=None) -> LossEstimate:
    if loss_id == "kloss-v":
        return kernel_loss_vstat(vf, batch, kernel, gamma, kernel_points)
    if loss_id == "kloss-u":
        return kernel_loss_ustat(vf, batch, kernel, gamma, kernel_points)
    if loss_id == "rg":
        return rg_loss(vf, batch, gamma)
    if loss_id == "fvi":
        return fvi_step_loss(vf, target_params, batch, gamma)
    if loss_id == "td0":
        return td0_semigradient(vf, batch, gamma)
    raise ValueError(f"unknown loss id {loss_id!r}; valid ids: {', '.join(LOSS_IDS)}")


class Metrics(NamedTuple):
    mse: float
    empirical_bellman: float


def metrics(vf: ValueFunction, oracle_values, eval_states, batch: TransitionDataset, gamma: float) -> Metrics:
    """Grid MSE against oracle values and the mean squared TD error on ``batch``.

    The second number is the usual sample proxy for the Bellman error; it is
    biased upward by the bootstrap variance on stochastic transitions.
    """
    err = vf.values(eval_states) - np.asarray(oracle_values, float)
    delta = td_residuals(vf, batch, gamma).residuals
    return Metrics(float(np.mean(err**2)), float(np.mean(delta**2)))
