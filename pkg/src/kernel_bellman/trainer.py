"""Policy-evaluation training loop: Adam, seeded minibatches, target sync, metric logs.

A run is a pure function of (problem, dataset, config). Wallclock time is
kept on the log object but never written into the metrics CSV, so that the
CSV is byte-identical across reruns.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .approx import ValueFunction
from .envs.dataset import TransitionDataset, write_kv
from .envs.rng import stream
from .losses import LOSS_IDS, compute_loss, td_residuals

DIVERGENCE_NORM = 1e6


class NumericalError(FloatingPointError):
    pass


# -- Adam -----------------------------------------------------------------


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **kw) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, **kw)


def adam_step(state: AdamState, theta, grad, lr: float) -> tuple[AdamState, np.ndarray]:
    theta = np.asarray(theta, float)
    grad = np.asarray(grad, float)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError(f"length mismatch: theta {theta.shape}, grad {grad.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NumericalError(f"non-finite gradient at step {state.t + 1} (entries {bad[:5].tolist()})")
    t = state.t + 1
    m = state.beta1 * state.m + (1 - state.beta1) * grad
    v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = m / (1 - state.beta1**t)
    v_hat = v / (1 - state.beta2**t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return replace(state, m=m, v=v, t=t), theta


# -- configuration ----------------------------------------------------------


@dataclass
class TrainConfig:
    loss: str = "kloss-v"
    lr: float = 1e-3
    epochs: int = 2000
    batch_size: int = 150  # 0 means full batch
    seed: int = 0
    gamma: float = 0.98
    target_sync: int = 1  # fvi: epochs between target-parameter copies
    kernel_kind: str = "gaussian"
    kernel_h: float = 0.5
    metric_every: int = 1
    optimizer: str = "adam"  # or "sgd": theta -= lr * grad

    def validate(self, n_data: int | None = None) -> None:
        errors = []
        if self.loss not in LOSS_IDS:
            errors.append(f"loss: unknown id {self.loss!r}; valid ids: {', '.join(LOSS_IDS)}")
        if not self.lr > 0:
            errors.append(f"lr: must be positive, got {self.lr}")
        if self.epochs < 0:
            errors.append(f"epochs: must be nonnegative, got {self.epochs}")
        if self.batch_size < 0 or (n_data is not None and self.batch_size > n_data):
            errors.append(f"batch_size: {self.batch_size} not in [0, {n_data}]")
        if self.loss == "kloss-u" and self.batch_size == 1:
            errors.append("batch_size: U-statistics need batches of at least 2")
        if self.target_sync < 1:
            errors.append("target_sync: must be at least 1")
        if self.metric_every < 1:
            errors.append("metric_every: must be at least 1")
        if self.optimizer not in ("adam", "sgd"):
            errors.append(f"optimizer: unknown {self.optimizer!r}; valid: adam, sgd")
        if not 0 <= self.gamma <= 1:
            errors.append(f"gamma: must lie in [0, 1], got {self.gamma}")
        if errors:
            raise ValueError("invalid train config:\n  " + "\n  ".join(errors))


@dataclass
class EvalProblem:
    """Everything a run needs besides data: model, kernel and ground truth.

    ``make_vf(seed)`` returns a fresh value function. ``eval_states`` and
    ``oracle_values`` define the grid MSE; ``oracle_lookup`` (optional)
    gives true values at arbitrary states for the on-data MSE column.
    States here are already in model coordinates.
    """

    name: str
    make_vf: Callable[[int], ValueFunction]
    kernel: object
    eval_states: np.ndarray
    oracle_values: np.ndarray
    oracle_lookup: Callable[[np.ndarray], np.ndarray] | None = None


# -- metric log -------------------------------------------------------------

COLUMNS = ("epoch", "loss", "mse", "bellman", "theta_norm", "status", "mse_data")


@dataclass
class MetricLog:
    config: TrainConfig
    problem: str = ""
    rows: list[dict] = field(default_factory=list)
    wallclock: list[float] = field(default_factory=list)
    status: str = "OK"
    theta: np.ndarray | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def final(self) -> dict:
        return self.rows[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow([r["epoch"]] + [repr(float(r[c])) for c in ("loss", "mse", "bellman", "theta_norm")]
                       + [r["status"], repr(float(r["mse_data"]))])
        return buf.getvalue()

    def save(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "metrics.csv").write_text(self.to_csv())
        meta = {"problem": self.problem, "status": self.status, "epochs_run": len(self.rows)}
        meta.update({f"config.{k}": v for k, v in asdict(self.config).items()})
        write_kv(d / "run.meta", meta)
        (d / "timing.txt").write_text("".join(f"{t:.6f}\n" for t in self.wallclock))
        return d / "metrics.csv"


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        rec = {k: (r[k] if k == "status" else float(r[k])) for k in r}
        rec["epoch"] = int(rec["epoch"])
        out.append(rec)
    return out


# -- experiment -------------------------------------------------------------


@np.errstate(over="ignore", invalid="ignore")
def _record(log, epoch, loss, vf, problem, dataset, gamma, status):
    theta = vf.theta
    norm = float(np.linalg.norm(theta))
    if np.all(np.isfinite(theta)):
        err = vf.values(problem.eval_states) - problem.oracle_values
        mse = float(np.mean(err**2))
        delta = td_residuals(vf, dataset, gamma).residuals
        bellman = float(np.mean(delta**2))
        if problem.oracle_lookup is not None:
            e2 = vf.values(dataset.states) - problem.oracle_lookup(dataset.states)
            mse_data = float(np.mean(e2**2))
        else:
            mse_data = float("nan")
    else:
        mse = bellman = mse_data = float("inf")
    log.rows.append(dict(epoch=epoch, loss=loss, mse=mse, bellman=bellman, theta_norm=norm,
                         status=status, mse_data=mse_data))


def run_evaluation_experiment(problem: EvalProblem, dataset: TransitionDataset, config: TrainConfig,
                              init_theta=None, on_epoch: Callable | None = None) -> MetricLog:
    """Train ``problem.make_vf(config.seed)`` on ``dataset``.

    One row per ``metric_every`` epochs (plus the last); with ``epochs=0``
    the log holds the single initial record. A parameter norm above 1e6
    stops the run with status DIVERGED.
    """
    n = len(dataset)
    config.validate(n)
    vf = problem.make_vf(config.seed)
    if init_theta is not None:
        vf.set_params(init_theta)
    log = MetricLog(config, problem.name)
    t0 = time.perf_counter()
    if config.epochs == 0:
        _record(log, 0, float("nan"), vf, problem, dataset, config.gamma, "OK")
        log.wallclock.append(time.perf_counter() - t0)
        log.theta = vf.theta.copy()
        return log
    bs = n if config.batch_size == 0 else config.batch_size
    n_batches = -(-n // bs)
    order_rng = stream(config.seed, 1)
    adam = AdamState.zeros(vf.n_params)
    target = vf.theta.copy()
    for epoch in range(1, config.epochs + 1):
        perm = order_rng.permutation(n) if bs < n else np.arange(n)
        losses = []
        for b in range(n_batches):
            batch = dataset.subset(perm[b * bs:(b + 1) * bs])
            if config.loss == "kloss-u" and len(batch) < 2:
                continue
            est = compute_loss(config.loss, vf, batch, config.gamma, problem.kernel, target)
            losses.append(est.loss)
            if config.optimizer == "adam":
                adam, theta = adam_step(adam, vf.theta, est.grad, config.lr)
            else:
                if not np.all(np.isfinite(est.grad)):
                    raise NumericalError(f"non-finite gradient in epoch {epoch}")
                theta = vf.theta - config.lr * est.grad
            if not np.all(np.isfinite(theta)) or np.linalg.norm(theta) > DIVERGENCE_NORM:
                vf.theta = theta
                log.status = "DIVERGED"
                break
            vf.theta = theta
        if config.loss == "fvi" and epoch % config.target_sync == 0:
            target = vf.theta.copy()
        last = log.status == "DIVERGED" or epoch == config.epochs
        if last or epoch % config.metric_every == 0:
            _record(log, epoch, float(np.mean(losses)) if losses else float("nan"), vf, problem,
                    dataset, config.gamma, log.status)
            log.wallclock.append(time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(epoch, vf)
        if log.status == "DIVERGED":
            break
    log.theta = vf.theta.copy()
    return log


# -- grid search ------------------------------------------------------------


@dataclass
class GridSearchResult:
    best_index: int
    best_config: TrainConfig
    scores: list[float]  # mean selection metric per config (inf if any seed diverged)
    logs: list[list[MetricLog]]  # logs[config][seed]

    @property
    def best_log(self) -> MetricLog:
        return self.logs[self.best_index][0]


def grid_search(configs: Sequence[TrainConfig], problem: EvalProblem, dataset: TransitionDataset,
                metric: str = "mse", seeds: Sequence[int] = (0,)) -> GridSearchResult:
    """Average the final ``metric`` over seeds for each config and pick the smallest.

    Ties go to the lower learning rate, then to the earlier config.
    """
    if not configs:
        raise ValueError("grid_search needs at least one config")
    scores, logs = [], []
    for cfg in configs:
        runs = [run_evaluation_experiment(problem, dataset, replace(cfg, seed=s)) for s in seeds]
        vals = [r.final[metric] if r.status != "DIVERGED" else np.inf for r in runs]
        scores.append(float(np.mean(vals)) if np.all(np.isfinite(vals)) else float("inf"))
        logs.append(runs)
    order = sorted(range(len(configs)), key=lambda i: (scores[i], configs[i].lr, i))
    best = order[0]
    return GridSearchResult(best, configs[best], scores, logs)
