"""Command-line entry point ``kbl``.

Subcommands: collect, train, verify, compare, solve-linear, rerun. Every
run writes ``manifest.txt`` and ``config.cfg`` into its output directory
before computing anything; ``kbl rerun DIR/manifest.txt`` repeats it.

Exit codes: 0 success (a DIVERGED run is a result, not a failure),
2 configuration or usage error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import sys
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import charts
from .approx import save_checkpoint
from .config import ConfigError, RunConfig, load_config
from .envs import TABULAR_ENVS, EnvError, collect_dataset, collect_tabular, load_dataset, make_env, save_dataset
from .envs.dataset import read_kv, write_kv
from .envs.rng import stream
from .kernels import KernelError
from .linear_solve import LinearSystemBundle, certainty_equivalence, kloss_closed_form, one_hot_bundle, td_closed_form
from .policy_opt import PolicyOptConfig, _observe, pendulum_toy, run_policy_optimization
from .problems import control_problem, linear_chain_problem
from .tabular import ConvergenceError
from .trainer import NumericalError, TrainConfig, grid_search, read_metrics_csv, run_evaluation_experiment
from .verify import format_table, run_suite

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
DEFAULT_GAMMA = {"tvr-chain": 1.0, "baird-star": 0.99}


# -- manifest ---------------------------------------------------------------


@dataclass
class RunManifest:
    command: str
    config_snapshot: str
    seed: int
    input_hash: str
    out_dir: str

    def write(self) -> Path:
        d = Path(self.out_dir)
        (d / "config.cfg").write_text(self.config_snapshot)
        write_kv(d / "manifest.txt", {"command": self.command, "seed": self.seed,
                                      "input_hash": self.input_hash, "out_dir": self.out_dir,
                                      "config": "config.cfg"})
        return d / "manifest.txt"


def _prepare_out(cfg: RunConfig, command: str) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc.strerror}") from None
    snapshot = cfg.snapshot()
    h = hashlib.sha256((command + "\n" + snapshot).encode())
    if cfg.get("data.path"):
        try:
            h.update(Path(cfg["data.path"]).read_bytes())
        except OSError as exc:
            raise ConfigError(f"cannot read dataset {cfg['data.path']}: {exc.strerror}") from None
    RunManifest(command, snapshot, cfg["seed"], h.hexdigest(), str(out)).write()
    return out


# -- shared helpers ---------------------------------------------------------


def _env_name(cfg: RunConfig) -> str:
    name = cfg.get("env")
    if not name:
        raise ConfigError("config must name an env")
    return name


def _collect(cfg: RunConfig):
    name = _env_name(cfg)
    n = cfg["data.n"]
    if n < 1:
        raise ConfigError(f"data.n must be at least 1, got {n}")
    if name in TABULAR_ENVS:
        return collect_tabular(TABULAR_ENVS[name](), n, cfg["seed"], cfg["data.shards"])
    return collect_dataset(make_env(name), n, cfg["data.mode"], cfg["seed"], policy_id=cfg["data.policy"],
                           shards=cfg["data.shards"])


def _dataset(cfg: RunConfig):
    if cfg.get("data.path"):
        return load_dataset(cfg["data.path"])
    return _collect(cfg)


def _gamma(cfg: RunConfig) -> float:
    g = cfg.get("train.gamma")
    return DEFAULT_GAMMA.get(cfg["env"], 0.98) if g is None else g


def _problem_and_data(cfg: RunConfig):
    name = _env_name(cfg)
    ds = _dataset(cfg)
    if name in TABULAR_ENVS:
        problem = linear_chain_problem(TABULAR_ENVS[name](), cfg.get("kernel.kind", "linear"), cfg["kernel.h"],
                                       cfg["train.init_scale"], cfg.get("train.init"))
        return problem, ds
    env = make_env(name)
    problem = control_problem(env, _gamma(cfg), cfg["model.hidden"], cfg["model.activation"], cfg["kernel.h"],
                              cfg.get("oracle.grid"), cfg["oracle.samples_per_cell"], cfg["oracle.seed"])
    if cfg.get("kernel.kind") not in (None, "gaussian", "gaussian-rbf", "rbf"):
        raise ConfigError("control problems use the gaussian kernel")
    return problem, ds.mapped(env.normalize)


def _train_config(cfg: RunConfig) -> TrainConfig:
    tc = TrainConfig(loss=cfg["train.loss"], lr=cfg["train.lr"], epochs=cfg["train.epochs"],
                     batch_size=cfg["train.batch_size"], seed=cfg["seed"], gamma=_gamma(cfg),
                     target_sync=cfg["train.target_sync"], kernel_kind=cfg.get("kernel.kind", "gaussian"),
                     kernel_h=cfg["kernel.h"], metric_every=cfg["train.metric_every"],
                     optimizer=cfg["train.optimizer"])
    try:
        tc.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return tc


# -- commands ---------------------------------------------------------------


def cmd_collect(cfg: RunConfig) -> int:
    _env_name(cfg)
    out = _prepare_out(cfg, "collect")
    ds = _collect(cfg)
    csv_path, _ = save_dataset(ds, out / "dataset.csv")
    print(f"wrote {len(ds)} transitions to {csv_path}")
    return EXIT_OK


def _train_eval(cfg: RunConfig, out: Path) -> int:
    tc = _train_config(cfg)
    problem, ds = _problem_and_data(cfg)
    if tc.batch_size > len(ds):
        raise ConfigError(f"train.batch_size {tc.batch_size} exceeds dataset size {len(ds)}")
    lrs = cfg.get("train.lr_grid")
    if lrs:
        seeds = cfg.get("train.seeds") or (cfg["seed"],)
        res = grid_search([replace(tc, lr=lr) for lr in lrs], problem, ds, "mse", seeds)
        with (out / "grid.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lr", "mean_final_mse"])
            for c, s in zip(res.logs, res.scores):
                w.writerow([repr(c[0].config.lr), repr(s)])
        log = res.best_log
        print(f"grid search picked lr={res.best_config.lr}")
    else:
        every = cfg["train.checkpoint_every"]
        hook = None
        if every > 0:
            (out / "checkpoints").mkdir(exist_ok=True)

            def hook(epoch, vf):
                if epoch % every == 0:
                    save_checkpoint(out / "checkpoints" / f"epoch_{epoch:06d}.ckpt", vf)
        log = run_evaluation_experiment(problem, ds, tc, on_epoch=hook)
    log.save(out)
    vf = problem.make_vf(log.config.seed)
    vf.theta = log.theta
    save_checkpoint(out / "final.ckpt", vf)
    f = log.final
    print(f"{problem.name} {log.config.loss}: status={log.status} epochs={f['epoch']} "
          f"mse={f['mse']:.6g} bellman={f['bellman']:.6g} |theta|={f['theta_norm']:.6g}")
    return EXIT_OK


def _policy_config(cfg: RunConfig) -> PolicyOptConfig:
    kw = {f: cfg[f"pcl.{f}"] for f in PolicyOptConfig.__dataclass_fields__ if f"pcl.{f}" in cfg.values}
    pc = PolicyOptConfig(**kw, seed=cfg["seed"])
    try:
        pc.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return pc


def _train_policy(cfg: RunConfig, out: Path) -> int:
    pc = _policy_config(cfg)
    name = cfg.get("env", "pendulum-toy")
    if name == "pendulum-toy":
        env = pendulum_toy()
    elif name == "pendulum":
        env = make_env("pendulum")
    else:
        raise ConfigError(f"policy optimization supports pendulum-toy and pendulum, not {name!r}")
    log = run_policy_optimization(env, pc)
    log.save(out)
    obs_dim = _observe(env, env.initial_states(1, stream(0, 0))).shape[1]
    widths = f"{obs_dim},{pc.hidden},{pc.hidden},1"
    save_checkpoint(out / "policy.ckpt", kind="gaussian-policy", architecture=widths + ":tanh+logstd",
                    theta=log.policy_params)
    save_checkpoint(out / "value.ckpt", kind="mlp", architecture=widths + ":tanh", theta=log.value_theta)
    r0, r1 = log.rows[0]["return_mean"], log.rows[-1]["return_mean"]
    print(f"policy-opt: return {r0:.4f} -> {r1:.4f}")
    return EXIT_OK


def _verify(cfg: RunConfig, out: Path | None) -> int:
    results = run_suite(cfg["seed"], cfg["verify.instances"])
    table = format_table(results)
    print(table)
    if out is not None:
        (out / "verify.txt").write_text(table + "\n")
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERIC


def cmd_train(cfg: RunConfig) -> int:
    mode = cfg["mode"]
    if mode not in ("train", "verify", "policy-opt"):
        raise ConfigError(f"mode must be train, verify or policy-opt, got {mode!r}")
    out = _prepare_out(cfg, "train")
    if mode == "verify":
        return _verify(cfg, out)
    if mode == "policy-opt":
        return _train_policy(cfg, out)
    return _train_eval(cfg, out)


def cmd_verify(cfg: RunConfig | None) -> int:
    from .config import build

    cfg = cfg or build({})
    out = _prepare_out(cfg, "verify") if "out" in cfg.given else None
    return _verify(cfg, out)


def _label(run_dir: Path) -> str:
    meta = run_dir / "run.meta"
    if meta.exists():
        m = read_kv(meta)
        if "config.loss" in m:
            return m["config.loss"]
    return run_dir.name


def cmd_compare(runs: list[str], out: str, labels: list[str] | None = None) -> int:
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dirs = []
    for r in runs:
        p = Path(r)
        if p.is_file() and p.suffix == ".cfg":
            cfg = load_config(p, {"out": str(out_dir / p.stem)})
            code = cmd_train(cfg)
            if code != EXIT_OK:
                return code
            p = out_dir / p.stem
        if not (p / "metrics.csv").exists():
            raise ConfigError(f"{p} has no metrics.csv")
        dirs.append(p)
    names = labels or [_label(d) for d in dirs]
    if len(names) != len(dirs):
        raise ConfigError("need one label per run")
    if len(set(names)) != len(names):
        names = [f"{n}-{i}" for i, n in enumerate(names)]
    logs = [read_metrics_csv(d / "metrics.csv") for d in dirs]
    grids = [np.array([r["epoch"] for r in log]) for log in logs]
    base = min(grids, key=len)
    if any(len(g) != len(base) or np.any(g != base) for g in grids):
        warnings.warn("runs have different epoch grids; resampling to the coarsest grid", stacklevel=2)
        print("warning: epoch grids differ; resampled to the coarsest grid", file=sys.stderr)
    cols = ("loss", "mse", "bellman", "theta_norm")
    table = {}
    for name, log, g in zip(names, logs, grids):
        for c in cols:
            y = np.array([r[c] for r in log], float)
            ok = np.isfinite(y)
            table[f"{name}:{c}"] = np.interp(base, g[ok], y[ok], right=np.nan) if ok.any() else np.full(len(base), np.nan)
    with (out_dir / "combined.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", *table])
        for k, e in enumerate(base):
            w.writerow([int(e), *(repr(float(v[k])) for v in table.values())])
    charts.curves_chart({n: (base, table[f"{n}:mse"]) for n in names}, "MSE", out_dir / "mse.svg")
    charts.curves_chart({n: (base, table[f"{n}:bellman"]) for n in names}, "mean squared TD error",
                        out_dir / "bellman.svg")
    _, rs = charts.scatter_chart({n: (table[f"{n}:loss"], table[f"{n}:mse"]) for n in names}, "training loss",
                                 "MSE", out_dir / "scatter.svg")
    for n, r in rs.items():
        print(f"{n}: pearson(loss, mse) = {r:.4f}")
    print(f"wrote {out_dir / 'combined.csv'} and charts")
    return EXIT_OK


def cmd_solve_linear(cfg: RunConfig) -> int:
    out = _prepare_out(cfg, "solve-linear")
    name = _env_name(cfg)
    ds = _dataset(cfg)
    gamma = _gamma(cfg)
    lines = []
    if cfg["solve.features"] == "one-hot":
        keys, bundle = one_hot_bundle(ds, gamma)
        _, V_ce = certainty_equivalence(ds, gamma)
    elif name in TABULAR_ENVS:
        spec = TABULAR_ENVS[name]()
        bundle = LinearSystemBundle.from_dataset(ds, spec.feature_map, gamma)
        V_ce = None
    else:
        raise ConfigError("solve-linear needs a tabular env or solve.features = one-hot")
    th_td = td_closed_form(bundle)
    th_k = kloss_closed_form(bundle, cfg["solve.ridge"])
    lines.append("theta_td = " + " ".join(repr(float(x)) for x in th_td))
    lines.append("theta_kloss = " + " ".join(repr(float(x)) for x in th_k))
    lines.append(f"difference = {float(np.linalg.norm(th_td - th_k))!r}")
    lines.append(f"cond_XtZ = {float(np.linalg.cond(bundle.X.T @ bundle.Z))!r}")
    if V_ce is not None:
        lines.append(f"certainty_equivalence_gap = {float(np.max(np.abs(V_ce - th_k)))!r}")
    text = "\n".join(lines) + "\n"
    (out / "solve.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_rerun(manifest: str) -> int:
    m = read_kv(manifest)
    base = Path(manifest).parent
    cfg = load_config(base / m.get("config", "config.cfg"))
    cfg = replace(cfg, values={**cfg.values, "out": str(base)})
    return {"collect": cmd_collect, "train": cmd_train, "verify": cmd_verify,
            "solve-linear": cmd_solve_linear}[m["command"]](cfg)


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kbl", description="Kernel Bellman loss experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("collect", "collect a transition dataset"), ("train", "run a training config"),
                        ("solve-linear", "closed-form linear solutions on a dataset")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    sp = sub.add_parser("verify", help="run the tabular identity suite")
    sp.add_argument("config", nargs="?")
    sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    sp = sub.add_parser("compare", help="merge run logs and draw charts")
    sp.add_argument("runs", nargs="+", help="run directories or .cfg files")
    sp.add_argument("--out", required=True)
    sp.add_argument("--labels", help="comma-separated labels")
    sp = sub.add_parser("rerun", help="repeat a run from its manifest")
    sp.add_argument("manifest")
    return p


def _overrides(items: list[str]) -> dict:
    out = {}
    for it in items:
        k, sep, v = it.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {it!r}")
        out[k.strip()] = v.strip()
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        if args.command == "compare":
            labels = args.labels.split(",") if args.labels else None
            return cmd_compare(args.runs, args.out, labels)
        if args.command == "rerun":
            return cmd_rerun(args.manifest)
        if args.command == "verify" and args.config is None:
            from .config import build

            return cmd_verify(build(_overrides(args.set)) if args.set else None)
        cfg = load_config(args.config, _overrides(args.set))
        return {"collect": cmd_collect, "train": cmd_train, "verify": cmd_verify,
                "solve-linear": cmd_solve_linear}[args.command](cfg)
    except (ConfigError, EnvError, KernelError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError, ConvergenceError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
