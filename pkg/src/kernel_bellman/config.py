"""Run configuration files.

Grammar: ``key = value`` lines; ``[section]`` headers prefix the keys that
follow with ``section.``; keys before the first header are top-level;
``#`` and ``;`` start comments. Lists are comma separated. Example::

    mode = train
    env = puddle-world
    seed = 0

    [train]
    loss = kloss-v
    lr = 0.001

    [kernel]
    h = 0.5

Every key must appear in ``SCHEMA``; unknown keys are reported together.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass
from pathlib import Path

_ROOT = "__top__"


class ConfigError(ValueError):
    pass


def _int_list(v: str) -> tuple[int, ...]:
    return tuple(int(x) for x in v.split(",") if x.strip())


def _float_list(v: str) -> tuple[float, ...]:
    return tuple(float(x) for x in v.split(",") if x.strip())


def _str_list(v: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in v.split(",") if x.strip())


# key -> (parser, default); None default means "absent unless given"
SCHEMA = {
    "mode": (str, "train"),  # train | verify | policy-opt
    "env": (str, None),
    "seed": (int, 0),
    "out": (str, "runs/out"),
    "data.n": (int, 2000),
    "data.mode": (str, "uniform-state"),
    "data.shards": (int, 1),
    "data.path": (str, None),
    "data.policy": (str, "scripted"),
    "train.loss": (str, "kloss-v"),
    "train.lr": (float, 1e-3),
    "train.lr_grid": (_float_list, None),
    "train.seeds": (_int_list, None),
    "train.epochs": (int, 2000),
    "train.batch_size": (int, 150),
    "train.gamma": (float, None),
    "train.target_sync": (int, 1),
    "train.metric_every": (int, 1),
    "train.optimizer": (str, "adam"),
    "train.init": (_float_list, None),
    "train.init_scale": (float, 0.0),
    "train.checkpoint_every": (int, 0),
    "kernel.kind": (str, None),
    "kernel.h": (float, 0.5),
    "kernel.alpha": (float, None),
    "model.hidden": (int, 80),
    "model.activation": (str, "relu"),
    "oracle.grid": (_int_list, None),
    "oracle.samples_per_cell": (int, 200),
    "oracle.seed": (int, 0),
    "pcl.iterations": (int, 2000),
    "pcl.steps_per_iter": (int, 10),
    "pcl.batch": (int, 64),
    "pcl.rollout": (int, 10),
    "pcl.gamma": (float, 0.995),
    "pcl.lam0": (float, 0.1),
    "pcl.lam_decay": (float, 0.1),
    "pcl.lam_every": (int, 2500),
    "pcl.tau": (float, 0.01),
    "pcl.lag_alpha": (float, 0.99),
    "pcl.lr_value": (float, 1e-3),
    "pcl.lr_policy": (float, 1e-3),
    "pcl.value_loss": (str, "kloss"),
    "pcl.kernel_alpha": (float, 0.0),
    "pcl.eval_every": (int, 100),
    "pcl.eval_episodes": (int, 5),
    "verify.instances": (int, 20),
    "solve.ridge": (float, 0.0),
    "solve.features": (str, "env"),  # env | one-hot
}


@dataclass
class RunConfig:
    values: dict  # parsed, defaults filled
    given: dict  # raw strings as written (post-override)
    path: Path | None = None

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    def snapshot(self) -> str:
        """Canonical text of the given keys; parsing it yields the same config."""
        top = {k: v for k, v in self.given.items() if "." not in k}
        lines = [f"{k} = {v}" for k, v in sorted(top.items())]
        sections: dict[str, list[str]] = {}
        for k, v in sorted(self.given.items()):
            if "." in k:
                sec, sub = k.split(".", 1)
                sections.setdefault(sec, []).append(f"{sub} = {v}")
        for sec, items in sections.items():
            lines += ["", f"[{sec}]", *items]
        return "\n".join(lines) + "\n"


def parse_text(text: str) -> dict:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   default_section="__unused_default__")
    cp.optionxform = str
    try:
        cp.read_string(f"[{_ROOT}]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    out = {}
    for sec in cp.sections():
        for k, v in cp.items(sec):
            out[k if sec == _ROOT else f"{sec}.{k}"] = v
    return out


def build(raw: dict, path=None, env_seed: bool = True) -> RunConfig:
    raw = dict(raw)
    if env_seed and os.environ.get("KBL_SEED", "").strip():
        raw["seed"] = os.environ["KBL_SEED"].strip()
    unknown = sorted(k for k in raw if k not in SCHEMA)
    errors = [f"unknown key {k!r}" for k in unknown]
    values = {k: d for k, (_, d) in SCHEMA.items()}
    for k, v in raw.items():
        if k in SCHEMA:
            try:
                values[k] = SCHEMA[k][0](v)
            except ValueError:
                errors.append(f"bad value for {k!r}: {v!r}")
    if errors:
        valid = ", ".join(SCHEMA)
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors) + f"\nvalid keys: {valid}")
    return RunConfig(values, raw, Path(path) if path else None)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    raw = parse_text(text)
    raw.update(overrides or {})
    return build(raw, p)
