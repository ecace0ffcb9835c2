"""Parametric value functions with flat parameter vectors.

Both models expose the same surface: ``values(states)``,
``values_and_jacobian(states)`` (per-sample parameter gradients) and
``vjp(states, cotangent)`` (sum of cotangent-weighted gradients, the cheap
path used by the losses).

MLP parameters are laid out layer-major; within a layer the weight matrix
of shape (fan_out, fan_in) comes first in row-major order, then the bias.
Dense layers reduce with an elementwise product and a last-axis sum instead
of BLAS matmul, so a row's output never depends on what else is in the
batch.
"""

from __future__ import annotations

from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np


class GradientRecord(NamedTuple):
    value: float
    grad: np.ndarray


def _as_batch(states, dim: int | None = None) -> np.ndarray:
    s = np.atleast_1d(np.asarray(states, dtype=float))
    if s.ndim == 1:
        s = s[:, None] if dim == 1 else s[None, :]
    if dim is not None and s.shape[1] != dim:
        raise ValueError(f"state dimension {s.shape[1]} does not match expected {dim}")
    return s


class ValueFunction:
    """Shared helpers; subclasses implement the batched primitives."""

    theta: np.ndarray
    kind: str

    @property
    def n_params(self) -> int:
        return self.theta.size

    def set_params(self, theta) -> None:
        theta = np.array(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        self.theta = theta

    def _check_params(self, theta):
        theta = self.theta if theta is None else np.asarray(theta, float)
        if not np.all(np.isfinite(theta)):
            raise FloatingPointError("value function parameters contain NaN/inf")
        return theta

    def value(self, s, theta=None) -> float:
        return float(self.values(_as_batch(s, self.input_dim)[:1], theta)[0])

    def value_and_grad(self, s, theta=None) -> GradientRecord:
        v, J = self.values_and_jacobian(_as_batch(s, self.input_dim)[:1], theta)
        return GradientRecord(float(v[0]), J[0])

    def batched_values_and_grads(self, states, theta=None) -> list[GradientRecord]:
        v, J = self.values_and_jacobian(states, theta)
        return [GradientRecord(float(a), g) for a, g in zip(v, J)]

    def vjp(self, states, cotangent, theta=None) -> np.ndarray:
        _, J = self.values_and_jacobian(states, theta)
        return J.T @ np.asarray(cotangent, float)

    def copy(self):
        raise NotImplementedError


class LinearValueFunction(ValueFunction):
    """V(s) = theta . phi(s)."""

    kind = "linear"

    def __init__(self, features: Callable[[np.ndarray], np.ndarray], n_features: int, input_dim: int,
                 theta=None, name: str = "features"):
        self.features = features
        self.input_dim = input_dim
        self.name = name
        self.theta = np.zeros(n_features) if theta is None else np.array(theta, dtype=float)

    def architecture(self) -> str:
        return f"{self.name}:{self.input_dim}->{self.n_params}"

    def values(self, states, theta=None) -> np.ndarray:
        theta = self._check_params(theta)
        return self.features(_as_batch(states, self.input_dim)) @ theta

    def values_and_jacobian(self, states, theta=None):
        theta = self._check_params(theta)
        F = self.features(_as_batch(states, self.input_dim))
        return F @ theta, F.copy()

    def vjp(self, states, cotangent, theta=None):
        self._check_params(theta)
        return self.features(_as_batch(states, self.input_dim)).T @ np.asarray(cotangent, float)

    def copy(self):
        return LinearValueFunction(self.features, self.n_params, self.input_dim, self.theta.copy(), self.name)


class TableFeatures:
    """Feature lookup for tabular states encoded as a 1-d integer coordinate."""

    def __init__(self, Phi: np.ndarray):
        self.Phi = np.asarray(Phi, dtype=float)

    def __call__(self, states: np.ndarray) -> np.ndarray:
        idx = np.asarray(states, float)[:, 0].astype(int)
        return self.Phi[idx]


def one_hot_features(n_states: int) -> TableFeatures:
    return TableFeatures(np.eye(n_states))


_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z, a: (z > 0).astype(float)),
    "tanh": (np.tanh, lambda z, a: 1.0 - a * a),
}


def _dense(a: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, None, :] * W[None, :, :]).sum(axis=-1) + b


class MLPValueFunction(ValueFunction):
    """Fully connected net with scalar linear output.

    The relu derivative at an exactly-zero preactivation is taken as 0.
    """

    kind = "mlp"

    def __init__(self, widths: Sequence[int], activation: str = "relu", theta=None, seed: int = 0):
        if len(widths) < 2 or widths[-1] != 1:
            raise ValueError("widths must run from input dim to a single output unit")
        if activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.widths = tuple(int(w) for w in widths)
        self.activation = activation
        self.input_dim = self.widths[0]
        self._shapes = [(o, i) for i, o in zip(self.widths[:-1], self.widths[1:])]
        size = sum(o * i + o for o, i in self._shapes)
        if theta is None:
            theta = init_params(self.widths, seed)
        theta = np.array(theta, dtype=float)
        if theta.shape != (size,):
            raise ValueError(f"expected {size} parameters, got {theta.shape}")
        self.theta = theta

    def architecture(self) -> str:
        return ",".join(map(str, self.widths)) + ":" + self.activation

    def layers(self, theta=None):
        theta = self.theta if theta is None else theta
        out, k = [], 0
        for o, i in self._shapes:
            W = theta[k:k + o * i].reshape(o, i)
            k += o * i
            out.append((W, theta[k:k + o]))
            k += o
        return out

    def _forward(self, x, theta):
        act, _ = _ACTIVATIONS[self.activation]
        layers = self.layers(theta)
        acts, pre = [x], []
        a = x
        for li, (W, b) in enumerate(layers):
            z = _dense(a, W, b)
            pre.append(z)
            a = z if li == len(layers) - 1 else act(z)
            acts.append(a)
        return layers, pre, acts

    def values(self, states, theta=None) -> np.ndarray:
        theta = self._check_params(theta)
        _, _, acts = self._forward(_as_batch(states, self.input_dim), theta)
        return acts[-1][:, 0]

    def values_and_jacobian(self, states, theta=None):
        theta = self._check_params(theta)
        x = _as_batch(states, self.input_dim)
        layers, pre, acts = self._forward(x, theta)
        _, dact = _ACTIVATIONS[self.activation]
        n = len(x)
        blocks = []
        g = np.ones((n, 1))
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            dW = g[:, :, None] * acts[li][:, None, :]
            blocks.append(g)
            blocks.append(dW.reshape(n, -1))
            if li:
                g = (g[:, :, None] * W[None, :, :]).sum(axis=1) * dact(pre[li - 1], acts[li])
        J = np.concatenate(blocks[::-1], axis=1)
        return acts[-1][:, 0], J

    def vjp(self, states, cotangent, theta=None) -> np.ndarray:
        theta = self._check_params(theta)
        x = _as_batch(states, self.input_dim)
        layers, pre, acts = self._forward(x, theta)
        _, dact = _ACTIVATIONS[self.activation]
        g = np.asarray(cotangent, float)[:, None]
        parts = []
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            parts.append(g.sum(axis=0))
            parts.append((g.T @ acts[li]).ravel())
            if li:
                g = (g @ W) * dact(pre[li - 1], acts[li])
        return np.concatenate(parts[::-1])

    def copy(self):
        return MLPValueFunction(self.widths, self.activation, self.theta.copy())


def init_params(widths: Sequence[int], seed: int, scale: float = 1.0) -> np.ndarray:
    """Uniform fan-in init: every weight and bias ~ U(-c, c), c = scale / sqrt(fan_in)."""
    rng = np.random.Generator(np.random.Philox(seed))
    parts = []
    for i, o in zip(widths[:-1], widths[1:]):
        c = scale / np.sqrt(i)
        parts.append(rng.uniform(-c, c, size=o * i))
        parts.append(rng.uniform(-c, c, size=o))
    return np.concatenate(parts)


def numerical_grad(f: Callable[[np.ndarray], float], theta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    theta = np.asarray(theta, float)
    g = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += eps
        tm[k] -= eps
        g[k] = (f(tp) - f(tm)) / (2 * eps)
    return g


# -- checkpoints ----------------------------------------------------------

_MAGIC = b"KBLCKPT1"


def save_checkpoint(path, vf: ValueFunction | None = None, *, kind: str | None = None,
                    architecture: str | None = None, theta=None) -> None:
    """Header line ``KBLCKPT1 kind=.. arch=.. n=..`` then theta as little-endian float64."""
    if vf is not None:
        kind, architecture, theta = vf.kind, vf.architecture(), vf.theta
    theta = np.asarray(theta, dtype="<f8")
    header = f"{_MAGIC.decode()} kind={kind} arch={architecture} n={theta.size}\n".encode()
    Path(path).write_bytes(header + theta.tobytes())


def load_checkpoint(path) -> tuple[dict, np.ndarray]:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    fields = head.decode().split()
    if not fields or fields[0] != _MAGIC.decode():
        raise ValueError(f"{path} is not a checkpoint file")
    meta = dict(f.split("=", 1) for f in fields[1:])
    theta = np.frombuffer(body, dtype="<f8").astype(float)
    if theta.size != int(meta["n"]):
        raise ValueError(f"checkpoint {path} is truncated: {theta.size} of {meta['n']} values")
    return meta, theta


def mlp_from_checkpoint(path) -> MLPValueFunction:
    meta, theta = load_checkpoint(path)
    if meta["kind"] != "mlp":
        raise ValueError(f"checkpoint kind {meta['kind']!r} is not an mlp")
    widths, act = meta["arch"].split(":")
    return MLPValueFunction([int(w) for w in widths.split(",")], act, theta)
