"""Continuous-state simulators with additive Gaussian transition noise.

All dynamics are vectorized over a batch of states. Each ``step`` draws
its noise from the generator it is given and nothing else, so replaying a
stream replays a trajectory exactly. Constants below define the tasks used
in this repository; they follow the usual published dynamics where one
exists and are otherwise chosen here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class EnvError(ValueError):
    pass


class ControlEnv:
    name: str
    low: np.ndarray
    high: np.ndarray
    action_dim: int = 1
    discrete_actions: int | None = None
    # dimensions the evaluation policy's value depends on (discretization grid)
    value_dims: tuple[int, ...]
    default_grid: tuple[int, ...]
    reference_state: np.ndarray  # fills dims outside value_dims when discretizing
    episode_horizon: int = 200

    @property
    def dim(self) -> int:
        return len(self.low)

    def check(self, states) -> np.ndarray:
        s = np.atleast_2d(np.asarray(states, float))
        if s.shape[1] != self.dim:
            raise EnvError(f"{self.name} states have dimension {self.dim}, got {s.shape[1]}")
        if np.any(np.isnan(s)):
            raise EnvError("NaN state")
        return s

    def normalize(self, states) -> np.ndarray:
        """Map the state box to [0, 1]^d."""
        return (np.asarray(states, float) - self.low) / (self.high - self.low)

    def clip(self, states) -> np.ndarray:
        return np.clip(states, self.low, self.high)

    def sample_uniform(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.low + (self.high - self.low) * rng.random((n, self.dim))

    def initial_states(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_uniform(n, rng)

    def step(self, states, actions, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def policy(self, states, rng):  # pragma: no cover - abstract
        raise NotImplementedError


# -- puddle world ----------------------------------------------------------


@dataclass(frozen=True)
class PuddleConstants:
    step_size: float = 0.05
    noise_std: float = 0.01
    step_cost: float = 0.1
    puddle_cost: float = 20.0  # per unit depth inside a puddle
    puddle_radius: float = 0.1
    goal_sum: float = 1.9  # terminal once x + y >= goal_sum
    # evaluation policy: up, down, left, right
    action_probs: tuple = (0.4, 0.1, 0.1, 0.4)


PUDDLES = (((0.10, 0.75), (0.45, 0.75)), ((0.45, 0.40), (0.45, 0.80)))
_MOVES = np.array([[0.0, 1.0], [0.0, -1.0], [-1.0, 0.0], [1.0, 0.0]])


def _segment_distance(p: np.ndarray, a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    ab = b - a
    t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
    closest = a + t[:, None] * ab
    return np.linalg.norm(p - closest, axis=1)


class PuddleWorld(ControlEnv):
    """Unit square, goal in the top-right corner, two capsule-shaped puddles.

    Reward for a step from s is ``-step_cost - puddle_cost * depth(s)``
    where depth is how far inside the nearest puddle capsule s lies.
    """

    name = "puddle-world"
    discrete_actions = 4
    value_dims = (0, 1)
    default_grid = (25, 25)

    def __init__(self, constants: PuddleConstants = PuddleConstants()):
        self.c = constants
        self.low = np.zeros(2)
        self.high = np.ones(2)
        self.reference_state = np.zeros(2)

    def puddle_depth(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        depth = np.zeros(len(s))
        for a, b in PUDDLES:
            depth = np.maximum(depth, self.c.puddle_radius - _segment_distance(s, a, b))
        return depth

    def reward(self, states) -> np.ndarray:
        return -self.c.step_cost - self.c.puddle_cost * self.puddle_depth(states)

    def is_goal(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        return s[:, 0] + s[:, 1] >= self.c.goal_sum

    def step(self, states, actions, rng):
        s = self.check(states)
        a = np.asarray(actions, int).reshape(-1)
        move = _MOVES[a] * self.c.step_size
        nxt = self.clip(s + move + self.c.noise_std * rng.standard_normal(s.shape))
        return nxt, self.reward(s), self.is_goal(nxt)

    def policy(self, states, rng):
        n = len(np.atleast_2d(states))
        return rng.choice(4, size=n, p=self.c.action_probs)


# -- mountain car ----------------------------------------------------------


class MountainCar(ControlEnv):
    """Classic mountain car with noise on the velocity update.

    Actions are the force in {-1, 0, +1}; reward -1 per step; the episode
    ends at position >= 0.5.
    """

    name = "mountain-car"
    value_dims = (0, 1)
    default_grid = (30, 25)
    noise_std = 0.0005
    goal = 0.5

    def __init__(self, noise_std: float | None = None):
        self.low = np.array([-1.2, -0.07])
        self.high = np.array([0.6, 0.07])
        self.reference_state = np.array([-np.pi / 6, 0.0])
        if noise_std is not None:
            self.noise_std = noise_std

    def step(self, states, actions, rng):
        s = self.check(states)
        force = np.asarray(actions, float).reshape(-1)
        x, v = s[:, 0], s[:, 1]
        v = v + 0.001 * force - 0.0025 * np.cos(3 * x) + self.noise_std * rng.standard_normal(len(s))
        v = np.clip(v, self.low[1], self.high[1])
        x = x + v
        v = np.where(x <= self.low[0], 0.0, v)
        nxt = self.clip(np.stack([x, v], axis=1))
        return nxt, np.full(len(s), -1.0), nxt[:, 0] >= self.goal

    def policy(self, states, rng, eps: float = 0.1):
        """Energy pumping: push along the velocity, random force with prob eps."""
        s = np.atleast_2d(states)
        a = np.where(s[:, 1] >= 0, 1.0, -1.0)
        explore = rng.random(len(s)) < eps
        return np.where(explore, rng.integers(-1, 2, len(s)).astype(float), a)


# -- cart-pole -------------------------------------------------------------


class CartPole(ControlEnv):
    """Cart-pole with continuous force and noise on the angular velocity.

    State (x, x_dot, theta, theta_dot). The episode ends only when
    |theta| exceeds 12 degrees; the cart is clipped to its track. Pole
    dynamics do not depend on the cart state, and the scripted PD policy
    reads only the pole, so the policy's value is a function of
    (theta, theta_dot) alone.
    """

    name = "cartpole"
    value_dims = (2, 3)
    default_grid = (20, 25)
    gravity, masscart, masspole, length, tau = 9.8, 1.0, 0.1, 0.5, 0.02
    force_max = 10.0
    noise_std = 0.02
    theta_limit = 12 * np.pi / 180

    def __init__(self):
        self.low = np.array([-2.4, -3.0, -self.theta_limit, -2.0])
        self.high = -self.low
        self.reference_state = np.zeros(4)

    def step(self, states, actions, rng):
        s = self.check(states)
        force = np.clip(np.asarray(actions, float).reshape(-1), -self.force_max, self.force_max)
        x, xd, th, thd = s.T
        total = self.masscart + self.masspole
        pml = self.masspole * self.length
        cos, sin = np.cos(th), np.sin(th)
        temp = (force + pml * thd**2 * sin) / total
        thacc = (self.gravity * sin - cos * temp) / (
            self.length * (4.0 / 3.0 - self.masspole * cos**2 / total))
        xacc = temp - pml * thacc * cos / total
        x = x + self.tau * xd
        xd = xd + self.tau * xacc
        th = th + self.tau * thd
        thd = thd + self.tau * thacc + self.noise_std * rng.standard_normal(len(s))
        nxt = np.stack([x, xd, th, thd], axis=1)
        terminal = np.abs(th) > self.theta_limit
        nxt = np.concatenate([np.clip(nxt[:, :2], self.low[:2], self.high[:2]), nxt[:, 2:]], axis=1)
        nxt[:, 3] = np.clip(nxt[:, 3], self.low[3], self.high[3])
        return nxt, np.ones(len(s)), terminal

    def policy(self, states, rng, kp: float = 20.0, kd: float = 2.0, noise: float = 4.0):
        """Noisy PD controller on the pole angle."""
        s = np.atleast_2d(states)
        u = kp * s[:, 2] + kd * s[:, 3] + noise * rng.standard_normal(len(s))
        return np.clip(u, -self.force_max, self.force_max)


# -- pendulum --------------------------------------------------------------


def angle_normalize(th):
    return (th + np.pi) % (2 * np.pi) - np.pi


class Pendulum(ControlEnv):
    """Torque-limited pendulum, angle 0 upright, noise on angular velocity.

    Reward ``-(theta^2 + 0.1 theta_dot^2 + 0.001 u^2)``; no terminal states.
    ``start_angle`` bounds the initial angle of an episode (pi gives the
    full swing-up task).
    """

    name = "pendulum"
    value_dims = (0, 1)
    default_grid = (25, 25)
    g, m, l, dt = 10.0, 1.0, 1.0, 0.05
    max_speed, max_torque = 8.0, 2.0
    noise_std = 0.01

    def __init__(self, start_angle: float = np.pi, start_speed: float = 1.0, horizon: int = 200):
        self.low = np.array([-np.pi, -self.max_speed])
        self.high = -self.low
        self.reference_state = np.zeros(2)
        self.start_angle = start_angle
        self.start_speed = start_speed
        self.episode_horizon = horizon

    def initial_states(self, n, rng):
        th = rng.uniform(-self.start_angle, self.start_angle, n)
        thd = rng.uniform(-self.start_speed, self.start_speed, n)
        return np.stack([th, thd], axis=1)

    def observe(self, states) -> np.ndarray:
        s = np.atleast_2d(states)
        return np.stack([np.cos(s[:, 0]), np.sin(s[:, 0]), s[:, 1] / self.max_speed], axis=1)

    def step(self, states, actions, rng):
        s = self.check(states)
        u = np.clip(np.asarray(actions, float).reshape(-1), -self.max_torque, self.max_torque)
        th, thd = s[:, 0], s[:, 1]
        cost = angle_normalize(th) ** 2 + 0.1 * thd**2 + 0.001 * u**2
        thd = thd + (3 * self.g / (2 * self.l) * np.sin(th) + 3.0 / (self.m * self.l**2) * u) * self.dt
        thd = thd + self.noise_std * rng.standard_normal(len(s))
        thd = np.clip(thd, -self.max_speed, self.max_speed)
        th = angle_normalize(th + thd * self.dt)
        return np.stack([th, thd], axis=1), -cost, np.zeros(len(s), dtype=bool)

    def policy(self, states, rng):
        """Energy pumping toward upright, PD near the top."""
        s = np.atleast_2d(states)
        th, thd = angle_normalize(s[:, 0]), s[:, 1]
        # free-swing energy; upright at rest gives 15
        energy = 0.5 * thd**2 + 1.5 * self.g / self.l * np.cos(th)
        pump = self.max_torque * np.sign(thd + 1e-12) * np.sign(15.0 - energy)
        pd = -(10.0 * th + 2.0 * thd)
        u = np.where(np.abs(th) < 0.5, pd, pump)
        return np.clip(u, -self.max_torque, self.max_torque)


ENVS = {
    "puddle-world": PuddleWorld,
    "mountain-car": MountainCar,
    "cartpole": CartPole,
    "pendulum": Pendulum,
}


def make_env(name: str, **kwargs) -> ControlEnv:
    try:
        return ENVS[name](**kwargs)
    except KeyError:
        raise EnvError(f"unknown env {name!r}; valid: {', '.join(ENVS)}") from None


def simulate(env: ControlEnv, state, action, rng):
    """Single-step (next_state, reward, terminal)."""
    nxt, r, term = env.step(np.atleast_2d(state), np.atleast_1d(action), rng)
    return nxt[0], float(r[0]), bool(term[0])
