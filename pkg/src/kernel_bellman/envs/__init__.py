"""Simulators, fixed evaluation policies, datasets and ground-truth values."""

from .collect import GridValueTable, collect_dataset, discretized_true_values
from .control import ENVS, CartPole, ControlEnv, EnvError, MountainCar, Pendulum, PuddleWorld, make_env, simulate
from .dataset import Transition, TransitionDataset, load_dataset, save_dataset
from .rng import stream
from .tabular_envs import BAIRD_INIT, TVR_TRUE_WEIGHTS, LinearChainSpec, collect_tabular, make_baird_star, make_tvr_chain

TABULAR_ENVS = {"tvr-chain": make_tvr_chain, "baird-star": make_baird_star}
