"""Seeded policy-optimization run on the pendulum toy; prints evaluation returns."""

import argparse
from pathlib import Path

from kernel_bellman.experiments import pendulum_smoke


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/pendulum")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--value-loss", default="kloss", choices=("kloss", "fvi"))
    args = ap.parse_args()

    log = pendulum_smoke(args.seed, value_loss=args.value_loss)
    log.save(Path(args.out))
    for it, ret in zip(log.column("epoch"), log.column("return_mean")):
        print(f"iteration {int(it):5d}  return {ret:9.2f}")


if __name__ == "__main__":
    main()
