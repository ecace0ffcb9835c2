"""Puddle World learning-rate search per method (about 6 minutes on one core)."""

import argparse
from pathlib import Path

from kernel_bellman.charts import curves_chart
from kernel_bellman.experiments import METHODS, puddle_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/puddle")
    ap.add_argument("--epochs", type=int, default=500)
    ap.add_argument("--n", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    res = puddle_comparison(METHODS, n=args.n, epochs=args.epochs, seed=args.seed)
    for name, s in res.items():
        s.search.best_log.save(out / name)
        print(f"{name:8s} lr={s.lr:g} final_mse={s.final_mse:.4g} tail_amplitude={s.amplitude:.4g}")
    curves_chart({m: (s.search.best_log.column("epoch"), s.search.best_log.column("mse")) for m, s in res.items()},
                 "grid MSE", out / "mse.svg", title="Puddle World")


if __name__ == "__main__":
    main()
