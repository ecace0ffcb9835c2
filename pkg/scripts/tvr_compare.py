"""Four-method comparison on the two-state-value chain; writes curves and a summary."""

import argparse
from pathlib import Path

from kernel_bellman.charts import curves_chart
from kernel_bellman.experiments import METHODS, tvr_comparison


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/tvr")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    runs = tvr_comparison(METHODS, seed=args.seed)
    for name, run in runs.items():
        run.log.save(out / name)
        print(f"{name:8s} status={run.log.status:8s} |w-w*|={run.distance:.4g} rg-grad={run.rg_grad_norm:.2e}")
    mse = {m: (r.log.column("epoch"), r.log.column("mse")) for m, r in runs.items()}
    curves_chart(mse, "MSE", out / "mse.svg", title="TVR chain")
    print(f"charts in {out}")


if __name__ == "__main__":
    main()
