"""Off-policy divergence on the seven-state star: TD(0) and FVI blow up, the kernel loss does not."""

import argparse
from pathlib import Path

from kernel_bellman.charts import curves_chart
from kernel_bellman.experiments import baird_divergence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/baird")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    logs = baird_divergence(seed=args.seed)
    for name, log in logs.items():
        log.save(out / name)
        print(f"{name:8s} status={log.status:8s} epochs={int(log.column('epoch')[-1])} "
              f"|theta|={log.column('theta_norm')[-1]:.4g}")
    curves_chart({m: (l.column("epoch"), l.column("theta_norm")) for m, l in logs.items()},
                 "|theta|", out / "theta_norm.svg", title="Baird star")


if __name__ == "__main__":
    main()
