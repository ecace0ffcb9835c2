"""Static SVG charts with byte-stable output.

Glyphs are embedded as paths, element ids come from a fixed hash salt and
the date stamp is dropped, so the same data always yields the same bytes.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_RC = {
    "svg.hashsalt": "kernel-bellman",
    "svg.fonttype": "path",
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "figure.figsize": (6.0, 4.0),
    "axes.prop_cycle": matplotlib.cycler(color=["#1b6ca8", "#d1495b", "#edae49", "#66a182", "#8d6a9f", "#2e4057"]),
}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    return path


def _finite_positive(y):
    y = np.asarray(y, float)
    return np.where(np.isfinite(y) & (y > 0), y, np.nan)


def curves_chart(series: dict[str, tuple[np.ndarray, np.ndarray]], ylabel: str, path, title: str = "",
                 logy: bool = True) -> Path:
    """One line per label; ``series[label] = (epochs, values)``."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, (x, y) in series.items():
            ax.plot(x, _finite_positive(y) if logy else y, label=label, linewidth=1.2)
        if logy:
            ax.set_yscale("log")
        ax.set_xlabel("epoch")
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def pearson(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(x) & np.isfinite(y)
    if ok.sum() < 2 or np.std(x[ok]) == 0 or np.std(y[ok]) == 0:
        return float("nan")
    return float(np.corrcoef(x[ok], y[ok])[0, 1])


def scatter_chart(points: dict[str, tuple[np.ndarray, np.ndarray]], xlabel: str, ylabel: str, path) -> tuple[Path, dict]:
    """Loss-vs-MSE scatter per label; the caption lists each label's Pearson r."""
    rs = {label: pearson(x, y) for label, (x, y) in points.items()}
    with plt.rc_context(_RC):
        fig, ax = plt.subplots()
        for label, (x, y) in points.items():
            ax.scatter(_finite_positive(x), _finite_positive(y), s=6, label=label)
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.legend(frameon=False)
        caption = "Pearson r: " + ", ".join(f"{k} {v:.3f}" for k, v in rs.items())
        fig.text(0.5, 0.01, caption, ha="center", va="bottom")
        fig.tight_layout(rect=(0, 0.05, 1, 1))
        return _save(fig, path), rs
