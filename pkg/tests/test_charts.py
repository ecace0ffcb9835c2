import hashlib

import numpy as np
import pytest

from kernel_bellman.charts import curves_chart, pearson, scatter_chart


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def series():
    x = np.arange(0, 50)
    return {"kloss-v": (x, np.exp(-x / 10) + 1e-3), "rg": (x, 0.5 + 0 * x), "td0": (x, np.exp(x / 5.0))}


def test_curves_are_byte_stable(tmp_path):
    a = curves_chart(series(), "MSE", tmp_path / "a.svg", title="chain")
    b = curves_chart(series(), "MSE", tmp_path / "b.svg", title="chain")
    assert digest(a) == digest(b)
    text = a.read_text()
    assert text.startswith("<?xml") and "<dc:date>" not in text


def test_curves_tolerate_nonfinite(tmp_path):
    x = np.arange(5)
    p = curves_chart({"fvi": (x, np.array([1.0, 10.0, np.inf, np.nan, 0.0]))}, "MSE", tmp_path / "c.svg")
    assert p.stat().st_size > 0


def test_single_curve_has_one_legend_entry(tmp_path):
    x = np.arange(10)
    p = curves_chart({"only": (x, x + 1.0)}, "MSE", tmp_path / "one.svg")
    assert p.read_text().count("<!-- only -->") == 1


def test_scatter_caption_and_stability(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.uniform(1, 10, 40)
    pts = {"K": (x, 2 * x + rng.normal(0, 0.1, 40)), "L2": (x, rng.uniform(1, 10, 40))}
    p1, rs = scatter_chart(pts, "loss", "MSE", tmp_path / "s1.svg")
    p2, _ = scatter_chart(pts, "loss", "MSE", tmp_path / "s2.svg")
    assert digest(p1) == digest(p2)
    assert rs["K"] == pytest.approx(np.corrcoef(*pts["K"])[0, 1])
    assert "<!-- Pearson r: K" in p1.read_text()


def test_pearson_degenerate():
    assert np.isnan(pearson([1, 1, 1], [1, 2, 3]))
    assert np.isnan(pearson([1.0], [2.0]))
    assert pearson([1, 2, 3, np.nan], [2, 4, 6, 1]) == pytest.approx(1.0)
