import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kernel_bellman.approx import one_hot_features
from kernel_bellman.kernels import (
    GaussianKernel,
    KernelError,
    LinearFeatureKernel,
    StateActionKernel,
    gram_matrix,
    make_kernel,
    median_bandwidth,
)


def test_gaussian_self_similarity_and_scale():
    k = GaussianKernel(0.7)
    x = np.array([0.3, -1.2])
    assert k.eval(x, x) == 1.0
    y = x + np.array([0.7, 0.0])  # |x - y|^2 = h^2
    assert k.eval(x, y) == pytest.approx(np.exp(-1.0), rel=1e-15)


def test_bandwidth_must_be_positive():
    with pytest.raises(KernelError):
        GaussianKernel(0.0)
    with pytest.raises(KernelError):
        GaussianKernel(-1.0)


def test_dimension_mismatch():
    with pytest.raises(KernelError):
        GaussianKernel(1.0).eval([0.0, 1.0], [0.0])


def test_linear_feature_on_one_hot():
    k = LinearFeatureKernel(one_hot_features(4))
    for i in range(4):
        for j in range(4):
            assert k.eval([i], [j]) == float(i == j)


def test_median_bandwidth_examples():
    assert median_bandwidth([[0.0], [2.0]], 1.0) == 4.0
    assert median_bandwidth([[0.0], [1.0], [3.0]], 0.5) == pytest.approx(1.0)


def test_median_bandwidth_sort_oracle(rng):
    pts = rng.normal(size=(64, 3))
    d = sorted(np.linalg.norm(pts[i] - pts[j]) for i in range(64) for j in range(i + 1, 64))
    m = len(d)
    med = (d[m // 2 - 1] + d[m // 2]) / 2 if m % 2 == 0 else d[m // 2]
    assert median_bandwidth(pts, 0.3) == pytest.approx((0.3 * med) ** 2, rel=1e-12)


def test_median_bandwidth_identical_points():
    with pytest.raises(KernelError):
        median_bandwidth(np.ones((5, 2)))
    with pytest.raises(KernelError):
        median_bandwidth(np.ones((1, 2)))


def test_gram_single_point_and_duplicates(rng):
    k = GaussianKernel(0.5)
    assert np.array_equal(gram_matrix(k, np.zeros((1, 2))), [[1.0]])
    pts = rng.normal(size=(5, 2))
    G = gram_matrix(k, np.vstack([pts, pts]))
    assert np.min(np.linalg.eigvalsh(G)) == pytest.approx(0.0, abs=1e-10)


def test_gram_is_psd_and_symmetric(rng):
    k = GaussianKernel(0.8)
    for _ in range(100):
        pts = rng.normal(size=(30, 2))
        G = gram_matrix(k, pts)
        assert np.array_equal(G, G.T)
        assert np.min(np.linalg.eigvalsh(G)) >= -1e-10


def test_linear_gram_is_phi_phi_t(rng):
    Phi = rng.normal(size=(6, 3))

    def feats(s):
        return Phi[np.asarray(s)[:, 0].astype(int)]

    pts = np.arange(6.0)[:, None]
    assert np.array_equal(gram_matrix(LinearFeatureKernel(feats), pts), Phi @ Phi.T)


@settings(max_examples=50, deadline=None)
@given(x=arrays(float, 3, elements=st.floats(-5, 5)), y=arrays(float, 3, elements=st.floats(-5, 5)))
def test_gaussian_symmetric_and_bounded(x, y):
    k = GaussianKernel(0.9)
    assert k.eval(x, y) == k.eval(y, x)
    assert 0.0 <= k.eval(x, y) <= 1.0


def test_state_action_kernel_definition():
    k = StateActionKernel(1.5, state_dim=2)
    a = np.array([0.1, 0.2, 0.5])
    b = np.array([0.4, -0.1, -0.3])
    expect = np.exp(-(np.sum((a[:2] - b[:2]) ** 2) + (a[2] - b[2]) ** 2) / 1.5**2)
    assert k.eval(a, b) == pytest.approx(expect, rel=1e-14)
    assert StateActionKernel(1.5, 2, action_weight=0.0).eval(a, b) == pytest.approx(
        GaussianKernel(1.5).eval(a[:2], b[:2]), rel=1e-14)


def test_matvec_matches_dense(rng):
    k = GaussianKernel(0.5)
    pts = rng.uniform(size=(300, 2))
    v = rng.normal(size=300)
    assert np.allclose(k.matvec(pts, v), gram_matrix(k, pts) @ v, rtol=1e-12, atol=1e-12)


def test_make_kernel_unknown_kind():
    with pytest.raises(KernelError, match="valid"):
        make_kernel("polynomial")
