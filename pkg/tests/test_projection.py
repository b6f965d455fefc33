import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpllm.projection import gaussian_stream, generate, identity


def test_same_seed_same_matrices():
    a = generate(42, 3, 20, 50)
    b = generate(42, 3, 20, 50)
    np.testing.assert_array_equal(a.matrices, b.matrices)
    assert not np.array_equal(generate(43, 3, 20, 50).matrices, a.matrices)
    # matrices for different filter indices come from different streams
    assert not np.allclose(a.matrices[0], a.matrices[1])


def test_stream_prefix_is_stable():
    # a matrix's entries do not depend on how many other matrices are drawn
    np.testing.assert_array_equal(generate(5, 1, 10, 30).matrices[0], generate(5, 4, 10, 30).matrices[0])
    np.testing.assert_array_equal(gaussian_stream(5, 2, 7), gaussian_stream(5, 2, 8)[:7])


def test_entry_statistics():
    proj = generate(2024, 30, 300, 784)
    entries = proj.matrices.reshape(-1)
    assert abs(entries.mean()) < 3 * np.sqrt(1 / 300 / entries.size)
    assert abs(entries.var() / (1 / 300) - 1) < 0.10
    # each matrix on its own is also close to the target variance
    for m in range(30):
        assert abs(proj.matrices[m].var() * 300 - 1) < 0.10


def test_zero_dims_rejected():
    for dims in [(0, 3, 4), (2, 0, 4), (2, 3, 0)]:
        with pytest.raises(ValueError):
            generate(1, *dims)


def test_project_basics():
    proj = generate(1, 2, 5, 9)
    assert np.all(proj.project(1, np.zeros(9)) == 0)
    for i in range(9):
        np.testing.assert_array_equal(proj.project(0, np.eye(9)[i]), proj.matrices[0][:, i])
    with pytest.raises(IndexError):
        proj.project(2, np.zeros(9))
    with pytest.raises(ValueError):
        proj.project(0, np.zeros(8))


def test_reconstruct_basics():
    proj = generate(1, 2, 5, 9)
    assert np.all(proj.reconstruct_filter(1, np.zeros(5)) == 0)
    for j in range(5):
        np.testing.assert_array_equal(proj.reconstruct_filter(1, np.eye(5)[j]), proj.matrices[1][j])
    with pytest.raises(ValueError):
        proj.reconstruct_filter(0, np.zeros(4))


@given(seed=st.integers(0, 2**63 - 1), m=st.integers(0, 2))
def test_adjoint_consistency(seed, m):
    proj = generate(seed % 1000, 3, 7, 15)
    r = np.random.default_rng(seed)
    m_vec, x = r.normal(size=7), r.normal(size=15)
    lhs = proj.reconstruct_filter(m, m_vec) @ x
    rhs = m_vec @ proj.project(m, x)
    assert abs(lhs - rhs) < 1e-10


def test_identity_projection():
    proj = identity(3, 6)
    x = np.arange(6.0)
    np.testing.assert_array_equal(proj.project(2, x), x)
    np.testing.assert_array_equal(proj.reconstruct_filter(0, x), x)
    assert proj.project_batch(x[None]).shape == (1, 3, 6)


def test_batch_projection_matches_single():
    proj = generate(9, 4, 6, 20)
    X = np.random.default_rng(0).normal(size=(5, 20))
    Z = proj.project_batch(X)
    for n, m in itertools.product(range(5), range(4)):
        np.testing.assert_allclose(Z[n, m], proj.project(m, X[n]), rtol=0, atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1, 2, 3, 4])
def test_pairwise_distances_preserved(seed):
    """Brute-force comparison over all 190 pairs of 20 random points."""
    r = np.random.default_rng(100 + seed)
    pts = r.normal(size=(20, 784))
    proj = generate(seed, 1, 300, 784)
    low = np.stack([proj.project(0, p) for p in pts])
    ratios = []
    for i, j in itertools.combinations(range(20), 2):
        ratios.append(np.linalg.norm(low[i] - low[j]) / np.linalg.norm(pts[i] - pts[j]))
    ratios = np.array(ratios)
    assert np.mean((ratios >= 0.65) & (ratios <= 1.35)) >= 0.95
