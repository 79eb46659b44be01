import numpy as np

from mixadapt import kernels


def test_pairwise_paths_agree():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(23, 7))
    b = rng.normal(size=(11, 7))
    d_np = kernels.pairwise_euclidean_numpy(a, b)
    d_nb = kernels.pairwise_euclidean_numba(a, b)
    np.testing.assert_allclose(d_np, d_nb, atol=1e-12)


def test_pairwise_matches_double_loop():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(9, 4))
    b = rng.normal(size=(6, 4))
    expected = np.empty((9, 6))
    for i in range(9):
        for j in range(6):
            expected[i, j] = np.sqrt(((a[i] - b[j]) ** 2).sum())
    np.testing.assert_allclose(kernels.pairwise_euclidean(a, b), expected, atol=1e-12)


def test_kmeans_assign_paths_agree():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(40, 5))
    centers = rng.normal(size=(3, 5))
    a_np, s_np, c_np = kernels.kmeans_assign_numpy(x, centers)
    a_nb, s_nb, c_nb = kernels.kmeans_assign_numba(x, centers)
    np.testing.assert_array_equal(a_np, a_nb)
    np.testing.assert_array_equal(c_np, c_nb)
    np.testing.assert_allclose(s_np, s_nb, atol=1e-12)


def test_kmeans_assign_is_nearest_center():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(25, 3))
    centers = rng.normal(size=(4, 3))
    assign, sums, counts = kernels.kmeans_assign(x, centers)
    brute = np.array(
        [np.argmin([((p - c) ** 2).sum() for c in centers]) for p in x], dtype=np.int64
    )
    np.testing.assert_array_equal(assign, brute)
    assert counts.sum() == 25
    for k in range(4):
        np.testing.assert_allclose(sums[k], x[assign == k].sum(axis=0), atol=1e-12)


def test_env_flag_selects_numpy_path(monkeypatch):
    import importlib

    monkeypatch.setenv("MIXADAPT_NO_NUMBA", "1")
    mod = importlib.reload(kernels)
    try:
        assert not mod.NUMBA_ACTIVE
        assert mod.pairwise_euclidean is mod.pairwise_euclidean_numpy
    finally:
        monkeypatch.delenv("MIXADAPT_NO_NUMBA")
        importlib.reload(kernels)
