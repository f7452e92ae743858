"""Window extraction, PCA features, and the 2-D cosine transform."""

import numpy as np
import pytest

from autonarx.errors import ConfigError, DataError
from autonarx.window_features import (
    FeatureExtractor,
    WindowAlignment,
    WindowSpec,
    assemble_from_series,
    build_lagged_windows,
    dct2_modes,
    dct_synthesis_matrix,
    fit_pca,
    transform,
)


def test_window_layout_include_current():
    spec = WindowSpec("x", 2, WindowAlignment.INCLUDE_CURRENT)
    win = build_lagged_windows(np.array([1.0, 2.0, 3.0, 4.0]), spec)
    # window at t is [x(t), x(t-1)], valid from t = 1
    np.testing.assert_array_equal(win, [[2, 1], [3, 2], [4, 3]])
    assert spec.horizon == 1


def test_window_layout_past_only():
    spec = WindowSpec("y", 2, WindowAlignment.PAST_ONLY)
    win = build_lagged_windows(np.array([1.0, 2.0, 3.0, 4.0]), spec)
    # window at t is [x(t-1), x(t-2)], valid from t = 2
    np.testing.assert_array_equal(win, [[2, 1], [3, 2]])
    assert spec.horizon == 2


def test_window_too_short():
    spec = WindowSpec("x", 5, WindowAlignment.PAST_ONLY)
    with pytest.raises(DataError):
        build_lagged_windows(np.arange(5.0), spec)


def test_pca_known_covariance():
    r3 = np.sqrt(3.0)
    W = np.array([[r3, r3], [-r3, -r3], [1.0, -1.0], [-1.0, 1.0]])
    # population covariance [[2, 1], [1, 2]]: eigenpairs 3 -> (1,1)/sqrt2,
    # 1 -> (1,-1)/sqrt2
    ext = fit_pca(W)
    np.testing.assert_allclose(ext.eigenvalues, [3.0, 1.0], atol=1e-12)
    s = 1.0 / np.sqrt(2.0)
    np.testing.assert_allclose(ext.projection[:, 0], [s, s], atol=1e-12)
    np.testing.assert_allclose(ext.projection[:, 1], [s, -s], atol=1e-12)
    assert not ext.rank_deficient


def test_pca_orthonormal_and_uncorrelated():
    rng = np.random.default_rng(11)
    W = rng.standard_normal((400, 12)) @ rng.standard_normal((12, 12))
    ext = fit_pca(W)
    P = ext.projection
    np.testing.assert_allclose(P.T @ P, np.eye(P.shape[1]), atol=1e-10)
    F = transform(ext, W)
    C = np.cov(F, rowvar=False)
    off = C - np.diag(np.diag(C))
    denom = np.sqrt(np.outer(np.diag(C), np.diag(C)))
    assert np.max(np.abs(off / denom)) < 1e-8


def test_pca_eigenvalues_match_feature_variance():
    rng = np.random.default_rng(5)
    W = rng.standard_normal((1000, 6))
    ext = fit_pca(W)
    F = transform(ext, W)
    np.testing.assert_allclose(F.var(axis=0), ext.eigenvalues, rtol=1e-10)
    # eigenvalue ordering is non-increasing
    assert np.all(np.diff(ext.eigenvalues) <= 1e-12)


def test_pca_reconstruction_full_rank():
    rng = np.random.default_rng(6)
    W = rng.standard_normal((50, 5))
    ext = fit_pca(W)
    F = transform(ext, W)
    np.testing.assert_allclose(ext.mean + F @ ext.projection.T, W, atol=1e-9)


def test_pca_degenerate_windows_flagged():
    W = np.ones((30, 4))
    W[:, 0] = np.linspace(0, 1, 30)
    with pytest.warns(RuntimeWarning):
        ext = fit_pca(W)
    assert ext.rank_deficient
    assert ext.n_components == 1


def test_pca_constant_windows_yield_no_components():
    with pytest.warns(RuntimeWarning):
        ext = fit_pca(np.full((10, 3), 2.5))
    assert ext.n_components == 0


def test_extractor_round_trip():
    rng = np.random.default_rng(8)
    ext = fit_pca(rng.standard_normal((40, 4)))
    back = FeatureExtractor.from_dict(ext.to_dict())
    np.testing.assert_array_equal(ext.projection, back.projection)
    np.testing.assert_array_equal(ext.mean, back.mean)
    W = rng.standard_normal((7, 4))
    np.testing.assert_array_equal(transform(ext, W), transform(back, W))


def _two_trace_series(n_steps=30, seed=0):
    rng = np.random.default_rng(seed)
    return {
        "y": rng.standard_normal((2, n_steps)),
        "x": rng.standard_normal((2, n_steps)),
    }


def test_assemble_t0_and_row_count():
    series = _two_trace_series()
    specs = [
        WindowSpec("y", 4, WindowAlignment.PAST_ONLY),
        WindowSpec("x", 4, WindowAlignment.INCLUDE_CURRENT),
    ]
    matrix, extractors = assemble_from_series(series, specs)
    # past-only horizon 4 dominates include-current horizon 3
    assert matrix.t0_steps == 4
    assert matrix.rows_per_trace == 26
    assert matrix.n_rows == 52
    assert set(extractors) == {"y", "x"}
    # column order is spec order then component index
    quantities = [c.quantity for c in matrix.columns]
    assert quantities == sorted(quantities, key=["y", "x"].index)


def test_assemble_rows_align_with_manual_projection():
    series = _two_trace_series(seed=3)
    specs = [
        WindowSpec("y", 3, WindowAlignment.PAST_ONLY),
        WindowSpec("x", 2, WindowAlignment.INCLUDE_CURRENT),
    ]
    matrix, extractors = assemble_from_series(series, specs)
    t0 = matrix.t0_steps
    assert t0 == 3
    # check one row by hand: trace 1, step t = 5
    row = matrix.values[matrix.row_lookup(1, 5)]
    y, x = series["y"][1], series["x"][1]
    wy = np.array([y[4], y[3], y[2]])
    wx = np.array([x[5], x[4]])
    fy = transform(extractors["y"], wy)[0]
    fx = transform(extractors["x"], wx)[0]
    np.testing.assert_allclose(row, np.concatenate([fy, fx]), atol=1e-12)


def test_assemble_component_cap():
    series = _two_trace_series(seed=4)
    specs = [WindowSpec("x", 6, WindowAlignment.INCLUDE_CURRENT)]
    matrix, extractors = assemble_from_series(
        series={"x": series["x"]}, specs=specs, components_per_quantity={"x": 2}
    )
    assert extractors["x"].n_components == 2
    assert matrix.values.shape[1] == 2


def test_assemble_shape_mismatch():
    series = {"a": np.zeros((2, 10)), "b": np.zeros((3, 10))}
    specs = [
        WindowSpec("a", 2, WindowAlignment.PAST_ONLY),
        WindowSpec("b", 2, WindowAlignment.INCLUDE_CURRENT),
    ]
    with pytest.raises(DataError):
        assemble_from_series(series, specs)


def test_feature_matrix_select_preserves_provenance():
    series = _two_trace_series(seed=9)
    specs = [
        WindowSpec("y", 3, WindowAlignment.PAST_ONLY),
        WindowSpec("x", 3, WindowAlignment.INCLUDE_CURRENT),
    ]
    matrix, _ = assemble_from_series(series, specs)
    sub = matrix.select([2, 0])
    assert [c.key for c in sub.columns] == [matrix.columns[2].key, matrix.columns[0].key]
    np.testing.assert_array_equal(sub.values[:, 1], matrix.values[:, 0])


# ---------------------------------------------------------------------------
# 2-D cosine transform
# ---------------------------------------------------------------------------


def brute_force_reconstruction(eta):
    """Double cosine sum, written out naively."""
    ny, nz = eta.shape
    out = np.zeros((ny, nz))
    for k in range(ny):
        for l in range(nz):
            acc = 0.0
            for i in range(ny):
                for j in range(nz):
                    acc += (
                        eta[i, j]
                        * np.cos(np.pi / ny * (i + 0.5) * k)
                        * np.cos(np.pi / nz * (j + 0.5) * l)
                    )
            out[k, l] = acc
    return out


@pytest.mark.parametrize("shape", [(4, 4), (3, 5)])
def test_dct2_modes_invert_synthesis(shape):
    rng = np.random.default_rng(sum(shape))
    field = rng.standard_normal(shape)
    all_modes = [(i, j) for i in range(shape[0]) for j in range(shape[1])]
    eta = dct2_modes(field, all_modes).reshape(shape)
    np.testing.assert_allclose(brute_force_reconstruction(eta), field, atol=1e-10)


def test_dct_synthesis_matrix_rows():
    C = dct_synthesis_matrix(3)
    # position row k = 0 sees every mode at amplitude 1
    np.testing.assert_allclose(C[0], np.ones(3), atol=1e-15)
    i = np.arange(3)
    np.testing.assert_allclose(C[1], np.cos(np.pi * (i + 0.5) / 3), atol=1e-15)


def test_dct2_mode_out_of_range():
    with pytest.raises(ConfigError):
        dct2_modes(np.zeros((3, 3)), [(3, 0)])
