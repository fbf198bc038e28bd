import json
import math

import numpy as np
import pytest

from walkstress.density import (GEO_BANDWIDTH, TEMPORAL_BANDWIDTH, DensityError, WarpPath, contour_geojson,
                                dtw_align, dtw_cost_table, geo_density, linear_resample, temporal_density,
                                weighted_kde)


def brute_kde(points, weights, H, grid_points):
    """Direct double loop over grid points and samples."""
    points = np.atleast_2d(np.asarray(points, float).T).T
    d = points.shape[1]
    H = np.asarray(H, float) if np.ndim(H) else float(H) * np.eye(d)
    inv = np.linalg.inv(H)
    norm = 1.0 / (math.sqrt(np.linalg.det(H)) * (2 * math.pi) ** (d / 2))
    out = []
    for g in grid_points:
        total = 0.0
        for x, w in zip(points, weights):
            diff = np.asarray(g, float) - x
            total += w * math.exp(-0.5 * float(diff @ inv @ diff))
        out.append(norm * total / len(points))
    return np.array(out)


def brute_dtw(a, r):
    n, m = len(a), len(r)
    D = [[math.inf] * (m + 1) for _ in range(n + 1)]
    D[0][0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            D[i][j] = abs(a[i - 1] - r[j - 1]) + min(D[i - 1][j - 1], D[i - 1][j], D[i][j - 1])
    return np.array(D)[1:, 1:]


def test_kde_1d_matches_brute_force(rng):
    pts = rng.normal(size=50)
    w = rng.random(50)
    grid = np.linspace(-3, 3, 41)
    got = weighted_kde(pts, w, 0.3, [grid]).values
    assert np.max(np.abs(got - brute_kde(pts, w, 0.3, grid[:, None]))) <= 1e-12


@pytest.mark.parametrize("H", [0.2, [[0.3, 0.0], [0.0, 0.1]], [[0.3, 0.12], [0.12, 0.2]]])
def test_kde_2d_matches_brute_force(rng, H):
    pts = rng.normal(size=(50, 2))
    w = rng.random(50)
    ax0, ax1 = np.linspace(-2, 2, 9), np.linspace(-2.5, 2.5, 11)
    got = weighted_kde(pts, w, H, [ax0, ax1]).values
    g = np.stack(np.meshgrid(ax0, ax1, indexing="ij"), axis=-1).reshape(-1, 2)
    assert np.max(np.abs(got.ravel() - brute_kde(pts, w, H, g))) <= 1e-12


def test_single_point_peak():
    h = 0.7
    grid = weighted_kde([0.0], [1.0], h ** 2, [np.linspace(-1, 1, 201)])
    assert grid.values.max() == pytest.approx(1 / (h * math.sqrt(2 * math.pi)), abs=1e-12)
    assert grid.argmax_point() == (0.0,)


def test_kde_rejects_bad_input():
    with pytest.raises(DensityError):
        weighted_kde([0.0, 1.0], [1.0, -1.0], 1.0, [np.zeros(3)])
    with pytest.raises(DensityError):
        weighted_kde(np.zeros((2, 2)), [1.0, 1.0], [[1.0, 2.0], [2.0, 1.0]], [np.zeros(2), np.zeros(2)])
    with pytest.raises(DensityError):
        weighted_kde(np.zeros((0, 1)), [], 1.0, [np.zeros(2)])


def test_dtw_hand_example():
    warped, path, dist = dtw_align([1, 2, 3], 4, reference=[1, 2, 2, 3])
    assert dist == 0.0
    assert warped.tolist() == [1, 2, 2, 3]
    assert path.pairs.tolist() == [[0, 0], [1, 1], [1, 2], [2, 3]]


def test_dtw_self_is_diagonal(rng):
    x = rng.normal(size=300)
    warped, path, dist = dtw_align(x, 300)
    assert dist == 0.0
    assert np.array_equal(warped, x)
    assert path.pairs.tolist() == [[i, i] for i in range(300)]


def test_dtw_table_matches_hand_dp(rng):
    for _ in range(20):
        a = rng.normal(size=int(rng.integers(1, 21)))
        r = rng.normal(size=int(rng.integers(1, 21)))
        assert np.allclose(dtw_cost_table(a, r), brute_dtw(a, r), rtol=0, atol=1e-12)


def _collapse(x):
    x = np.asarray(x)
    return x[np.r_[True, x[1:] != x[:-1]]]


def test_dtw_invariants_random(rng):
    for _ in range(1000):
        n = int(rng.integers(2, 30))
        m = int(rng.integers(2, 30))
        a = rng.integers(0, 4, n).astype(float)
        r = rng.integers(0, 4, m).astype(float)
        warped, path, dist = dtw_align(a, m, reference=r)
        p = path.pairs
        assert tuple(p[0]) == (0, 0) and tuple(p[-1]) == (n - 1, m - 1)
        assert {tuple(s) for s in np.diff(p, axis=0).tolist()} <= {(1, 0), (0, 1), (1, 1)}
        assert len(warped) == m
        assert dist == pytest.approx(np.abs(a[p[:, 0]] - r[p[:, 1]]).sum(), abs=1e-9)
        same = len(_collapse(a)) == len(_collapse(r)) and np.array_equal(_collapse(a), _collapse(r))
        assert (dist == 0.0) == same


def test_warp_path_validation():
    with pytest.raises(DensityError):
        WarpPath(np.array([[0, 0], [2, 1]]))
    with pytest.raises(DensityError):
        WarpPath(np.array([[1, 0], [2, 1]]))


def test_temporal_identity_for_300s_walk(rng):
    x = rng.random(300)
    grid, warps = temporal_density([x], "tm")
    assert len(grid.axes[0]) == 400
    assert np.array_equal(warps[0][0], x)
    direct = weighted_kde(np.arange(300.0), x, TEMPORAL_BANDWIDTH ** 2, [np.linspace(0, 299, 400)])
    assert np.array_equal(grid.values, direct.values)


def test_temporal_aligns_stretched_walks():
    profile = np.repeat([0.2, 0.8, 0.4, 1.0, 0.1], [60, 40, 80, 50, 70])
    longer = np.repeat([0.2, 0.8, 0.4, 1.0, 0.1], [80, 50, 100, 60, 90])
    ref = linear_resample(profile, 300)
    (w1, _, _), (w2, _, _) = [dtw_align(s, 300, ref) for s in (profile, longer)]
    assert np.corrcoef(w1, w2)[0, 1] > 0.95


def test_geo_density_grid_and_contours(small_session):
    session, truth = small_session
    seconds = np.arange(len(truth.labels))
    values = np.linspace(0, 1, len(seconds))
    grid = geo_density([(session.gps, seconds, values)], "tm", grid_size=60)
    assert grid.values.shape == (60, 60)
    assert np.all(grid.values >= 0)
    assert grid.bandwidth == GEO_BANDWIDTH
    gj = contour_geojson(grid)
    assert gj["type"] == "FeatureCollection" and gj["features"]
    assert all(f["geometry"]["type"] == "MultiPolygon" for f in gj["features"])
    json.dumps(gj)
    full = geo_density([(session.gps, seconds, values)], "tm")
    assert full.values.shape == (500, 500)
