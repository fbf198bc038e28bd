"""Weighted Gaussian KDE on 1-D/2-D grids, DTW alignment, and density map exports."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba as nb
import numpy as np

logger = logging.getLogger(__name__)

GEO_BANDWIDTH = 0.0008
GEO_GRID = 500
TEMPORAL_BANDWIDTH = 5.59
TEMPORAL_GRID = 400
REFERENCE_LEN = 300
GRID_MARGIN = 0.05


class DensityError(ValueError):
    pass


@dataclass
class DensityGrid:
    axes: list[np.ndarray]
    values: np.ndarray
    bandwidth: object
    weight_name: str = ""

    @property
    def dims(self) -> int:
        return len(self.axes)

    def argmax_point(self) -> tuple[float, ...]:
        idx = np.unravel_index(int(np.argmax(self.values)), self.values.shape)
        return tuple(float(ax[i]) for ax, i in zip(self.axes, idx))

    def to_csv(self, path: str | Path) -> None:
        if self.dims == 1:
            header = "t_s,density\n"
            rows = (f"{a!r},{v!r}" for a, v in zip(self.axes[0].tolist(), self.values.tolist()))
        else:
            header = "lat,lon,density\n"
            la, lo = np.meshgrid(self.axes[0], self.axes[1], indexing="ij")
            rows = (f"{a!r},{b!r},{v!r}" for a, b, v in
                    zip(la.ravel().tolist(), lo.ravel().tolist(), self.values.ravel().tolist()))
        with open(path, "w") as fh:
            fh.write(header)
            for r in rows:
                fh.write(r + "\n")


def _as_bandwidth(H, d: int) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    if H.ndim == 0:
        H = float(H) * np.eye(d)
    if H.shape != (d, d):
        raise DensityError(f"bandwidth must be scalar or {d}x{d}")
    if not np.allclose(H, H.T):
        raise DensityError("bandwidth matrix must be symmetric")
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        raise DensityError("bandwidth matrix must be positive definite") from None
    return H


def weighted_kde(points, weights, H, grid: Sequence[np.ndarray] | np.ndarray) -> DensityGrid:
    """f(x) = (1/n) sum_i w_i K_H(x - x_i) with a Gaussian K evaluated on a grid.

    ``H`` is the bandwidth matrix (a scalar h means h * I, i.e. a variance).
    ``grid`` is one axis array per dimension; the result lives on their
    Cartesian product.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    n, d = points.shape
    if d not in (1, 2):
        raise DensityError("only 1-D and 2-D densities are supported")
    if n == 0:
        raise DensityError("empty sample")
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise DensityError("need one weight per point")
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise DensityError("weights must be finite and non-negative")
    axes = [np.asarray(grid, dtype=float)] if d == 1 and np.ndim(grid[0]) == 0 else \
        [np.asarray(a, dtype=float) for a in grid]
    if len(axes) != d:
        raise DensityError("grid must have one axis per dimension")
    Hm = _as_bandwidth(H, d)
    norm = 1.0 / (np.sqrt(np.linalg.det(Hm)) * (2 * np.pi) ** (d / 2))

    if np.count_nonzero(Hm - np.diag(np.diag(Hm))) == 0:
        # diagonal bandwidth: the kernel factorises over axes
        factors = []
        for k, ax in enumerate(axes):
            diff = ax[None, :] - points[:, k][:, None]
            factors.append(np.exp(-0.5 * diff ** 2 / Hm[k, k]))
        if d == 1:
            vals = weights @ factors[0]
        else:
            vals = (factors[0] * weights[:, None]).T @ factors[1]
    else:
        inv = np.linalg.inv(Hm)
        g = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        vals = np.zeros(len(g))
        for start in range(0, n, 256):
            diff = g[:, None, :] - points[None, start:start + 256, :]
            q = np.einsum("gpi,ij,gpj->gp", diff, inv, diff)
            vals += np.exp(-0.5 * q) @ weights[start:start + 256]
        vals = vals.reshape([len(a) for a in axes])
    return DensityGrid(axes, norm * vals / n, H)


# ---------------------------------------------------------------------- DTW

@dataclass(frozen=True)
class WarpPath:
    pairs: np.ndarray  # (k, 2) query/reference index pairs

    def __post_init__(self):
        p = self.pairs
        steps = np.diff(p, axis=0)
        ok = {(1, 0), (0, 1), (1, 1)}
        if len(p) and (tuple(p[0]) != (0, 0) or not all(tuple(s) in ok for s in steps.tolist())):
            raise DensityError("invalid warp path")


@nb.njit(cache=True)
def _dtw_table(a, r):
    n, m = len(a), len(r)
    D = np.full((n + 1, m + 1), np.inf)
    D[0, 0] = 0.0
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            best = D[i - 1, j - 1]
            if D[i - 1, j] < best:
                best = D[i - 1, j]
            if D[i, j - 1] < best:
                best = D[i, j - 1]
            D[i, j] = abs(a[i - 1] - r[j - 1]) + best
    return D


def dtw_cost_table(query, reference) -> np.ndarray:
    """Accumulated |a_i - r_j| cost with steps (1,0), (0,1), (1,1); shape (n, m)."""
    return _dtw_table(np.asarray(query, float), np.asarray(reference, float))[1:, 1:]


def _traceback(D: np.ndarray) -> np.ndarray:
    i, j = D.shape[0] - 1, D.shape[1] - 1
    path = [(i - 1, j - 1)]
    while (i, j) != (1, 1):
        # prefer the diagonal, then the query step, then the reference step
        options = ((D[i - 1, j - 1], i - 1, j - 1), (D[i - 1, j], i - 1, j), (D[i, j - 1], i, j - 1))
        best = min(o[0] for o in options)
        _, i, j = next(o for o in options if o[0] == best)
        path.append((i - 1, j - 1))
    return np.array(path[::-1], dtype=np.int64)


def dtw_align(series, ref_len: int = REFERENCE_LEN, reference=None):
    """Warp ``series`` onto a reference of ``ref_len`` points.

    Without an explicit ``reference`` the series' own linear resampling to
    ``ref_len`` is used. Returns (warped values, WarpPath, distance); a
    reference index matched by several query points takes their mean.
    """
    a = np.asarray(series, dtype=float)
    if a.size == 0:
        raise DensityError("empty series")
    if len(a) < 2:
        raise DensityError("series needs at least 2 points")
    if reference is None:
        reference = linear_resample(a, ref_len)
    r = np.asarray(reference, dtype=float)
    D = _dtw_table(a, r)
    pairs = _traceback(D)
    sums = np.bincount(pairs[:, 1], weights=a[pairs[:, 0]], minlength=len(r))
    counts = np.bincount(pairs[:, 1], minlength=len(r))
    return sums / counts, WarpPath(pairs), float(D[-1, -1])


def linear_resample(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.interp(np.linspace(0, len(x) - 1, n), np.arange(len(x)), x)


def write_warp(path: WarpPath, dest: str | Path) -> None:
    with open(dest, "w") as fh:
        fh.write("query_index,reference_index\n")
        for i, j in path.pairs.tolist():
            fh.write(f"{i},{j}\n")


# ------------------------------------------------------------ biomarker maps

def _bounds(x: np.ndarray, margin: float = GRID_MARGIN) -> tuple[float, float]:
    lo, hi = float(x.min()), float(x.max())
    pad = (hi - lo) * margin or 1e-6
    return lo - pad, hi + pad


def geo_points(gps: np.ndarray, seconds: np.ndarray, values: np.ndarray):
    """Join per-second feature values to GPS fixes by whole-second timestamp."""
    lookup = dict(zip(seconds.tolist(), values.tolist()))
    keep = [(la, lo, lookup[int(round(t))]) for t, la, lo in gps.tolist() if int(round(t)) in lookup]
    return np.array(keep, dtype=float).reshape(-1, 3)


def geo_density(tracks: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]], biomarker: str,
                bandwidth: float = GEO_BANDWIDTH, grid_size: int = GEO_GRID) -> DensityGrid:
    """Biomarker-weighted density of GPS fixes pooled over walks.

    ``tracks`` holds (gps[t, lat, lon], seconds, values) per walk. The kernel
    SD is ``bandwidth`` degrees on both axes.
    """
    pts = [geo_points(g, s, v) for g, s, v in tracks if g is not None and len(g)]
    pts = np.concatenate(pts) if pts else np.empty((0, 3))
    if len(pts) == 0:
        raise DensityError("no GPS fixes overlap the feature timestamps")
    lat_ax = np.linspace(*_bounds(pts[:, 0]), grid_size)
    lon_ax = np.linspace(*_bounds(pts[:, 1]), grid_size)
    grid = weighted_kde(pts[:, :2], pts[:, 2], bandwidth ** 2, [lat_ax, lon_ax])
    grid.bandwidth = bandwidth
    grid.weight_name = biomarker
    return grid


def temporal_density(series_list: Sequence[np.ndarray], biomarker: str, ref_len: int = REFERENCE_LEN,
                     bandwidth: float = TEMPORAL_BANDWIDTH, grid_size: int = TEMPORAL_GRID,
                     reference=None):
    """Warp each walk's per-second series onto a common reference, pool the warped
    values as weights on 1-s time points and smooth with a 1-D KDE.

    The default reference is the mean of the walks linearly resampled to
    ``ref_len``. Returns the grid and the per-walk (warped, path, distance).
    """
    if not series_list:
        raise DensityError("no walks")
    if reference is None:
        reference = np.mean([linear_resample(s, ref_len) for s in series_list], axis=0)
    warps = [dtw_align(s, ref_len, reference) for s in series_list]
    t = np.tile(np.arange(ref_len, dtype=float), len(warps))
    w = np.concatenate([wv for wv, _, _ in warps])
    grid = weighted_kde(t, w, bandwidth ** 2, [np.linspace(0, ref_len - 1, grid_size)])
    grid.bandwidth = bandwidth
    grid.weight_name = biomarker
    return grid, warps


def contour_geojson(grid: DensityGrid, n_levels: int = 10) -> dict:
    """Filled contour bands at deciles of the peak density as GeoJSON polygons."""
    import contourpy

    if grid.dims != 2:
        raise DensityError("contours need a 2-D grid")
    top = float(grid.values.max())
    features = []
    if top > 0:
        gen = contourpy.contour_generator(grid.axes[1], grid.axes[0], grid.values,
                                          fill_type=contourpy.FillType.OuterOffset)
        levels = [top * k / n_levels for k in range(1, n_levels)] + [top * (1 + 1e-9)]
        for lo, hi in zip(levels[:-1], levels[1:]):
            points, offsets = gen.filled(lo, hi)
            polys = []
            for pts, offs in zip(points, offsets):
                rings = [[[round(float(x), 7), round(float(y), 7)] for x, y in pts[a:b]]
                         for a, b in zip(offs[:-1], offs[1:])]
                polys.append(rings)
            if polys:
                features.append({
                    "type": "Feature",
                    "properties": {"lower": lo, "upper": hi, "level_fraction": round(lo / top, 3),
                                   "biomarker": grid.weight_name},
                    "geometry": {"type": "MultiPolygon", "coordinates": polys},
                })
    return {"type": "FeatureCollection", "features": features}


def write_geojson(grid: DensityGrid, path: str | Path, n_levels: int = 10) -> None:
    Path(path).write_text(json.dumps(contour_geojson(grid, n_levels)) + "\n")


def render_png(grid: DensityGrid, path: str | Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    if grid.dims == 2:
        cs = ax.contourf(grid.axes[1], grid.axes[0], grid.values, levels=10, cmap="Reds")
        fig.colorbar(cs, ax=ax)
        ax.set_xlabel("longitude")
        ax.set_ylabel("latitude")
    else:
        ax.plot(grid.axes[0], grid.values)
        ax.set_xlabel("time on reference walk (s)")
        ax.set_ylabel("density")
    ax.set_title(grid.weight_name)
    fig.savefig(path, dpi=100)
    plt.close(fig)
