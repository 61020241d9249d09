"""Plot-ready CSV data for the estimator, cloud, increment and validation views.

Nothing here renders; each ``emit_*`` function writes one or more CSV files
and returns their paths. Column layouts are documented in the README.
"""
import csv
from pathlib import Path

import numpy as np

from . import cloud as cloud_mod
from .cloud import normalized_w
from .estimator import PREDICTION, plotting_positions
from .predictor import SliceSpec, extrapolate, slice_quantiles
from .validate import (HORIZONTAL, VERTICAL, estimator_deciles, slice_densities,
                       validate_horizontal, validate_vertical)

DEFAULT_XI_HATS = (-1.0, -0.5, 0.0, 0.5, 1.0)


def _write(path, header, rows):
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{v:.17g}" if isinstance(v, (float, np.floating)) else v
                             for v in row])
    return path


def return_level_axis(T, n=20):
    """``V = -log2(G_{N/2} T)`` with ``G_j = j/(N+1)``; for N=20 this is ``-log2(10T/21)``."""
    g_mid = (n // 2) / (n + 1)
    return -np.log(g_mid * np.asarray(T, dtype=float)) / np.log(2.0)


def extrapolation_ratio(T, n=20):
    return np.asarray(T, dtype=float) / (n + 1)


# -- estimator views ------------------------------------------------------------------

def emit_deciles(out_dir, psi_grid=None, reps=1000, seed=0, n=20):
    psi_grid = np.round(np.arange(-40, 41) / 10.0, 12) if psi_grid is None else psi_grid
    dec = estimator_deciles(psi_grid, reps, seed, n)
    rows = []
    for k, psi in enumerate(dec.psi):
        for j, level in enumerate(dec.levels):
            rows.append((float(psi), float(dec.xi[k]), float(level),
                         float(dec.psi_hat[k, j]), float(dec.xi_hat[k, j])))
    return [_write(Path(out_dir) / "fig3_deciles.csv",
                   ["psi", "xi", "level", "psi_hat", "xi_hat"], rows)]


def emit_slice_densities(out_dir, cloud, width=0.1, lo=-4.0, hi=4.0, grid_points=256):
    out = []
    for axis, (a, b) in ((VERTICAL, (lo, hi)), (HORIZONTAL, (lo - 0.5, hi + 0.5))):
        spec = SliceSpec.covering(a, b, width)
        dens = slice_densities(cloud, spec, axis, grid_points)
        rows, counts = [], []
        for c, d in zip(spec.centers, dens):
            counts.append((float(c), 0 if d is None else d.count))
            if d is None:
                continue
            rows.extend((d.center, d.bandwidth, float(x), float(y))
                        for x, y in zip(d.grid, d.density))
        out.append(_write(Path(out_dir) / f"fig3_density_{axis}.csv",
                          ["center", "bandwidth", "value", "density"], rows))
        out.append(_write(Path(out_dir) / f"fig3_counts_{axis}.csv", ["center", "count"], counts))
    return out


# -- cloud view -------------------------------------------------------------------------

def emit_cloud_view(out_dir, cloud, table=None, max_points=20000):
    """Evenly strided subsample of ``(psi_hat, w_next)`` plus per-slice level-T quantiles."""
    cloud = cloud_mod.load(cloud)
    stride = max(1, -(-len(cloud) // max_points))
    sub = slice(None, None, stride)
    paths = [_write(Path(out_dir) / "fig4_cloud.csv", ["psi_hat", "w_next"],
                    zip(cloud.psi_hat[sub].tolist(), cloud.w_next[sub].tolist()))]
    if table is not None:
        spec = SliceSpec(table.width, table.centers)
        sq = slice_quantiles(cloud, spec, table.t_levels)
        rows = []
        for k, c in enumerate(sq.centers):
            for j, T in enumerate(sq.t_levels):
                rows.append((float(c), T, float(sq.w[k, j]),
                             float(table.predict_w(c, T)), int(sq.counts[k])))
        paths.append(_write(Path(out_dir) / "fig4_slice_quantiles.csv",
                            ["center", "T", "w_quantile", "w_table", "count"], rows))
    return paths


# -- increments -------------------------------------------------------------------------

def increment_rows(table, source):
    d_psi = table.d_psi
    for k, c in enumerate(table.centers):
        for j, T in enumerate(table.t_levels):
            yield (source, float(c), float(table.xi_hat[k]), T,
                   float(table.d_xi[k, j]), float(d_psi[k, j]))


def emit_increments(out_dir, table, external=None):
    rows = list(increment_rows(table, "bayes-like"))
    if external is not None:
        rows.extend(increment_rows(external, "external"))
    return [_write(Path(out_dir) / "fig5_increments.csv",
                   ["source", "psi_hat", "xi_hat", "T", "d_xi", "d_psi"], rows)]


# -- extrapolation curves ---------------------------------------------------------------

def data_medians(xi_values, reps=2000, seed=0, n=20):
    """Median normalized order statistics ``u_1..u_N`` per true ``xi``.

    Means of the largest order statistics are infinite once ``xi >= 1``, so
    the median stands in for the average.
    """
    out = np.empty((len(xi_values), n))
    for k, xi in enumerate(xi_values):
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, k, 2]))
        log_sorted = np.sort(np.log(1.0 - rng.random((reps, n))), axis=1)
        w = normalized_w(xi, log_sorted[:, n // 2 - 1:n // 2], log_sorted[:, n - 1:], log_sorted)
        out[k] = np.sinh(np.median(w, axis=0))
    return out


def emit_extrapolation(out_dir, table=None, xi_hats=DEFAULT_XI_HATS, n=20, external=None,
                       reps=2000, seed=0, points=200):
    n = table.n if table is not None else n
    g = plotting_positions(n, PREDICTION)
    t_basic = np.geomspace(1.0 / g[-1], 400.0, points)
    rows = []
    for xi in xi_hats:
        for T in t_basic:
            rows.append(("basic", xi, float(T), float(extrapolation_ratio(T, n)),
                         float(return_level_axis(T, n)), float(extrapolate(xi, T, n))))
        for source, tab in (("bayes-like", table), ("external", external)):
            if tab is None:
                continue
            lo, hi = tab.t_levels[0], tab.t_levels[-1]
            for T in np.geomspace(lo, hi, points):
                T = float(min(max(T, lo), hi))
                u = tab.predict_u(np.arcsinh(xi), T)
                rows.append((source, xi, T, float(extrapolation_ratio(T, n)),
                             float(return_level_axis(T, n)), float(u)))
    paths = [_write(Path(out_dir) / "fig6_curves.csv",
                    ["curve", "xi_hat", "T", "E_R", "V", "u"], rows)]
    med = data_medians(xi_hats, reps, seed, n)
    data_rows = []
    for k, xi in enumerate(xi_hats):
        for i in range(1, n + 1):
            T = 1.0 / g[i - 1]
            data_rows.append((xi, i, float(g[i - 1]), float(return_level_axis(T, n)),
                              float(med[k, i - 1])))
    paths.append(_write(Path(out_dir) / "fig6_data.csv", ["xi", "i", "G", "V", "u_median"],
                        data_rows))
    return paths


# -- probability preservation -------------------------------------------------------------

def emit_performance(out_dir, table, cloud, spec_vertical=None, spec_horizontal=None,
                     allow_same_seed=False):
    cloud = cloud_mod.load(cloud)
    spec_vertical = spec_vertical or SliceSpec.covering(-4.0, 4.0)
    spec_horizontal = spec_horizontal or SliceSpec(table.width, table.centers)
    paths = []
    for name, fn, spec in (("vertical", validate_vertical, spec_vertical),
                           ("horizontal", validate_horizontal, spec_horizontal)):
        report = fn(table, cloud, spec, allow_same_seed=allow_same_seed)
        path = Path(out_dir) / f"fig7_{name}.csv"
        report.write_csv(path)
        paths.append(path)
    return paths
