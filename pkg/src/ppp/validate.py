"""Delivered-exceedance measurement and estimator diagnostics.

Vertical slices fix the true parameter ``psi`` (the practically relevant
view); horizontal slices fix the estimate ``psi_hat``, where the Bayes-like
predictor is calibrated by construction.
"""
from dataclasses import dataclass, field
import csv
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import cloud as cloud_mod
from .cloud import normalized_log_data, normalized_w
from .errors import DomainError
from .estimator import fit_log_data
from .predictor import SliceSpec, dumps_json, silverman_bandwidth

VERTICAL = "vertical"
HORIZONTAL = "horizontal"
DECILES = tuple(np.round(np.arange(1, 10) / 10, 2))


@dataclass
class ExceedanceReport:
    axis: str
    centers: np.ndarray
    t_levels: tuple
    counts: np.ndarray
    slice_sizes: np.ndarray
    cloud_seed: int
    skipped: np.ndarray = None
    table_hash: str = ""

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.slice_sizes = np.asarray(self.slice_sizes, dtype=np.int64)
        if self.skipped is None:
            self.skipped = np.zeros(len(self.centers), dtype=np.int64)

    @property
    def rates(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.counts / self.slice_sizes[:, None]

    @property
    def nominal(self):
        return 1.0 / np.asarray(self.t_levels, dtype=float)

    @property
    def se(self):
        """Binomial standard error of each cell's rate under the nominal ``1/T``."""
        p = self.nominal
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(p * (1 - p) / self.slice_sizes[:, None])

    def pooled(self, lo=-np.inf, hi=np.inf):
        """Exceedance rate per T over slices with centers in ``[lo, hi]``."""
        sel = (self.centers >= lo - 1e-12) & (self.centers <= hi + 1e-12)
        size = self.slice_sizes[sel].sum()
        return self.counts[sel].sum(axis=0) / size, int(size)

    def rows(self):
        rates, se = self.rates, self.se
        for k, c in enumerate(self.centers):
            for j, T in enumerate(self.t_levels):
                yield (self.axis, float(c), T, int(self.counts[k, j]), int(self.slice_sizes[k]),
                       float(rates[k, j]), float(se[k, j]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["axis", "center", "T", "count", "size", "rate", "se"])
            for row in self.rows():
                writer.writerow([row[0], f"{row[1]:.12g}", row[2], row[3], row[4],
                                 f"{row[5]:.17g}", f"{row[6]:.17g}"])

    def summary(self):
        rates, size = self.pooled()
        return {
            "axis": self.axis,
            "cloud_seed": self.cloud_seed,
            "table_hash": self.table_hash,
            "t_levels": list(self.t_levels),
            "pooled_rate": rates.tolist(),
            "pooled_size": size,
            "nominal_rate": self.nominal.tolist(),
            "skipped_points": int(self.skipped.sum()),
        }

    def write_json(self, path):
        Path(path).write_text(dumps_json(self.summary()))


def exceedance_report(axis, coordinate, w_next, w_pred, spec, t_levels, cloud_seed=-1,
                      table_hash=""):
    """Count ``w_next > w_pred`` per slice of ``coordinate``.

    ``w_pred`` has one column per level; points with a non-finite prediction
    in any column are skipped and counted separately.
    """
    w_pred = np.asarray(w_pred, dtype=float).reshape(len(w_next), len(t_levels))
    usable = ~np.any(np.isnan(w_pred), axis=1)
    exceed = (w_next[:, None] > w_pred) & usable[:, None]
    counts = np.zeros((spec.centers.size, len(t_levels)), dtype=np.int64)
    sizes = np.zeros(spec.centers.size, dtype=np.int64)
    skipped = np.zeros(spec.centers.size, dtype=np.int64)
    for k, mask in enumerate(spec.masks(coordinate)):
        counts[k] = exceed[mask].sum(axis=0)
        sizes[k] = np.count_nonzero(mask & usable)
        skipped[k] = np.count_nonzero(mask & ~usable)
    return ExceedanceReport(axis, spec.centers, tuple(t_levels), counts, sizes, cloud_seed,
                            skipped, table_hash)


def table_predictions(table, cloud, t_levels):
    return np.column_stack([table.predict_w(cloud.psi_hat, T) for T in t_levels])


def oracle_predictions(cloud, t_levels):
    """True level-T quantile at each point's ``psi``, in that point's normalization.

    Needs the per-point normalizing log tail probabilities, which only a
    freshly generated cloud (``generate(..., with_aux=True)``) carries.
    """
    if cloud.log_mid is None:
        raise DomainError("oracle predictions need a cloud generated with with_aux=True")
    xi = np.sinh(cloud.psi)
    return np.column_stack([normalized_w(xi, cloud.log_mid, cloud.log_low, -np.log(T))
                            for T in t_levels])


def _check_seeds(table, cloud):
    if table is not None and int(table.build.get("cloud_seed", -2)) == cloud.seed:
        raise DomainError(
            f"validation cloud seed {cloud.seed} equals the table's build seed; "
            "use a held-out cloud")


def _validate(axis, table, cloud, spec, t_levels, predictions, allow_same_seed):
    cloud = cloud_mod.load(cloud)
    spec = spec or SliceSpec()
    if t_levels is None:
        if table is None:
            raise DomainError("t_levels are required when no table is given")
        t_levels = table.t_levels
    if predictions is None:
        if not allow_same_seed:
            _check_seeds(table, cloud)
        predictions = table_predictions(table, cloud, t_levels)
    coordinate = cloud.psi if axis == VERTICAL else cloud.psi_hat
    table_hash = "" if table is None else table.build.get("cloud_manifest_hash", "")
    return exceedance_report(axis, coordinate, cloud.w_next, predictions, spec, t_levels,
                             cloud.seed, table_hash)


def validate_vertical(table, cloud, spec=None, t_levels=None, predictions=None,
                      allow_same_seed=False):
    """Exceedance on fixed-``psi`` slices.

    ``predictions`` (an ``(m, len(t_levels))`` array of ``w`` values) replaces
    the table, which is how the harness is calibrated against the oracle.
    """
    return _validate(VERTICAL, table, cloud, spec, t_levels, predictions, allow_same_seed)


def validate_horizontal(table, cloud, spec=None, t_levels=None, predictions=None,
                        allow_same_seed=False):
    """Exceedance on fixed-``psi_hat`` slices; ``allow_same_seed`` gives the in-sample view."""
    return _validate(HORIZONTAL, table, cloud, spec, t_levels, predictions, allow_same_seed)


# -- estimator diagnostics ----------------------------------------------------------

@dataclass
class Deciles:
    psi: np.ndarray
    levels: tuple
    psi_hat: np.ndarray

    @property
    def xi(self):
        return np.sinh(self.psi)

    @property
    def xi_hat(self):
        return np.sinh(self.psi_hat)


def estimator_deciles(psi_grid, reps=1000, seed=0, n=20):
    """Empirical deciles of ``psi_hat`` over ``reps`` fresh samples at each ``psi``."""
    if reps < 1000:
        raise DomainError("estimator_deciles needs at least 1000 replicates")
    psi_grid = np.asarray(psi_grid, dtype=float)
    out = np.empty((psi_grid.size, len(DECILES)))
    for k, psi in enumerate(psi_grid):
        rng = np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, k, 1]))
        log_sorted = np.sort(np.log(1.0 - rng.random((reps, n))), axis=1)
        psi_hat, _, _ = fit_log_data(normalized_log_data(np.full(reps, np.sinh(psi)),
                                                         log_sorted), n)
        out[k] = np.quantile(psi_hat, DECILES)
    return Deciles(psi_grid, DECILES, out)


@dataclass
class SliceDensity:
    center: float
    count: int
    grid: np.ndarray = field(repr=False)
    density: np.ndarray = field(repr=False)
    bandwidth: float = 0.0


def kernel_density(values, grid, bandwidth):
    out = np.zeros(grid.size)
    for start in range(0, values.size, 4096):
        block = values[start:start + 4096]
        out += norm.pdf((grid[:, None] - block[None, :]) / bandwidth).sum(axis=1)
    return out / (values.size * bandwidth)


def slice_densities(cloud, spec=None, axis=VERTICAL, grid_points=512):
    """Gaussian-kernel densities across slices.

    Vertical slices (fixed ``psi``) give the sampling density of ``psi_hat``;
    horizontal slices (fixed ``psi_hat``) give the posterior of ``psi``. Slices
    with fewer than two points are returned as ``None``.
    """
    cloud = cloud_mod.load(cloud)
    spec = spec or SliceSpec.covering(-4.0, 4.0)
    if axis == VERTICAL:
        coordinate, other = cloud.psi, cloud.psi_hat
    else:
        coordinate, other = cloud.psi_hat, cloud.psi
    out = []
    for c, mask in zip(spec.centers, spec.masks(coordinate)):
        values = other[mask]
        if values.size < 2:
            out.append(None)
            continue
        h = silverman_bandwidth(values)
        grid = np.linspace(values.min() - 5 * h, values.max() + 5 * h, grid_points)
        out.append(SliceDensity(float(c), int(values.size), grid,
                                kernel_density(values, grid, h), h))
    return out

