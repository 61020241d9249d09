"""Bayes-like level-T predictor built from horizontal (fixed psi_hat) slices of a cloud.

Predictions are expressed on the extrapolation curve

    u_T = ((G_{N/2} T) ** xi_p - 1) / (1 - (G_{N/2} / G_N) ** xi_p),  G_j = j / (N + 1)

at ``xi_p = xi_hat + d_xi``. The table stores the increment ``d_xi`` per
slice center and level, chosen so that within each slice a fraction ``1/T``
of the cloud's next draws exceed the prediction. Between centers the
increment is interpolated linearly in ``psi_hat`` and in ``log T``.
"""
from dataclasses import dataclass, field
import json
import logging
import math
from pathlib import Path

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from . import cloud as cloud_mod
from .errors import DomainError, NoSolutionError, OutOfRangeError
from .estimator import (PREDICTION, as_ordered, check_sample_size, curve_ratio, fit_xi,
                        plotting_positions)

log = logging.getLogger(__name__)

TABLE_VERSION = 1
DEFAULT_T_LEVELS = (21, 50, 100, 200, 400)
ORDER_STATISTIC = "order"
KERNEL = "kde"
XI_P_START = 5.0
XI_P_LIMIT = 50.0


def default_centers():
    return np.round(np.arange(-30, 31) / 10.0, 12)


@dataclass(frozen=True)
class SliceSpec:
    width: float = 0.1
    centers: np.ndarray = field(default_factory=default_centers)
    min_points: int = 200

    def __post_init__(self):
        centers = np.asarray(self.centers, dtype=float)
        if not self.width > 0:
            raise DomainError("slice width must be positive")
        if centers.ndim != 1 or centers.size == 0 or np.any(np.diff(centers) <= 0):
            raise DomainError("slice centers must be a nonempty ascending list")
        object.__setattr__(self, "centers", centers)

    @classmethod
    def covering(cls, lo, hi, width=0.1, min_points=200):
        """Tiling slices of ``width`` whose union is ``[lo, hi]``."""
        k = int(round((hi - lo) / width))
        centers = lo + width * (np.arange(k) + 0.5)
        return cls(width, np.round(centers, 12), min_points)

    def masks(self, values):
        half = self.width / 2
        for c in self.centers:
            yield (values >= c - half) & (values < c + half)

    @property
    def lo(self):
        return self.centers[0] - self.width / 2

    @property
    def hi(self):
        return self.centers[-1] + self.width / 2


# -- slice quantiles ----------------------------------------------------------------

def upper_quantile(values, T):
    """Value exceeded by a fraction ``1/T`` of ``values``.

    Order-statistic rule: with ``m`` values sorted ascending the target sits at
    0-based position ``m (1 - 1/T) - 0.5``, interpolating linearly between the
    neighbouring order statistics, so exactly ``m/T`` values lie above it.
    """
    a = np.sort(np.asarray(values, dtype=float))
    m = a.size
    if m == 0:
        raise DomainError("cannot take a quantile of an empty set")
    pos = min(max(m * (1.0 - 1.0 / T) - 0.5, 0.0), m - 1.0)
    lo = int(math.floor(pos))
    hi = min(lo + 1, m - 1)
    if a[lo] == a[hi] or pos == lo:
        return a[lo]
    return a[lo] + (pos - lo) * (a[hi] - a[lo])


def silverman_bandwidth(values):
    values = np.asarray(values, dtype=float)
    q75, q25 = np.percentile(values, [75, 25])
    spread = min(np.std(values, ddof=1), (q75 - q25) / 1.34)
    if spread <= 0:
        spread = np.std(values, ddof=1)
    return 0.9 * spread * values.size ** -0.2


def kernel_upper_quantile(values, T):
    """Upper ``1/T`` quantile of a Gaussian-kernel smoothed cdf.

    Infinite values carry their probability mass without entering the
    bandwidth: ``+inf`` always exceeds the quantile, ``-inf`` never does.
    """
    values = np.asarray(values, dtype=float)
    m = values.size
    above = np.count_nonzero(values == np.inf)
    target = 1.0 / T
    if above >= m * target:
        return math.inf
    values = values[np.isfinite(values)]
    if values.size == 0:
        return -math.inf
    h = silverman_bandwidth(values) if values.size > 1 else 0.0
    if not h > 0:
        return float(values[0])

    def excess(q):
        return (ndtr((values - q) / h).sum() + above) / m - target

    return brentq(excess, values.min() - 10 * h, values.max() + 10 * h, xtol=1e-13)


@dataclass
class SliceQuantiles:
    centers: np.ndarray
    t_levels: tuple
    w: np.ndarray
    counts: np.ndarray

    @property
    def u(self):
        return np.sinh(self.w)


def slice_quantiles(cloud, spec=None, t_levels=DEFAULT_T_LEVELS, mode=ORDER_STATISTIC):
    """Per-slice T-level quantiles of ``w_next`` on horizontal (psi_hat) slices.

    Slices with fewer than ``spec.min_points`` points are left as NaN.
    """
    spec = spec or SliceSpec()
    cloud = cloud_mod.load(cloud)
    quantile = {ORDER_STATISTIC: upper_quantile, KERNEL: kernel_upper_quantile}[mode]
    w = np.full((spec.centers.size, len(t_levels)), np.nan)
    counts = np.zeros(spec.centers.size, dtype=np.int64)
    for k, mask in enumerate(spec.masks(cloud.psi_hat)):
        values = cloud.w_next[mask]
        counts[k] = values.size
        if values.size < spec.min_points:
            continue
        w[k] = [quantile(values, T) for T in t_levels]
    return SliceQuantiles(spec.centers, tuple(t_levels), w, counts)


# -- extrapolation curve ------------------------------------------------------------

def _curve_logs(T, n):
    g = plotting_positions(n, PREDICTION)
    g_mid = g[n // 2 - 1]
    return np.log(g_mid * np.asarray(T, dtype=float)), np.log(g_mid / g[n - 1])


def check_level(T, n):
    """The curve is increasing in ``xi_p`` only when ``G_{N/2} T > 1``."""
    check_sample_size(n)
    if not (n // 2) / (n + 1) * T > 1:
        raise DomainError(f"recurrence level T={T} too small for N={n}")


def extrapolate(xi_p, T, n):
    """Normalized level-T prediction ``u_T`` at tail parameter ``xi_p``."""
    log_num, log_den = _curve_logs(T, n)
    return curve_ratio(xi_p, log_num, log_den)


def check_monotone(t_levels, n, grid=None):
    """Numerically confirm ``extrapolate`` increases in ``xi_p`` on the search range."""
    grid = np.linspace(-XI_P_LIMIT, XI_P_LIMIT, 20001) if grid is None else grid
    for T in t_levels:
        check_level(T, n)
        with np.errstate(over="ignore"):
            values = extrapolate(grid, T, n)
        finite = np.isfinite(values)
        if np.any(np.diff(values[finite]) <= 0):
            raise DomainError(f"extrapolation curve not increasing for T={T}, N={n}")


def invert_to_xi_p(u_target, T, n, rtol=1e-10):
    """Tail parameter ``xi_p`` at which the level-T curve equals ``u_target``.

    Bisection on a bracket starting at ``[-5, 5]`` and doubling out to
    ``[-50, 50]``. The curve tends to 0 as ``xi_p -> -inf``, so
    ``u_target <= 0`` has no solution.
    """
    check_level(T, n)
    tol = rtol * max(1.0, abs(u_target))

    def f(x):
        return extrapolate(x, T, n) - u_target

    lo, hi = -XI_P_START, XI_P_START
    while f(lo) > 0:
        if lo <= -XI_P_LIMIT:
            raise NoSolutionError(f"u={u_target!r} is below the level-{T} curve on [-50, 50]")
        lo = max(2 * lo, -XI_P_LIMIT)
    while f(hi) < 0:
        if hi >= XI_P_LIMIT:
            raise NoSolutionError(f"u={u_target!r} is above the level-{T} curve on [-50, 50]")
        hi = min(2 * hi, XI_P_LIMIT)
    best, best_err = lo, abs(f(lo))
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) < best_err:
            best, best_err = mid, abs(fm)
        if fm == 0 or mid in (lo, hi):
            break
        if fm < 0:
            lo = mid
        else:
            hi = mid
    if best_err >= tol:
        raise NoSolutionError(f"bisection residual {best_err:.3g} exceeds tolerance {tol:.3g}")
    return best


# -- increment table ----------------------------------------------------------------

@dataclass
class IncrementTable:
    """Increments ``d_xi[center, T]`` and the normalized predictions they reproduce."""

    t_levels: tuple
    centers: np.ndarray
    width: float
    d_xi: np.ndarray
    u_pred: np.ndarray
    counts: np.ndarray
    n: int = 20
    build: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t_levels = tuple(float(t) if float(t) != int(t) else int(t) for t in self.t_levels)
        self.centers = np.asarray(self.centers, dtype=float)
        self.d_xi = np.asarray(self.d_xi, dtype=float).reshape(self.centers.size, -1)
        self.u_pred = np.asarray(self.u_pred, dtype=float).reshape(self.centers.size, -1)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if np.any(np.diff(self.t_levels) <= 0):
            raise DomainError("t_levels must be strictly increasing")

    @property
    def xi_hat(self):
        return np.sinh(self.centers)

    @property
    def xi_p(self):
        return self.xi_hat[:, None] + self.d_xi

    @property
    def d_psi(self):
        """Increments expressed on the psi scale, ``asinh(xi_p) - center``."""
        return np.arcsinh(self.xi_p) - self.centers[:, None]

    @property
    def present(self):
        return np.all(np.isfinite(self.d_xi), axis=1)

    def identity_residuals(self):
        """``|extrapolate(xi_hat + d_xi) - u_pred|`` scaled by ``max(1, |u_pred|)``."""
        out = np.full(self.d_xi.shape, np.nan)
        for j, T in enumerate(self.t_levels):
            ok = np.isfinite(self.d_xi[:, j])
            u = extrapolate(self.xi_hat[ok] + self.d_xi[ok, j], T, self.n)
            ref = self.u_pred[ok, j]
            out[ok, j] = np.abs(u - ref) / np.maximum(1.0, np.abs(ref))
        return out

    def check(self, tol=1e-8):
        """Raise if any stored cell breaks the curve identity or T-monotonicity."""
        resid = self.identity_residuals()
        bad = np.nan_to_num(resid, nan=0.0) > tol
        if np.any(bad):
            raise DomainError(f"{bad.sum()} table cells violate the extrapolation identity")
        rows = self.u_pred[self.present]
        if np.any(np.diff(rows, axis=1) <= 0):
            raise DomainError("u_pred is not strictly increasing in T")

    # ---- queries

    def increment(self, psi_hat, T):
        """``d_xi`` at each ``psi_hat`` for level ``T``; NaN where not covered."""
        psi_hat = np.asarray(psi_hat, dtype=float)
        column = self._column(T)
        c = self.centers
        inside = (psi_hat >= c[0] - self.width / 2) & (psi_hat <= c[-1] + self.width / 2)
        if c.size == 1:
            return np.where(inside & (psi_hat == c[0]), column[0], np.nan)
        j = np.clip(np.searchsorted(c, psi_hat), 1, c.size - 1)
        t = (psi_hat - c[j - 1]) / (c[j] - c[j - 1])
        value = column[j - 1] + t * (column[j] - column[j - 1])
        return np.where(inside, value, np.nan)

    def _column(self, T):
        levels = np.asarray(self.t_levels, dtype=float)
        if not levels[0] <= T <= levels[-1]:
            raise OutOfRangeError(
                f"T={T} outside tabulated range [{levels[0]:g}, {levels[-1]:g}]", T)
        j = int(np.searchsorted(levels, T))
        if levels[j] == T:
            return self.d_xi[:, j]
        s = (math.log(T) - math.log(levels[j - 1])) / (math.log(levels[j]) - math.log(levels[j - 1]))
        return (1 - s) * self.d_xi[:, j - 1] + s * self.d_xi[:, j]

    def predict_u(self, psi_hat, T):
        """Normalized level-T predictions for estimates ``psi_hat`` (NaN outside the table)."""
        psi_hat = np.asarray(psi_hat, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            return extrapolate(np.sinh(psi_hat) + self.increment(psi_hat, T), T, self.n)

    def predict_w(self, psi_hat, T):
        return np.arcsinh(self.predict_u(psi_hat, T))

    # ---- serialization

    def to_dict(self):
        return {
            "version": TABLE_VERSION,
            "n": self.n,
            "t_levels": list(self.t_levels),
            "slice_width": self.width,
            "centers": self.centers.tolist(),
            "counts": self.counts.tolist(),
            "d_xi": self.d_xi.tolist(),
            "u_pred": self.u_pred.tolist(),
            "build": dict(self.build),
        }

    @classmethod
    def from_dict(cls, data):
        if int(data.get("version", -1)) != TABLE_VERSION:
            raise DomainError(f"unsupported increment table version {data.get('version')}")

        def grid(rows):
            return np.array([[np.nan if v is None else v for v in row] for row in rows],
                            dtype=float)

        return cls(t_levels=tuple(data["t_levels"]), centers=data["centers"],
                   width=float(data["slice_width"]), d_xi=grid(data["d_xi"]),
                   u_pred=grid(data["u_pred"]), counts=data["counts"], n=int(data["n"]),
                   build=data.get("build", {}))

    def dumps(self):
        return dumps_json(self.to_dict())

    def save(self, path):
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


def dumps_json(obj, indent=0):
    """JSON with every float written to 17 significant digits and NaN as null."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = (f"{pad}{json.dumps(str(k))}: {dumps_json(v, indent + 1)}" for k, v in obj.items())
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if all(not isinstance(v, (dict, list, tuple)) for v in obj):
            return "[" + ", ".join(dumps_json(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + dumps_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return f"{float(obj):.17g}" if math.isfinite(obj) else "null"
    return json.dumps(obj)


def point_increments(psi_hat, w_next, T, n, iterations=110):
    """Per-point increment at which the level-T curve passes through ``u_next``.

    For point ``j`` this solves ``extrapolate(sinh(psi_hat_j) + d, T) = u_next_j``
    by vectorized bisection on ``xi_p in [-50, 50]``. Because the curve is
    increasing in ``xi_p``, ``u_next_j`` exceeds the prediction made with
    increment ``d`` exactly when its own increment is above ``d``. Points the
    curve cannot reach get -inf (below) or +inf (above).
    """
    check_level(T, n)
    u = np.sinh(np.asarray(w_next, dtype=float))
    lo = np.full(u.shape, -XI_P_LIMIT)
    hi = np.full(u.shape, XI_P_LIMIT)
    below = u <= extrapolate(-XI_P_LIMIT, T, n)
    above = u >= extrapolate(XI_P_LIMIT, T, n)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        low_side = extrapolate(mid, T, n) < u
        lo = np.where(low_side, mid, lo)
        hi = np.where(low_side, hi, mid)
    xi_p = 0.5 * (lo + hi)
    xi_p = np.where(below, -np.inf, np.where(above, np.inf, xi_p))
    return xi_p - np.sinh(np.asarray(psi_hat, dtype=float))


POINTWISE = "pointwise"
SLICE_QUANTILE = "slice-quantile"


def build_table(cloud, spec=None, t_levels=DEFAULT_T_LEVELS, n=None, mode=ORDER_STATISTIC,
                rule=POINTWISE):
    """Express horizontal-slice T-level predictions as tail-parameter increments.

    ``rule="pointwise"`` (default) takes the upper ``1/T`` quantile of the
    per-point increments in each slice, so applying ``xi_hat + d_xi`` to every
    point of the slice at its own ``psi_hat`` is exceeded by exactly ``1/T`` of
    them. ``rule="slice-quantile"`` inverts the slice's pooled ``w_next``
    quantile at the slice center instead; because the conditional tail steepens
    across a slice this over-predicts once increments are interpolated.
    """
    spec = spec or SliceSpec()
    cloud = cloud_mod.load(cloud)
    n = cloud.n if n is None else n
    t_levels = tuple(t_levels)
    check_monotone(t_levels, n)
    quantile = {ORDER_STATISTIC: upper_quantile, KERNEL: kernel_upper_quantile}[mode]
    xi_hat = np.sinh(spec.centers)
    d_xi = np.full((spec.centers.size, len(t_levels)), np.nan)
    counts = np.zeros(spec.centers.size, dtype=np.int64)
    masks = list(spec.masks(cloud.psi_hat))
    for k, mask in enumerate(masks):
        counts[k] = np.count_nonzero(mask)

    if rule == POINTWISE:
        covered = np.any(masks, axis=0) if masks else np.zeros(len(cloud), bool)
        for j, T in enumerate(t_levels):
            inc = np.full(len(cloud), np.nan)
            inc[covered] = point_increments(cloud.psi_hat[covered], cloud.w_next[covered], T, n)
            for k, mask in enumerate(masks):
                if counts[k] >= spec.min_points:
                    d_xi[k, j] = quantile(inc[mask], T)
    elif rule == SLICE_QUANTILE:
        sq = slice_quantiles(cloud, spec, t_levels, mode)
        for k in range(spec.centers.size):
            if not np.all(np.isfinite(sq.w[k])):
                continue
            try:
                xi_p = [invert_to_xi_p(u, T, n) for u, T in zip(sq.u[k], t_levels)]
            except NoSolutionError as exc:
                log.warning("slice %.3f dropped: %s", spec.centers[k], exc)
                continue
            d_xi[k] = np.asarray(xi_p) - xi_hat[k]
    else:
        raise ValueError(f"unknown increment rule {rule!r}")

    d_xi[~np.all(np.isfinite(d_xi), axis=1)] = np.nan
    u_pred = np.column_stack([extrapolate(xi_hat + d_xi[:, j], T, n)
                              for j, T in enumerate(t_levels)])
    build = {
        "cloud_manifest_hash": cloud.manifest_hash,
        "cloud_seed": cloud.seed,
        "quantile_mode": mode,
        "increment_rule": rule,
        "min_points": spec.min_points,
    }
    table = IncrementTable(t_levels, spec.centers, spec.width, d_xi, u_pred, counts, n, build)
    table.check()
    return table


def predict(table, sample, T):
    """x-scale level-T prediction(s) for one sample of raw observations.

    ``T`` may be a scalar or a sequence; off-grid levels are interpolated in
    ``log T`` between tabulated levels.
    """
    sample = as_ordered(sample)
    if sample.n != table.n:
        raise DomainError(f"table was built for N={table.n}, sample has {sample.n} values")
    est = fit_xi(sample)
    levels = np.atleast_1d(np.asarray(T, dtype=float))
    u = np.array([table.predict_u(est.psi_hat, t) for t in levels], dtype=float)
    if not np.all(np.isfinite(u)):
        raise OutOfRangeError(
            f"psi_hat={est.psi_hat:.6g} is outside the table range "
            f"[{table.centers[0] - table.width / 2:g}, {table.centers[-1] + table.width / 2:g}]"
            " or falls in an absent slice", est.psi_hat)
    x = sample.middle + u * (sample.middle - sample.smallest)
    return float(x[0]) if np.ndim(T) == 0 else x
