"""Monte Carlo point cloud ``(psi, psi_hat, w_next)`` under a uniform prior on psi.

Each point draws ``psi`` uniformly, an N-sample from the GPD with
``xi = sinh(psi)`` at unit location and scale, the curve-fit estimate
``psi_hat`` of that sample, and one further draw normalized by the sample's
middle and smallest order statistics, stored as ``w_next = asinh(u_next)``.

Every point owns a Philox substream keyed by the cloud seed with the point
index in the counter, so the cloud is a pure function of its config no matter
how chunks are scheduled across workers.

Normalized values are computed from the log tail probabilities directly,
``u = expm1(-xi d) / -expm1(-xi d_N)`` with ``d = log g - log g_{N/2}``. This
is the same ratio obtained from raw ``x`` values (location and scale cancel)
but avoids the cancellation raw values suffer for large ``|xi|``.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import hashlib
import logging
import os
from pathlib import Path

import numpy as np

from . import gpd
from .errors import DegenerateSampleError, DomainError, PPPError
from .estimator import (PSI_BRACKET, XI_SERIES_CUTOFF, check_sample_size,
                        fit_log_data, fit_xi, normalize, OrderedSample)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST = "manifest.txt"
PROGRESS = "chunks.txt"
ROW_DTYPE = np.dtype("<f8")
COLUMNS = ("psi", "psi_hat", "w_next")
MAX_RETRIES = 1000


@dataclass(frozen=True)
class CloudPoint:
    psi: float
    psi_hat: float
    w_next: float


@dataclass(frozen=True)
class CloudConfig:
    n_points: int
    psi_min: float = -4.0
    psi_max: float = 4.0
    n: int = 20
    seed: int = 0
    chunk_size: int = 100_000

    def __post_init__(self):
        if self.n_points < 1:
            raise DomainError("n_points must be at least 1")
        if not self.psi_max > self.psi_min:
            raise DomainError("psi range must be nonempty")
        if self.chunk_size < 1:
            raise DomainError("chunk_size must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        check_sample_size(self.n)

    @property
    def chunk_count(self):
        return -(-self.n_points // self.chunk_size)

    def chunk_bounds(self, index):
        start = index * self.chunk_size
        return start, min(start + self.chunk_size, self.n_points)


def point_rng(seed, index):
    """Counter-based substream for point ``index``; the counter's third word holds the index."""
    return np.random.Generator(np.random.Philox(key=seed, counter=[0, 0, index, 0]))


# -- numerically stable normalization -------------------------------------------------

def _log_abs_expm1(z):
    z = np.asarray(z, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        pos = z + np.log1p(-np.exp(-np.abs(z)))
        neg = np.log(-np.expm1(-np.abs(z)))
    return np.where(z > 0, pos, neg)


def _log_abs_ratio(xi, a, b):
    """``log |expm1(xi a) / expm1(xi b)|`` including the ``xi -> 0`` limit."""
    xi, a, b = np.broadcast_arrays(np.asarray(xi, float), np.asarray(a, float),
                                   np.asarray(b, float))
    small = np.abs(xi) < XI_SERIES_CUTOFF
    safe = np.where(small, 1.0, xi)
    out = _log_abs_expm1(safe * a) - _log_abs_expm1(safe * b)
    if np.any(small):
        x, a_s, b_s = xi[small], a[small], b[small]
        with np.errstate(divide="ignore"):
            out[small] = (np.log(np.abs(a_s)) + np.log1p(x * a_s / 2 + x**2 * a_s**2 / 6)
                          - np.log(np.abs(b_s)) - np.log1p(x * b_s / 2 + x**2 * b_s**2 / 6))
    return out


def _asinh_from_log(log_y):
    """``asinh(exp(log_y))`` without overflow."""
    with np.errstate(over="ignore"):
        small = np.arcsinh(np.exp(np.minimum(log_y, 0.0)))
        large = log_y + np.log1p(np.sqrt(1.0 + np.exp(-2.0 * np.maximum(log_y, 0.0))))
    return np.where(log_y > 0, large, small)


def normalized_w(xi, log_mid, log_low, log_g):
    """``asinh`` of the normalized value whose tail probability is ``exp(log_g)``.

    ``log_mid`` and ``log_low`` are the log tail probabilities of the middle
    and smallest order statistics of the conditioning sample.
    """
    d = np.asarray(log_g, float) - log_mid
    d_low = np.asarray(log_low, float) - log_mid
    log_abs_u = _log_abs_ratio(xi, -d, -d_low)
    return -np.sign(d) * _asinh_from_log(log_abs_u)


def normalized_log_data(xi, log_sorted):
    """``log(1 + u_i)`` for the upper order statistics, from ascending log tail probabilities."""
    n = log_sorted.shape[-1]
    h = n // 2
    log_mid = log_sorted[..., h - 1:h]
    d = log_sorted[..., : h - 1] - log_mid
    d_low = log_sorted[..., n - 1:n] - log_mid
    log_u = _log_abs_ratio(np.asarray(xi)[..., None], -d, -d_low)
    return np.logaddexp(0.0, log_u)


# -- single point reference path ---------------------------------------------------

def _draw_sample_uniforms(rng, n):
    """Sorted tail draws plus the retry count; degenerate draws are redrawn."""
    h = n // 2
    for retries in range(MAX_RETRIES):
        g = np.sort(gpd.uniform_tail_draws(rng, n))
        if g[h - 1] < g[n - 1]:
            return g, retries
    raise DegenerateSampleError("too many degenerate samples in a row")


def gen_point(psi, rng, n=20, mu=0.0, sigma=1.0):
    """One cloud point computed from raw GPD values at location ``mu``, scale ``sigma``.

    This is the direct route (sample, normalize, fit); the bulk generator
    uses the log-probability route and must agree with it.
    """
    params = gpd.GpdParams(mu, sigma, float(np.sinh(psi)))
    for _ in range(MAX_RETRIES):
        x = gpd.tail_quantile(params, gpd.uniform_tail_draws(rng, n))
        try:
            sample = OrderedSample.from_values(x)
            normalize(sample)
        except DegenerateSampleError:
            continue
        break
    else:
        raise DegenerateSampleError("too many degenerate samples in a row")
    est = fit_xi(sample)
    x_next = gpd.tail_quantile(params, gpd.uniform_tail_draws(rng, 1)[0])
    u_next = (x_next - sample.middle) / (sample.middle - sample.smallest)
    return CloudPoint(float(psi), est.psi_hat, float(np.arcsinh(u_next)))


# -- bulk generation ---------------------------------------------------------------

@dataclass
class Chunk:
    index: int
    rows: np.ndarray
    retries: int
    clamps: int
    log_mid: np.ndarray = field(default=None, repr=False)
    log_low: np.ndarray = field(default=None, repr=False)


def compute_chunk(config, index, with_aux=False):
    start, stop = config.chunk_bounds(index)
    m, n = stop - start, config.n
    span = config.psi_max - config.psi_min
    psi = np.empty(m)
    log_sorted = np.empty((m, n))
    log_next = np.empty(m)
    retries = 0
    for k in range(m):
        rng = point_rng(config.seed, start + k)
        psi[k] = config.psi_min + span * rng.random()
        g, r = _draw_sample_uniforms(rng, n)
        retries += r
        log_sorted[k] = np.log(g)
        log_next[k] = np.log(gpd.uniform_tail_draws(rng, 1)[0])
    xi = np.sinh(psi)
    psi_hat, _, clamped = fit_log_data(normalized_log_data(xi, log_sorted), n)
    log_mid, log_low = log_sorted[:, n // 2 - 1], log_sorted[:, n - 1]
    w_next = normalized_w(xi, log_mid, log_low, log_next)
    rows = np.column_stack([psi, psi_hat, w_next]).astype(ROW_DTYPE)
    chunk = Chunk(index, rows, retries, int(clamped.sum()))
    if with_aux:
        chunk.log_mid, chunk.log_low = log_mid, log_low
    return chunk


def iter_chunks(config, workers=1, with_aux=False, indices=None):
    """Yield computed chunks in index order."""
    indices = list(range(config.chunk_count)) if indices is None else list(indices)
    if workers <= 1 or len(indices) <= 1:
        for i in indices:
            yield compute_chunk(config, i, with_aux)
        return
    with ProcessPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(compute_chunk, [config] * len(indices), indices,
                            [with_aux] * len(indices))


@dataclass
class Cloud:
    """An in-memory cloud; ``log_mid``/``log_low`` are only kept for fresh clouds."""

    psi: np.ndarray
    psi_hat: np.ndarray
    w_next: np.ndarray
    manifest: dict
    log_mid: np.ndarray = field(default=None, repr=False)
    log_low: np.ndarray = field(default=None, repr=False)

    @property
    def seed(self):
        return int(self.manifest["seed"])

    @property
    def n(self):
        return int(self.manifest["n"])

    def __len__(self):
        return self.psi.size

    def points(self):
        for row in zip(self.psi, self.psi_hat, self.w_next):
            yield CloudPoint(*map(float, row))

    @property
    def manifest_hash(self):
        return hashlib.sha256(format_manifest(self.manifest).encode()).hexdigest()


def _manifest(config, retries, clamps):
    return {
        "format_version": FORMAT_VERSION,
        "seed": config.seed,
        "n_points": config.n_points,
        "psi_min": repr(float(config.psi_min)),
        "psi_max": repr(float(config.psi_max)),
        "n": config.n,
        "chunk_size": config.chunk_size,
        "chunk_count": config.chunk_count,
        "retry_count": retries,
        "clamp_count": clamps,
    }


def generate(config, workers=1, with_aux=False):
    """Generate a cloud in memory."""
    chunks = list(iter_chunks(config, workers, with_aux))
    rows = np.concatenate([c.rows for c in chunks])
    cloud = Cloud(rows[:, 0], rows[:, 1], rows[:, 2],
                  _manifest(config, sum(c.retries for c in chunks),
                            sum(c.clamps for c in chunks)))
    if with_aux:
        cloud.log_mid = np.concatenate([c.log_mid for c in chunks])
        cloud.log_low = np.concatenate([c.log_low for c in chunks])
    return cloud


# -- persistence -------------------------------------------------------------------

def format_manifest(manifest):
    return "".join(f"{k}={v}\n" for k, v in manifest.items())


def parse_manifest(text):
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def config_from_manifest(manifest):
    return CloudConfig(n_points=int(manifest["n_points"]),
                       psi_min=float(manifest["psi_min"]),
                       psi_max=float(manifest["psi_max"]), n=int(manifest["n"]),
                       seed=int(manifest["seed"]), chunk_size=int(manifest["chunk_size"]))


def chunk_name(index):
    return f"chunk_{index:05d}.bin"


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _read_progress(out_dir, config):
    done = {}
    path = out_dir / PROGRESS
    if not path.exists():
        return done
    lines = path.read_text().splitlines()
    if not lines or lines[0] != format_manifest(_manifest(config, 0, 0)).replace("\n", ";"):
        raise PPPError(f"{out_dir} holds a partial cloud with a different config")
    for line in lines[1:]:
        index, retries, clamps, digest = line.split()
        chunk_path = out_dir / chunk_name(int(index))
        if chunk_path.exists() and _sha256(chunk_path) == digest:
            done[int(index)] = (int(retries), int(clamps))
    return done


def gen_cloud(config, out_dir, workers=1, resume=True):
    """Write a cloud as chunk files plus a manifest; returns the manifest dict.

    Completed chunks of an interrupted run with the same config are reused.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    done = _read_progress(out_dir, config) if resume else {}
    progress = out_dir / PROGRESS
    header = format_manifest(_manifest(config, 0, 0)).replace("\n", ";")
    with open(progress, "w") as fh:
        fh.write(header + "\n")
        for index, (r, c) in sorted(done.items()):
            fh.write(f"{index} {r} {c} {_sha256(out_dir / chunk_name(index))}\n")
    todo = [i for i in range(config.chunk_count) if i not in done]
    if done:
        log.info("resuming: %d of %d chunks already present", len(done), config.chunk_count)
    for chunk in iter_chunks(config, workers, indices=todo):
        path = out_dir / chunk_name(chunk.index)
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(chunk.rows.tobytes())
        os.replace(tmp, path)
        done[chunk.index] = (chunk.retries, chunk.clamps)
        with open(progress, "a") as fh:
            fh.write(f"{chunk.index} {chunk.retries} {chunk.clamps} {_sha256(path)}\n")
    manifest = _manifest(config, sum(r for r, _ in done.values()),
                         sum(c for _, c in done.values()))
    (out_dir / MANIFEST).write_text(format_manifest(manifest))
    return manifest


def read_cloud(path):
    path = Path(path)
    manifest_path = path / MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"no cloud manifest at {manifest_path}")
    manifest = parse_manifest(manifest_path.read_text())
    if int(manifest["format_version"]) != FORMAT_VERSION:
        raise PPPError(f"unsupported cloud format version {manifest['format_version']}")
    config = config_from_manifest(manifest)
    parts = []
    for i in range(config.chunk_count):
        data = np.fromfile(path / chunk_name(i), dtype=ROW_DTYPE)
        start, stop = config.chunk_bounds(i)
        if data.size != 3 * (stop - start):
            raise PPPError(f"chunk {i} has {data.size} values, expected {3 * (stop - start)}")
        parts.append(data.reshape(-1, 3))
    rows = np.concatenate(parts).astype(float)
    manifest = {k: manifest[k] for k in manifest}
    return Cloud(rows[:, 0], rows[:, 1], rows[:, 2], manifest)


def load(cloud, n=20):
    """Accept a Cloud, a cloud directory, or an ``(m, 3)`` array built with sample size ``n``."""
    if isinstance(cloud, Cloud):
        return cloud
    if isinstance(cloud, (str, os.PathLike)):
        return read_cloud(cloud)
    rows = np.asarray(cloud, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != 3:
        raise DomainError("cloud array must have shape (m, 3): psi, psi_hat, w_next")
    return Cloud(rows[:, 0], rows[:, 1], rows[:, 2], {"seed": -1, "n": n})


def export_csv(cloud, path):
    rows = np.column_stack([cloud.psi, cloud.psi_hat, cloud.w_next])
    np.savetxt(path, rows, delimiter=",", header=",".join(COLUMNS), comments="",
               fmt="%.17g")


def clamp_fraction(cloud):
    lo, hi = PSI_BRACKET
    return float(np.mean((cloud.psi_hat <= lo + 1e-6) | (cloud.psi_hat >= hi - 1e-6)))
