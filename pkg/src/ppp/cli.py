"""Command-line front end: gen-cloud, build, predict, validate, emit-figures.

Settings resolve in the order defaults < ``--config`` JSON file <
``--paper-defaults`` < ``PPP_SEED`` (seed only) < explicit flags.
"""
import argparse
from dataclasses import dataclass, field
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import cloud as cloud_mod
from . import figures
from .errors import DomainError, OutOfRangeError, PPPError
from .estimator import fit_xi
from .predictor import (DEFAULT_T_LEVELS, KERNEL, ORDER_STATISTIC, POINTWISE, SLICE_QUANTILE,
                        IncrementTable, SliceSpec, build_table, dumps_json, predict)
from .validate import validate_horizontal, validate_vertical

log = logging.getLogger("ppp")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DOMAIN = 3
EXIT_IO = 4
RUN_CONFIG_VERSION = 1

DEFAULTS = {
    "n_points": 1_000_000,
    "psi_min": -4.0,
    "psi_max": 4.0,
    "n": 20,
    "seed": 0,
    "chunk_size": 100_000,
    "workers": 1,
    "t_levels": list(DEFAULT_T_LEVELS),
    "slice_width": 0.1,
    "center_min": -3.0,
    "center_max": 3.0,
    "min_points": 200,
    "quantile_mode": ORDER_STATISTIC,
    "rule": POINTWISE,
    "reps": 1000,
    "max_points": 20000,
}

PAPER_DEFAULTS = {
    "n": 20,
    "n_points": 8_000_000,
    "psi_min": -4.0,
    "psi_max": 4.0,
    "slice_width": 0.1,
    "center_min": -3.0,
    "center_max": 3.0,
    "t_levels": list(DEFAULT_T_LEVELS),
}


class UsageError(PPPError):
    """Invalid combination of settings; maps to exit code 2."""


@dataclass
class RunConfig:
    command: str
    params: dict = field(default_factory=dict)
    format_version: int = RUN_CONFIG_VERSION

    def __getattr__(self, name):
        try:
            return self.__dict__["params"][name]
        except KeyError:
            raise AttributeError(name) from None

    def validate(self):
        for key in ("n_points", "chunk_size", "workers", "min_points", "reps", "max_points"):
            if key in self.params and self.params[key] is not None and int(self.params[key]) < 1:
                raise UsageError(f"--{key.replace('_', '-')} must be a positive count")
        if "t_levels" in self.params and not self.params["t_levels"]:
            raise UsageError("--t-levels must not be empty")
        inputs = [self.params.get(k) for k in ("cloud", "table", "data", "validation_cloud")]
        outputs = [self.params.get(k) for k in ("out", "out_dir")]
        ins = {Path(p).resolve() for p in inputs if p}
        for p in outputs:
            if p and Path(p).resolve() in ins:
                raise UsageError(f"output path {p} is also an input")
        return self


def _load_config_file(path, command):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config file must hold a JSON object")
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(command, {}))
    return {k.replace("-", "_"): v for k, v in merged.items()}


def resolve(args, environ=None):
    """Merge defaults, config file, --paper-defaults, environment and flags into a RunConfig."""
    environ = os.environ if environ is None else environ
    params = dict(DEFAULTS)
    if args.config:
        params.update(_load_config_file(args.config, args.command))
    if args.paper_defaults:
        params.update(PAPER_DEFAULTS)
    if environ.get("PPP_SEED"):
        try:
            params["seed"] = int(environ["PPP_SEED"])
        except ValueError:
            raise UsageError(f"PPP_SEED={environ['PPP_SEED']!r} is not an integer") from None
    for key, value in vars(args).items():
        if key in ("config", "paper_defaults", "func", "command", "log_level"):
            continue
        if value is not None:
            params[key] = value
    return RunConfig(args.command, params).validate()


def _spec(cfg):
    k = int(round((cfg.center_max - cfg.center_min) / cfg.slice_width))
    centers = np.round(cfg.center_min + cfg.slice_width * np.arange(k + 1), 12)
    return SliceSpec(float(cfg.slice_width), centers, int(cfg.min_points))


# -- commands ---------------------------------------------------------------------------

def cmd_gen_cloud(cfg, out=sys.stdout):
    try:
        config = cloud_mod.CloudConfig(int(cfg.n_points), float(cfg.psi_min),
                                       float(cfg.psi_max), int(cfg.n), int(cfg.seed),
                                       int(cfg.chunk_size))
    except DomainError as exc:
        raise UsageError(str(exc)) from exc
    manifest = cloud_mod.gen_cloud(config, cfg.out, int(cfg.workers),
                                   resume=not cfg.params.get("no_resume", False))
    for key, value in manifest.items():
        print(f"{key}={value}", file=out)
    print(f"clamp_fraction={int(manifest['clamp_count']) / config.n_points:.6g}", file=out)
    if cfg.params.get("csv"):
        cloud_mod.export_csv(cloud_mod.read_cloud(cfg.out), cfg.csv)
    return EXIT_OK


def cmd_build(cfg, out=sys.stdout):
    cloud = cloud_mod.read_cloud(cfg.cloud)
    table = build_table(cloud, _spec(cfg), tuple(cfg.t_levels), cloud.n, cfg.quantile_mode,
                        cfg.rule)
    table.save(cfg.out)
    absent = int((~table.present).sum())
    print(f"table written to {cfg.out}: {table.centers.size} slices, {absent} absent, "
          f"T={list(table.t_levels)}", file=out)
    return EXIT_OK


def read_observations(path):
    values = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            try:
                values.append(float(line))
            except ValueError:
                raise UsageError(f"cannot parse {line!r} as a number") from None
    return np.array(values)


def cmd_predict(cfg, out=sys.stdout):
    table = IncrementTable.load(cfg.table)
    table.check()
    values = read_observations(cfg.data)
    if values.size != table.n:
        raise UsageError(f"expected {table.n} observations, got {values.size}")
    levels = cfg.params.get("T") or list(table.t_levels)
    est = fit_xi(values)
    x = predict(table, values, levels)
    if cfg.params.get("json"):
        payload = {"n": table.n, "xi_hat": est.xi_hat, "psi_hat": est.psi_hat,
                   "clamped": est.clamped,
                   "predictions": [{"T": float(T), "x": float(v)} for T, v in zip(levels, x)]}
        print(dumps_json(payload), file=out)
    else:
        print(f"xi_hat={est.xi_hat:.10g} psi_hat={est.psi_hat:.10g}", file=out)
        for T, v in zip(levels, x):
            print(f"T={T:g} x={v:.10g}", file=out)
    return EXIT_OK


def cmd_validate(cfg, out=sys.stdout):
    table = IncrementTable.load(cfg.table)
    cloud = cloud_mod.read_cloud(cfg.cloud)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    allow = bool(cfg.params.get("allow_same_seed"))
    axes = ("vertical", "horizontal") if cfg.params.get("axis", "both") == "both" else (cfg.axis,)
    for axis in axes:
        if axis == "vertical":
            spec = SliceSpec.covering(float(cfg.psi_min), float(cfg.psi_max),
                                      float(cfg.slice_width))
            report = validate_vertical(table, cloud, spec, allow_same_seed=allow)
        else:
            report = validate_horizontal(table, cloud, _spec(cfg), allow_same_seed=allow)
        report.write_csv(out_dir / f"{axis}.csv")
        report.write_json(out_dir / f"{axis}.json")
        rates, size = report.pooled()
        nominal = report.nominal
        print(f"{axis}: {size} points, pooled rate x T = "
              + ", ".join(f"{r / p:.3f}" for r, p in zip(rates, nominal)), file=out)
        if axis == "vertical":
            rates, size = report.pooled(-2.0, 2.0)
            print(f"vertical, psi in [-2, 2]: {size} points, pooled rate x T = "
                  + ", ".join(f"{r / p:.3f}" for r, p in zip(rates, nominal)), file=out)
    return EXIT_OK


def cmd_emit_figures(cfg, out=sys.stdout):
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table = IncrementTable.load(cfg.table) if cfg.params.get("table") else None
    external = (IncrementTable.load(cfg.external_table)
                if cfg.params.get("external_table") else None)
    n = table.n if table is not None else int(cfg.n)
    paths = figures.emit_deciles(out_dir, reps=int(cfg.reps), seed=int(cfg.seed), n=n)
    if cfg.params.get("cloud"):
        cloud = cloud_mod.read_cloud(cfg.cloud)
        paths += figures.emit_slice_densities(out_dir, cloud, float(cfg.slice_width),
                                              float(cfg.psi_min), float(cfg.psi_max))
        paths += figures.emit_cloud_view(out_dir, cloud, table, int(cfg.max_points))
    if table is not None:
        paths += figures.emit_increments(out_dir, table, external)
    paths += figures.emit_extrapolation(out_dir, table, n=n, external=external,
                                        seed=int(cfg.seed))
    if table is not None and cfg.params.get("validation_cloud"):
        paths += figures.emit_performance(out_dir, table,
                                          cloud_mod.read_cloud(cfg.validation_cloud))
    for p in paths:
        print(p, file=out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------

def _levels(text):
    try:
        levels = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad level list {text!r}") from None
    return [int(t) if t == int(t) else t for t in levels]


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of settings (top level or per-command)")
    common.add_argument("--paper-defaults", action="store_true", default=False,
                        help="N=20, 8e6 points, psi in [-4, 4], width 0.1, T=21..400")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--log-level", default="WARNING")

    parser = argparse.ArgumentParser(prog="ppp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-cloud", parents=[common], help="generate a Monte Carlo cloud")
    p.add_argument("--n-points", type=int)
    p.add_argument("--psi-min", type=float)
    p.add_argument("--psi-max", type=float)
    p.add_argument("--n", type=int, help="sample size N (even)")
    p.add_argument("--chunk-size", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-resume", action="store_true", default=None)
    p.add_argument("--csv", help="also export the cloud as CSV to this path")
    p.set_defaults(func=cmd_gen_cloud)

    def slicing(p):
        p.add_argument("--t-levels", type=_levels, help="comma separated, e.g. 21,50,100")
        p.add_argument("--slice-width", type=float)
        p.add_argument("--center-min", type=float)
        p.add_argument("--center-max", type=float)
        p.add_argument("--min-points", type=int)

    p = sub.add_parser("build", parents=[common], help="build an increment table from a cloud")
    p.add_argument("--cloud", required=True)
    p.add_argument("--out", required=True, help="table JSON path")
    slicing(p)
    p.add_argument("--quantile-mode", choices=[ORDER_STATISTIC, KERNEL])
    p.add_argument("--rule", choices=[POINTWISE, SLICE_QUANTILE])
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("predict", parents=[common], help="predict level-T values for a sample")
    p.add_argument("--table", required=True)
    p.add_argument("data", help="file with one observation per line")
    p.add_argument("--T", type=_levels, help="levels to predict (default: table levels)")
    p.add_argument("--json", action="store_true", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", parents=[common], help="measure delivered exceedance")
    p.add_argument("--table", required=True)
    p.add_argument("--cloud", required=True, help="held-out validation cloud")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--axis", choices=["vertical", "horizontal", "both"])
    p.add_argument("--psi-min", type=float)
    p.add_argument("--psi-max", type=float)
    slicing(p)
    p.add_argument("--allow-same-seed", action="store_true", default=None,
                   help="permit in-sample validation on the build cloud")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("emit-figures", parents=[common], help="write plot data as CSV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--table")
    p.add_argument("--cloud", help="build cloud, for slice densities and the cloud view")
    p.add_argument("--validation-cloud", help="held-out cloud, for exceedance curves")
    p.add_argument("--external-table", help="increment table to overlay for comparison")
    p.add_argument("--reps", type=int)
    p.add_argument("--max-points", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--slice-width", type=float)
    p.add_argument("--psi-min", type=float)
    p.add_argument("--psi-max", type=float)
    p.set_defaults(func=cmd_emit_figures)
    return parser


def main(argv=None, out=None, environ=None):
    out = out or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args, environ)
        return args.func(cfg, out)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OutOfRangeError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (OSError, PPPError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
