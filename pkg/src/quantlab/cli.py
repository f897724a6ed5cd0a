"""Configuration-driven experiment runner.

``quantlab run <config-file> [--seed S] [--out DIR]`` optimizes a ladder of
codebooks, runs the diagnostic suite and writes ``codebooks.csv``,
``cells.csv``, ``curve.csv``, ``checks.json`` and ``manifest.json``.
``quantlab list-checks`` prints the check catalog.  A config file is either a
path or the name of a shipped config (``uniform1d_r2`` ...).

Check failures are reported in ``checks.json`` and do not change the exit
status; an invalid config exits with status 2.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numba
import numpy as np
import scipy
import yaml

from . import __version__
from . import diagnostics as dg
from .distributions import AllOfRd, DensityModel, NormSpec, Region, model_from_dict, region_from_dict
from .mc import derive_seed
from .quantizer import Init, OptimizeConfig

log = logging.getLogger(__name__)

ALL_CHECKS = (
    "zador_scaling",
    "diff_scaling",
    "micro_macro_first",
    "micro_macro_second",
    "local_bounds",
    "point_density_conjecture",
    "empirical_measure",
    "radius_scaling",
    "invariants",
)
SHIPPED_CONFIGS = ("uniform1d_r2", "uniform2d_r2", "gaussian1d_r2", "gaussian2d_r2", "gaussian1d_r1", "hyperexp1d_r2")

# keyword arguments each check accepts from the ``thresholds`` section
_THRESHOLD_KEYS = {
    "zador_scaling": {"tol"},
    "diff_scaling": {"tol"},
    "micro_macro_first": {"slack", "probes"},
    "micro_macro_second": {"slack"},
    "local_bounds": {"band"},
    "point_density_conjecture": {"band", "min_level"},
    "empirical_measure": {"min_fraction", "slack"},
    "radius_scaling": {"tol", "max_ratio"},
    "invariants": {"k_sigma"},
}
_OPTIMIZER_KEYS = {"restarts", "max_lloyd_iters", "rel_improvement_floor", "init", "training_design",
                   "stationarity_tol", "accelerate"}
_SAMPLE_KEYS = {"training", "evaluation", "cell_stats", "ball"}


class ConfigError(ValueError):
    """Raised for an invalid experiment config; the message names the offending field."""


@dataclass
class ExperimentConfig:
    name: str
    model: dict
    r: float
    norm: NormSpec
    levels: list
    b: float = 0.25
    K: object = "auto"
    samples: dict = field(default_factory=lambda: {"training": 200_000, "evaluation": 1_000_000,
                                                   "cell_stats": 1_000_000, "ball": 1_000_000})
    optimizer: dict = field(default_factory=dict)
    checks: list = field(default_factory=lambda: list(ALL_CHECKS))
    thresholds: dict = field(default_factory=dict)
    seed: int = 0
    output_dir: str | None = None
    dimension: int | None = None

    def build_model(self) -> DensityModel:
        return model_from_dict(self.model)

    def build_region(self, model: DensityModel) -> Region:
        if self.K == "auto":
            return dg.default_region(model, self.seed)
        return region_from_dict(self.K)

    def optimize_config(self) -> OptimizeConfig:
        return OptimizeConfig(training_samples=self.samples["training"], eval_samples=self.samples["evaluation"],
                              seed=self.seed, **self.optimizer)

    def to_dict(self) -> dict:
        """Resolved config, including defaults, as plain data."""
        opt = self.optimize_config()
        return {
            "name": self.name, "model": self.model, "r": self.r, "norm": self.norm.value,
            "dimension": self.dimension, "levels": list(self.levels), "b": self.b, "K": self.K,
            "samples": dict(self.samples),
            "optimizer": {k: (v.value if isinstance(v, Init) else v) for k, v in vars(opt).items()},
            "checks": list(self.checks), "thresholds": self.thresholds, "seed": self.seed,
            "output_dir": self.output_dir,
        }


def _require(cond: bool, message: str):
    if not cond:
        raise ConfigError(f"invalid config: {message}")


def config_from_dict(raw: dict) -> ExperimentConfig:
    """Validate a parsed config mapping."""
    _require(isinstance(raw, dict), "top level must be a mapping")
    known = {"name", "model", "r", "norm", "dimension", "levels", "b", "K", "samples", "optimizer", "checks",
             "thresholds", "seed", "output_dir"}
    extra = sorted(set(raw) - known)
    _require(not extra, f"unknown field(s) {', '.join(extra)}")
    _require("model" in raw and isinstance(raw["model"], dict), "model missing")
    try:
        model = model_from_dict(raw["model"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"invalid config: model: {exc}") from exc
    r = raw.get("r", 2.0)
    _require(isinstance(r, (int, float)) and r > 0, "r must be a positive number")
    try:
        norm = NormSpec.parse(raw.get("norm", "euclidean"))
    except ValueError as exc:
        raise ConfigError(f"invalid config: norm: {exc}") from exc
    dim = raw.get("dimension")
    _require(dim is None or dim == model.dimension, f"dimension {dim} does not match the model ({model.dimension})")
    levels = raw.get("levels")
    _require(levels is not None and len(levels) > 0, "levels empty")
    _require(all(isinstance(n, int) and n >= 1 for n in levels), "levels must be positive integers")
    _require(all(b > a for a, b in zip(levels, levels[1:])), "levels must be increasing")
    b = raw.get("b", 0.25)
    _require(isinstance(b, (int, float)) and 0 < b < 0.5, "b must lie in (0, 1/2)")
    K = raw.get("K", "auto")
    if K != "auto":
        try:
            reg = region_from_dict(K)
        except (KeyError, ValueError, TypeError, AttributeError) as exc:
            raise ConfigError(f"invalid config: K: {exc}") from exc
        _require(reg.dimension in (None, model.dimension),
                 f"K: region dimension {reg.dimension} does not match the model ({model.dimension})")
    samples = dict(ExperimentConfig.__dataclass_fields__["samples"].default_factory())
    raw_samples = raw.get("samples", {}) or {}
    _require(isinstance(raw_samples, dict), "samples must be a mapping")
    extra = sorted(set(raw_samples) - _SAMPLE_KEYS)
    _require(not extra, f"samples: unknown field(s) {', '.join(extra)}")
    samples.update(raw_samples)
    for key, v in samples.items():
        _require(isinstance(v, int) and v > 0, f"samples.{key} must be a positive integer")
    _require(samples["cell_stats"] >= 10_000, "samples.cell_stats must be at least 10000")
    _require(samples["evaluation"] >= 100, "samples.evaluation must be at least 100")
    optimizer = dict(raw.get("optimizer", {}) or {})
    extra = sorted(set(optimizer) - _OPTIMIZER_KEYS)
    _require(not extra, f"optimizer: unknown field(s) {', '.join(extra)}")
    checks = raw.get("checks", ["all"])
    if checks == ["all"] or checks == "all":
        checks = list(ALL_CHECKS)
    unknown = sorted(set(checks) - set(ALL_CHECKS))
    _require(not unknown, f"checks: unknown check(s) {', '.join(unknown)}")
    thresholds = raw.get("thresholds", {}) or {}
    for name, kw in thresholds.items():
        _require(name in _THRESHOLD_KEYS, f"thresholds: unknown check {name}")
        bad = sorted(set(kw) - _THRESHOLD_KEYS[name])
        _require(not bad, f"thresholds.{name}: unknown field(s) {', '.join(bad)}")
    seed = raw.get("seed", 0)
    _require(isinstance(seed, int) and seed >= 0, "seed must be a non-negative integer")
    cfg = ExperimentConfig(name=str(raw.get("name", "experiment")), model=raw["model"], r=float(r), norm=norm,
                           levels=list(levels), b=float(b), K=K, samples=samples, optimizer=optimizer,
                           checks=[c for c in ALL_CHECKS if c in checks], thresholds=thresholds, seed=seed,
                           output_dir=raw.get("output_dir"), dimension=model.dimension)
    try:
        cfg.optimize_config()
    except ValueError as exc:
        raise ConfigError(f"invalid config: optimizer: {exc}") from exc
    return cfg


def resolve_config_path(name_or_path: str) -> Path:
    p = Path(name_or_path)
    if p.exists():
        return p
    stem = p.name[:-5] if p.name.endswith(".yaml") else p.name
    if stem in SHIPPED_CONFIGS:
        return Path(str(resources.files("quantlab") / "configs" / f"{stem}.yaml"))
    raise ConfigError(f"invalid config: file {name_or_path} not found")


def load_config(name_or_path: str) -> tuple[ExperimentConfig, str]:
    """Parse and validate a config file; returns the config and the raw text."""
    path = resolve_config_path(name_or_path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid config: unparsable file: {exc}") from exc
    return config_from_dict(raw), text


# ---------------------------------------------------------------------------
# running
# ---------------------------------------------------------------------------


@dataclass
class RunResult:
    config: ExperimentConfig
    model: DensityModel
    region: Region
    curve: dg.ErrorCurve
    stats: dict  # level -> list[CellStats]
    reports: list  # CheckReport, in catalog order

    def reports_named(self, name: str) -> list:
        return [rep for rep in self.reports if rep.check_name == name]


def _skip(name: str, reason: str) -> dg.CheckReport:
    return dg.CheckReport(name, False, status="skipped", details={"reason": reason})


def execute(cfg: ExperimentConfig) -> RunResult:
    """Run the ladder and every configured check; pure function of the config."""
    model = cfg.build_model()
    if isinstance(model.support, AllOfRd) and not model.pstp_class:
        log.warning("%s has unbounded support outside the peakless-tail class; "
                    "tail-dependent checks may not apply", model.kind.value)
    region = cfg.build_region(model)
    r, d = cfg.r, model.dimension
    th = {k: dict(v) for k, v in cfg.thresholds.items()}
    need_diffs = len(cfg.levels) > 1 or any(c in cfg.checks for c in ("micro_macro_first", "micro_macro_second"))
    curve = dg.error_curve(model, cfg.levels, r, cfg.norm, cfg.optimize_config(), cfg.samples["evaluation"],
                           cfg.seed, with_diffs=need_diffs)
    cell_seed = dg.curve_eval_seed(cfg.seed)
    stats = {n: dg.cell_stats(curve.codebooks[n], model, region, cfg.samples["cell_stats"], cell_seed)
             for n in cfg.levels}
    reports = []
    levels = list(cfg.levels)
    for name in cfg.checks:
        kw = th.get(name, {})
        if name == "zador_scaling":
            if len(levels) < 4:
                reports.append(_skip(name, "needs at least 4 levels"))
                continue
            reports.append(dg.zador_scaling_check(curve, d, r, expected_Q=dg.zador_constant(model, r), **kw))
        elif name == "diff_scaling":
            if len(curve.diffs) < 4:
                reports.append(_skip(name, "needs at least 4 ladder points"))
                continue
            reports.append(dg.diff_scaling_check(curve, d, r, **kw))
        elif name == "micro_macro_first":
            probes = kw.pop("probes", 500)
            for i, n in enumerate(levels):
                cb = curve.codebooks[n]
                pts = dg.default_probe_points(cb, model, probes, derive_seed(cfg.seed, "probes", n))
                reports.append(dg.micro_macro_first_check(cb, curve.codebooks[n + 1], curve.diffs[i], model, cfg.b,
                                                          pts, ball_samples=cfg.samples["ball"],
                                                          seed=derive_seed(cfg.seed, "ball", n), **kw))
        elif name == "micro_macro_second":
            for i, n in enumerate(levels):
                reports.append(dg.micro_macro_second_check(curve.codebooks[n], curve.codebooks[n + 1], curve.diffs[i],
                                                           model, cfg.samples["evaluation"],
                                                           derive_seed(cfg.seed, "gains", n + 1), **kw))
        elif name == "local_bounds":
            for n in levels:
                reports.append(dg.local_bounds_check(stats[n], n, d, r, **kw))
        elif name == "point_density_conjecture":
            reports.append(dg.point_density_conjecture_check(stats, model, r, d, **kw))
        elif name == "empirical_measure":
            if len(levels) < 2:
                reports.append(_skip(name, "needs at least 2 levels"))
                continue
            reports.append(dg.empirical_measure_check({n: curve.codebooks[n] for n in levels}, model, r, d,
                                                      samples=cfg.samples["evaluation"],
                                                      seed=derive_seed(cfg.seed, "weak"), **kw))
        elif name == "radius_scaling":
            geo = dg.k_restricted_geometries(stats)
            if sum(1 for n in geo if n >= 2 and geo[n]) < 3:
                reports.append(_skip(name, "needs at least 3 levels with n >= 2"))
                continue
            reports.append(dg.radius_scaling_check(geo, d, **kw))
        elif name == "invariants":
            for i, n in enumerate(levels):
                reports.append(dg.invariants_check(stats[n], curve.e_r_pow[i], **kw))
    return RunResult(cfg, model, region, curve, stats, reports)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _f(x) -> str:
    return "%.17g" % x


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_artifacts(res: RunResult, out: Path, raw_text: str | None, started: datetime, elapsed: float):
    out.mkdir(parents=True, exist_ok=True)
    cfg, curve = res.config, res.curve
    d = res.model.dimension

    rows = []
    for n in sorted(curve.codebooks):
        cb = curve.codebooks[n]
        for i, p in enumerate(cb.points):
            rows.append([n, i, *(_f(v) for v in p), _f(cb.distortion), _f(cb.stationarity_residual)])
    _write_csv(out / "codebooks.csv", ["level", "index", *(f"x{k}" for k in range(d)), "distortion",
                                       "stationarity_residual"], rows)

    rows = []
    for n in cfg.levels:
        for s in res.stats[n]:
            rows.append([n, s.codepoint_index, _f(s.probability.value), _f(s.probability.stderr),
                         _f(s.local_inertia.value), _f(s.local_inertia.stderr), _f(s.geometry.inner_radius),
                         _f(s.geometry.outer_radius_estimate), _f(s.essinf_h), _f(s.esssup_h),
                         int(s.intersects_K)])
    _write_csv(out / "cells.csv", ["level", "index", "probability", "probability_stderr", "inertia",
                                   "inertia_stderr", "inner_radius", "outer_radius", "essinf_h", "esssup_h",
                                   "intersects_K"], rows)

    rows = []
    for i, n in enumerate(curve.levels):
        e = curve.e_r_pow[i]
        diff = [_f(curve.diffs[i].value), _f(curve.diffs[i].stderr)] if curve.diffs else ["", ""]
        rows.append([n, _f(e.value), _f(e.stderr), *diff])
    _write_csv(out / "curve.csv", ["level", "e_r", "e_r_stderr", "diff", "diff_stderr"], rows)

    checks = {
        "experiment": cfg.name,
        "K": res.region.describe(),
        "summary": {st: sum(1 for rep in res.reports if rep.status == st)
                    for st in ("pass", "fail", "inconclusive", "skipped")},
        "reports": [rep.to_dict() for rep in res.reports],
    }
    (out / "checks.json").write_text(json.dumps(checks, indent=2) + "\n", encoding="utf-8")

    resolved = cfg.to_dict()
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    manifest = {
        "experiment": cfg.name,
        "config": resolved,
        "config_sha256": hashlib.sha256(canonical.encode("utf-8")).hexdigest(),
        "config_file_text": raw_text,
        "model": res.model.describe(),
        "K": res.region.describe(),
        "seeds": {"master": cfg.seed, "curve_evaluation": dg.curve_eval_seed(cfg.seed)},
        "codebook_provenance": {str(n): {"converged": cb.provenance.converged,
                                         "lloyd_iterations": cb.provenance.lloyd_iterations,
                                         "reseed_events": cb.provenance.reseed_events,
                                         "restart_distortions": list(cb.provenance.restart_distortions)}
                                for n, cb in sorted(curve.codebooks.items())},
        "versions": {"quantlab": __version__, "python": platform.python_version(), "numpy": np.__version__,
                     "scipy": scipy.__version__, "numba": numba.__version__, "pyyaml": yaml.__version__},
        "started": started.isoformat(timespec="seconds"),
        "wall_clock_seconds": round(elapsed, 3),
    }
    (out / "manifest.json").write_text(json.dumps(dg._jsonable(manifest), indent=2) + "\n", encoding="utf-8")


def run(config_file: str, seed: int | None = None, out: str | None = None) -> int:
    """Load, execute and write one experiment; returns the process exit status."""
    try:
        cfg, text = load_config(config_file)
        if seed is not None:
            if seed < 0:
                raise ConfigError("invalid config: seed must be a non-negative integer")
            cfg.seed = seed
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    out_dir = Path(out or cfg.output_dir or Path("runs") / cfg.name)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    res = execute(cfg)
    write_artifacts(res, out_dir, text, started, time.perf_counter() - t0)
    counts = {st: sum(1 for rep in res.reports if rep.status == st) for st in ("pass", "fail", "inconclusive")}
    print(f"{cfg.name}: {counts['pass']} passed, {counts['fail']} failed, {counts['inconclusive']} inconclusive "
          f"-> {out_dir}")
    return 0


def list_checks(stream=None) -> int:
    stream = stream or sys.stdout
    for name in ALL_CHECKS:
        statement, thresholds = dg.CHECK_CATALOG[name]
        print(f"{name} ({statement})", file=stream)
        print(f"    default thresholds: {thresholds}", file=stream)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="quantlab", description="Local quantization asymptotics experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config", help="config file path or shipped config name")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", default=None, help="output directory")
    sub.add_parser("list-checks", help="print the check catalog")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "run":
        return run(args.config, args.seed, args.out)
    return list_checks()


if __name__ == "__main__":
    sys.exit(main())
