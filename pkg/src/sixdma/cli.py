"""Command-line front end: ``sixdma {evaluate,compare,optimize,gen-scenario}``.

Runs are configured by one YAML file with the sections ``site``,
``scenario``, ``optimizer``, ``fas_ma`` and ``grid`` plus a few top-level
keys (see ``sixdma gen-scenario``).  ``--set section.key=value`` overrides
are applied after parsing; values are read as YAML scalars or flow lists.
Unknown keys are errors.  Every CSV written is paired with a flat
``key=value`` manifest named after it.
"""

from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import hashlib
import io
import json
import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import yaml

from . import __version__
from .baselines import FasMaConfig, default_site, fpa_three_sector
from .channel import DirectionalPattern
from .experiment import SCHEMES, run_comparison, summary_rows, training_seed
from .geometry import InfeasibleGeometryError, RotationAngles, SiteGeometry, SurfacePose, check_constraints
from .metrics import RealizationBatch
from .optimize import (
    DiscreteGrid,
    OptimizerConfig,
    alternating_optimize,
    csm_optimize,
    relax_and_quantize,
    ring_layout,
)
from .scenario import Hotspot, ScenarioSpec

log = logging.getLogger("sixdma")

CSV_HEADER = ("scheme", "power_dbm", "mean_capacity_bps_hz", "std_error", "n_realizations", "seed")
POSES_HEADER = ("index", "qx", "qy", "qz", "alpha", "beta", "gamma", "frozen")
LAYOUTS = ("fpa", "ring", "poses")
EVAL_SCHEMES = SCHEMES + ("initial",)

EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3


class ConfigError(ValueError):
    """Bad configuration: missing file, unknown key or invalid value."""


@dataclass(frozen=True)
class SiteConfig:
    n_surfaces: int = 15
    rows: int = 2
    cols: int = 2
    d_min: float = 0.4
    feasible_radius: float = 1.5
    downtilt_deg: float = 10.0
    layout: str = "fpa"
    poses_file: str | None = None
    frozen: tuple = ()

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if self.layout == "poses" and not self.poses_file:
            raise ValueError("layout 'poses' needs poses_file")
        if self.n_surfaces < 1 or self.rows < 1 or self.cols < 1:
            raise ValueError("n_surfaces, rows and cols must be >= 1")
        if not self.d_min > 0 or not self.feasible_radius > self.d_min:
            raise ValueError("need feasible_radius > d_min > 0")
        object.__setattr__(self, "frozen", tuple(int(i) for i in self.frozen))
        bad = [i for i in self.frozen if not 0 <= i < self.n_surfaces]
        if bad:
            raise ValueError(f"frozen indices {bad} outside 0..{self.n_surfaces - 1}")


@dataclass(frozen=True)
class RunConfig:
    seed: int
    schemes: tuple
    powers_dbm: tuple
    n_realizations: int
    site: SiteConfig
    scenario: ScenarioSpec
    optimizer: OptimizerConfig
    fas_ma: FasMaConfig
    grid: DiscreteGrid | None


TOP_DEFAULTS = {
    "seed": 0,
    "schemes": list(SCHEMES),
    "powers_dbm": [-20.0, -15.0, -10.0, -5.0, 0.0],
    "n_realizations": 200,
}
# the optimizer seed is the run seed; it is not configurable separately
OPTIMIZER_EXCLUDED = ("master_seed",)


def _plain(value):
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    return value


def default_config() -> dict:
    """The default run configuration as a plain nested dict."""
    cfg = copy.deepcopy(TOP_DEFAULTS)
    cfg["site"] = _plain(SiteConfig())
    cfg["scenario"] = _plain(ScenarioSpec())
    opt = _plain(OptimizerConfig())
    for key in OPTIMIZER_EXCLUDED:
        opt.pop(key)
    cfg["optimizer"] = opt
    cfg["fas_ma"] = _plain(FasMaConfig())
    cfg["grid"] = None
    return cfg


def _check_type(path: str, value, default):
    if default is None:
        return value
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif isinstance(default, str):
        ok = isinstance(value, str)
    elif isinstance(default, (list, tuple)):
        ok = isinstance(value, (list, tuple))
    else:
        ok = True
    if not ok:
        raise ConfigError(f"config key '{path}': expected {type(default).__name__}, got {value!r}")
    return value


def _section(path: str, data, cls, nested=None, excluded=()):
    """Build dataclass ``cls`` from ``data`` with strict key and type checks."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"config key '{path}' must be a mapping")
    defaults = _plain(cls()) if cls is not DiscreteGrid else {}
    names = {f.name for f in dataclasses.fields(cls)} - set(excluded)
    kwargs = {}
    for key, value in data.items():
        full = f"{path}.{key}"
        if key not in names:
            raise ConfigError(f"unknown config key '{full}'")
        if nested and key in nested:
            value = nested[key](full, value)
        elif key in defaults:
            value = _check_type(full, value, defaults[key])
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section '{path}': {exc}") from exc


def _hotspots(path, value):
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"config key '{path}' must be a list of hotspots")
    out = []
    for i, h in enumerate(value):
        if isinstance(h, Hotspot):
            out.append(h)
            continue
        if not isinstance(h, dict):
            raise ConfigError(f"config key '{path}[{i}]' must be a mapping")
        names = {f.name for f in dataclasses.fields(Hotspot)}
        for key in h:
            if key not in names:
                raise ConfigError(f"unknown config key '{path}[{i}].{key}'")
        missing = names - set(h)
        if missing:
            raise ConfigError(f"config key '{path}[{i}]' is missing {sorted(missing)}")
        try:
            out.append(Hotspot(**h))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config key '{path}[{i}]': {exc}") from exc
    return tuple(out)


def _pattern(path, value):
    return _section(path, value, DirectionalPattern)


def build_config(raw: dict) -> RunConfig:
    """Validate a plain nested dict and build the typed run configuration."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a mapping")
    known = set(TOP_DEFAULTS) | {"site", "scenario", "optimizer", "fas_ma", "grid"}
    for key in raw:
        if key not in known:
            raise ConfigError(f"unknown config key '{key}'")
    top = {k: _check_type(k, raw.get(k, v), v) for k, v in TOP_DEFAULTS.items()}
    schemes = tuple(top["schemes"])
    bad = [s for s in schemes if s not in EVAL_SCHEMES]
    if bad or not schemes:
        raise ConfigError(f"config key 'schemes': choose a non-empty subset of {EVAL_SCHEMES}, got {list(schemes)}")
    powers = tuple(_check_type("powers_dbm", p, 0.0) for p in top["powers_dbm"])
    if not powers:
        raise ConfigError("config key 'powers_dbm' must not be empty")
    if top["n_realizations"] < 2:
        raise ConfigError("config key 'n_realizations' must be >= 2")
    if top["seed"] < 0:
        raise ConfigError("config key 'seed' must be non-negative")
    scenario = _section(
        "scenario", raw.get("scenario"), ScenarioSpec,
        nested={"hotspots": _hotspots, "pattern": _pattern},
    )
    optimizer = _section("optimizer", raw.get("optimizer"), OptimizerConfig, excluded=OPTIMIZER_EXCLUDED)
    grid = None if raw.get("grid") is None else _section("grid", raw["grid"], DiscreteGrid)
    return RunConfig(
        seed=top["seed"],
        schemes=schemes,
        powers_dbm=powers,
        n_realizations=top["n_realizations"],
        site=_section("site", raw.get("site"), SiteConfig),
        scenario=scenario,
        optimizer=replace(optimizer, master_seed=top["seed"]),
        fas_ma=_section("fas_ma", raw.get("fas_ma"), FasMaConfig),
        grid=grid,
    )


def apply_override(raw: dict, assignment: str) -> None:
    """Apply one ``dotted.key=value`` override in place."""
    key, sep, text = assignment.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {assignment!r}: cannot parse value") from exc
    parts = key.split(".")
    node = raw
    for part in parts[:-1]:
        if node.get(part) is None:
            node[part] = {}
        node = node[part]
        if not isinstance(node, dict):
            raise ConfigError(f"override {assignment!r}: '{part}' is not a section")
    node[parts[-1]] = value


def load_raw_config(path: str | None) -> dict:
    if path is None:
        return default_config()
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
    return {} if raw is None else raw


def config_hash(raw: dict) -> str:
    text = json.dumps(raw, sort_keys=True, default=repr, allow_nan=True)
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------- poses files


def _fmt(x) -> str:
    return repr(float(x))


def write_poses(path, poses) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSES_HEADER)
        for i, p in enumerate(poses):
            r = p.rotation
            w.writerow([i, *map(_fmt, p.center), _fmt(r.alpha), _fmt(r.beta), _fmt(r.gamma), int(p.frozen)])


def load_poses(path) -> list:
    """Read a poses file written by :func:`write_poses`."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"poses file not found: {path}")
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or tuple(rows[0]) != POSES_HEADER:
        raise ConfigError(f"poses file {path}: header must be {','.join(POSES_HEADER)}")
    poses = []
    for line, row in enumerate(rows[1:], start=2):
        try:
            if len(row) != len(POSES_HEADER) or int(row[0]) != len(poses):
                raise ValueError("bad column count or index")
            q = tuple(float(v) for v in row[1:4])
            rot = RotationAngles(*(float(v) for v in row[4:7]))
            frozen = {"0": False, "1": True}[row[7]]
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"poses file {path}, line {line}: {exc}") from exc
        poses.append(SurfacePose(q, rot, frozen))
    return poses


# ---------------------------------------------------------------- sites


def site_template(cfg: RunConfig) -> SiteGeometry:
    s = cfg.site
    return default_site(s.n_surfaces, s.rows, s.cols, cfg.scenario.wavelength, s.d_min, s.feasible_radius)


def initial_site(cfg: RunConfig) -> SiteGeometry:
    """The configured starting layout, with frozen flags applied."""
    template = site_template(cfg)
    s = cfg.site
    if s.layout == "poses":
        poses = load_poses(s.poses_file)
        if len(poses) != s.n_surfaces:
            raise ConfigError(f"poses file {s.poses_file} has {len(poses)} surfaces, site.n_surfaces is {s.n_surfaces}")
        site = template.with_surfaces(poses)
    else:
        try:
            site = fpa_three_sector(template, s.downtilt_deg)
        except ValueError as exc:
            if isinstance(exc, InfeasibleGeometryError):
                raise
            raise ConfigError(f"config key 'site.n_surfaces': {exc}") from exc
        if s.layout == "ring":
            batch = RealizationBatch.draw(cfg.scenario, cfg.seed, cfg.optimizer.mc_realizations)
            site = ring_layout(site, batch)
    if s.frozen:
        poses = [replace(p, frozen=True) if i in s.frozen else p for i, p in enumerate(site.surfaces)]
        site = site.with_surfaces(poses)
    report = check_constraints(site)
    if not report.feasible:
        raise InfeasibleGeometryError("initial site violates movement constraints:\n" + report.summary(), report)
    return site


# ---------------------------------------------------------------- outputs


class Outputs:
    def __init__(self, out_dir, command, raw, overrides, workers):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        self.hash = config_hash(raw)
        self.overrides = overrides
        self.workers = workers
        self.start = time.perf_counter()

    def manifest(self, csv_name: str, **fields) -> None:
        entries = {
            "command": self.command,
            "output": csv_name,
            "config_hash": self.hash,
            "version": __version__,
            **fields,
            "workers": self.workers,
            "overrides": ";".join(self.overrides),
            "duration_s": f"{time.perf_counter() - self.start:.3f}",
        }
        path = self.dir / (Path(csv_name).stem + ".manifest")
        path.write_text("".join(f"{k}={v}\n" for k, v in entries.items()))

    def write_csv(self, name: str, header, rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
        path = self.dir / name
        path.write_text(buf.getvalue())
        return path


def _estimate_rows(cmp, cfg: RunConfig) -> list:
    rows = []
    for p in cmp.powers_dbm:
        for s in cmp.schemes:
            e = cmp.estimate(s, p)
            rows.append([s, _fmt(p), _fmt(e.mean), _fmt(e.std_error), e.n_realizations, cfg.seed])
    return rows


def _progress(p, means):
    log.info("power %s dBm: %s", p, ", ".join(f"{k}={v:.3f}" for k, v in means.items()))


def _comparison(cfg: RunConfig, schemes, workers, extra_sites=None):
    return run_comparison(
        site_template(cfg),
        cfg.scenario,
        cfg.optimizer,
        cfg.fas_ma,
        cfg.powers_dbm,
        cfg.n_realizations,
        cfg.seed,
        workers=workers,
        downtilt_deg=cfg.site.downtilt_deg,
        log=_progress,
        schemes=schemes,
        extra_sites=extra_sites,
    )


def run_evaluate(cfg: RunConfig, out: Outputs) -> None:
    schemes = [s for s in cfg.schemes if s != "initial"]
    extra = {"initial": initial_site(cfg)} if "initial" in cfg.schemes else None
    cmp = _comparison(cfg, schemes, out.workers, extra)
    out.write_csv("evaluate.csv", CSV_HEADER, _estimate_rows(cmp, cfg))
    out.manifest("evaluate.csv", scheme=",".join(cmp.schemes), seed=cfg.seed)


def run_compare(cfg: RunConfig, out: Outputs) -> None:
    if set(cfg.schemes) != set(SCHEMES):
        raise ConfigError(f"config key 'schemes': compare needs exactly {list(SCHEMES)}")
    cmp = _comparison(cfg, SCHEMES, out.workers)
    out.write_csv("compare.csv", CSV_HEADER, _estimate_rows(cmp, cfg))
    rows = summary_rows(cmp)
    header = list(rows[0])
    body = [[r[k] if isinstance(r[k], str) else _fmt(r[k]) for k in header] for r in rows]
    out.write_csv("compare_summary.csv", header, body)
    paired = {f"seed.{s}": cfg.seed for s in SCHEMES}
    for name in ("compare.csv", "compare_summary.csv"):
        out.manifest(
            name, scheme=",".join(SCHEMES), seed=cfg.seed, training_seed=training_seed(cfg.seed), **paired
        )


def run_optimize(cfg: RunConfig, out: Outputs) -> None:
    site = initial_site(cfg)
    opt = cfg.optimizer
    if opt.regime == "continuous":
        trace = alternating_optimize(site, cfg.scenario, opt)
    else:
        if cfg.grid is None:
            raise ConfigError(f"config key 'grid' is required for regime {opt.regime!r}")
        if opt.regime == "discrete":
            trace = relax_and_quantize(site, cfg.scenario, opt, cfg.grid)
        else:
            trace = csm_optimize(
                site, cfg.scenario, cfg.grid, opt.csm_budget, cfg.seed, opt.csm_realizations_per_sample
            )
    write_poses(out.dir / "poses.csv", trace.poses)
    trace_rows = [[i, _fmt(v)] for i, v in enumerate(trace.objectives)]
    out.write_csv("trace.csv", ("iteration", "objective"), trace_rows)
    info = dict(
        scheme=opt.regime, seed=cfg.seed, final_objective=_fmt(trace.estimate.mean),
        n_realizations=trace.estimate.n_realizations, accepted_moves=len(trace.moves),
    )
    out.manifest("poses.csv", **info)
    out.manifest("trace.csv", **info)


def run_gen_scenario(out_dir: str | None) -> None:
    text = yaml.safe_dump(default_config(), sort_keys=False)
    if out_dir is None:
        sys.stdout.write(text)
    else:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.yaml").write_text(text)


COMMANDS = {"evaluate": run_evaluate, "compare": run_compare, "optimize": run_optimize}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sixdma", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("evaluate", "compare", "optimize", "gen-scenario"):
        p = sub.add_parser(name)
        p.add_argument("--out", default=None if name == "gen-scenario" else ".", help="output directory")
        if name == "gen-scenario":
            continue
        p.add_argument("--config", help="YAML run configuration (defaults if omitted)")
        p.add_argument("--seed", type=int, help="master seed, overrides the config")
        p.add_argument("--workers", type=int, default=1, help="worker processes (never changes output)")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
        p.add_argument("-q", "--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "gen-scenario":
        run_gen_scenario(args.out)
        return 0
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(asctime)s %(message)s",
        stream=sys.stderr,
    )
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        raw = load_raw_config(args.config)
        for assignment in args.overrides:
            apply_override(raw, assignment)
        if args.seed is not None:
            raw["seed"] = args.seed
        cfg = build_config(raw)
        out = Outputs(args.out, args.command, raw, args.overrides, args.workers)
        COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"sixdma: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleGeometryError as exc:
        print(f"sixdma: infeasible geometry: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    return 0


if __name__ == "__main__":
    sys.exit(main())
