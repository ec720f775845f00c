"""Config-driven experiment runner.

Configs are INI files. Physical quantities are read in the unit system named
by ``[physics] units``: ``natural`` (values used as given) or ``si``
(kilograms, metres, seconds, J s), which is converted internally to units
with hbar = mass = L0 = 1. Output times are written back in config units.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import metadata
from pathlib import Path

import numpy as np

from . import coarse_graining as cg
from .dynamics import DEFAULT_TOL, integrate_trajectory, retarded_time, scale_factor
from .ensembles import build_rho1, equilibrium, load_grid, rho0, rho2
from .exceptions import ConfigError, PilotBoxError
from .wavefunction import PhysParams, Superposition, appendix_superposition

log = logging.getLogger(__name__)

HBAR_SI = 1.054571817e-34
ESTIMATORS = ("backward", "forward", "tilde")
DESK_D, DESK_P = 8, 100_000
FULL_D, FULL_P = 32, 4_000_000

_EXAMPLE = """
[run]
seed = 2024
estimators = backward,forward
[physics]
units = si
hbar = 1.054571817e-34
mass = 1e-30
L0 = 1.0
v_expand = 1.0
[superposition]
preset = appendix
[coarse_graining]
eps = 0.05
n_max = 20
tol = 1e-8
"""

_NATURAL = """
[physics]
units = natural
hbar = 1
mass = 1
L0 = 1
v_expand = 1
"""

PRESETS = {
    "example1": _EXAMPLE + "[distribution]\nkind = rho0\n",
    "example2": _EXAMPLE + "[distribution]\nkind = rho1\ncg_length = 0.0625\n",
    "example3": _EXAMPLE + "[distribution]\nkind = rho2\nmix_weight = 0.1\n",
    "example1-natural": _EXAMPLE + _NATURAL + "[distribution]\nkind = rho0\n",
    "example2-natural": _EXAMPLE + _NATURAL + "[distribution]\nkind = rho1\ncg_length = 0.0625\n",
    "example3-natural": _EXAMPLE + _NATURAL + "[distribution]\nkind = rho2\nmix_weight = 0.1\n",
    "fig1": """
[physics]
units = natural
[superposition]
preset = appendix
[trajectories]
x0 = 0.3, 0.6
cases = 0.1:10, 1:1, 10:0.1
tol = 1e-10
round_trip = true
""",
    "fig10": """
[physics]
units = si
mass = 1e-30
L0 = 1.0
v_expand = 1.0
[tau]
t_max = 10
steps = 200
""",
}

PRESET_HELP = {
    "example1": "rho0 (ground-state density), paper parameters in SI",
    "example2": "rho1 (equilibrium coarse-grained at 1/16), paper parameters in SI",
    "example3": "rho2 = 0.9 |psi|^2 + 0.1 rho0, paper parameters in SI",
    "example1-natural": "example1 with hbar = m = L0 = v_e = 1",
    "example2-natural": "example2 with hbar = m = L0 = v_e = 1",
    "example3-natural": "example3 with hbar = m = L0 = v_e = 1",
    "fig1": "three trajectories from one point with v_e * t_f = L0",
    "fig10": "retarded time table tau(t) = L0 t / L(t)",
}


@dataclass(frozen=True)
class Units:
    """Scales converting config values to internal units: internal = config / scale."""

    name: str = "natural"
    length: float = 1.0
    time: float = 1.0

    @property
    def velocity(self) -> float:
        return self.length / self.time


@dataclass
class DistributionSpec:
    kind: str = "rho0"
    cg_length: float = 1 / 16
    mix_weight: float = 0.1
    file: str | None = None


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run. Lengths and times are internal units."""

    params: PhysParams = field(default_factory=PhysParams)
    units: Units = field(default_factory=Units)
    superposition: Superposition | None = None
    distribution: DistributionSpec = field(default_factory=DistributionSpec)
    eps: float = 0.05
    D: int = DESK_D
    P: int = DESK_P
    n_max: int = 20
    tol: float = DEFAULT_TOL
    seed: int = 0
    estimators: tuple = ("backward", "forward")
    outputs: str = "out"
    name: str = "custom"
    trajectories: dict = field(default_factory=dict)
    tau: dict = field(default_factory=dict)
    write_cells: bool = False

    def __post_init__(self):
        if self.superposition is None:
            self.superposition = appendix_superposition(self.params)

    def validate(self):
        problems = []
        p = self.params
        if self.eps <= 0:
            problems.append("eps must be positive")
        elif abs(p.L0 / self.eps - round(p.L0 / self.eps)) > 1e-9 * p.L0 / self.eps:
            problems.append(f"L0 / eps = {p.L0 / self.eps} is not an integer")
        if int(self.D) != self.D or self.D < 1:
            problems.append("D must be a positive integer")
        if "forward" in self.estimators and (int(self.P) != self.P or self.P < 1):
            problems.append("P must be a positive integer when forward tracking is selected")
        if int(self.n_max) != self.n_max or self.n_max < 0:
            problems.append("n_max must be a non-negative integer")
        if not (self.tol > 0):
            problems.append("tol must be positive")
        if self.n_max > 0 and p.v_expand <= 0:
            problems.append("v_expand must be positive to define sample times beyond n = 0")
        bad = [e for e in self.estimators if e not in ESTIMATORS]
        if bad:
            problems.append(f"unknown estimators {bad}; choose from {ESTIMATORS}")
        d = self.distribution
        if d.kind not in ("equilibrium", "rho0", "rho1", "rho2", "grid"):
            problems.append(f"unknown distribution kind {d.kind!r}")
        if d.kind == "rho1":
            r = p.L0 / d.cg_length if d.cg_length > 0 else math.nan
            if not (r >= 1 and abs(r - round(r)) <= 1e-9 * r):
                problems.append(f"rho1 cg_length {d.cg_length} does not divide L0")
        if d.kind == "rho2" and not (0 <= d.mix_weight <= 1):
            problems.append("mix_weight must lie in [0, 1]")
        if d.kind == "grid" and not d.file:
            problems.append("grid distribution needs a file")
        if problems:
            raise ConfigError(problems)
        return self

    def build_distribution(self):
        sup, d = self.superposition, self.distribution
        if d.kind == "equilibrium":
            return equilibrium(sup)
        if d.kind == "rho0":
            return rho0(sup)
        if d.kind == "rho1":
            return build_rho1(sup, 0.0, d.cg_length)
        if d.kind == "rho2":
            return rho2(sup, d.mix_weight)
        return load_grid(d.file, sup, length_scale=self.units.length)

    def sample_times(self):
        if self.n_max == 0:
            return np.array([0.0])
        return cg.sample_times(self.eps, self.params.v_expand, self.n_max)

    def describe(self) -> dict:
        out = {
            "name": self.name,
            "units": asdict(self.units),
            "params_internal": asdict(self.params),
            "superposition": self.superposition.to_table(),
            "distribution": asdict(self.distribution),
            "eps": self.eps, "D": self.D, "P": self.P, "n_max": self.n_max, "tol": self.tol,
            "seed": self.seed, "estimators": list(self.estimators),
        }
        return out


def _floats(text):
    return [float(v) for v in text.replace(",", " ").split()]


def parse_config(text: str, name="custom", base_dir=".") -> ExperimentConfig:
    """Build an ExperimentConfig from INI text, collecting every violation."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), strict=False)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}") from exc
    problems = []

    def get(section, key, conv=str, default=None):
        if not cp.has_option(section, key):
            return default
        raw = cp.get(section, key)
        try:
            return conv(raw)
        except ValueError:
            problems.append(f"[{section}] {key} = {raw!r} is not a valid {conv.__name__}")
            return default

    units_name = get("physics", "units", str, "natural").strip().lower()
    if units_name not in ("natural", "si"):
        problems.append(f"[physics] units must be 'natural' or 'si', got {units_name!r}")
        units_name = "natural"
    hbar = get("physics", "hbar", float, HBAR_SI if units_name == "si" else 1.0)
    mass = get("physics", "mass", float, 1.0)
    L0 = get("physics", "L0", float, 1.0)
    v = get("physics", "v_expand", float, 1.0)
    for label, val in (("hbar", hbar), ("mass", mass), ("L0", L0)):
        if not (val > 0):
            problems.append(f"[physics] {label} must be positive")
    if not (v >= 0):
        problems.append("[physics] v_expand must be non-negative")
    if problems:
        raise ConfigError(problems)
    if units_name == "si":
        units = Units("si", length=L0, time=mass * L0 ** 2 / hbar)
        params = PhysParams(1.0, 1.0, 1.0, v / units.velocity)
    else:
        units = Units()
        params = PhysParams(hbar, mass, L0, v)

    sup = None
    preset = get("superposition", "preset", str, "appendix")
    if cp.has_option("superposition", "table"):
        path = Path(base_dir) / cp.get("superposition", "table")
        try:
            sup = Superposition.from_table(path.read_text(), params)
        except (OSError, ConfigError) as exc:
            problems.append(f"[superposition] table: {exc}")
    elif cp.has_option("superposition", "N"):
        N = get("superposition", "N", int, 1)
        sup = Superposition.random(N, params, seed=get("run", "seed", int, 0))
    elif preset != "appendix":
        problems.append(f"[superposition] unknown preset {preset!r}")

    dist = DistributionSpec(
        kind=get("distribution", "kind", str, "rho0"),
        cg_length=get("distribution", "cg_length", float, 1 / 16) / units.length,
        mix_weight=get("distribution", "mix_weight", float, 0.1),
        file=str(Path(base_dir) / cp.get("distribution", "file")) if cp.has_option("distribution", "file") else None,
    )
    estimators = tuple(e.strip() for e in get("run", "estimators", str, "backward,forward").split(",") if e.strip())
    estimators = tuple("backward" if e == "back" else e for e in estimators)
    traj = {}
    if cp.has_section("trajectories"):
        x0 = _floats(cp.get("trajectories", "x0", fallback="0.3 0.6"))
        cases = []
        for item in cp.get("trajectories", "cases", fallback="1:1").split(","):
            if item.strip():
                ve, tf = (float(s) for s in item.split(":"))
                cases.append((ve / units.velocity, tf / units.time))
        traj = {"x0": [c / units.length for c in x0], "cases": cases,
                "tol": get("trajectories", "tol", float, 1e-10),
                "round_trip": cp.getboolean("trajectories", "round_trip", fallback=False)}
    tau = {}
    if cp.has_section("tau"):
        tau = {"t_max": get("tau", "t_max", float, 10.0) / units.time, "steps": get("tau", "steps", int, 100)}
    cfg = ExperimentConfig(
        params=params, units=units, superposition=sup, distribution=dist,
        eps=get("coarse_graining", "eps", float, 0.05) / units.length,
        D=get("coarse_graining", "D", int, DESK_D),
        P=get("coarse_graining", "P", int, DESK_P),
        n_max=get("coarse_graining", "n_max", int, 20),
        tol=get("coarse_graining", "tol", float, DEFAULT_TOL),
        seed=get("run", "seed", int, 0),
        estimators=estimators,
        outputs=get("run", "outputs", str, "out"),
        name=name, trajectories=traj, tau=tau,
        write_cells=cp.getboolean("run", "cells", fallback=False),
    )
    if problems:
        raise ConfigError(problems)
    return cfg.validate()


def load_config(source, *, seed=None, out=None, full_scale=False, estimators=None) -> ExperimentConfig:
    """Load a preset name or config file and apply command-line overrides."""
    if str(source) in PRESETS:
        cfg = parse_config(PRESETS[str(source)], name=str(source))
    else:
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"{source} is neither a preset ({', '.join(PRESETS)}) nor a readable file")
        cfg = parse_config(path.read_text(), name=path.stem, base_dir=path.parent)
    if seed is not None:
        cfg.seed = int(seed)
    if out is not None:
        cfg.outputs = str(out)
    if full_scale:
        cfg.D, cfg.P = FULL_D, FULL_P
    if estimators is not None:
        cfg.estimators = tuple("backward" if e == "back" else e for e in estimators)
    return cfg.validate()


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def _write_manifest(out_dir: Path, cfg, timings, files, failures, extra=None):
    manifest = {
        "config": cfg.describe(),
        "seed": cfg.seed,
        "code_version": _version(),
        "timings_s": timings,
        "failures": failures,
        "files": {str(Path(f).relative_to(out_dir)): _sha256(f) for f in files},
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _cached_backtrack(cache, key, sup, t, grid, tol, n_jobs):
    bt = None if cache is None else cache.get(key)
    if bt is None or not bt.matches(grid, t, 0.0, tol):
        bt = cg.backtrack_lattice(sup, t, grid, 0.0, tol, n_jobs)
        if cache is not None:
            cache[key] = bt
    return bt


def run_experiment(cfg: ExperimentConfig, n_jobs=1, backtracks: dict | None = None) -> list[cg.CGReport]:
    """Run the selected estimators at every sample time and write outputs.

    Writes ``report.csv`` (and ``tilde.csv`` when selected), the
    superposition table, optional per-cell dumps, and ``manifest.json``.
    A failing estimator leaves the other columns intact and is recorded in
    the manifest.

    Lattice back-tracks do not depend on the initial distribution. Pass the
    same ``backtracks`` dict to runs that share superposition, grid and
    tolerance to compute them once; entries whose grid, time or tolerance
    differ are recomputed. The caller must not mix superpositions in one dict.
    """
    cfg.validate()
    out_dir = Path(cfg.outputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    sup, p = cfg.superposition, cfg.params
    dist = cfg.build_distribution()
    times = cfg.sample_times()
    grids = [cg.grid_at(p, cfg.eps, t, cfg.D) for t in times]
    reports = [cg.CGReport(t=float(t), n=n) for n, t in enumerate(times)]
    timings, failures = {}, []

    if "backward" in cfg.estimators:
        start = time.perf_counter()
        for n, (t, grid) in enumerate(zip(times, grids)):
            try:
                bt = _cached_backtrack(backtracks, ("backward", n), sup, t, grid, cfg.tol, n_jobs)
                reports[n].merge(cg.backtrack_estimate(sup, dist, t, grid, cfg.tol, backtrack=bt))
            except PilotBoxError as exc:
                failures.append({"estimator": "backward", "n": n, "error": str(exc)})
                log.warning("back-tracking failed at n=%d: %s", n, exc)
            log.info("n=%d t=%.6g h_back=%.6g", n, t, reports[n].h_back)
        timings["backward"] = time.perf_counter() - start

    if "forward" in cfg.estimators:
        start = time.perf_counter()
        try:
            fwd = cg.forward_estimates(sup, dist, times, grids, cfg.P, cfg.seed, cfg.tol, n_jobs=n_jobs)
            for r, fr in zip(reports, fwd):
                r.merge(fr)
        except PilotBoxError as exc:
            failures.append({"estimator": "forward", "error": str(exc)})
            log.warning("forward tracking failed: %s", exc)
        timings["forward"] = time.perf_counter() - start

    files = []
    report_path = out_dir / "report.csv"
    cg.write_reports(report_path, reports, time_scale=cfg.units.time)
    files.append(report_path)

    extra = {}
    if "tilde" in cfg.estimators:
        start = time.perf_counter()
        tilde_path = out_dir / "tilde.csv"
        with open(tilde_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "t", "tau", "h_tilde"])
            for n, t in enumerate(times):
                try:
                    tg = cg.tilde_grid(p, t, cfg.eps, cfg.D)
                    bt = _cached_backtrack(backtracks, ("tilde", n), sup, t, tg, cfg.tol, n_jobs)
                    ht = cg.h_tilde(sup, dist, t, cfg.eps, cfg.D, cfg.tol, backtrack=bt)
                except PilotBoxError as exc:
                    failures.append({"estimator": "tilde", "n": n, "error": str(exc)})
                    ht = math.nan
                tau = float(retarded_time(t, p))
                w.writerow([n, repr(float(t) * cfg.units.time), repr(tau * cfg.units.time), repr(ht)])
        files.append(tilde_path)
        timings["tilde"] = time.perf_counter() - start

    if cfg.write_cells:
        cell_dir = out_dir / "cells"
        cell_dir.mkdir(exist_ok=True)
        for r in reports:
            if r.eq_cells is not None:
                path = cell_dir / f"cells_{r.n:03d}.csv"
                cg.write_cells(path, r)
                files.append(path)

    sup_path = out_dir / "superposition.txt"
    sup_path.write_text(sup.to_table())
    files.append(sup_path)
    if not math.isnan(reports[0].h_back) and not math.isnan(reports[-1].h_back) and reports[0].h_back > 0:
        extra["h_back_relative_increase"] = reports[-1].h_back / reports[0].h_back - 1.0
    _write_manifest(out_dir, cfg, timings, files, failures, extra)
    return reports


def run_trajectories(cfg: ExperimentConfig, cases=None, x0=None, tol=None, round_trip=None):
    """Integrate one trajectory per (v_e, t_f) case from a shared start point.

    Returns a list of dicts with the path, output file and (when requested)
    the round-trip error. Failures are recorded per case.
    """
    spec = cfg.trajectories or {}
    cases = cases if cases is not None else spec.get("cases", [(cfg.params.v_expand, 1.0)])
    x0 = np.asarray(x0 if x0 is not None else spec.get("x0", [0.3, 0.6]), dtype=float)
    tol = tol if tol is not None else spec.get("tol", cfg.tol)
    round_trip = round_trip if round_trip is not None else spec.get("round_trip", False)
    out_dir = Path(cfg.outputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    results, files, failures = [], [], []
    for i, (ve, tf) in enumerate(cases):
        sup = cfg.superposition.with_params(replace(cfg.params, v_expand=ve))
        entry = {"case": i, "v_expand": ve, "t_final": tf, "final_side": float(sup.params.box_length(tf))}
        try:
            path = integrate_trajectory(sup, x0, 0.0, tf, tol)
            fname = out_dir / f"trajectory_{i}.csv"
            scaled = replace(path, times=path.times * cfg.units.time, positions=path.positions * cfg.units.length)
            scaled.to_csv(fname)
            files.append(fname)
            entry["path"] = path
            entry["file"] = str(fname)
            if round_trip:
                back = integrate_trajectory(sup, path.positions[-1], tf, 0.0, tol)
                entry["round_trip_error"] = float(np.max(np.abs(back.positions[-1] - x0)))
        except PilotBoxError as exc:
            failures.append({"case": i, "error": str(exc)})
            entry["error"] = str(exc)
        results.append(entry)
    summary = [{k: v for k, v in r.items() if k != "path"} for r in results]
    _write_manifest(out_dir, cfg, {}, files, failures, {"trajectories": summary})
    return results


def run_tau_table(params: PhysParams, t_max, steps, path=None, time_scale=1.0):
    """Table of (t, tau(t)) on ``steps`` + 1 equally spaced times in [0, t_max]."""
    if not (t_max > 0) or int(steps) != steps or steps < 1:
        raise ConfigError("t_max must be positive and steps a positive integer")
    t = np.linspace(0.0, t_max, int(steps) + 1)
    tau = retarded_time(t, params)
    if path is not None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "tau"])
            for a, b in zip(t, tau):
                w.writerow([repr(float(a) * time_scale), repr(float(b) * time_scale)])
    return t, tau


def run_tau(cfg: ExperimentConfig):
    spec = cfg.tau or {"t_max": 10.0 / cfg.units.time, "steps": 100}
    out_dir = Path(cfg.outputs)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "tau.csv"
    t, tau = run_tau_table(cfg.params, spec["t_max"], spec["steps"], path, cfg.units.time)
    _write_manifest(out_dir, cfg, {}, [path], [],
                    {"tau_limit": cfg.params.L0 / cfg.params.v_expand * cfg.units.time
                     if cfg.params.v_expand > 0 else None})
    return t, tau


__all__ = [
    "ExperimentConfig", "DistributionSpec", "Units", "PRESETS", "PRESET_HELP", "parse_config", "load_config",
    "run_experiment", "run_trajectories", "run_tau_table", "run_tau", "scale_factor",
]
