"""Configuration-driven pipeline: simulate, fit, certify, Monte Carlo, export.

Every stage writes into one output directory. Expensive artifacts (the
value grid and the fitted polynomial) are cached under ``cache/`` by a
hash of everything they depend on, so re-running a configuration skips
the simulation. The JSON report echoes the full configuration including
defaults; only its ``runtime`` entry (wall-clock times and cache hits)
differs between otherwise identical runs.
"""

from __future__ import annotations

import json
import logging
import sys
import time
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from . import __version__
from .artifacts import atomic_write_text, digest
from .bernstein import BernsteinPoly, fit
from .certify import CertConfig, RoaCertificate, certify_union, monte_carlo_roa, validate
from .converse import ConverseParams, ValueGrid, build_value_grid, grid_key
from .errors import ConfigError, FormatError, RoaError
from .export import Plane, default_plane, export_contours, export_grid_csv
from .ode import IntegratorConfig
from .systems import NORM_SCALINGS, BUILTIN_NAMES, Box, ScalarField, SystemBundle, builtin, read_polynomial

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

STAGES = ("simulate", "fit", "certify", "mc", "export")
# report entry written by each stage
_SECTION = {"simulate": "dataset", "fit": "polynomial", "certify": "certificate", "mc": "validation", "export": "exports"}
REPORT_NAME = "report.json"
REPORT_SCHEMA = 1

_TOP_KEYS = {"system", "box", "stages", "out", "fit", "dataset", "integrator", "certify", "v2", "export"}
_SECTION_KEYS = {
    "box": {"lower", "upper"},
    "fit": {"lam", "beta", "degree", "norm_scaling"},
    "dataset": {"undetermined", "max_undetermined", "batch_size"},
    "integrator": {"rel_tol", "abs_tol", "dt_out", "t_max", "eps_conv", "r_esc"},
    "certify": {"scan_resolution", "bisect_tol", "max_bisect_steps", "margin", "seed", "mc_samples"},
    "v2": {"candidate", "file", "none"},
    "export": {"resolution", "axes", "fixed"},
}


class StageError(RoaError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    """Resolved settings of one pipeline run."""

    system: str
    box: Box
    params: ConverseParams
    degree: int
    norm_scaling: str
    integrator: IntegratorConfig
    cert: CertConfig
    undetermined: str = "one"
    max_undetermined: float = 0.01
    batch_size: int = 4096
    v2_candidate: Optional[str] = None
    v2_file: Optional[Path] = None
    v2_none: bool = False
    export_resolution: int = 201
    export_axes: Optional[tuple] = None
    export_fixed: Optional[tuple] = None
    stages: tuple = STAGES
    out: Path = Path("roacert-out")
    bundle: Optional[SystemBundle] = dc_field(default=None, repr=False, compare=False)

    def echo(self) -> dict:
        """Every setting, including defaults, as plain JSON data."""
        return {
            "system": self.system,
            "box": self.box.as_dict(),
            "fit": {
                "lam": float(self.params.lam),
                "beta": int(self.params.beta),
                "degree": int(self.degree),
                "norm_scaling": self.norm_scaling,
            },
            "dataset": {
                "undetermined": self.undetermined,
                "max_undetermined": float(self.max_undetermined),
                "batch_size": int(self.batch_size),
            },
            "integrator": self.integrator.as_dict(),
            "certify": self.cert.as_dict(self.box.dim),
            "v2": {
                "candidate": self.v2_candidate,
                "file": None if self.v2_file is None else str(self.v2_file),
                "none": bool(self.v2_none),
            },
            "export": {
                "resolution": int(self.export_resolution),
                "axes": list(self.plane().axes),
                "fixed": None if self.export_fixed is None else list(self.export_fixed),
            },
            "stages": list(self.stages),
        }

    def plane(self) -> Plane:
        if self.export_axes is None:
            plane = default_plane(self.box)
            return plane if self.export_fixed is None else replace(plane, fixed=self.export_fixed)
        return Plane(self.box, tuple(self.export_axes), self.export_fixed)

    def v2(self) -> Optional[ScalarField]:
        if self.v2_none:
            return None
        if self.v2_file is not None:
            return read_polynomial(self.v2_file)
        if self.v2_candidate is not None:
            return self.bundle.v2_candidates[self.v2_candidate]
        return self.bundle.default_v2()


def _check_keys(section: str, got: dict, allowed: set) -> None:
    unknown = sorted(set(got) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


def load_config_file(path) -> dict:
    """Parse a TOML configuration file into a mapping."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"configuration file {path} does not exist") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def resolve_config(raw: dict, base_dir=".", overrides: Optional[dict] = None) -> PipelineConfig:
    """Validate a configuration mapping and fill in the system defaults.

    ``overrides`` carries command-line values (``system``, ``out``,
    ``seed``, ``resolution``, ``stages``). Everything is validated here, so
    a bad setting fails before any computation.
    """
    try:
        return _resolve(raw, base_dir, overrides)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration value: {exc}") from None


def _resolve(raw: dict, base_dir, overrides: Optional[dict]) -> PipelineConfig:
    raw = dict(raw)
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    _check_keys("top level", raw, _TOP_KEYS)
    for key, allowed in _SECTION_KEYS.items():
        if key in raw:
            if not isinstance(raw[key], dict):
                raise ConfigError(f"[{key}] must be a table")
            _check_keys(key, raw[key], allowed)
    base_dir = Path(base_dir)

    name = overrides.get("system", raw.get("system"))
    if name is None:
        raise ConfigError("no system given; set 'system' or pass --system")
    if name not in BUILTIN_NAMES:
        raise ConfigError(f"unknown system {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    bundle = builtin(name)

    box = bundle.box
    if "box" in raw:
        try:
            box = Box(raw["box"]["lower"], raw["box"]["upper"])
        except KeyError as exc:
            raise ConfigError(f"[box] needs both 'lower' and 'upper' ({exc.args[0]} missing)") from None
        if box.dim != bundle.dim:
            raise ConfigError(f"box has dimension {box.dim}, system {name} has {bundle.dim}")
        if not np.all((box.lower < 0) & (box.upper > 0)):
            raise ConfigError("the box must contain the equilibrium (the origin) strictly inside")

    fit_raw = raw.get("fit", {})
    lam0, beta0, d0 = bundle.recommended_fit
    params = ConverseParams(float(fit_raw.get("lam", lam0)), fit_raw.get("beta", beta0))
    degree = fit_raw.get("degree", d0)
    if not isinstance(degree, int) or degree < 1:
        raise ConfigError(f"fit.degree must be a positive integer, got {degree!r}")
    norm_scaling = fit_raw.get("norm_scaling", "box")
    if norm_scaling not in NORM_SCALINGS:
        raise ConfigError(f"fit.norm_scaling must be one of {NORM_SCALINGS}")

    integ_raw = dict(raw.get("integrator", {}))
    integ_raw.setdefault("t_max", bundle.t_max)
    integrator = IntegratorConfig.for_box(box, **{k: float(v) for k, v in integ_raw.items()})

    cert_raw = dict(raw.get("certify", {}))
    if "seed" in overrides:
        cert_raw["seed"] = overrides["seed"]
    if "resolution" in overrides:
        cert_raw["scan_resolution"] = overrides["resolution"]
    cert = CertConfig(norm_scaling=norm_scaling, **cert_raw)

    ds = raw.get("dataset", {})
    undetermined = ds.get("undetermined", "one")
    if undetermined not in ("one", "truncated"):
        raise ConfigError("dataset.undetermined must be 'one' or 'truncated'")
    max_und = float(ds.get("max_undetermined", bundle.max_undetermined))
    if not 0 <= max_und <= 1:
        raise ConfigError("dataset.max_undetermined must lie in [0, 1]")
    batch_size = int(ds.get("batch_size", 4096))
    if batch_size < 1:
        raise ConfigError("dataset.batch_size must be positive")

    v2 = raw.get("v2", {})
    if sum(k in v2 for k in ("candidate", "file", "none")) > 1:
        raise ConfigError("[v2] accepts only one of 'candidate', 'file', 'none'")
    v2_candidate = v2.get("candidate")
    if v2_candidate is not None and v2_candidate not in bundle.v2_candidates:
        raise ConfigError(
            f"unknown V2 candidate {v2_candidate!r} for {name}; choose from {', '.join(bundle.v2_candidates)}"
        )
    v2_file = None
    if "file" in v2:
        v2_file = (base_dir / v2["file"]).resolve()
        if not v2_file.exists():
            raise ConfigError(f"V2 coefficient file {v2_file} does not exist")
    v2_none = bool(v2.get("none", False))

    ex = raw.get("export", {})
    export_resolution = int(ex.get("resolution", 201))
    if export_resolution < 2:
        raise ConfigError("export.resolution must be at least 2")
    export_axes = tuple(int(a) for a in ex["axes"]) if "axes" in ex else None
    export_fixed = tuple(float(v) for v in ex["fixed"]) if "fixed" in ex else None

    stages = overrides.get("stages", raw.get("stages", STAGES))
    stages = tuple(stages)
    bad = [s for s in stages if s not in STAGES]
    if bad:
        raise ConfigError(f"unknown stage(s) {bad}; choose from {STAGES}")
    out = Path(overrides.get("out", raw.get("out", "roacert-out")))
    if not out.is_absolute() and "out" not in overrides:
        out = base_dir / out

    cfg = PipelineConfig(
        system=name,
        box=box,
        params=params,
        degree=int(degree),
        norm_scaling=norm_scaling,
        integrator=integrator,
        cert=cert,
        undetermined=undetermined,
        max_undetermined=max_und,
        batch_size=batch_size,
        v2_candidate=v2_candidate,
        v2_file=v2_file,
        v2_none=v2_none,
        export_resolution=export_resolution,
        export_axes=export_axes,
        export_fixed=export_fixed,
        stages=stages,
        out=out,
        bundle=bundle,
    )
    cfg.plane()  # validates the export plane
    return cfg


def _stage_closure(stages) -> List[str]:
    """Requested stages plus their prerequisites, in pipeline order."""
    need = set(stages)
    if need & {"fit", "certify", "mc", "export"}:
        need |= {"simulate", "fit"}
    if need & {"mc", "export"}:
        need.add("certify")
    return [s for s in STAGES if s in need]


class Pipeline:
    """Runs the stages of one :class:`PipelineConfig`."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.bundle = cfg.bundle or builtin(cfg.system)
        self.grid: Optional[ValueGrid] = None
        self.poly: Optional[BernsteinPoly] = None
        self.cert: Optional[RoaCertificate] = None
        self.report: Dict[str, Any] = {}
        self.timing: Dict[str, float] = {}
        self.cache_hits: Dict[str, bool] = {}

    @property
    def cache_dir(self) -> Path:
        return self.cfg.out / "cache"

    def grid_key(self) -> str:
        c = self.cfg
        return grid_key(self.bundle.field.name, c.box, c.degree, c.params, c.integrator, c.norm_scaling, c.undetermined)

    def _rel(self, path: Path) -> str:
        return path.relative_to(self.cfg.out).as_posix()

    # stages

    def simulate(self) -> dict:
        c = self.cfg
        key = self.grid_key()
        path = self.cache_dir / f"grid-{key[:16]}.roa"
        grid = None
        if path.exists():
            try:
                grid = ValueGrid.load(path)
            except (FormatError, KeyError, ValueError) as exc:
                log.warning("ignoring unreadable cache %s: %s", path, exc)
            if grid is not None and grid.key() != key:
                grid = None
        self.cache_hits["simulate"] = grid is not None
        if grid is None:
            grid = build_value_grid(
                self.bundle.field,
                c.box,
                c.degree,
                c.params,
                c.integrator,
                max_undetermined=c.max_undetermined,
                undetermined=c.undetermined,
                norm_scaling=c.norm_scaling,
                batch_size=c.batch_size,
            )
            grid.save(path)
        self.grid = grid
        counts = {s: int(np.sum(grid.statuses == v)) for s, v in (("undetermined", 0), ("converged", 1), ("escaped", 2))}
        return {
            "key": key,
            "file": self._rel(path),
            "nodes": int(grid.values.size),
            "values_sha256": digest(grid.values),
            "statuses": counts,
        }

    def fit(self) -> dict:
        key = digest({"grid": self.grid.key(), "values": digest(self.grid.values)})
        path = self.cache_dir / f"poly-{key[:16]}.roa"
        poly = None
        if path.exists():
            try:
                poly = BernsteinPoly.load(path)
            except (FormatError, KeyError, ValueError) as exc:
                log.warning("ignoring unreadable cache %s: %s", path, exc)
            if poly is not None and not np.array_equal(poly.coeffs, self.grid.values):
                poly = None
        self.cache_hits["fit"] = poly is not None
        if poly is None:
            poly = fit(self.grid)
            poly.save(path)
        self.poly = poly
        return {
            "file": self._rel(path),
            "degree": poly.degree,
            "dim": poly.dim,
            "coeffs_sha256": digest(np.asarray(poly.coeffs)),
        }

    def certify(self) -> dict:
        c = self.cfg
        V2 = c.v2()
        self.cert = certify_union(self.poly, V2, self.bundle.field, c.box, c.cert)
        out = self.cert.as_dict()
        out["v2"] = None if V2 is None else V2.describe()
        return out

    def mc(self) -> dict:
        c = self.cfg
        mc = monte_carlo_roa(self.bundle.field, c.box, c.cert, c.integrator)
        rep = validate(self.cert, mc, include_uncertified=self.cert.v1_uncertified)
        out = {"seed": c.cert.seed, "samples": int(len(mc.points)), "counts": mc.counts()}
        out.update(rep.as_dict())
        out["uncertified_region"] = bool(self.cert.v1_uncertified and not self.cert.certified)
        return out

    def export(self) -> dict:
        c = self.cfg
        plane = c.plane()
        V2 = self.cert.V2
        files = {}
        path = c.out / "grid.csv"
        rows = export_grid_csv(path, plane, c.export_resolution, self.poly, V2, self.bundle.field)
        files["grid"] = {"file": self._rel(path), "rows": rows}
        levels = []
        if self.cert.gamma2 is not None:
            levels.append(("v1", self.poly, self.cert.gamma2))
        if self.cert.gamma3 is not None and V2 is not None:
            levels.append(("v2", V2, self.cert.gamma3))
        for tag, V, level in levels:
            path = c.out / f"contour_{tag}.csv"
            cs = export_contours(path, V, level, plane, c.export_resolution)
            files[f"contour_{tag}"] = {
                "file": self._rel(path),
                "level": float(level),
                "polylines": len(cs.polylines),
                "empty_contour": cs.empty,
            }
        return {"plane_axes": list(plane.axes), "files": files}

    # orchestration

    def run(self) -> dict:
        c = self.cfg
        c.out.mkdir(parents=True, exist_ok=True)
        todo = _stage_closure(c.stages)
        report: Dict[str, Any] = {
            "schema": REPORT_SCHEMA,
            "roacert_version": __version__,
            "config": c.echo(),
            "stages_run": todo,
            "system": {
                "name": self.bundle.name,
                "dim": self.bundle.dim,
                "x_sep": np.asarray(self.bundle.x_sep).tolist(),
                "x_sep_reported": None
                if self.bundle.x_sep_reported is None
                else np.asarray(self.bundle.x_sep_reported).tolist(),
            },
            "status": "ok",
        }
        self.report = report
        for stage in todo:
            t0 = time.perf_counter()
            try:
                report[_SECTION[stage]] = getattr(self, stage)()
            except RoaError as exc:
                report["status"] = "failed"
                report["failed_stage"] = stage
                report["error"] = {
                    "type": type(exc).__name__,
                    "message": str(exc),
                    "witness": getattr(exc, "witness", None),
                }
                self.timing[stage] = time.perf_counter() - t0
                self._write()
                raise StageError(stage, exc) from exc
            self.timing[stage] = time.perf_counter() - t0
        if self.cert is not None:
            report["certified"] = bool(self.cert.certified)
        self._write()
        return report

    def _write(self) -> None:
        self.report["runtime"] = {
            "wall_clock_s": {k: round(v, 6) for k, v in self.timing.items()},
            "cache_hits": dict(self.cache_hits),
        }
        atomic_write_text(self.cfg.out / REPORT_NAME, dumps_report(self.report))


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _finite(obj):
    # JSON has no infinities; write them as strings so the report stays valid
    if isinstance(obj, float) and not np.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    return obj


def dumps_report(report: dict) -> str:
    """Canonical JSON text: sorted keys, fixed indentation, trailing newline."""
    data = json.loads(json.dumps(report, default=_json_default))
    return json.dumps(_finite(data), sort_keys=True, indent=2, allow_nan=False) + "\n"


def strip_runtime(report: dict) -> dict:
    """The report without its run-dependent ``runtime`` entry."""
    return {k: v for k, v in report.items() if k != "runtime"}


def run(cfg: PipelineConfig) -> dict:
    """Execute ``cfg.stages`` (plus prerequisites) and return the report."""
    return Pipeline(cfg).run()
