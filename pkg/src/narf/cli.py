"""Batch front end: ``narf {phantom,forward,invert,scatter,check} [flags]``.

Every subcommand accepts ``--config file.json``; keys are the ``RunConfig``
field names and command-line flags override them.  Exit codes: 0 success,
2 invalid configuration (nothing written), 3 numerical failure (diagnostics
written to ``<out>/diagnostics.json``).
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from . import narf_io
from .attenuated_inversion import frame_lattice, invert_attenuated, relative_error
from .cauchy_ops import identity_suite
from .gauge_field import PHANTOM_KINDS, GaugeField, GridSpec, MatrixField, apply_gauge, make_phantom, random_gauge
from .ray_transport import Sinogram, attenuated_radon, default_angles, nonabelian_radon
from .scattering_recovery import (
    FactorizationError,
    build_rh_data,
    default_points,
    rh_factorize,
    scattering_field,
    scattering_pipeline,
)
from .spectral_solutions import ConvergenceError, DeterminantError, SolverConfig, build_family

log = logging.getLogger("narf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
COMMANDS = ("phantom", "forward", "invert", "scatter", "check")
SOURCE_KINDS = PHANTOM_KINDS


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    command: str
    out: str = "narf_out"
    n: int = 128
    m: int = 1
    R: float = 1.0
    angles: int = 256
    seed: int = 0
    kind: str = "gaussian_bump"
    amplitude: float = 1.0
    source_kind: str = "scalar_source"
    source_seed: int = 1
    source_amplitude: float = 1.0
    potential_amplitude: float = 0.3
    potential_seed: int = 9
    gauge_seed: int | None = None
    field: str | None = None
    source: str | None = None
    data: str | None = None
    truth: str | None = None
    potential: str | None = None
    tol: float = 1e-8
    max_iter: int = 200
    depth: int = 3
    threads: int = 1
    csv: bool = True
    pgm: bool = False
    rh: bool = False

    def validate(self) -> "RunConfig":
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.n < 16 or self.n & (self.n - 1):
            raise ConfigError("n must be a power of two >= 16")
        if not self.R > 0:
            raise ConfigError("R must be positive")
        if self.angles < 4 or self.angles % 2:
            raise ConfigError("angles must be an even count >= 4")
        if self.kind not in PHANTOM_KINDS:
            raise ConfigError(f"kind must be one of {PHANTOM_KINDS}")
        if self.source_kind not in SOURCE_KINDS:
            raise ConfigError(f"source_kind must be one of {SOURCE_KINDS}")
        if self.kind == "nilpotent_upper" and self.m < 2:
            raise ConfigError("nilpotent_upper needs m >= 2")
        if not (0 < self.tol < 1) or self.max_iter < 1 or self.depth < 0 or self.threads < 1:
            raise ConfigError("solver settings out of range")
        for name in ("field", "source", "data", "truth", "potential"):
            path = getattr(self, name)
            if path is not None and not Path(path).is_file():
                raise ConfigError(f"{name} file not found: {path}")
        if self.command == "invert" and self.data is None:
            raise ConfigError("invert needs --data")
        return self

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.n, self.R)

    @property
    def solver(self) -> SolverConfig:
        return SolverConfig(tol=self.tol, max_iter=self.max_iter, depth=self.depth)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="narf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="JSON file with RunConfig keys")
        for f in fields(RunConfig):
            if f.name == "command":
                continue
            if f.type == "bool":
                p.add_argument(_flag(f.name), dest=f.name, action=argparse.BooleanOptionalAction,
                               default=argparse.SUPPRESS)
                continue
            conv = {"int": int, "float": float, "int | None": int}.get(f.type, str)
            p.add_argument(_flag(f.name), dest=f.name, type=conv, default=argparse.SUPPRESS)
    return parser


def resolve_config(argv: list[str] | None = None) -> RunConfig:
    """Defaults, then the JSON file, then explicit flags."""
    try:
        ns = build_parser().parse_args(argv)
    except SystemExit as exc:
        if exc.code == 0:
            raise
        raise ConfigError("could not parse arguments") from exc
    values = vars(ns)
    cfg_path = values.pop("config", None)
    merged: dict = {}
    if cfg_path:
        try:
            merged = json.loads(Path(cfg_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {cfg_path}: {exc}") from exc
        if not isinstance(merged, dict):
            raise ConfigError("config file must hold a JSON object")
        known = {f.name for f in fields(RunConfig)} - {"command"}
        unknown = set(merged) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged.update(values)
    try:
        return RunConfig(**merged).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


# -- inputs ------------------------------------------------------------------

def _load(path: str, expected: type, what: str):
    obj = narf_io.read(path)
    if not isinstance(obj, expected):
        raise ConfigError(f"{what} file {path} holds a {type(obj).__name__}")
    return obj


def load_field(cfg: RunConfig) -> GaugeField:
    if cfg.field:
        return _load(cfg.field, GaugeField, "field")
    A = make_phantom(cfg.kind, cfg.grid, m=cfg.m, seed=cfg.seed, amplitude=cfg.amplitude)
    if not isinstance(A, GaugeField):
        raise ConfigError(f"{cfg.kind} is a source phantom, not a field")
    return A


def load_source(cfg: RunConfig, grid: GridSpec, m: int) -> MatrixField:
    if cfg.source:
        return _load(cfg.source, MatrixField, "source")
    if cfg.source_kind == "scalar_source":
        return make_phantom("scalar_source", grid, m=m, seed=cfg.source_seed, amplitude=cfg.source_amplitude)
    return make_phantom(cfg.source_kind, grid, m=m, seed=cfg.source_seed, amplitude=cfg.source_amplitude).a0


def load_potential(cfg: RunConfig, grid: GridSpec, m: int) -> MatrixField:
    if cfg.potential:
        return _load(cfg.potential, MatrixField, "potential")
    if cfg.potential_amplitude == 0:
        return MatrixField.zeros(grid, m)
    return make_phantom("smooth_random", grid, m=m, seed=cfg.potential_seed,
                        amplitude=cfg.potential_amplitude).a0


def _write_sinogram(out: Path, stem: str, s: Sinogram, grid: GridSpec, cfg: RunConfig) -> list[str]:
    files = [out / f"{stem}.narf"]
    narf_io.write_sinogram(files[0], s, grid)
    if cfg.csv:
        files.append(out / f"{stem}.csv")
        narf_io.write_csv(files[-1], s)
    if cfg.pgm:
        files.append(out / f"{stem}.pgm")
        narf_io.write_pgm(files[-1], s.values)
    return [str(f) for f in files]


# -- commands ----------------------------------------------------------------

def cmd_phantom(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.grid
    obj = make_phantom(cfg.kind, grid, m=cfg.m, seed=cfg.seed, amplitude=cfg.amplitude)
    outside = grid.radius() >= grid.R
    path = out / "phantom.narf"
    if isinstance(obj, GaugeField):
        narf_io.write_gauge(path, obj)
        leak = max(float(np.abs(c.values[outside]).max()) for c in (obj.a1, obj.a2, obj.a0))
        peak = obj.max_norm()
    else:
        narf_io.write_field(path, obj, kind="source")
        leak = float(np.abs(obj.values[outside]).max())
        peak = float(np.abs(obj.values).max())
    if cfg.pgm:
        vals = obj.a0.values if isinstance(obj, GaugeField) else obj.values
        narf_io.write_pgm(out / "phantom.pgm", vals)
    return {"files": [str(path)], "support": {"max_outside": leak, "peak": peak, "ok": leak <= 1e-12}}


def cmd_forward(cfg: RunConfig, out: Path) -> dict:
    A = load_field(cfg)
    grid = A.grid
    angles = default_angles(cfg.angles)
    report: dict = {"files": []}
    S = nonabelian_radon(A, angles=angles)
    report["files"] += _write_sinogram(out, "transport", S, grid, cfg)
    report["max_deviation_from_identity"] = float(np.abs(S.values - np.eye(A.m)).max())
    if cfg.source or cfg.source_amplitude != 0:
        f = load_source(cfg, grid, A.m)
        data = attenuated_radon(A, f, angles=angles)
        report["files"] += _write_sinogram(out, "attenuated", data, grid, cfg)
    if cfg.gauge_seed is not None:
        g = random_gauge(grid, A.m, seed=cfg.gauge_seed)
        S2 = nonabelian_radon(apply_gauge(A, g), angles=angles)
        report["gauge_max_difference"] = float(np.abs(S2.values - S.values).max() / np.abs(S.values).max())
    return report


def cmd_invert(cfg: RunConfig, out: Path) -> dict:
    A = load_field(cfg)
    data = _load(cfg.data, Sinogram, "data")
    ws = invert_attenuated(A, data, config=cfg.solver)
    path = out / "f_hat.narf"
    narf_io.write_field(path, ws.f_hat, kind="reconstruction")
    report = {"files": [str(path)], "diagnostics": ws.diagnostics}
    if cfg.truth:
        f = _load(cfg.truth, MatrixField, "truth")
        report["error_vs_truth"] = {"angles": int(data.angles.size), "n": A.grid.n,
                                    "relative_l2": relative_error(ws.f_hat, f)}
    return report


def cmd_scatter(cfg: RunConfig, out: Path) -> dict:
    base = load_field(cfg)
    A = scattering_field(base.a1, base.a2)
    grid = A.grid
    V = load_potential(cfg, grid, A.m)
    fam = build_family(A, default_angles(cfg.angles), frame_lattice(grid), cfg.solver)
    run = scattering_pipeline(A, V, fam)
    files = []
    for name, arr in (("I_plus", run.functionals.I_plus), ("I_minus", run.functionals.I_minus),
                      ("J_plus", run.functionals.J_plus), ("J_minus", run.functionals.J_minus)):
        s = Sinogram(fam.offsets, fam.angles, arr, "functional")
        narf_io.write_sinogram(out / f"{name}.narf", s, grid)
        files.append(str(out / f"{name}.narf"))
    narf_io.write_field(out / "V_hat.narf", run.V_hat, kind="potential")
    files.append(str(out / "V_hat.narf"))
    report: dict = {"files": files, "diagnostics": dict(run.diagnostics)}
    norm = float(np.linalg.norm(V.values))
    report["diagnostics"]["potential_error"] = (float(np.linalg.norm(run.V_hat.values - V.values) / norm)
                                                if norm else float(np.linalg.norm(run.V_hat.values)))
    if cfg.rh:
        try:
            b = build_rh_data(run.recovered_traces, fam.offsets, fam.angles)
            sol = rh_factorize(b, default_points(grid))
            report["rh"] = {"jump_deviation": b.deviation(), "iterations": sol.iterations,
                            "residual": sol.residual}
        except FactorizationError as exc:
            report["rh"] = {"error": str(exc)}
    manifest = {"synthesis": {"field": cfg.field or f"{cfg.kind}:seed={cfg.seed}:amp={cfg.amplitude}",
                              "potential": cfg.potential or f"smooth_random:seed={cfg.potential_seed}"
                                                            f":amp={cfg.potential_amplitude}",
                              "angles": cfg.angles, "n": grid.n},
                "recovery": {"files": files}}
    narf_io.write_json(out / "manifest.json", manifest)
    return report


def cmd_check(cfg: RunConfig, out: Path) -> dict:
    res = identity_suite(cfg.n, cfg.R)
    limits = {"projection_sum": 1e-12}
    rows = []
    for name, value in res.items():
        limit = limits.get(name, 1e-3 if cfg.n >= 256 else 1e-2)
        rows.append({"identity": name, "residual": value, "limit": limit, "pass": value <= limit})
    width = max(len(r["identity"]) for r in rows)
    for r in rows:
        print(f"{r['identity']:<{width}}  {r['residual']:.3e}  <= {r['limit']:.0e}  "
              f"{'PASS' if r['pass'] else 'FAIL'}")
    return {"identities": rows, "all_pass": all(r["pass"] for r in rows)}


HANDLERS = {"phantom": cmd_phantom, "forward": cmd_forward, "invert": cmd_invert,
            "scatter": cmd_scatter, "check": cmd_check}


@contextlib.contextmanager
def _thread_cap(threads: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        limiter = contextlib.nullcontext()
    else:
        limiter = threadpool_limits(threads)
    with limiter, sfft.set_workers(threads):
        yield


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(argv)
    except ConfigError as exc:
        print(f"narf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.out)
    fresh = not out.exists()
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    try:
        with _thread_cap(cfg.threads):
            report = HANDLERS[cfg.command](cfg, out)
    except ConfigError as exc:
        # inputs are checked before anything is written
        if fresh and not any(out.iterdir()):
            out.rmdir()
        print(f"narf: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ConvergenceError, DeterminantError, np.linalg.LinAlgError, FloatingPointError, MemoryError) as exc:
        diag = {"command": cfg.command, "error": type(exc).__name__, "message": str(exc),
                "config": asdict(cfg)}
        if isinstance(exc, ConvergenceError):
            diag["residual_history"] = list(exc.history)
        narf_io.write_json(out / "diagnostics.json", diag)
        print(f"narf: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report["command"] = cfg.command
    report["config"] = asdict(cfg)
    # wall-clock numbers live apart so that report.json is reproducible byte for byte
    timings = report.get("diagnostics", {}).pop("timings", {})
    timings["total"] = time.perf_counter() - start
    narf_io.write_json(out / "report.json", report)
    narf_io.write_json(out / "timings.json", timings)
    if cfg.command == "check":
        return EXIT_OK if report["all_pass"] else EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
