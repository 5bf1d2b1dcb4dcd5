"""Spectral solutions ``c_+-(x, t)`` of the complexified transport equation.

On the unit circle ``t = e^{i phi}`` the solutions are fixed points of
``c = I + Pi_+-(e^{i phi}) [M c]`` with ``M = coupling * A(x, theta(phi))``; at
``t = inf`` of ``c = I + S[(coupling/2)(A1 + i A2) c]``.  Because ``M`` is
supported in ``B_R`` each fixed point is iterated only on the support box
(``|y1|, |y2| <= rho`` in the rotated frame, or the square sub-grid for
``t = inf``) and then extended to the whole plane by one more application of
the operator.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import narf_io
from .cauchy_ops import ConvolutionPlan, SpectralParam, boundary_apply, dbar, embed, riesz
from .gauge_field import (
    Frame,
    GaugeField,
    GridSpec,
    MatrixField,
    SplineSampler,
    direction_sampler,
    eval_direction,
    frame_to_grid,
    reconstruction_window,
)
from .ray_transport import Sinogram, default_angles, default_offsets, support_box


class ConvergenceError(RuntimeError):
    """Fixed-point iteration failed; ``history`` holds the relative residuals."""

    def __init__(self, message: str, history: list[float]):
        super().__init__(message)
        self.history = list(history)


class DeterminantError(RuntimeError):
    """A spectral solution became (numerically) singular."""


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-8
    max_iter: int = 200
    depth: int = 3
    det_floor: float = 1e-6


@dataclass
class SolveReport:
    iterations: int
    residuals: list[float]
    converged: bool
    min_det: float = float("nan")

    def tail_is_monotone(self, count: int = 3) -> bool:
        tail = self.residuals[-count:]
        return all(b <= a for a, b in zip(tail, tail[1:]))


def anderson(G: Callable[[np.ndarray], np.ndarray], x0: np.ndarray, depth: int = 3,
             tol: float = 1e-8, max_iter: int = 200) -> tuple[np.ndarray, SolveReport]:
    """Solve ``x = G(x)`` by Anderson-accelerated Picard iteration (``depth = 0``: plain Picard).

    The residual is ``|G(x) - x| / max(|G(x)|, 1)`` in the Euclidean norm.
    Raises :class:`ConvergenceError` when ``max_iter`` is exhausted or the
    iterates stop being finite.
    """
    shape = x0.shape
    x = np.asarray(x0, complex).ravel()
    hist: list[float] = []
    dG: list[np.ndarray] = []
    dF: list[np.ndarray] = []
    g_prev = f_prev = None
    for it in range(1, max_iter + 1):
        g = np.asarray(G(x.reshape(shape)), complex).ravel()
        f = g - x
        res = float(np.linalg.norm(f) / max(np.linalg.norm(g), 1.0))
        hist.append(res)
        if not np.isfinite(res):
            raise ConvergenceError("fixed-point iteration produced non-finite values", hist)
        if res <= tol:
            return g.reshape(shape), SolveReport(it, hist, True)
        if depth > 0 and f_prev is not None:
            dF.append(f - f_prev)
            dG.append(g - g_prev)
            if len(dF) > depth:
                dF.pop(0)
                dG.pop(0)
        g_prev, f_prev = g, f
        if dF:
            F = np.stack(dF, axis=1)
            gamma = np.linalg.lstsq(F, f, rcond=None)[0]
            x = g - np.stack(dG, axis=1) @ gamma
        else:
            x = g
    raise ConvergenceError(f"no convergence in {max_iter} iterations (residual {hist[-1]:.3e})", hist)


def _identity(shape_lead: tuple, m: int) -> np.ndarray:
    return np.broadcast_to(np.eye(m, dtype=complex), shape_lead + (m, m)).copy()


def _check_det(values: np.ndarray, floor: float, what: str) -> float:
    d = float(np.min(np.abs(np.linalg.det(values))))
    if d < floor:
        raise DeterminantError(f"{what}: min |det| = {d:.3e} below floor {floor:.1e}")
    return d


def box_indices(grid: GridSpec) -> slice:
    """Grid indices (per axis) of the support box ``|x_k| <= rho``."""
    x = grid.coords
    idx = np.flatnonzero(np.abs(x) <= support_box(grid))
    return slice(idx[0], idx[-1] + 1)


# -- t = infinity -----------------------------------------------------------------

def solve_c_infinity(A: GaugeField, config: SolverConfig = SolverConfig(),
                     report: dict | None = None) -> MatrixField:
    """``c_+(x, inf)``: ``c = I + S[(coupling/2)(A1 + i A2) c]`` on the whole grid."""
    grid, m = A.grid, A.m
    q = 0.5 * A.coupling * (A.a1.values + 1j * A.a2.values)
    if not np.any(q):
        if report is not None:
            report["c_inf"] = SolveReport(0, [0.0], True, 1.0)
        return MatrixField.identity(grid, m)
    box = box_indices(grid)
    qb = q[box, box]
    nb = qb.shape[0]
    plan = ConvolutionPlan(nb, grid.h, grid.R + grid.h)
    eye = _identity((nb, nb), m)
    c_box, rep = anderson(lambda c: eye + plan(qb @ c), eye, config.depth, config.tol, config.max_iter)
    full = np.zeros_like(q)
    full[box, box] = qb @ c_box
    plan_full = ConvolutionPlan(grid.n, grid.h, grid.R + grid.h)
    c = _identity((grid.n, grid.n), m) + plan_full(full)
    rep.min_det = _check_det(c, config.det_floor, "c(x, inf)")
    if report is not None:
        report["c_inf"] = rep
    return MatrixField(grid, c)


def solve_c_exterior(A: GaugeField, t: complex, config: SolverConfig = SolverConfig(),
                     eval_radius: float | None = None) -> tuple[MatrixField, SolveReport]:
    """``c(x, t)`` for ``|t| != 1`` from ``c = I + Pi(t)[coupling A(x, zeta(t)) c]``."""
    grid, m = A.grid, A.m
    p = SpectralParam(t)
    M = eval_direction(A, p.zeta).values
    box = box_indices(grid)
    Mb = M[box, box]
    nb = Mb.shape[0]
    plan = ConvolutionPlan(nb, grid.h, grid.R + grid.h, complex(t))
    eye = _identity((nb, nb), m)
    c_box, rep = anderson(lambda c: eye + plan(Mb @ c), eye, config.depth, config.tol, config.max_iter)
    full = np.zeros_like(M)
    full[box, box] = Mb @ c_box
    plan_full = ConvolutionPlan(grid.n, grid.h, grid.R + grid.h, complex(t), eval_radius)
    c = _identity((grid.n, grid.n), m) + plan_full(full)
    rep.min_det = float(np.min(np.abs(np.linalg.det(c))))
    return MatrixField(grid, c), rep


# -- unit circle --------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundarySolution:
    """``c_+(x, e^{i phi})`` (``sign=+1``) or ``c_-`` on the rotated support box.

    ``values[j2, j1]`` lives on the box lattice ``y`` (both axes); ``total[j2]``
    is ``int M c dy1`` along each box line.
    """

    phi: float
    sign: int
    y: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    total: np.ndarray = field(repr=False)
    coupling_field: np.ndarray = field(repr=False)
    report: SolveReport = field(repr=False)

    @property
    def dy(self) -> float:
        return float(self.y[1] - self.y[0])

    def traces(self, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Values at ``y1 = -inf`` and ``y1 = +inf`` on the offset lattice.

        ``c(-inf) = I - Pi^{-s} T`` and ``c(+inf) = I + Pi^{s} T`` where ``T`` is
        the line integral of ``M c`` and ``s`` the family sign.
        """
        m = self.values.shape[-1]
        tot = _embed_lattice(self.total, self.y, offsets)
        rho = float(self.y[-1]) + 0.5 * self.dy
        minus = _identity((offsets.size,), m) - riesz(tot, self.dy, -self.sign, support=rho)
        plus = _identity((offsets.size,), m) + riesz(tot, self.dy, self.sign, support=rho)
        return minus, plus

    def on_frame(self, frame_y: np.ndarray) -> np.ndarray:
        """The solution on a larger square frame lattice ``frame_y`` (both axes)."""
        m = self.values.shape[-1]
        n = frame_y.size
        g = _embed_lattice(self.coupling_field @ self.values, self.y, frame_y, axes=(0, 1))
        rho = float(self.y[-1]) + 0.5 * self.dy
        return _identity((n, n), m) + boundary_apply(g, self.dy, self.sign, support=rho)

    def at(self, x1: np.ndarray, x2: np.ndarray, grid: GridSpec) -> np.ndarray:
        """Bicubic samples of the solution at arbitrary points inside the grid square."""
        lat = grid.lattice(np.sqrt(2.0) * grid.half_extent + 2 * grid.h)
        fr = Frame(self.phi, lat, lat)
        sampler = SplineSampler.from_values(self.on_frame(lat), (lat[0], lat[0]), grid.h)
        y1 = x1 * fr.theta[0] + x2 * fr.theta[1]
        y2 = x1 * fr.nu[0] + x2 * fr.nu[1]
        return sampler(y2, y1)

    def to_grid(self, grid: GridSpec) -> MatrixField:
        lat = grid.lattice(np.sqrt(2.0) * grid.half_extent + 2 * grid.h)
        return frame_to_grid(self.on_frame(lat), Frame(self.phi, lat, lat), grid)


def _embed_lattice(values: np.ndarray, inner: np.ndarray, outer: np.ndarray, axes=(0,)) -> np.ndarray:
    h = inner[1] - inner[0]
    shift = (outer[0] - inner[0]) / h
    if abs(shift - round(shift)) > 1e-6 or abs((outer[1] - outer[0]) - h) > 1e-9 * h:
        raise ValueError("offsets must lie on the grid lattice")
    for ax in axes:
        values = embed(values, outer.size, axis=ax)
    return values


def box_lattice(grid: GridSpec) -> np.ndarray:
    return grid.lattice(support_box(grid))


def sample_box(A: GaugeField, phi: float, cache: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``coupling * A(x, theta(phi))`` on the rotated support-box lattice."""
    y = box_lattice(A.grid)
    return y, direction_sampler(A, phi, cache)(*Frame(phi, y, y).points())


def solve_c_boundary(A: GaugeField, phi: float, sign: int, config: SolverConfig = SolverConfig(),
                     cache: dict | None = None) -> BoundarySolution:
    """Fixed point of ``c = I + Pi_s(e^{i phi})[M c]`` on the rotated support box."""
    if sign not in (1, -1):
        raise ValueError("sign must be +1 or -1")
    y, M = sample_box(A, phi, cache)
    dy = A.grid.h
    rho = float(y[-1]) + 0.5 * dy
    m = A.m
    eye = _identity((y.size, y.size), m)
    if not np.any(M):
        rep = SolveReport(0, [0.0], True, 1.0)
        return BoundarySolution(phi, sign, y, eye, np.zeros((y.size, m, m), complex), M, rep)

    def G(c):
        return eye + boundary_apply(M @ c, dy, sign, support=rho)

    c, rep = anderson(G, eye, config.depth, config.tol, config.max_iter)
    rep.min_det = _check_det(c, config.det_floor, f"c_{'+' if sign > 0 else '-'}(phi={phi:.4f})")
    total = dy * np.sum(M @ c, axis=1)
    return BoundarySolution(phi, sign, y, c, total, M, rep)


# -- families ---------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """Matrix values per ``(y2, phi)`` at ``y1 = -inf`` or ``+inf``."""

    values: np.ndarray
    side: str
    sign: int

    def __post_init__(self):
        if self.side not in ("minus_infinity", "plus_infinity"):
            raise ValueError(f"unknown side {self.side!r}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("trace values must be finite")


@dataclass(eq=False)
class SpectralFamily:
    A: GaugeField
    angles: np.ndarray
    offsets: np.ndarray
    c_inf: MatrixField | None
    traces: dict
    reports: dict
    solutions: dict | None = None
    config: SolverConfig = field(default_factory=SolverConfig)

    @property
    def det_min(self) -> float:
        dets = [r.min_det for rs in self.reports.values() for r in (rs if isinstance(rs, list) else [rs])]
        return float(np.nanmin(dets)) if dets else float("nan")

    def trace(self, sign: int, side: str) -> np.ndarray:
        """``values[offset, angle]`` of ``c_sign`` at ``y1 = -inf`` (``side='minus'``) or ``+inf``."""
        return self.traces[(sign, side)]

    def solution(self, index: int, sign: int) -> BoundarySolution:
        if self.solutions is None:
            raise ValueError("family was built without keep_fields; re-solve the angle instead")
        return self.solutions[sign][index]

    def field(self, index: int, sign: int) -> MatrixField:
        return self.solution(index, sign).to_grid(self.A.grid)


def build_family(A: GaugeField, angles=None, offsets=None, config: SolverConfig = SolverConfig(),
                 keep_fields: bool = True, with_infinity: bool = True,
                 signs=(1, -1), progress: Callable[[int, int], None] | None = None) -> SpectralFamily:
    """Solve ``c_+-`` at every angle (both signs) and ``c(x, inf)``; collect traces."""
    grid = A.grid
    angles = default_angles(256) if angles is None else np.asarray(angles, float)
    offsets = default_offsets(grid) if offsets is None else np.asarray(offsets, float)
    m = A.m
    traces = {}
    reports: dict = {}
    sols: dict | None = {} if keep_fields else None
    cache: dict = {}
    for sign in signs:
        minus = np.empty((offsets.size, angles.size, m, m), complex)
        plus = np.empty_like(minus)
        reports[sign] = []
        kept = []
        for j, phi in enumerate(angles):
            sol = solve_c_boundary(A, phi, sign, config, cache)
            minus[:, j], plus[:, j] = sol.traces(offsets)
            reports[sign].append(sol.report)
            if keep_fields:
                kept.append(sol)
            if progress is not None:
                progress(j, angles.size)
        traces[(sign, "minus")] = minus
        traces[(sign, "plus")] = plus
        if keep_fields:
            sols[sign] = kept
    c_inf = None
    if with_infinity:
        rep: dict = {}
        c_inf = solve_c_infinity(A, config, rep)
        reports["inf"] = rep["c_inf"]
    return SpectralFamily(A, angles, offsets, c_inf, traces, reports, sols, config)


def boundary_traces(family: SpectralFamily, index: int, sign: int,
                    check: bool = True) -> tuple[BoundaryTrace, BoundaryTrace]:
    """Traces of ``c_sign`` at ``y1 = -inf`` and ``+inf`` for the angle ``angles[index]``.

    With ``check`` and kept fields, the edge columns of the box solution are
    compared with the quadrature form of the traces; a mismatch beyond ten times
    the solver tolerance (scaled by the trace size) raises ``RuntimeError``.
    """
    minus = family.trace(sign, "minus")[:, index]
    plus = family.trace(sign, "plus")[:, index]
    if check and family.solutions is not None:
        sol = family.solution(index, sign)
        lo, hi = sol.traces(sol.y)
        scale = max(1.0, float(np.abs(sol.values).max()))
        gap = max(np.abs(sol.values[:, 0] - lo).max(), np.abs(sol.values[:, -1] - hi).max()) / scale
        if gap > 10 * family.config.tol:
            raise RuntimeError(f"trace read-off and quadrature disagree by {gap:.2e}")
    return BoundaryTrace(minus, "minus_infinity", sign), BoundaryTrace(plus, "plus_infinity", sign)


def factorization_defect(family: SpectralFamily, S: Sinogram, sign: int = 1) -> float:
    """Max relative gap between ``c(+inf) c(-inf)^-1`` and ``S(A)`` over all lines."""
    lhs = family.trace(sign, "plus") @ np.linalg.inv(family.trace(sign, "minus"))
    return float(np.abs(lhs - S.values).max() / np.abs(S.values).max())


def transport_residual(sol: BoundarySolution) -> float:
    """Relative size of ``d c/d y1 - M c`` on the box (fourth-order differences)."""
    c, M, h = sol.values, sol.coupling_field, sol.dy
    d = (-c[:, 4:] + 8 * c[:, 3:-1] - 8 * c[:, 1:-3] + c[:, :-4]) / (12 * h)
    rhs = (M @ c)[:, 2:-2]
    return float(np.linalg.norm(d - rhs) / max(np.linalg.norm(rhs), 1e-300))


def verify_lemma_properties(family: SpectralFamily, margin: float = 0.9,
                            analytic_t: complex | None = 2.0, delta: float = 1e-3,
                            sample_angles: int = 4) -> dict:
    """Diagnostics: determinants, transport residuals, edge values, analyticity in ``t``.

    ``margin_deviation`` is ``max |c - I|`` on ``|x| >= margin * half_extent``
    for a few angles; on the unit circle the line-Hilbert part of ``c`` decays
    only like ``1/|x|``, so this is a decay report rather than a pass/fail.
    """
    A = family.A
    out: dict = {"min_det": family.det_min}
    idx = np.linspace(0, family.angles.size - 1, min(sample_angles, family.angles.size)).astype(int)
    res, dev, fixed = [], [], []
    if family.solutions is not None:
        r = A.grid.radius() >= margin * A.grid.half_extent
        for sign in family.solutions:
            for j in idx:
                sol = family.solution(j, sign)
                res.append(transport_residual(sol) if np.any(sol.coupling_field) else 0.0)
                fixed.append(sol.report.residuals[-1])
                dev.append(float(np.abs(sol.to_grid(A.grid).values - np.eye(A.m))[r].max()))
    out["transport_residual"] = max(res) if res else float("nan")
    out["fixed_point_residual"] = max(fixed) if fixed else float("nan")
    out["margin_deviation"] = max(dev) if dev else float("nan")
    if family.c_inf is not None:
        cinf = family.c_inf.values
        q = 0.5 * A.coupling * (A.a1.values + 1j * A.a2.values)
        out["c_inf_residual"] = _dbar_residual(family.c_inf, q)
        out["c_inf_min_det"] = float(np.min(np.abs(np.linalg.det(cinf))))
    if analytic_t is not None:
        out["analyticity_residual"] = analyticity_residual(A, analytic_t, delta, family.config)
    return out


def _dbar_residual(c: MatrixField, q: np.ndarray) -> float:
    """``|dbar c - q c| / |q c|`` on the support box (spectral dbar of a windowed ``c - I``)."""
    grid = c.grid
    chi = reconstruction_window(grid)[:, :, None, None]
    dev = MatrixField(grid, chi * (c.values - np.eye(c.m)))
    lhs = dbar(dev).values
    rhs = q @ c.values
    inner = grid.radius() <= 1.25 * grid.R
    return float(np.linalg.norm((lhs - rhs)[inner]) / max(np.linalg.norm(rhs[inner]), 1e-300))


def analyticity_residual(A: GaugeField, t0: complex = 2.0, delta: float = 1e-3,
                         config: SolverConfig = SolverConfig()) -> float:
    """Cauchy-Riemann defect ``|dF/dx + i dF/dy| / |dF/dx|`` of ``t -> c(x, t)`` at ``t0``.

    ``F`` is the exterior solution on the support box; central differences of
    width ``delta`` in the real and imaginary directions.
    """
    if not any(np.any(c.values) for c in (A.a1, A.a2, A.a0)):
        return 0.0
    vals = {}
    r = A.grid.R + A.grid.h
    for key, dt in (("x+", delta), ("x-", -delta), ("y+", 1j * delta), ("y-", -1j * delta)):
        vals[key] = solve_c_exterior(A, t0 + dt, config, eval_radius=r)[0].values
    dx = (vals["x+"] - vals["x-"]) / (2 * delta)
    dyv = (vals["y+"] - vals["y-"]) / (2 * delta)
    return float(np.linalg.norm(dx + 1j * dyv) / max(np.linalg.norm(dx), 1e-300))


# -- persistence ----------------------------------------------------------------------

def save_family(family: SpectralFamily, directory) -> Path:
    """Write traces and ``c(x, inf)`` as NARF files plus ``manifest.json``."""
    path = Path(directory)
    path.mkdir(parents=True, exist_ok=True)
    grid = family.A.grid
    files = {}
    for (sign, side), vals in family.traces.items():
        name = f"trace_{'plus' if sign > 0 else 'minus'}_{side}.narf"
        narf_io.write_sinogram(path / name, Sinogram(family.offsets, family.angles, vals, "trace"), grid)
        files[f"{sign}:{side}"] = name
    if family.c_inf is not None:
        narf_io.write_field(path / "c_inf.narf", family.c_inf, "c_inf")
        files["c_inf"] = "c_inf.narf"
    narf_io.write_gauge(path / "field.narf", family.A)
    files["field"] = "field.narf"
    manifest = {
        "angles": family.angles.tolist(),
        "offsets": family.offsets.tolist(),
        "signs": sorted({k[0] for k in family.traces}),
        "config": asdict(family.config),
        "files": files,
        "residuals": {
            str(k): ([r.residuals[-1] for r in v] if isinstance(v, list) else v.residuals[-1])
            for k, v in family.reports.items()
        },
        "min_det": family.det_min,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return path


def load_family(directory) -> SpectralFamily:
    path = Path(directory)
    manifest = json.loads((path / "manifest.json").read_text())
    files = manifest["files"]
    A = narf_io.read(path / files["field"])
    traces = {}
    for key, name in files.items():
        if ":" in key:
            sign, side = key.split(":")
            traces[(int(sign), side)] = narf_io.read(path / name).values
    c_inf = narf_io.read(path / files["c_inf"]) if "c_inf" in files else None
    reports = {}
    for k, v in manifest["residuals"].items():
        reports[k] = ([SolveReport(0, [r], True) for r in v] if isinstance(v, list)
                      else SolveReport(0, [v], True))
    return SpectralFamily(A, np.asarray(manifest["angles"]), np.asarray(manifest["offsets"]),
                          c_inf, traces, reports, None, SolverConfig(**manifest["config"]))
