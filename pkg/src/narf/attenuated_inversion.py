"""Recover a source ``f`` from its attenuated transform ``R_A f`` for a known field ``A``.

Pipeline: line traces ``u_+-(-inf)`` from the data and the spectral traces,
back-propagation along each direction with ``c0``, a trapezoid contour integral
over the angles, and a final ``dbar`` conjugated by ``c(x, inf)``.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .cauchy_ops import dbar, embed, riesz
from .gauge_field import (
    Frame,
    GaugeField,
    GridSpec,
    MatrixField,
    SplineSampler,
    reconstruction_window,
)
from .ray_transport import Sinogram, frame_transport, support_box
from .spectral_solutions import SolverConfig, SpectralFamily, build_family

log = logging.getLogger(__name__)

COND_WARN = 1e6


def frame_lattice(grid: GridSpec) -> np.ndarray:
    """Rotated-frame lattice that covers the grid square for every angle."""
    return grid.lattice(np.sqrt(2.0) * grid.half_extent + 2 * grid.h)


def extend_offsets(values: np.ndarray, offsets: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Zero-extend ``values[offset, ...]`` from one centred lattice to a longer one."""
    if offsets.size == target.size:
        return values
    h = offsets[1] - offsets[0]
    if abs((target[1] - target[0]) - h) > 1e-9 * h or (target.size - offsets.size) % 2:
        raise ValueError("data offsets are not a sub-lattice of the target offsets")
    return embed(values, target.size, axis=0)


def _condition_check(traces: np.ndarray, what: str) -> float:
    cond = float(np.max(np.linalg.cond(traces.reshape((-1,) + traces.shape[-2:]))))
    if cond > COND_WARN:
        log.warning("%s: condition number %.2e above %.0e", what, cond, COND_WARN)
    return cond


def u_traces_from_data(data: Sinogram, family: SpectralFamily) -> tuple[np.ndarray, np.ndarray]:
    """``u_+-(-inf, y2, phi) = -c_+-(-inf) Pi^-+[c_+-(-inf)^-1 R_A f]`` on the family offsets."""
    if data.angles.size != family.angles.size or not np.allclose(data.angles, family.angles):
        raise ValueError("data and spectral family must share the angle grid")
    values = extend_offsets(data.values, data.offsets, family.offsets)
    dy = float(family.offsets[1] - family.offsets[0])
    rho = support_box(family.A.grid)
    out = []
    for sign in (1, -1):
        c = family.trace(sign, "minus")
        w = np.linalg.solve(c, values)
        out.append(-c @ riesz(w, dy, -sign, axis=0, support=rho))
    return out[0], out[1]


def backproject_angle(A: GaugeField, phi: float, diff: np.ndarray, lattice: np.ndarray,
                      cache: dict | None = None) -> np.ndarray:
    """``c0(x, theta) [u_+ - u_-](x.nu)`` on the rotated frame ``(lattice, lattice)``."""
    c0, _ = frame_transport(A, phi, lattice, lattice, cache=cache)
    return c0 @ diff[:, None]


def frame_values_to_grid(values: np.ndarray, lattice: np.ndarray, grid: GridSpec, phi: float) -> np.ndarray:
    """Bicubic resampling of square-frame values ``values[j2, j1]`` onto the grid nodes."""
    sampler = SplineSampler.from_values(values, (lattice[0], lattice[0]), grid.h)
    x1, x2 = grid.mesh()
    fr = Frame(phi, lattice, lattice)
    y1 = x1 * fr.theta[0] + x2 * fr.theta[1]
    y2 = x1 * fr.nu[0] + x2 * fr.nu[1]
    return sampler(y2, y1)


def u_difference_field(A: GaugeField, u_plus: np.ndarray, u_minus: np.ndarray, angles: np.ndarray,
                       offsets: np.ndarray, index: int, cache: dict | None = None) -> MatrixField:
    """``(u_+ - u_-)(x, e^{i phi})`` on the grid for the angle ``angles[index]``."""
    grid = A.grid
    lat = frame_lattice(grid)
    diff = extend_offsets(u_plus[:, index] - u_minus[:, index], offsets, lat)
    vals = backproject_angle(A, angles[index], diff, lat, cache)
    return MatrixField(grid, frame_values_to_grid(vals, lat, grid, angles[index]))


def contour_integral(A: GaugeField, u_plus: np.ndarray, u_minus: np.ndarray, angles: np.ndarray,
                     offsets: np.ndarray, stride: int = 1) -> MatrixField:
    """``I(x) = (1/2 pi i) oint (u_+ - u_-) dt`` by the trapezoid rule on ``t = e^{i phi}``.

    With ``stride > 1`` only every ``stride``-th angle is used (refinement checks).
    """
    grid = A.grid
    lat = frame_lattice(grid)
    step = 2 * np.pi / angles.size * stride
    cache: dict = {}
    total = np.zeros((grid.n, grid.n) + u_plus.shape[2:], complex)
    for j in range(0, angles.size, stride):
        diff = extend_offsets(u_plus[:, j] - u_minus[:, j], offsets, lat)
        vals = backproject_angle(A, angles[j], diff, lat, cache)
        total += np.exp(1j * angles[j]) * frame_values_to_grid(vals, lat, grid, angles[j])
    return MatrixField(grid, total * step / (2 * np.pi))


def contour_sum(u_diff: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Trapezoid contour sum of precomputed ``u_diff[angle, ...]`` samples."""
    w = np.exp(1j * np.asarray(angles)) * (2 * np.pi / len(angles)) / (2 * np.pi)
    return np.tensordot(w, u_diff, axes=(0, 0))


def windowed_dbar(g: MatrixField, window: np.ndarray | None = None) -> MatrixField:
    """``dbar g`` for fields that decay but do not vanish at the grid edge.

    Returns ``dbar(chi g) - g dbar(chi)`` (``= chi dbar g``) with the radial
    window ``chi`` equal to one on ``|x| <= 1.25 R``.
    """
    grid = g.grid
    chi = reconstruction_window(grid) if window is None else window
    chi4 = chi[:, :, None, None]
    dchi = dbar(MatrixField(grid, chi.astype(complex))).values
    return MatrixField(grid, dbar(MatrixField(grid, chi4 * g.values)).values - dchi * g.values)


def reconstruct_source(I: MatrixField, c_inf: MatrixField) -> MatrixField:
    """``f = c(x, inf) dbar[c(x, inf)^-1 I(x)]``."""
    det = np.abs(np.linalg.det(c_inf.values))
    if det.min() < 1e-12:
        raise np.linalg.LinAlgError("c(x, inf) is singular")
    g = MatrixField(I.grid, np.linalg.solve(c_inf.values, I.values))
    return MatrixField(I.grid, c_inf.values @ windowed_dbar(g).values)


@dataclass(eq=False)
class InversionWorkspace:
    A: GaugeField
    family: SpectralFamily
    data: Sinogram
    u_plus: np.ndarray
    u_minus: np.ndarray
    I_field: MatrixField
    f_hat: MatrixField
    diagnostics: dict = field(default_factory=dict)


def inversion_family(A: GaugeField, angles: np.ndarray, config: SolverConfig = SolverConfig()) -> SpectralFamily:
    """Spectral traces on the extended offset lattice used by the back-propagation."""
    return build_family(A, angles, frame_lattice(A.grid), config, keep_fields=False)


def invert_attenuated(A: GaugeField, data: Sinogram, family: SpectralFamily | None = None,
                      config: SolverConfig = SolverConfig(), refinement_check: bool = True) -> InversionWorkspace:
    """Reconstruct ``f`` from ``R_A f``; all stages are linear in the data."""
    if data.kind != "attenuated":
        raise ValueError("expected attenuated-transform data")
    timings = {}
    t0 = time.perf_counter()
    if family is None:
        family = inversion_family(A, data.angles, config)
    timings["family"] = time.perf_counter() - t0
    diag: dict = {"family_min_det": family.det_min}
    diag["trace_condition"] = max(_condition_check(family.trace(s, "minus"), f"c{'+-'[s < 0]}(-inf)")
                                  for s in (1, -1))
    t0 = time.perf_counter()
    up, um = u_traces_from_data(data, family)
    diag["u_plus_norm"] = float(np.abs(up).max())
    diag["u_minus_norm"] = float(np.abs(um).max())
    timings["traces"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    I = contour_integral(A, up, um, data.angles, family.offsets)
    timings["contour"] = time.perf_counter() - t0
    if refinement_check and data.angles.size % 2 == 0:
        half = contour_integral(A, up, um, data.angles, family.offsets, stride=2)
        diag["contour_refinement"] = float(np.linalg.norm(half.values - I.values)
                                           / max(np.linalg.norm(I.values), 1e-300))
    t0 = time.perf_counter()
    f_hat = reconstruct_source(I, family.c_inf)
    timings["dbar"] = time.perf_counter() - t0
    diag["timings"] = timings
    return InversionWorkspace(A, family, data, up, um, I, f_hat, diag)


def relative_error(f_hat: MatrixField, f: MatrixField) -> float:
    return float(np.linalg.norm(f_hat.values - f.values) / np.linalg.norm(f.values))
