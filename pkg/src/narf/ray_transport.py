"""Matrix transport along straight lines.

Along the line ``x = y1*theta + y2*nu`` the solution ``c0`` of
``d c0/d y1 = A(x, theta) c0`` with ``c0 = I`` before the support is marched
with classical RK4.  Because the field vanishes outside ``B_R`` only the box
``|y1| <= rho`` (``rho = R + 8h``) is integrated; before it ``c0 = I`` and after
it ``c0`` is constant.  Field values along the line come from a bicubic spline
of the grid data.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg

from .gauge_field import (
    GaugeField,
    GridSpec,
    MatrixField,
    RayGeometry,
    SplineSampler,
    direction_sampler,
    nu_of,
    theta_of,
)

SINOGRAM_KINDS = ("scattering_data", "attenuated", "functional", "trace")


@dataclass(frozen=True, eq=False)
class Sinogram:
    """Matrix samples ``values[i_offset, i_angle, row, col]`` over lines ``(y2, phi)``."""

    offsets: np.ndarray
    angles: np.ndarray
    values: np.ndarray
    kind: str = "scattering_data"

    def __post_init__(self):
        off = np.asarray(self.offsets, float)
        ang = np.asarray(self.angles, float)
        v = np.asarray(self.values, complex)
        if self.kind not in SINOGRAM_KINDS:
            raise ValueError(f"unknown sinogram kind {self.kind!r}")
        if v.ndim != 4 or v.shape[:2] != (off.size, ang.size):
            raise ValueError(f"values must have shape ({off.size}, {ang.size}, rows, cols)")
        if not np.all(np.isfinite(v)):
            raise ValueError("sinogram values must be finite")
        object.__setattr__(self, "offsets", off)
        object.__setattr__(self, "angles", ang)
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def with_values(self, values: np.ndarray, kind: str | None = None) -> "Sinogram":
        return Sinogram(self.offsets, self.angles, values, kind or self.kind)


def default_angles(count: int) -> np.ndarray:
    return 2 * np.pi * np.arange(count) / count


def default_offsets(grid: GridSpec) -> np.ndarray:
    return grid.coords.copy()


BOX_MARGIN = 8


def support_box(grid: GridSpec, margin: int = BOX_MARGIN) -> float:
    """Half-width of the integration box; the spline of a field cut at ``R`` decays
    by about 0.27 per node, so eight nodes push its tail below 1e-4 of the cut."""
    return grid.R + margin * grid.h


@dataclass(frozen=True)
class TransportResult:
    """Samples of ``c0`` (and ``u`` if a source was given) at the requested arc lengths."""

    y1: np.ndarray
    c0: np.ndarray
    u: np.ndarray | None = None


def _line_points(phi: float, y2: np.ndarray, s: np.ndarray):
    th, nu = theta_of(phi), nu_of(phi)
    x1 = s[None, :] * th[0] + y2[:, None] * nu[0]
    x2 = s[None, :] * th[1] + y2[:, None] * nu[1]
    return x1, x2


def march(a_vals: np.ndarray, dy: float, f_vals: np.ndarray | None = None,
          record: int | None = None, method: str = "rk4"):
    """Integrate ``c' = a c`` (and ``u' = a u + f``) from ``c = I``, ``u = 0``.

    ``a_vals[line, k]`` holds the coefficient at ``y1_0 + k*dy/2``; there are
    ``2K + 1`` samples for ``K`` steps.  With ``record = r`` every ``r``-th step
    is kept (including the start), otherwise only the final state.
    ``method = "magnus2"`` uses midpoint exponentials (second order, no source).
    """
    lines, samples, m, _ = a_vals.shape
    steps = (samples - 1) // 2
    k = 0 if f_vals is None else f_vals.shape[-1]
    y = np.zeros((lines, m, m + k), complex)
    y[:, :, :m] = np.eye(m)
    keep = [y.copy()] if record else None
    if method == "magnus2":
        if f_vals is not None:
            raise ValueError("magnus2 does not support a source term")
        props = scipy.linalg.expm(dy * a_vals[:, 1::2])
    elif method != "rk4":
        raise ValueError(f"unknown integrator {method!r}")
    src = None
    if f_vals is not None:
        src = np.zeros((lines, samples, m, m + k), complex)
        src[..., m:] = f_vals
    half = 0.5 * dy
    for j in range(steps):
        if method == "magnus2":
            y = props[:, j] @ y
        else:
            a0, ah, a1 = a_vals[:, 2 * j], a_vals[:, 2 * j + 1], a_vals[:, 2 * j + 2]
            if src is None:
                k1 = a0 @ y
                k2 = ah @ (y + half * k1)
                k3 = ah @ (y + half * k2)
                k4 = a1 @ (y + dy * k3)
            else:
                f0, fh, f1 = src[:, 2 * j], src[:, 2 * j + 1], src[:, 2 * j + 2]
                k1 = a0 @ y + f0
                k2 = ah @ (y + half * k1) + fh
                k3 = ah @ (y + half * k2) + fh
                k4 = a1 @ (y + dy * k3) + f1
            y = y + (dy / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if record and (j + 1) % record == 0:
            keep.append(y.copy())
    out = np.stack(keep, axis=1) if record else y
    if f_vals is None:
        return out, None
    return out[..., :m], out[..., m:]


def _box_steps(grid: GridSpec, step: float | None) -> tuple[float, int, float]:
    rho = support_box(grid)
    step = 0.5 * grid.h if step is None else float(step)
    if step <= 0:
        raise ValueError("ray step must be positive")
    count = int(np.ceil(2 * rho / step - 1e-9))
    return rho, count, 2 * rho / count


def transport_solve(A: GaugeField, ray: RayGeometry, rhs: MatrixField | None = None,
                    step: float | None = None, method: str = "rk4") -> TransportResult:
    """``c0`` (and ``u = c0 int c0^-1 f``) at the arc lengths ``ray.samples``.

    Integration runs over consecutive samples with sub-steps no longer than
    ``step`` (default ``h/2``).  The first sample must precede the support.
    """
    grid = A.grid
    s = np.asarray(ray.samples, float)
    if s.ndim != 1 or s.size < 2 or np.any(np.diff(s) <= 0):
        raise ValueError("ray samples must be increasing")
    if abs(ray.y2) < grid.R and s[0] > -np.sqrt(grid.R**2 - ray.y2**2):
        raise ValueError("first ray sample must lie before the support")
    step = 0.5 * grid.h if step is None else float(step)
    dist = np.diff(s)
    sub = np.maximum(1, np.ceil(dist / step - 1e-9).astype(int))
    fine = np.concatenate([[s[0]]] + [s[i] + dist[i] * np.arange(1, 2 * sub[i] + 1) / (2 * sub[i])
                                      for i in range(s.size - 1)])
    sampler = direction_sampler(A, ray.phi)
    x1, x2 = _line_points(ray.phi, np.array([ray.y2]), fine)
    a_vals = sampler(x1, x2)
    f_vals = None
    if rhs is not None:
        f_vals = SplineSampler.of_field(rhs)(x1, x2)
    m = A.m
    y = np.zeros((1, m, m + (0 if rhs is None else rhs.cols)), complex)
    y[:, :, :m] = np.eye(m)
    out = [y[0]]
    pos = 0
    for i in range(s.size - 1):
        seg = slice(pos, pos + 2 * sub[i] + 1)
        c, u = march(a_vals[:, seg], dist[i] / sub[i],
                     None if f_vals is None else f_vals[:, seg], method=method)
        # each segment starts from (I, 0); compose with the state so far
        if u is None:
            y = c @ y
        else:
            y = np.concatenate([c @ y[..., :m], c @ y[..., m:] + u], axis=-1)
        out.append(y[0])
        pos += 2 * sub[i]
    vals = np.stack(out)
    if rhs is None:
        return TransportResult(s, vals)
    return TransportResult(s, vals[..., :m], vals[..., m:])


def _chunks(count: int, size: int):
    for start in range(0, count, size):
        yield slice(start, min(count, start + size))


def _radon_core(A: GaugeField, offsets, angles, f: MatrixField | None, step, method, chunk=8):
    grid = A.grid
    rho, count, dy = _box_steps(grid, step)
    s = -rho + 0.5 * dy * np.arange(2 * count + 1)
    offsets = np.asarray(offsets, float)
    active = np.flatnonzero(np.abs(offsets) <= rho)
    y2 = offsets[active]
    m = A.m
    k = 0 if f is None else f.cols
    c_out = np.broadcast_to(np.eye(m, dtype=complex), (offsets.size, len(angles), m, m)).copy()
    u_out = None if f is None else np.zeros((offsets.size, len(angles), m, k), complex)
    cache: dict = {}
    f_sampler = None if f is None else SplineSampler.of_field(f)
    for sl in _chunks(len(angles), chunk):
        a_vals, f_vals = [], []
        for phi in angles[sl]:
            x1, x2 = _line_points(phi, y2, s)
            a_vals.append(direction_sampler(A, phi, cache)(x1, x2))
            if f_sampler is not None:
                f_vals.append(f_sampler(x1, x2))
        a_vals = np.concatenate(a_vals)
        c, u = march(a_vals, dy, np.concatenate(f_vals) if f_vals else None, method=method)
        nb = sl.stop - sl.start
        c_out[active, sl] = c.reshape(nb, y2.size, m, m).transpose(1, 0, 2, 3)
        if u is not None:
            u_out[active, sl] = u.reshape(nb, y2.size, m, k).transpose(1, 0, 2, 3)
    return c_out, u_out


def nonabelian_radon(A: GaugeField, offsets=None, angles=None, n_angles: int = 180,
                     step: float | None = None, method: str = "rk4") -> Sinogram:
    """Total transport ``S(A)(y2, phi)`` across every line."""
    offsets = default_offsets(A.grid) if offsets is None else np.asarray(offsets, float)
    angles = default_angles(n_angles) if angles is None else np.asarray(angles, float)
    c, _ = _radon_core(A, offsets, angles, None, step, method)
    return Sinogram(offsets, angles, c, "scattering_data")


def attenuated_radon(A: GaugeField, f: MatrixField, offsets=None, angles=None,
                     n_angles: int = 256, step: float | None = None) -> Sinogram:
    """``(R_A f)(y2, phi) = int c0^-1 f dy1`` via the augmented system ``u' = A u + f``.

    Since ``u = c0 int c0^-1 f``, the transform equals ``c0(+inf)^-1 u(+inf)``.
    """
    if f.grid != A.grid or f.rows != A.m:
        raise ValueError("source must live on the field grid with m rows")
    offsets = default_offsets(A.grid) if offsets is None else np.asarray(offsets, float)
    angles = default_angles(n_angles) if angles is None else np.asarray(angles, float)
    c, u = _radon_core(A, offsets, angles, f, step, "rk4")
    return Sinogram(offsets, angles, np.linalg.solve(c, u), "attenuated")


def line_integrals(sample: Callable, offsets, angles, extent: float, nodes: int = 64,
                   panels: int = 16) -> np.ndarray:
    """Composite Gauss-Legendre integral over ``|y1| <= extent`` of ``sample(x1, x2)``.

    ``sample`` maps coordinate arrays of shape ``(L, S)`` to ``(L, S, ...)``.
    """
    g, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(-extent, extent, panels + 1)
    half = 0.5 * np.diff(edges)
    s = (edges[:-1, None] + half[:, None] * (g + 1)).ravel()
    wt = (half[:, None] * w).ravel()
    offsets = np.asarray(offsets, float)
    out = []
    for phi in angles:
        vals = sample(*_line_points(phi, offsets, s))
        out.append(np.tensordot(vals, wt, axes=([1], [0])) if vals.ndim == 2
                   else np.einsum("ls...,s->l...", vals, wt))
    return np.stack(out, axis=1)


def abelian_closed_form(A: GaugeField, offsets=None, angles=None, n_angles: int = 180) -> Sinogram:
    """``exp`` of the classical Radon transform of the scalar ``A(x, theta)`` (Gauss quadrature)."""
    if A.m != 1:
        raise ValueError("abelian closed form needs a scalar field (m = 1)")
    grid = A.grid
    offsets = default_offsets(grid) if offsets is None else np.asarray(offsets, float)
    angles = default_angles(n_angles) if angles is None else np.asarray(angles, float)
    cache: dict = {}
    radon = np.empty((offsets.size, angles.size), complex)
    rho = support_box(grid)
    for j, phi in enumerate(angles):
        sampler = direction_sampler(A, phi, cache)
        radon[:, j] = line_integrals(lambda x1, x2: sampler(x1, x2)[..., 0, 0], offsets, [phi], rho)[:, 0]
    radon[np.abs(offsets) > rho] = 0.0
    return Sinogram(offsets, angles, np.exp(radon)[:, :, None, None], "scattering_data")


def frame_transport(A: GaugeField, phi: float, y2: np.ndarray, y1: np.ndarray,
                    f: MatrixField | None = None, cache: dict | None = None):
    """``c0`` (and ``u``) on a rotated lattice ``(y2, y1)`` with spacing ``h``.

    ``y1`` must be a lattice of the grid (see :meth:`GridSpec.lattice`).  Only the
    nodes inside the support box are integrated (step ``h/2``); ``c0 = I`` and
    ``u = 0`` before the box, both are constant after it.
    """
    grid = A.grid
    rho = support_box(grid)
    m = A.m
    inside = np.abs(y1) <= rho
    idx = np.flatnonzero(inside)
    lines = np.flatnonzero(np.abs(y2) <= rho)
    shape = (y2.size, y1.size, m, m)
    c = np.broadcast_to(np.eye(m, dtype=complex), shape).copy()
    u = None if f is None else np.zeros((y2.size, y1.size, m, f.cols), complex)
    if idx.size == 0 or lines.size == 0:
        return c, u
    s = y1[idx[0]] + 0.25 * grid.h * np.arange(4 * (idx.size - 1) + 1)
    x1, x2 = _line_points(phi, y2[lines], s)
    a_vals = direction_sampler(A, phi, cache)(x1, x2)
    f_vals = None if f is None else SplineSampler.of_field(f)(x1, x2)
    cb, ub = march(a_vals, 0.5 * grid.h, f_vals, record=2)
    c[np.ix_(lines, idx)] = cb
    c[np.ix_(lines, np.arange(idx[-1] + 1, y1.size))] = cb[:, -1:]
    if u is not None:
        u[np.ix_(lines, idx)] = ub
        u[np.ix_(lines, np.arange(idx[-1] + 1, y1.size))] = ub[:, -1:]
    return c, u
