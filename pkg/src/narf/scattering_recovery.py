"""Potential recovery from line functionals of a field with the ``-i`` coupling.

The field enters as ``M = -i A(x, theta)`` (``A0 = 0``).  Two families of line
functionals are synthesized from the spectral solutions by quadrature:
``I_+- = int c_+-^-1 M dy1`` and ``J_+- = int c_+-^-1 V c_+- dy1``.  From ``I`` the
boundary traces of ``c_+-`` are recovered, from ``J`` and those traces the
traces of ``B_+-``, and from ``B`` the potential ``V``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.interpolate import make_interp_spline

from .attenuated_inversion import extend_offsets, frame_lattice, frame_values_to_grid, windowed_dbar
from .gauge_field import (
    Frame,
    GaugeField,
    GridSpec,
    MatrixField,
    SplineSampler,
    direction_sampler,
    nu_of,
)
from .cauchy_ops import riesz
from .ray_transport import frame_transport, support_box
from .spectral_solutions import SpectralFamily

SCATTERING_COUPLING = -1j


class FactorizationError(RuntimeError):
    """The jump matrix is too far from the identity for the Neumann iteration."""


@dataclass(frozen=True, eq=False)
class ScatteringFunctionals:
    I_plus: np.ndarray | None = None
    I_minus: np.ndarray | None = None
    J_plus: np.ndarray | None = None
    J_minus: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class RHJumpData:
    """``b[y2, phi] = c_-(-inf)^-1 c_+(-inf)`` on the offset lattice."""

    offsets: np.ndarray
    angles: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if np.min(np.abs(np.linalg.det(self.b))) < 1e-12:
            raise ValueError("jump matrix is singular")

    def deviation(self) -> float:
        return float(np.abs(self.b - np.eye(self.b.shape[-1])).max())


def scattering_field(a1: MatrixField, a2: MatrixField) -> GaugeField:
    """Field with ``A0 = 0`` and the ``-i`` coupling."""
    return GaugeField(a1, a2, MatrixField.zeros(a1.grid, a1.rows), SCATTERING_COUPLING)


def _require_fields(family: SpectralFamily):
    if family.solutions is None:
        raise ValueError("family must be built with keep_fields=True")


def _line_totals(family: SpectralFamily, integrand) -> dict:
    """``int integrand(sol) dy1`` on every box line, embedded in the family offsets."""
    _require_fields(family)
    out = {}
    for sign, sols in family.solutions.items():
        vals = []
        for sol in sols:
            tot = sol.dy * np.sum(integrand(sol), axis=1)
            vals.append(extend_offsets(tot, sol.y, family.offsets))
        out[sign] = np.stack(vals, axis=1)
    return out


def synthesize_I(family: SpectralFamily, check_tol: float | None = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """``I_+- (y2, phi) = int c_+-^-1 M dy1``, checked against the telescoping identity.

    The identity ``I = c^-1(-inf) - c^-1(+inf)`` must hold to ``check_tol``
    relative to ``max |c^-1|``; ``None`` disables the check.
    """
    tot = _line_totals(family, lambda s: np.linalg.solve(s.values, s.coupling_field))
    if check_tol is not None:
        for sign, vals in tot.items():
            gap = telescoping_defect(family, sign, vals)
            if gap > check_tol:
                raise RuntimeError(f"telescoping identity violated for sign {sign}: {gap:.2e}")
    return tot[1], tot[-1]


def telescoping_defect(family: SpectralFamily, sign: int, I: np.ndarray) -> float:
    lo = np.linalg.inv(family.trace(sign, "minus"))
    hi = np.linalg.inv(family.trace(sign, "plus"))
    return float(np.abs(I - (lo - hi)).max() / max(np.abs(lo).max(), np.abs(hi).max()))


def recover_boundary_from_I(I_plus: np.ndarray, I_minus: np.ndarray, offsets: np.ndarray,
                            support: float) -> dict:
    """Inverse traces ``c_+-^-1(-+inf)`` from the functionals.

    ``c^-1(-inf) - I`` and ``c^-1(+inf) - I`` extend analytically to opposite
    half planes in ``y2``, so the projections split ``I = c^-1(-inf) - c^-1(+inf)``:
    ``c_+^-1(-inf) = I + Pi^- I_+``, ``c_+^-1(+inf) = I - Pi^+ I_+`` and, for
    ``c_-``, the two projections swap.
    """
    dy = float(offsets[1] - offsets[0])
    m = I_plus.shape[-1]
    eye = np.eye(m)
    out = {}
    for sign, I in ((1, I_plus), (-1, I_minus)):
        p_plus, p_minus = (riesz(I, dy, s, axis=0, support=support) for s in (1, -1))
        lo = eye + (p_minus if sign > 0 else p_plus)
        hi = eye - (p_plus if sign > 0 else p_minus)
        for name, v in (("minus", lo), ("plus", hi)):
            if np.min(np.abs(np.linalg.det(v))) < 1e-12:
                raise np.linalg.LinAlgError("recovered trace is singular; functionals inconsistent")
        out[(sign, "minus")] = lo
        out[(sign, "plus")] = hi
    return out


def invert_traces(inverse_traces: dict) -> dict:
    return {k: np.linalg.inv(v) for k, v in inverse_traces.items()}


def build_rh_data(traces: dict, offsets: np.ndarray, angles: np.ndarray) -> RHJumpData:
    """``b = c_-(-inf)^-1 c_+(-inf)`` from (forward or recovered) traces."""
    b = np.linalg.solve(traces[(-1, "minus")], traces[(1, "minus")])
    return RHJumpData(np.asarray(offsets), np.asarray(angles), b)


@dataclass(frozen=True, eq=False)
class RHSolution:
    points: np.ndarray
    c_plus: np.ndarray
    c_minus: np.ndarray
    jump: np.ndarray
    iterations: int
    residual: float


def jump_at_points(b: RHJumpData, points: np.ndarray) -> np.ndarray:
    """``b(x.nu(phi), phi)`` at every point and angle, cubic in ``y2``."""
    pts = np.asarray(points, float)
    m = b.b.shape[-1]
    out = np.empty((pts.shape[0], b.angles.size, m, m), complex)
    for j, phi in enumerate(b.angles):
        spline = make_interp_spline(b.offsets, b.b[:, j], k=3, axis=0)
        out[:, j] = spline(pts @ nu_of(phi))
    return out


def rh_factorize(b: RHJumpData, points: np.ndarray, tol: float = 1e-12, max_iter: int = 200,
                 bound: float = 0.5) -> RHSolution:
    """Solve ``c_- c_+^-1``-free jump problem ``c_+ = c_- b`` on the circle, per point.

    ``c_+`` has only non-positive Fourier modes in ``phi`` and tends to ``I`` at
    ``t = inf``; ``c_-`` has only non-negative modes.  With ``F = c_-(b - I)``
    this gives ``c_- = I - P_{k>=0} F`` and ``c_+ = I + P_{k<0} F``, iterated from
    ``c_- = I``.  Requires ``max |b - I| < bound`` (Neumann contraction).
    """
    jump = jump_at_points(b, points)
    dev = float(np.abs(jump - np.eye(jump.shape[-1])).max())
    if dev >= bound:
        raise FactorizationError(f"|b - I| = {dev:.3f} exceeds the contraction bound {bound}")
    n_ang = b.angles.size
    k = sfft.fftfreq(n_ang, 1.0 / n_ang)
    nonneg = (k >= 0)[None, :, None, None]
    eye = np.eye(jump.shape[-1])
    bm = jump - eye
    c_minus = np.broadcast_to(eye, jump.shape).astype(complex)
    # on a uniform angle grid the mode t^k sits at FFT index k whatever the first angle
    for it in range(1, max_iter + 1):
        F = sfft.fft(c_minus @ bm, axis=1)
        new = eye - sfft.ifft(np.where(nonneg, F, 0), axis=1)
        step = float(np.abs(new - c_minus).max())
        c_minus = new
        if step < tol:
            break
    F = sfft.fft(c_minus @ bm, axis=1)
    c_plus = eye + sfft.ifft(np.where(nonneg, 0, F), axis=1)
    residual = float(np.abs(np.linalg.solve(c_minus, c_plus) - jump).max())
    return RHSolution(np.asarray(points), c_plus, c_minus, jump, it, residual)


def gauge_witness(rec: np.ndarray, true: np.ndarray) -> float:
    """Largest variance over ``t`` of ``rec(x, t) true(x, t)^-1`` across points."""
    w = rec @ np.linalg.inv(true)
    mean = w.mean(axis=1, keepdims=True)
    return float(np.max(np.mean(np.sum(np.abs(w - mean) ** 2, axis=(-2, -1)), axis=1)))


def synthesize_J(family: SpectralFamily, V: MatrixField) -> tuple[np.ndarray, np.ndarray]:
    """``J_+- = int c_+-^-1 V c_+- dy1`` along every line."""
    sampler = SplineSampler.of_field(V)

    def integrand(sol):
        Vf = sampler(*Frame(sol.phi, sol.y, sol.y).points())
        return np.linalg.solve(sol.values, Vf @ sol.values)

    tot = _line_totals(family, integrand)
    return tot[1], tot[-1]


def recover_B_traces(J_plus: np.ndarray, J_minus: np.ndarray, traces: dict, offsets: np.ndarray,
                     support: float) -> tuple[np.ndarray, np.ndarray]:
    """``B_+(-inf) = -c_+ (Pi^- J_+) c_+^-1`` and ``B_-(-inf) = -c_- (Pi^+ J_-) c_-^-1`` (traces at ``-inf``)."""
    dy = float(offsets[1] - offsets[0])
    out = []
    for sign, J in ((1, J_plus), (-1, J_minus)):
        c = traces[(sign, "minus")]
        p = riesz(J, dy, -sign, axis=0, support=support)
        out.append(-c @ np.linalg.solve(c.swapaxes(-1, -2), p.swapaxes(-1, -2)).swapaxes(-1, -2))
    return out[0], out[1]


def propagate_B(A: GaugeField, phi: float, dB: np.ndarray, lattice: np.ndarray,
                cache: dict | None = None) -> tuple[np.ndarray, np.ndarray]:
    """``B = c0 dB(y2) c0^-1`` on the square frame; returns ``(B, c0)``."""
    c0, _ = frame_transport(A, phi, lattice, lattice, cache=cache)
    return c0 @ dB[:, None] @ np.linalg.inv(c0), c0


def recover_potential(B_plus: np.ndarray, B_minus: np.ndarray, A: GaugeField, c_inf: MatrixField,
                      angles: np.ndarray, offsets: np.ndarray) -> tuple[MatrixField, MatrixField]:
    """``V = c dbar[c^-1 I c] c^-1`` with ``c = c(x, inf)`` and ``I`` the contour integral of ``B``.

    Returns ``(V_hat, I)``.
    """
    grid = A.grid
    lat = frame_lattice(grid)
    cache: dict = {}
    total = np.zeros((grid.n, grid.n) + B_plus.shape[2:], complex)
    for j, phi in enumerate(angles):
        dB = extend_offsets(B_plus[:, j] - B_minus[:, j], offsets, lat)
        B, _ = propagate_B(A, phi, dB, lat, cache)
        total += np.exp(1j * phi) * frame_values_to_grid(B, lat, grid, phi)
    I = MatrixField(grid, total / angles.size)
    c = c_inf.values
    cinv = np.linalg.inv(c)
    inner = MatrixField(grid, cinv @ I.values @ c)
    V = MatrixField(grid, c @ windowed_dbar(inner).values @ cinv)
    return V, I


def commutator_residual(A: GaugeField, phi: float, dB: np.ndarray, lattice: np.ndarray) -> float:
    """Relative defect of ``dB/dy1 = [M, B]`` for the propagated ``B`` (fourth-order differences)."""
    B, _ = propagate_B(A, phi, dB, lattice)
    M = direction_sampler(A, phi)(*Frame(phi, lattice, lattice).points())
    h = lattice[1] - lattice[0]
    d = (-B[:, 4:] + 8 * B[:, 3:-1] - 8 * B[:, 1:-3] + B[:, :-4]) / (12 * h)
    comm = (M @ B - B @ M)[:, 2:-2]
    return float(np.linalg.norm(d - comm) / max(np.linalg.norm(comm), 1e-300))


@dataclass(eq=False)
class ScatteringRun:
    functionals: ScatteringFunctionals
    recovered_traces: dict
    B_plus: np.ndarray
    B_minus: np.ndarray
    V_hat: MatrixField
    I_field: MatrixField
    diagnostics: dict


def scattering_pipeline(A: GaugeField, V: MatrixField, family: SpectralFamily) -> ScatteringRun:
    """Synthesize ``I, J``, recover traces from ``I``, then ``B`` and ``V``."""
    rho = support_box(A.grid)
    Ip, Im = synthesize_I(family, check_tol=None)
    inv_tr = recover_boundary_from_I(Ip, Im, family.offsets, rho)
    traces = invert_traces(inv_tr)
    Jp, Jm = synthesize_J(family, V)
    Bp, Bm = recover_B_traces(Jp, Jm, traces, family.offsets, rho)
    V_hat, I = recover_potential(Bp, Bm, A, family.c_inf, family.angles, family.offsets)
    diag = {
        "telescoping_plus": telescoping_defect(family, 1, Ip),
        "telescoping_minus": telescoping_defect(family, -1, Im),
        "trace_recovery": max(float(np.abs(inv_tr[k] - np.linalg.inv(family.traces[k])).max()
                                    / np.abs(np.linalg.inv(family.traces[k])).max()) for k in inv_tr),
    }
    return ScatteringRun(ScatteringFunctionals(Ip, Im, Jp, Jm), traces, Bp, Bm, V_hat, I, diag)


def default_points(grid: GridSpec, stride: int = 4) -> np.ndarray:
    """Grid nodes inside ``B_R`` taken every ``stride`` nodes (RH diagnostics)."""
    x1, x2 = grid.mesh()
    on_lattice = (np.arange(grid.n)[:, None] % stride == 0) & (np.arange(grid.n)[None, :] % stride == 0)
    sel = (np.hypot(x1, x2) <= grid.R) & on_lattice
    return np.stack([x1[sel], x2[sel]], axis=1)
