"""Singular integral operators of planar transport problems.

All free-space convolutions (the solid Cauchy transform ``S``, the operator
``Pi(t)`` inverting ``zeta(t).d/dx`` off the unit circle, and the line Hilbert
transform inside the Riesz projections) are evaluated with truncated kernels:
the kernel is cut off beyond the largest distance that can occur between an
evaluation point and the support of the data, the Fourier transform of the cut
kernel is known in closed form, and the convolution is done on a zero-padded
FFT grid large enough that periodic images never reach the evaluation window.
For smooth compactly supported data the result is spectrally accurate.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import j0, sici

from .gauge_field import (
    Frame,
    GridSpec,
    MatrixField,
    SplineSampler,
    frame_to_grid,
    make_phantom,
    reconstruction_window,
    spectral_derivative,
    theta_of,
)


@dataclass(frozen=True)
class SpectralParam:
    """Point ``t`` of the spectral plane (``t = inf`` allowed) and its direction ``zeta(t)``.

    ``zeta1 = (t + 1/t)/2`` and ``zeta2 = (i/2)(t - 1/t)``, so that
    ``zeta.d/dx = t d/dzbar + (1/t) d/dz`` and ``zeta(e^{i phi}) = (cos phi, -sin phi)``.
    ``side`` selects the one-sided limit for points on the unit circle.
    """

    t: complex
    side: int = 0

    def __post_init__(self):
        if self.t == 0:
            raise ValueError("t = 0 is not a spectral parameter")
        if abs(abs(self.t) - 1.0) < 1e-14 and self.side not in (1, -1) and np.isfinite(abs(self.t)):
            object.__setattr__(self, "side", 0)

    @property
    def zeta(self) -> np.ndarray:
        t = complex(self.t)
        return np.array([(t + 1 / t) / 2, 0.5j * (t - 1 / t)])

    @property
    def region(self) -> str:
        if not np.isfinite(abs(self.t)):
            return "infinity"
        r = abs(self.t)
        if abs(r - 1.0) < 1e-14:
            return {1: "boundary_plus", -1: "boundary_minus"}.get(self.side, "circle")
        return "exterior" if r > 1 else "interior"


def support_radius(values: np.ndarray, grid: GridSpec, tol: float = 1e-13) -> float:
    """Radius of the smallest centred disk holding all nodes where ``|h| > tol * max|h|``."""
    norm = np.sqrt(np.sum(np.abs(values) ** 2, axis=tuple(range(2, values.ndim))))
    peak = norm.max()
    if peak == 0:
        return 0.0
    r = grid.radius()[norm > tol * peak]
    return float(r.max() + grid.h)


def _cut_cauchy_symbol(e1: np.ndarray, e2: np.ndarray, L: float) -> np.ndarray:
    """Fourier transform of ``1/(pi w)`` restricted to ``|w| < L``.

    Equals ``-2i (1 - J0(L|eta|)) / (eta1 + i eta2)``, smooth at the origin.
    """
    q = np.hypot(e1, e2)
    out = np.zeros(np.broadcast(e1, e2).shape, complex)
    nz = q > 0
    d = (e1 + 1j * e2)[nz]
    out[nz] = -2j * (1.0 - j0(L * q[nz])) / d
    return out


def _pi_t_map(t: complex) -> np.ndarray:
    """Real matrix of ``x -> w = t z - zbar/t`` in (Re, Im) coordinates."""
    a = t - 1 / t
    b = t + 1 / t
    return np.array([[a.real, -b.imag], [a.imag, b.real]])


MAX_PAD = 6144


class ConvolutionPlan:
    """Free-space convolution with ``1/(pi z)`` (``t=None``) or the ``Pi(t)`` kernel.

    Acts on data sampled on a centred square lattice of ``nodes`` points per
    axis with spacing ``h``; the data must vanish outside the disk of radius
    ``support`` and the output is formed at nodes within ``eval_radius`` of the
    centre (default: the whole square).  The padded kernel spectrum is built
    once, so the plan is cheap to apply repeatedly.
    """

    def __init__(self, nodes: int, h: float, support: float, t: complex | None = None,
                 eval_radius: float | None = None):
        half = 0.5 * (nodes - 1) * h
        span = half if eval_radius is None else min(eval_radius, half)
        reach = (np.sqrt(2.0) * half if eval_radius is None
                 else min(np.sqrt(2.0) * half, eval_radius)) + support
        if t is None:
            cut, stretch = reach, 1.0
            transform = None
            scale = 1.0
        else:
            M = _pi_t_map(complex(t))
            smax, smin = np.linalg.svd(M, compute_uv=False)
            cut, stretch = smax * reach, smax / smin
            transform = np.linalg.inv(M).T
            scale = 1.0 / np.linalg.det(M)
        period = span + support + reach * stretch
        npad = max(sfft.next_fast_len(int(np.ceil(period / h)) + 4), nodes)
        if npad > MAX_PAD:
            raise MemoryError(f"padded FFT grid of {npad}^2 exceeds the {MAX_PAD}^2 limit")
        xi = 2 * np.pi * sfft.fftfreq(npad, d=h)
        k1, k2 = np.meshgrid(xi, xi, indexing="ij")
        if transform is not None:
            k1, k2 = (transform[0, 0] * k1 + transform[0, 1] * k2,
                      transform[1, 0] * k1 + transform[1, 1] * k2)
        self.symbol = scale * _cut_cauchy_symbol(k1, k2, cut)
        self.nodes, self.npad, self.h = nodes, npad, h
        self.mask = None
        if eval_radius is not None:
            x = (np.arange(nodes) - 0.5 * (nodes - 1)) * h
            self.mask = np.hypot(x[:, None], x[None, :]) > eval_radius

    def __call__(self, values: np.ndarray) -> np.ndarray:
        n = self.nodes
        pad = np.zeros((self.npad, self.npad) + values.shape[2:], complex)
        pad[:n, :n] = values
        spec = sfft.fft2(pad, axes=(0, 1))
        spec *= self.symbol.reshape(self.symbol.shape + (1,) * (values.ndim - 2))
        out = sfft.ifft2(spec, axes=(0, 1))[:n, :n]
        if self.mask is not None:
            out[self.mask] = 0.0
        return out


def cauchy_solid(h: MatrixField, eval_radius: float | None = None) -> MatrixField:
    """Solid Cauchy transform ``(Sh)(z) = (1/pi) int h(w)/(z - w) dw``; right inverse of d/dzbar.

    With ``eval_radius`` the result is only formed on ``|x| <= eval_radius``
    (zero elsewhere), which shrinks the padded FFT.
    """
    v, grid = h.values, h.grid
    if not np.any(v):
        return MatrixField(grid, np.zeros_like(v))
    plan = ConvolutionPlan(grid.n, grid.h, support_radius(v, grid), None, eval_radius)
    return MatrixField(grid, plan(v))


def pi_t(h: MatrixField, t, eval_radius: float | None = None) -> MatrixField:
    """``Pi(t) h``, the inverse of ``zeta(t).d/dx`` for ``|t| != 1``.

    The kernel is ``sign(|t|-1) / (pi (t z - zbar/t))`` evaluated at ``x - x'``;
    for large ``t`` it behaves like ``S/t``.  The padded grid grows like
    ``(|t| + 1/|t|) / ||t| - 1/|t||`` as ``t`` nears the unit circle; ``eval_radius``
    limits the output region as in :func:`cauchy_solid`.
    """
    t = complex(t.t if isinstance(t, SpectralParam) else t)
    if abs(abs(t) - 1.0) < 1e-12:
        raise ValueError("pi_t needs |t| != 1; use pi_boundary on the unit circle")
    v, grid = h.values, h.grid
    if not np.any(v):
        return MatrixField(grid, np.zeros_like(v))
    plan = ConvolutionPlan(grid.n, grid.h, support_radius(v, grid), t, eval_radius)
    return MatrixField(grid, plan(v))


def dbar(h: MatrixField) -> MatrixField:
    """``d/dzbar = (d/dx1 + i d/dx2)/2`` by spectral differentiation (data must vanish at the edges)."""
    v, g = h.values, h.grid
    return MatrixField(g, 0.5 * (spectral_derivative(v, g.h, 0) + 1j * spectral_derivative(v, g.h, 1)))


def d_z(h: MatrixField) -> MatrixField:
    """``d/dz = (d/dx1 - i d/dx2)/2``, spectral."""
    v, g = h.values, h.grid
    return MatrixField(g, 0.5 * (spectral_derivative(v, g.h, 0) - 1j * spectral_derivative(v, g.h, 1)))


def directional(h: MatrixField, zeta) -> MatrixField:
    """``zeta1 d/dx1 + zeta2 d/dx2`` for a (possibly complex) direction, spectral."""
    v, g = h.values, h.grid
    z1, z2 = zeta
    return MatrixField(g, z1 * spectral_derivative(v, g.h, 0) + z2 * spectral_derivative(v, g.h, 1))


# -- one-dimensional operators -------------------------------------------------

def riesz_projections(h: np.ndarray, dy: float, axis: int = 0,
                      support: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Split line samples into ``(Pi+ h, Pi- h)`` with ``Pi+ + Pi- = identity``.

    ``Pi+`` keeps negative frequencies (``e^{i y eta}``, ``eta < 0``) and so
    extends analytically to ``Im y < 0``; ``Pi-`` keeps positive ones.  In kernel
    form ``Pi+- h = h/2 -+ (i/2) H h`` with ``H`` the line Hilbert transform
    ``(1/pi) PV int h(y')/(y - y') dy'``.

    The samples sit on a symmetric uniform lattice along ``axis`` and are taken
    to vanish outside ``|y| <= support`` (default: the whole lattice).  The
    output is the free-line transform evaluated on the same lattice.
    """
    h = np.asarray(h, complex)
    h = np.moveaxis(h, axis, 0)
    n = h.shape[0]
    extent = 0.5 * (n - 1) * dy
    rho = extent if support is None else min(float(support), extent)
    L = extent + rho
    npad = sfft.next_fast_len(int(np.ceil((2 * extent + 2 * rho) / dy)) + 8)
    eta = 2 * np.pi * sfft.fftfreq(npad, d=dy)
    si, _ = sici(L * eta)
    plus = 0.5 - si / np.pi
    pad = np.zeros((npad,) + h.shape[1:], complex)
    pad[:n] = h
    spec = sfft.fft(pad, axis=0)
    shape = (npad,) + (1,) * (h.ndim - 1)
    p = sfft.ifft(spec * plus.reshape(shape), axis=0)[:n]
    return np.moveaxis(p, 0, axis), np.moveaxis(h - p, 0, axis)


def riesz(h: np.ndarray, dy: float, sign: int, axis: int = 0, support: float | None = None) -> np.ndarray:
    """``Pi^+`` (``sign = +1``) or ``Pi^-`` (``sign = -1``) along ``axis``."""
    p, m = riesz_projections(h, dy, axis, support)
    return p if sign > 0 else m


def embed(values: np.ndarray, n_out: int, axis: int = 0) -> np.ndarray:
    """Zero-extend samples on a centred lattice to a longer centred lattice."""
    n_in = values.shape[axis]
    extra = n_out - n_in
    if extra < 0 or extra % 2:
        raise ValueError("target lattice must be longer by an even number of nodes")
    pad = [(0, 0)] * values.ndim
    pad[axis] = (extra // 2, extra // 2)
    return np.pad(values, pad)


def cumulative_integral(g: np.ndarray, dy: float, axis: int = 0) -> np.ndarray:
    """``int_{y_0}^{y} g`` at every node, spectrally accurate for smooth data vanishing at both ends.

    The data are placed in a periodic box four times longer; a Gaussian in the
    padding absorbs the total integral so the periodic antiderivative is exact
    on the original nodes.
    """
    g = np.moveaxis(np.asarray(g, complex), axis, 0)
    n = g.shape[0]
    npad = sfft.next_fast_len(4 * n)
    total = dy * g.sum(axis=0)
    y = np.arange(npad) * dy
    centre = 0.5 * (n - 1 + npad) * dy
    sigma = (centre - (n - 1) * dy) / 8.0
    w = np.exp(-0.5 * ((y - centre) / sigma) ** 2)
    w /= dy * w.sum()
    pad = np.zeros((npad,) + g.shape[1:], complex)
    pad[:n] = g
    pad -= w.reshape((npad,) + (1,) * (g.ndim - 1)) * total
    k = 2 * np.pi * sfft.fftfreq(npad, d=dy)
    spec = sfft.fft(pad, axis=0)
    inv = np.zeros_like(k, dtype=complex)
    inv[1:] = 1.0 / (1j * k[1:])
    anti = sfft.ifft(spec * inv.reshape((npad,) + (1,) * (g.ndim - 1)), axis=0)[:n]
    anti -= anti[0]
    return np.moveaxis(anti, 0, axis)


def boundary_apply(g: np.ndarray, dy: float, sign: int, support: float | None = None,
                   totals: bool = False):
    """``Pi_+-(e^{i phi})`` on data in a rotated frame ``g[j2, j1, ...]``.

    ``Pi_+ g = int_{-inf}^{y1} Pi^+ g - int_{y1}^{inf} Pi^- g``, which, since
    the projections add to the identity, equals
    ``int_{-inf}^{y1} g - Pi^- int g``; ``Pi_-`` swaps the two projections.
    With ``totals=True`` the y1-integral ``int g dy1`` (a function of y2) is
    returned as well.
    """
    anti = cumulative_integral(g, dy, axis=1)
    tot = dy * g.sum(axis=1)
    corr = riesz(tot, dy, -sign, axis=0, support=support)
    out = anti - corr[:, None]
    return (out, tot) if totals else out


def pi_boundary(h: MatrixField, phi: float, sign: int) -> MatrixField:
    """Boundary value ``Pi_+(e^{i phi}) h`` (``sign=+1``) or ``Pi_-(e^{i phi}) h`` on the grid.

    The field is resampled onto a rotated lattice large enough to cover the
    grid square, transformed along lines, and resampled back (bicubic).
    """
    grid = h.grid
    if not np.any(h.values):
        return MatrixField(grid, np.zeros_like(h.values))
    lat = grid.lattice(np.sqrt(2.0) * grid.half_extent + 2 * grid.h)
    frame = Frame(phi, lat, lat)
    g = SplineSampler.of_field(h)(*frame.points())
    rs = support_radius(h.values, grid)
    out = boundary_apply(g, grid.h, sign, support=rs)
    return frame_to_grid(out, frame, grid)


# -- identity checks -----------------------------------------------------------

def identity_residual(F: MatrixField, h: MatrixField, zeta) -> float:
    """Relative L2 defect of ``zeta . d(chi F) = h`` on the disk where ``chi = 1``.

    ``F`` decays only like ``1/|x|``, so it is cut off smoothly before the
    derivative is taken; the defect is measured where the cut-off is flat.
    """
    g = h.grid
    chi = reconstruction_window(g)
    D = directional(MatrixField(g, F.values * chi[:, :, None, None]), zeta)
    flat = g.radius() <= 1.25 * g.R
    d = (D.values - h.values)[flat]
    return float(np.sqrt(np.sum(np.abs(d) ** 2) / np.sum(np.abs(h.values) ** 2)))


def identity_suite(n: int, R: float = 1.0, t: complex = 2.0, phi: float = 0.7,
                   seed: int = 0) -> dict:
    """Residuals of the right-inverse identities on a Gaussian bump at grid size ``n``."""
    grid = GridSpec(n, R)
    h = make_phantom("gaussian_bump", grid).a0
    rng = np.random.default_rng(seed)
    lines = rng.standard_normal((n, 8)) + 1j * rng.standard_normal((n, 8))
    p, m = riesz_projections(lines, grid.h)
    th = theta_of(phi)
    return {
        "projection_sum": float(np.abs(p + m - lines).max() / np.abs(lines).max()),
        "dbar_solid": identity_residual(cauchy_solid(h), h, (0.5, 0.5j)),
        "pi_t": identity_residual(pi_t(h, t), h, SpectralParam(t).zeta),
        "boundary_plus": identity_residual(pi_boundary(h, phi, 1), h, th),
        "boundary_minus": identity_residual(pi_boundary(h, phi, -1), h, th),
    }
