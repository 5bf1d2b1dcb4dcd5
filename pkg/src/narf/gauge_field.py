"""Matrix-valued fields on a square planar grid, phantoms and the gauge action.

Array convention used throughout the package: a field on the grid is stored as
``values[i1, i2, row, col]`` where ``i1`` indexes ``x1`` and ``i2`` indexes
``x2``.  Fields living in a rotated frame are stored as ``values[j2, j1, ...]``
with ``j2`` indexing the line offset ``y2 = x.nu`` and ``j1`` the arc length
``y1 = x.theta`` along the line.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.fft as sfft
import scipy.linalg
from scipy import ndimage

SUPPORT_TOL = 1e-12

PHANTOM_KINDS = ("gaussian_bump", "disk", "nilpotent_upper", "smooth_random", "scalar_source")


class SupportError(ValueError):
    """A field that must vanish outside B_R does not."""


@dataclass(frozen=True)
class GridSpec:
    """Square grid of ``n x n`` nodes covering ``[-half_extent, half_extent]^2``.

    Nodes sit at ``-half_extent + k*h`` for ``k = 0..n-1``; for even ``n`` this
    is the half-integer lattice ``(k - (n-1)/2) * h``, which rotated frames reuse.
    """

    n: int
    R: float
    half_extent: float | None = None

    def __post_init__(self):
        if self.half_extent is None:
            object.__setattr__(self, "half_extent", 2.0 * self.R)
        n = int(self.n)
        if n < 16 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 16, got {self.n}")
        if not (np.isfinite(self.R) and self.R > 0):
            raise ValueError(f"support radius must be positive, got {self.R}")
        if not self.R < self.half_extent:
            raise ValueError("support radius must be smaller than the half extent")

    @property
    def h(self) -> float:
        return 2.0 * self.half_extent / (self.n - 1)

    @property
    def coords(self) -> np.ndarray:
        return -self.half_extent + self.h * np.arange(self.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.coords
        return np.meshgrid(x, x, indexing="ij")

    def radius(self) -> np.ndarray:
        x1, x2 = self.mesh()
        return np.hypot(x1, x2)

    def lattice(self, extent: float) -> np.ndarray:
        """Nodes of the grid lattice (same spacing and parity) covering ``[-extent, extent]``."""
        half = int(np.ceil(extent / self.h - 0.5 + 1e-9))
        return (np.arange(-half, half) + 0.5) * self.h

    def support_lattice(self, margin: int = 3) -> np.ndarray:
        """Lattice nodes covering the support disk plus ``margin`` nodes."""
        return self.lattice(self.R + margin * self.h)


@dataclass(frozen=True, eq=False)
class MatrixField:
    """Complex ``rows x cols`` matrix at every grid node."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim == 2:
            v = v[:, :, None, None]
        v = v.astype(complex, copy=False)
        n = self.grid.n
        if v.ndim != 4 or v.shape[:2] != (n, n):
            raise ValueError(f"values must have shape ({n}, {n}, rows, cols), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def rows(self) -> int:
        return self.values.shape[2]

    @property
    def cols(self) -> int:
        return self.values.shape[3]

    @property
    def m(self) -> int:
        return self.rows

    @classmethod
    def zeros(cls, grid: GridSpec, rows: int, cols: int | None = None) -> "MatrixField":
        return cls(grid, np.zeros((grid.n, grid.n, rows, rows if cols is None else cols), complex))

    @classmethod
    def identity(cls, grid: GridSpec, m: int) -> "MatrixField":
        return cls(grid, np.broadcast_to(np.eye(m, dtype=complex), (grid.n, grid.n, m, m)).copy())

    def entry_norm(self) -> np.ndarray:
        """Frobenius norm of the matrix at each node."""
        return np.sqrt(np.sum(np.abs(self.values) ** 2, axis=(2, 3)))

    def support_error(self) -> float:
        """Largest entry norm on ``|x| >= R`` relative to the global maximum."""
        norm = self.entry_norm()
        peak = norm.max()
        if peak == 0:
            return 0.0
        outside = self.grid.radius() >= self.grid.R
        return float(norm[outside].max(initial=0.0) / peak)

    def check_support(self, tol: float = SUPPORT_TOL, what: str = "field") -> None:
        err = self.support_error()
        if err > tol:
            raise SupportError(f"{what} is not supported in B_R: relative size {err:.2e} outside")

    def __add__(self, other: "MatrixField") -> "MatrixField":
        return MatrixField(self.grid, self.values + other.values)

    def __sub__(self, other: "MatrixField") -> "MatrixField":
        return MatrixField(self.grid, self.values - other.values)

    def __mul__(self, scalar) -> "MatrixField":
        return MatrixField(self.grid, self.values * scalar)

    __rmul__ = __mul__

    def __matmul__(self, other: "MatrixField") -> "MatrixField":
        return MatrixField(self.grid, self.values @ other.values)

    def inv(self) -> "MatrixField":
        return MatrixField(self.grid, np.linalg.inv(self.values))

    def norm(self) -> float:
        """Discrete L2 norm over the grid."""
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2)) * self.grid.h)


@dataclass(frozen=True, eq=False)
class GaugeField:
    """Components ``(A1, A2, A0)`` and the scalar coupling used to form ``A(x, zeta)``."""

    a1: MatrixField
    a2: MatrixField
    a0: MatrixField
    coupling: complex = 1.0

    def __post_init__(self):
        g = self.a1.grid
        shapes = {c.values.shape for c in (self.a1, self.a2, self.a0)}
        if len(shapes) != 1 or self.a2.grid != g or self.a0.grid != g:
            raise ValueError("gauge components must share grid and matrix shape")
        if self.a1.rows != self.a1.cols:
            raise ValueError("gauge components must be square")

    @property
    def grid(self) -> GridSpec:
        return self.a1.grid

    @property
    def m(self) -> int:
        return self.a1.rows

    @classmethod
    def zero(cls, grid: GridSpec, m: int, coupling: complex = 1.0) -> "GaugeField":
        z = MatrixField.zeros(grid, m)
        return cls(z, z, z, coupling)

    def check_support(self, tol: float = SUPPORT_TOL) -> None:
        for name, comp in zip(("A1", "A2", "A0"), (self.a1, self.a2, self.a0)):
            comp.check_support(tol, name)

    def with_coupling(self, coupling: complex) -> "GaugeField":
        return replace(self, coupling=coupling)

    def scaled(self, factor: float) -> "GaugeField":
        return GaugeField(self.a1 * factor, self.a2 * factor, self.a0 * factor, self.coupling)

    def max_norm(self) -> float:
        return float(max(c.entry_norm().max() for c in (self.a1, self.a2, self.a0)))


def theta_of(phi: float) -> np.ndarray:
    return np.array([np.cos(phi), -np.sin(phi)])


def nu_of(phi: float) -> np.ndarray:
    return np.array([np.sin(phi), np.cos(phi)])


@dataclass(frozen=True)
class RayGeometry:
    """One oriented line ``x = y1*theta + y2*nu`` sampled at arc lengths ``samples``."""

    phi: float
    y2: float
    samples: np.ndarray = field(repr=False)

    @property
    def theta(self) -> np.ndarray:
        return theta_of(self.phi)

    @property
    def nu(self) -> np.ndarray:
        return nu_of(self.phi)

    def points(self) -> np.ndarray:
        s = np.asarray(self.samples)
        return s[:, None] * self.theta + self.y2 * self.nu


@dataclass(frozen=True)
class Frame:
    """Rotated sampling lattice: rows are lines of constant ``y2``, columns constant ``y1``."""

    phi: float
    y1: np.ndarray = field(repr=False)
    y2: np.ndarray = field(repr=False)

    @property
    def theta(self) -> np.ndarray:
        return theta_of(self.phi)

    @property
    def nu(self) -> np.ndarray:
        return nu_of(self.phi)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        th, nu = self.theta, self.nu
        y2, y1 = np.meshgrid(self.y2, self.y1, indexing="ij")
        return y1 * th[0] + y2 * nu[0], y1 * th[1] + y2 * nu[1]


class SplineSampler:
    """Cubic B-spline interpolant of a matrix field on a uniform 2D lattice.

    ``origin`` is the coordinate of node ``(0, 0)`` and ``spacing`` the node
    spacing; outside the lattice the field is continued by zero.
    """

    def __init__(self, coefs: list, shape: tuple, origin: Sequence[float], spacing: float):
        self.coefs = coefs
        self.shape = tuple(shape)
        self.origin = np.asarray(origin, float)
        self.spacing = float(spacing)

    @classmethod
    def from_values(cls, values: np.ndarray, origin: Sequence[float], spacing: float) -> "SplineSampler":
        shape = values.shape[2:]
        coefs = [
            [ndimage.spline_filter(part(values[:, :, i, j]), order=3, mode="grid-constant")
             for part in (np.real, np.imag)]
            for i in range(shape[0]) for j in range(shape[1])
        ]
        return cls(coefs, shape, origin, spacing)

    @classmethod
    def of_field(cls, f: MatrixField) -> "SplineSampler":
        e = f.grid.half_extent
        return cls.from_values(f.values, (-e, -e), f.grid.h)

    def combine(self, weights: Sequence[complex], others: Sequence["SplineSampler"]) -> "SplineSampler":
        """Spline of ``sum w_k * field_k``; splines are linear in the data."""
        coefs = []
        for idx in range(len(self.coefs)):
            re = np.zeros_like(self.coefs[idx][0])
            im = np.zeros_like(re)
            for w, s in zip(weights, others):
                w = complex(w)
                re += w.real * s.coefs[idx][0] - w.imag * s.coefs[idx][1]
                im += w.imag * s.coefs[idx][0] + w.real * s.coefs[idx][1]
            coefs.append([re, im])
        return SplineSampler(coefs, self.shape, self.origin, self.spacing)

    def __call__(self, x1: np.ndarray, x2: np.ndarray) -> np.ndarray:
        x1 = np.asarray(x1, float)
        coords = np.stack([((x1 - self.origin[0]) / self.spacing).ravel(),
                           ((np.asarray(x2, float) - self.origin[1]) / self.spacing).ravel()])
        out = np.empty((coords.shape[1],) + self.shape, complex)
        for idx, (re, im) in enumerate(self.coefs):
            i, j = divmod(idx, self.shape[1])
            out[:, i, j] = ndimage.map_coordinates(re, coords, order=3, mode="grid-constant",
                                                   prefilter=False)
            out[:, i, j] += 1j * ndimage.map_coordinates(im, coords, order=3, mode="grid-constant",
                                                         prefilter=False)
        return out.reshape(x1.shape + self.shape)


def frame_to_grid(values: np.ndarray, frame: Frame, grid: GridSpec) -> MatrixField:
    """Resample a frame field ``values[j2, j1, r, c]`` onto the grid (bicubic)."""
    sampler = SplineSampler.from_values(values, (frame.y2[0], frame.y1[0]), grid.h)
    x1, x2 = grid.mesh()
    y1 = x1 * frame.theta[0] + x2 * frame.theta[1]
    y2 = x1 * frame.nu[0] + x2 * frame.nu[1]
    return MatrixField(grid, sampler(y2, y1))


def grid_to_frame(f: MatrixField | SplineSampler, frame: Frame) -> np.ndarray:
    sampler = f if isinstance(f, SplineSampler) else SplineSampler.of_field(f)
    return sampler(*frame.points())


# -- smooth profiles ---------------------------------------------------------

def smooth_step(s: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.clip(np.asarray(s, float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
        b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1.0 - s, 1.0)), 0.0)
    return a / (a + b)


def mollifier(r: np.ndarray, R: float) -> np.ndarray:
    """``exp(1 - 1/(1 - (r/R)^2))`` inside the disk, exactly zero outside."""
    s = np.asarray(r, float) / R
    out = np.zeros_like(s)
    inside = s < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def reconstruction_window(grid: GridSpec, inner: float | None = None,
                          outer: float | None = None) -> np.ndarray:
    """Radial window equal to 1 on ``|x| <= inner`` and 0 from ``|x| >= outer``.

    Defaults: ``inner = 1.25 R`` and ``outer`` just inside the grid edge.
    """
    inner = 1.25 * grid.R if inner is None else inner
    outer = 0.975 * grid.half_extent if outer is None else outer
    return smooth_step((outer - grid.radius()) / (outer - inner))


def spectral_derivative(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Periodic FFT derivative along ``axis``; valid for data vanishing at the edges."""
    n = values.shape[axis]
    k = 2 * np.pi * sfft.fftfreq(n, d=h)
    shape = [1] * values.ndim
    shape[axis] = n
    return sfft.ifft(1j * k.reshape(shape) * sfft.fft(values, axis=axis), axis=axis)


# -- phantoms ------------------------------------------------------------------

def _bump(grid: GridSpec, center=(0.0, 0.0), sigma: float | None = None) -> np.ndarray:
    x1, x2 = grid.mesh()
    sigma = 0.3 * grid.R if sigma is None else sigma
    g = np.exp(-((x1 - center[0]) ** 2 + (x2 - center[1]) ** 2) / (2 * sigma**2))
    return g * mollifier(np.hypot(x1, x2), grid.R)


def _random_matrix_field(grid: GridSpec, rows: int, cols: int, rng: np.random.Generator,
                         bumps: int = 3) -> np.ndarray:
    out = np.zeros((grid.n, grid.n, rows, cols), complex)
    for _ in range(bumps):
        rad = 0.4 * grid.R * np.sqrt(rng.uniform())
        ang = rng.uniform(0, 2 * np.pi)
        coef = rng.normal(size=(rows, cols)) + 1j * rng.normal(size=(rows, cols))
        b = _bump(grid, (rad * np.cos(ang), rad * np.sin(ang)), 0.25 * grid.R)
        out += b[:, :, None, None] * coef
    return out


def make_phantom(kind: str, grid: GridSpec, m: int = 1, seed: int = 0,
                 amplitude: float = 1.0) -> GaugeField | MatrixField:
    """Build a compactly supported test field.

    ``scalar_source`` returns an ``m x 1`` :class:`MatrixField` (a vector source);
    every other kind returns a :class:`GaugeField`.  ``amplitude`` is the peak
    entry size (``smooth_random`` scales its largest entry norm to it).
    """
    if kind not in PHANTOM_KINDS:
        raise ValueError(f"unknown phantom kind {kind!r}; expected one of {PHANTOM_KINDS}")
    if int(m) < 1:
        raise ValueError("matrix dimension m must be >= 1")
    m = int(m)
    zero = MatrixField.zeros(grid, m)
    eye = np.eye(m)
    if kind == "gaussian_bump":
        a0 = amplitude * _bump(grid)[:, :, None, None] * eye
        return GaugeField(zero, zero, MatrixField(grid, a0))
    if kind == "disk":
        prof = smooth_step((grid.R - grid.radius()) / (0.2 * grid.R))
        return GaugeField(zero, zero, MatrixField(grid, amplitude * prof[:, :, None, None] * eye))
    if kind == "nilpotent_upper":
        if m < 2:
            raise ValueError("nilpotent_upper needs m >= 2")
        shift = np.eye(m, k=1)
        b = amplitude * _bump(grid, (0.1 * grid.R, -0.15 * grid.R), 0.3 * grid.R)
        return GaugeField(zero, zero, MatrixField(grid, b[:, :, None, None] * shift))
    rng = np.random.default_rng(seed)
    if kind == "scalar_source":
        vals = _random_matrix_field(grid, m, 1, rng).real.astype(complex)
        vals *= amplitude / np.abs(vals).max()
        return MatrixField(grid, vals)
    comps = [_random_matrix_field(grid, m, m, rng) for _ in range(3)]
    peak = max(np.sqrt(np.sum(np.abs(c) ** 2, axis=(2, 3))).max() for c in comps)
    return GaugeField(*(MatrixField(grid, amplitude * c / peak) for c in comps))


def random_gauge(grid: GridSpec, m: int, seed: int = 0, amplitude: float = 0.5) -> MatrixField:
    """Smooth invertible ``g = exp(X)`` with ``X`` supported in B_R, so ``g = I`` outside."""
    rng = np.random.default_rng(seed)
    x = _random_matrix_field(grid, m, m, rng)
    x *= amplitude / np.sqrt(np.sum(np.abs(x) ** 2, axis=(2, 3))).max()
    return MatrixField(grid, scipy.linalg.expm(x))


# -- gauge action --------------------------------------------------------------

def apply_gauge(A: GaugeField, g: MatrixField, tol: float = SUPPORT_TOL) -> GaugeField:
    """Gauge transform ``A_j -> g A_j g^-1 + (1/coupling) (d_j g) g^-1``, ``A_0 -> g A_0 g^-1``.

    With coupling 1 this is the usual action; with the ``-i`` coupling it is the
    magnetic-Schroedinger form ``g A g^-1 + i (dg) g^-1``.  Derivatives of ``g``
    are spectral (``g - I`` vanishes near the grid edge).
    """
    if g.values.shape != A.a1.values.shape:
        raise ValueError("gauge matrix shape does not match the field")
    det = np.linalg.det(g.values)
    if np.min(np.abs(det)) < 1e-12:
        raise ValueError("gauge g is singular at some node")
    dev = MatrixField(g.grid, g.values - np.eye(A.m))
    outside = dev.entry_norm()[g.grid.radius() >= g.grid.R].max(initial=0.0)
    if outside > tol:
        raise SupportError(f"gauge g differs from the identity outside B_R by {outside:.2e}")
    ginv = np.linalg.inv(g.values)
    h = A.grid.h
    # g = I off the disk, so its derivative vanishes there exactly; drop the ringing
    outside_mask = g.grid.radius() >= g.grid.R
    d1 = spectral_derivative(dev.values, h, 0)
    d2 = spectral_derivative(dev.values, h, 1)
    d1[outside_mask] = 0.0
    d2[outside_mask] = 0.0
    k = 1.0 / A.coupling
    a1 = g.values @ A.a1.values @ ginv + k * d1 @ ginv
    a2 = g.values @ A.a2.values @ ginv + k * d2 @ ginv
    a0 = g.values @ A.a0.values @ ginv
    return GaugeField(MatrixField(A.grid, a1), MatrixField(A.grid, a2), MatrixField(A.grid, a0),
                      A.coupling)


def eval_direction(A: GaugeField, zeta, tol: float = 1e-10) -> MatrixField:
    """``coupling * (A1 zeta1 + A2 zeta2 + A0)`` for complex ``zeta`` with ``zeta.zeta = 1``."""
    z1, z2 = (complex(z) for z in zeta)
    if abs(z1 * z1 + z2 * z2 - 1.0) > tol * max(1.0, abs(z1) ** 2 + abs(z2) ** 2):
        raise ValueError(f"direction must satisfy zeta1^2 + zeta2^2 = 1, got {z1 * z1 + z2 * z2}")
    v = A.coupling * (A.a1.values * z1 + A.a2.values * z2 + A.a0.values)
    return MatrixField(A.grid, v)


def direction_sampler(A: GaugeField, phi: float, cache: dict | None = None) -> SplineSampler:
    """Spline of ``A(x, theta(phi))`` (coupling included), reusing per-component splines."""
    if cache is None or "splines" not in cache:
        splines = [SplineSampler.of_field(c) for c in (A.a1, A.a2, A.a0)]
        if cache is not None:
            cache["splines"] = splines
    else:
        splines = cache["splines"]
    th = theta_of(phi)
    k = A.coupling
    return splines[0].combine([k * th[0], k * th[1], k], splines)
