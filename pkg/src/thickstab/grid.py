"""Periodic spectral grids, fields, Fourier-multiplier semigroups, Gaussian probes.

A box [0, extent)^dim with an even number of points per axis stands in for
free space; functions whose mass stays well inside the box behave like their
continuum counterparts to spectral accuracy. The transform convention is

    g_hat(xi) = integral e^{-i x.xi} g(x) dx,

so Plancherel reads ||g_hat|| = (2 pi)^{dim/2} ||g||. Discrete coefficients
are dx^dim * FFT(values) on the frequency lattice xi_k = 2 pi k / extent,
k in {-N/2, ..., N/2 - 1} per axis (stored in FFT order), and

    sum |g|^2 dx^dim  =  (2 pi)^{-dim} sum |coef|^2 (2 pi / extent)^dim

holds exactly on the lattice.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

_TSF1_MAGIC = b"TSF1"


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on [0, extent)^dim.

    Derived arrays (frequency axes in FFT order, the radial lattice |xi|,
    physical coordinate axes) are computed once at construction.
    """

    dim: int
    extent: float
    points: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValidationError(f"dim must be 1 or 2, got {self.dim}")
        if self.points < 4 or self.points % 2 != 0:
            raise ValidationError(f"points must be even and >= 4, got {self.points}")
        if not (np.isfinite(self.extent) and self.extent > 0):
            raise ValidationError(f"extent must be positive and finite, got {self.extent}")
        dx = self.extent / self.points
        axis_x = np.arange(self.points) * dx
        axis_xi = 2.0 * np.pi * np.fft.fftfreq(self.points, d=dx)
        if self.dim == 1:
            rho = np.abs(axis_xi)
        else:
            rho = np.sqrt(axis_xi[:, None] ** 2 + axis_xi[None, :] ** 2)
        for name, value in (
            ("dx", dx),
            ("shape", (self.points,) * self.dim),
            ("axis_x", _readonly(axis_x)),
            ("axis_xi", _readonly(axis_xi)),
            ("rho", _readonly(rho)),
            ("xi_max", np.pi * self.points / self.extent),
            ("cell_measure", dx**self.dim),
        ):
            object.__setattr__(self, name, value)

    @property
    def box_measure(self) -> float:
        return self.extent**self.dim


def make_grid(dim: int, extent: float, points: int) -> Grid:
    """Build a periodic grid; see Grid for the lattice conventions."""
    return Grid(dim=dim, extent=float(extent), points=int(points))


@dataclass(frozen=True)
class SpectralField:
    """Complex field sampled on a grid's physical lattice (row-major)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        if v.shape != self.grid.shape:
            raise ValidationError(f"values shape {v.shape} != grid shape {self.grid.shape}")
        v = np.ascontiguousarray(v)
        v.flags.writeable = False  # fields are immutable once built
        object.__setattr__(self, "values", v)


def field_from_values(grid: Grid, values) -> SpectralField:
    return SpectralField(grid=grid, values=values)


def zero_field(grid: Grid) -> SpectralField:
    return SpectralField(grid=grid, values=np.zeros(grid.shape, dtype=complex))


def inner(f: SpectralField, g: SpectralField) -> complex:
    """L2 pairing <f, g> = sum f conj(g) dx^dim."""
    _same_grid(f, g)
    return complex(np.vdot(g.values, f.values) * f.grid.cell_measure)


def norm(f: SpectralField) -> float:
    """L2 norm with cell-measure weights."""
    return float(np.linalg.norm(f.values.ravel()) * math.sqrt(f.grid.cell_measure))


def restricted_norm(f: SpectralField, mask) -> float:
    """L2 norm over a support mask: sqrt(sum fraction*|f|^2 dx^dim).

    `mask` is a SupportMask or a bare fraction array on the same lattice.
    """
    frac = getattr(mask, "cell_fraction", mask)
    frac = np.asarray(frac, dtype=float)
    if frac.shape != f.grid.shape:
        raise ValidationError(f"mask shape {frac.shape} != grid shape {f.grid.shape}")
    s = float(np.sum(frac * (f.values.real**2 + f.values.imag**2)))
    return math.sqrt(s * f.grid.cell_measure)


def to_coefficients(f: SpectralField) -> np.ndarray:
    """Discrete transform samples dx^dim * FFT(values) on the frequency lattice."""
    return np.fft.fftn(f.values) * f.grid.cell_measure


def from_coefficients(grid: Grid, coef: np.ndarray) -> SpectralField:
    values = np.fft.ifftn(np.asarray(coef, dtype=complex)) / grid.cell_measure
    return SpectralField(grid=grid, values=values)


def semigroup_multiplier(grid: Grid, symbol, t: float, freq_scale: float = 1.0) -> np.ndarray:
    """Array e^{-t F(|xi| * freq_scale)} on the frequency lattice."""
    if not np.isfinite(t):
        raise ValidationError(f"time must be finite, got {t}")
    if t < 0:
        raise ValidationError(f"semigroup time must be >= 0, got {t}")
    vals = symbol.eval(grid.rho * freq_scale)
    if not np.all(np.isfinite(vals)):
        raise ValidationError("symbol evaluated to a non-finite value on the frequency lattice")
    return np.exp(-t * vals)


def apply_multiplier(f: SpectralField, multiplier: np.ndarray) -> SpectralField:
    out = np.fft.ifftn(np.fft.fftn(f.values) * multiplier)
    return SpectralField(grid=f.grid, values=out)


def apply_semigroup(f: SpectralField, symbol, t: float) -> SpectralField:
    """Evolve f under d_t f + F(|D|) f = 0 for time t (exact in frequency)."""
    return apply_multiplier(f, semigroup_multiplier(f.grid, symbol, t))


def ball_multiplier(grid: Grid, radius: float) -> np.ndarray:
    """0/1 multiplier of the closed frequency ball |xi| <= radius (ties kept)."""
    if radius < 0:
        raise ValidationError(f"radius must be >= 0, got {radius}")
    return (grid.rho <= radius).astype(float)


def project_ball(f: SpectralField, radius: float) -> SpectralField:
    """Orthogonal projection onto modes with |xi| <= radius."""
    return apply_multiplier(f, ball_multiplier(f.grid, radius))


# ---------------------------------------------------------------------------
# Gaussian probes


@dataclass(frozen=True)
class GaussianProbe:
    """Modulated Gaussian g(x) = l^{-dim} exp(i x.xi0 - |x - x0|^2 / (2 l^2)).

    Closed forms (free space): transform
    (2 pi)^{dim/2} exp(-i x0.(xi - xi0) - l^2 |xi - xi0|^2 / 2) and squared
    norm (pi / l^2)^{dim/2}. On the periodic box these hold to quadrature
    accuracy for admissible probes; accuracy degrades to ~e^{-(l xi_max)^2}
    at the exact admissibility margin, so precision work should keep
    l * xi_max >= 5 or so.
    """

    width: float
    center: tuple
    frequency: tuple

    def __post_init__(self):
        if not (np.isfinite(self.width) and self.width > 0):
            raise ValidationError(f"probe width must be positive, got {self.width}")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        object.__setattr__(self, "frequency", tuple(float(q) for q in np.atleast_1d(self.frequency)))
        if len(self.center) != len(self.frequency):
            raise ValidationError("center and frequency must have the same dimension")

    @property
    def dim(self) -> int:
        return len(self.center)

    def norm_squared(self) -> float:
        return (math.pi / self.width**2) ** (self.dim / 2.0)

    def transform(self, *xi_axes) -> np.ndarray:
        """Closed-form transform evaluated on a frequency mesh (one array per axis)."""
        if len(xi_axes) != self.dim:
            raise ValidationError(f"expected {self.dim} frequency axes, got {len(xi_axes)}")
        phase = np.zeros(np.broadcast_shapes(*[np.shape(a) for a in xi_axes]), dtype=complex)
        quad = np.zeros_like(phase, dtype=float)
        for ax, x0, q0 in zip(xi_axes, self.center, self.frequency):
            d = np.asarray(ax) - q0
            phase = phase - 1j * x0 * d
            quad = quad + d * d
        return (2.0 * math.pi) ** (self.dim / 2.0) * np.exp(phase - 0.5 * self.width**2 * quad)


def probe_admissible(grid: Grid, probe: GaussianProbe) -> bool:
    """Mass 6 widths from the box scale and 3 frequency widths from Nyquist."""
    if probe.dim != grid.dim:
        return False
    if 6.0 * probe.width > grid.extent / 2.0:
        return False
    xi0 = math.sqrt(sum(q * q for q in probe.frequency))
    return xi0 + 3.0 / probe.width <= grid.xi_max


def sample_probe(grid: Grid, probe: GaussianProbe) -> SpectralField:
    """Sample the probe on the lattice, periodized with one image per axis.

    Raises ValidationError for inadmissible probes (width too large for the
    box, or modulation too close to the Nyquist radius).
    """
    if probe.dim != grid.dim:
        raise ValidationError(f"probe dim {probe.dim} != grid dim {grid.dim}")
    if not probe_admissible(grid, probe):
        raise ValidationError(
            "inadmissible probe: need 6*width <= extent/2 and |xi0| + 3/width <= xi_max"
        )
    l2 = probe.width**2
    axes = [grid.axis_x] * grid.dim
    mesh = np.meshgrid(*axes, indexing="ij") if grid.dim > 1 else [grid.axis_x]
    total = np.zeros(grid.shape, dtype=complex)
    offsets = (-grid.extent, 0.0, grid.extent)
    for shift in np.stack(np.meshgrid(*[offsets] * grid.dim, indexing="ij"), axis=-1).reshape(-1, grid.dim):
        arg = np.zeros(grid.shape, dtype=complex)
        for ax_vals, s, x0, q0 in zip(mesh, shift, probe.center, probe.frequency):
            y = ax_vals + s
            arg = arg + 1j * q0 * y - (y - x0) ** 2 / (2.0 * l2)
        total += np.exp(arg)
    return SpectralField(grid=grid, values=total / probe.width**grid.dim)


# ---------------------------------------------------------------------------
# Snapshot format: magic "TSF1", u32 dim, u32 points, f64 extent, then
# points^dim little-endian complex128 values (re, im interleaved, row-major).


def write_field(path, f: SpectralField) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sIId", _TSF1_MAGIC, f.grid.dim, f.grid.points, f.grid.extent))
        fh.write(np.ascontiguousarray(f.values, dtype="<c16").tobytes())


def read_field(path) -> SpectralField:
    with open(path, "rb") as fh:
        header = fh.read(struct.calcsize("<4sIId"))
        magic, dim, points, extent = struct.unpack("<4sIId", header)
        if magic != _TSF1_MAGIC:
            raise ValidationError(f"not a TSF1 file: bad magic {magic!r}")
        grid = make_grid(dim, extent, points)
        raw = fh.read(16 * points**dim)
        if len(raw) != 16 * points**dim:
            raise ValidationError("truncated TSF1 file")
        values = np.frombuffer(raw, dtype="<c16").reshape(grid.shape)
    return SpectralField(grid=grid, values=values)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


def _same_grid(f: SpectralField, g: SpectralField) -> None:
    if f.grid != g.grid:
        raise ValidationError("fields live on different grids")
