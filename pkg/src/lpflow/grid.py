"""Periodic grids, FFT-backed fields, and the dyadic frequency decomposition.

Frequencies are handled in normalized units: on a box of side ``L`` the
resolved modes are the integer lattice ``k`` in ``[-N/2, N/2)`` per axis,
and the physical angular frequency of mode ``k`` is ``2*pi*k/L``.  Block
index ``j`` refers to ``|k| ~ 2**j`` in normalized units; conversion to
physical units goes through :attr:`GridSpec.xi_scale`.
"""

from __future__ import annotations

import hashlib
import struct
import warnings
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft as _sfft

TAU = 2.0 * np.pi


def fftn(a: np.ndarray, axes) -> np.ndarray:
    """Forward DFT over the given axes (pocketfft backend)."""
    return _sfft.fftn(a, axes=axes)


def ifftn(a: np.ndarray, axes) -> np.ndarray:
    return _sfft.ifftn(a, axes=axes)

# Support radii of the dyadic partition of unity: chi == 1 on |xi| <= 3/4,
# vanishes for |xi| >= 4/3.  phi(xi) = chi(xi/2) - chi(xi) is supported on
# 3/4 <= |xi| <= 8/3 and equals 1 on 4/3 <= |xi| <= 3/2.
CHI_INNER = 0.75
CHI_OUTER = 4.0 / 3.0
PHI_SUPPORT_LO = CHI_INNER
PHI_SUPPORT_HI = 2.0 * CHI_OUTER

HOMOGENEOUS = "homogeneous"
NONHOMOGENEOUS = "nonhomogeneous"

_FIELD_MAGIC = b"LPF1"


class GridTooCoarseError(ValueError):
    """Raised when the grid cannot host a single fully resolved annulus."""


@dataclass(frozen=True)
class GridSpec:
    """Periodic box ``[0, L)^d`` sampled on ``N`` points per axis, ``n`` components."""

    d: int
    N: int
    L: float = TAU
    n: int = 1

    def __post_init__(self) -> None:
        if self.d not in (1, 2, 3):
            raise ValueError(f"spatial dimension must be 1, 2 or 3, got {self.d}")
        if self.N < 8 or (self.N & (self.N - 1)) != 0:
            raise ValueError(f"N must be a power of two >= 8, got {self.N}")
        if not (self.L > 0):
            raise ValueError(f"box side must be positive, got {self.L}")
        if self.n < 1:
            raise ValueError(f"component count must be >= 1, got {self.n}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.N,) * self.d

    @property
    def size(self) -> int:
        return self.N**self.d

    @property
    def dx(self) -> float:
        return self.L / self.N

    @property
    def cell_volume(self) -> float:
        return self.dx**self.d

    @property
    def nyquist(self) -> int:
        return self.N // 2

    @property
    def xi_scale(self) -> float:
        """Physical angular frequency of the lattice mode ``k = 1``."""
        return TAU / self.L

    def with_components(self, n: int) -> "GridSpec":
        return GridSpec(self.d, self.N, self.L, n)

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.d, self.N * factor, self.L, self.n)

    def axis(self) -> np.ndarray:
        return np.arange(self.N) * self.dx

    def mesh(self) -> tuple[np.ndarray, ...]:
        x = self.axis()
        return tuple(np.meshgrid(*([x] * self.d), indexing="ij"))

    def wavenumbers(self) -> np.ndarray:
        """Integer lattice wavenumbers, shape ``(d, N, ..., N)``."""
        return _wavenumbers(self.d, self.N)

    def k_norm(self) -> np.ndarray:
        """Euclidean norm of the integer lattice, shape ``(N, ..., N)``."""
        return _k_norm(self.d, self.N)


@lru_cache(maxsize=32)
def _wavenumbers(d: int, N: int) -> np.ndarray:
    k1 = np.fft.fftfreq(N, d=1.0 / N)
    grids = np.meshgrid(*([k1] * d), indexing="ij")
    out = np.stack(grids).astype(np.float64)
    out.setflags(write=False)
    return out

@lru_cache(maxsize=32)
def _k_norm(d: int, N: int) -> np.ndarray:
    k = _wavenumbers(d, N)
    out = np.sqrt(np.sum(k**2, axis=0))
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Field:
    """Real ``n``-component function on a periodic grid with cached spectrum."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        expected = (self.grid.n,) + self.grid.shape
        if vals.shape != expected:
            raise ValueError(f"values shape {vals.shape} != expected {expected}")
        if vals is not self.values:
            object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_spectrum", None)

    @property
    def spectrum(self) -> np.ndarray:
        """Unnormalized DFT of ``values`` over the spatial axes (cached)."""
        cached = object.__getattribute__(self, "_spectrum")
        if cached is None:
            axes = tuple(range(1, self.grid.d + 1))
            cached = fftn(self.values, axes=axes)
            object.__setattr__(self, "_spectrum", cached)
        return cached

    @classmethod
    def from_spectrum(cls, grid: GridSpec, spectrum: np.ndarray) -> "Field":
        axes = tuple(range(1, grid.d + 1))
        vals = ifftn(spectrum, axes=axes).real
        out = cls(grid, np.ascontiguousarray(vals))
        object.__setattr__(out, "_spectrum", np.asarray(spectrum, dtype=complex))
        return out

    @classmethod
    def zeros(cls, grid: GridSpec) -> "Field":
        return cls(grid, np.zeros((grid.n,) + grid.shape))

    def copy_with(self, values: np.ndarray) -> "Field":
        return Field(self.grid, values)

    def component(self, lo: int, hi: int | None = None) -> "Field":
        """Restrict to components ``lo:hi`` (a fresh Field on a narrower grid)."""
        hi = lo + 1 if hi is None else hi
        sub = self.grid.with_components(hi - lo)
        return Field(sub, self.values[lo:hi])

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_volume))

    def linf_norm(self) -> float:
        return float(np.max(np.sqrt(np.sum(self.values**2, axis=0))))

    def mean(self) -> np.ndarray:
        axes = tuple(range(1, self.grid.d + 1))
        return self.values.mean(axis=axes)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "Field":
        return Field(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return Field(self.grid, -self.values)


def stack_fields(fields: list[Field]) -> Field:
    """Concatenate component blocks into one Field."""
    grid = fields[0].grid
    n = sum(f.grid.n for f in fields)
    return Field(grid.with_components(n), np.concatenate([f.values for f in fields]))


# ---------------------------------------------------------------------------
# Dyadic partition of unity
# ---------------------------------------------------------------------------

def _smooth_step(t: np.ndarray) -> np.ndarray:
    """C^inf monotone transition, 1 for t <= 0 and 0 for t >= 1."""
    t = np.asarray(t, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        lo = np.where(t > 0.0, np.exp(-1.0 / np.where(t > 0.0, t, 1.0)), 0.0)
        hi = np.where(t < 1.0, np.exp(-1.0 / np.where(t < 1.0, 1.0 - t, 1.0)), 0.0)
    out = np.empty_like(t)
    inner = (t > 0.0) & (t < 1.0)
    out[t <= 0.0] = 1.0
    out[t >= 1.0] = 0.0
    out[inner] = hi[inner] / (lo[inner] + hi[inner])
    return out


def chi_profile(r: np.ndarray) -> np.ndarray:
    """Radial low-pass bump: 1 on ``r <= 3/4``, 0 on ``r >= 4/3``."""
    r = np.abs(np.asarray(r, dtype=np.float64))
    return _smooth_step((r - CHI_INNER) / (CHI_OUTER - CHI_INNER))


def phi_profile(r: np.ndarray) -> np.ndarray:
    """Annulus bump ``chi(r/2) - chi(r)``, supported on ``3/4 <= r <= 8/3``."""
    r = np.asarray(r, dtype=np.float64)
    return chi_profile(r / 2.0) - chi_profile(r)


@dataclass(frozen=True)
class BlockIndex:
    """Dyadic block selector; the nonhomogeneous flavor maps j = -1 to chi(D)."""

    j: int
    flavor: str = NONHOMOGENEOUS

    def __post_init__(self) -> None:
        if self.flavor not in (HOMOGENEOUS, NONHOMOGENEOUS):
            raise ValueError(f"unknown flavor {self.flavor!r}")


@dataclass(frozen=True, eq=False)
class FilterBank:
    """chi/phi partition of unity sampled on the normalized frequency lattice."""

    d: int
    N: int
    chi_hat: np.ndarray        # chi(|k|)
    phi_hat: np.ndarray        # phi(2**-j |k|) stacked for j = j_min .. j_max
    j_min: int
    j_max: int
    profile_hash: str

    @property
    def block_range_nonhomogeneous(self) -> range:
        return range(-1, self.j_max + 1)

    @property
    def block_range_homogeneous(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def block_range(self, flavor: str) -> range:
        if flavor == HOMOGENEOUS:
            return self.block_range_homogeneous
        return self.block_range_nonhomogeneous

    @property
    def guard_band_radius(self) -> float:
        """Largest |k| where the truncated partition still sums to one."""
        return CHI_INNER * 2.0 ** (self.j_max + 1)

    def phi_j(self, j: int) -> np.ndarray:
        if j < self.j_min or j > self.j_max:
            raise IndexError(f"annulus index {j} outside [{self.j_min}, {self.j_max}]")
        return self.phi_hat[j - self.j_min]

    def block_multiplier(self, b: BlockIndex) -> np.ndarray | None:
        """Fourier multiplier of the block, or None for a zero block."""
        if b.flavor == HOMOGENEOUS:
            if self.j_min <= b.j <= self.j_max:
                return self.phi_j(b.j)
            return None
        if b.j == -1:
            return self.chi_hat
        if 0 <= b.j <= self.j_max:
            return self.phi_j(b.j)
        return None

    def lowpass_multiplier(self, m: int, flavor: str = HOMOGENEOUS) -> np.ndarray | None:
        """Multiplier of S_m / dot-S_m; None encodes the zero operator."""
        if flavor == NONHOMOGENEOUS and m < 0:
            return None
        if m > self.j_max:
            return np.ones((self.N,) * self.d)
        k = _k_norm(self.d, self.N)
        return chi_profile(k / 2.0**m)

    def partition_values(self) -> np.ndarray:
        """chi + sum of resolved phi blocks on the lattice."""
        return self.chi_hat + self.phi_hat[-self.j_min :].sum(axis=0)


def _profile_hash() -> str:
    r = np.linspace(0.0, 3.0, 4097)
    payload = chi_profile(r).tobytes() + struct.pack("<dd", CHI_INNER, CHI_OUTER)
    return hashlib.sha256(payload).hexdigest()[:16]


@lru_cache(maxsize=32)
def _build_filters(d: int, N: int) -> FilterBank:
    # j_max chosen so the top annulus is fully resolved:
    # (8/3) * 2**j_max <= N/2, i.e. 2**j_max = N/8 for power-of-two N.
    j_max = int(np.floor(np.log2((N / 2) * (3.0 / 8.0))))
    if j_max < 1:
        raise GridTooCoarseError(
            f"N={N} resolves no full annulus beyond j=0 (j_max={j_max}); need N >= 16"
        )
    # On the integer lattice the lowest nonzero |k| is 1, which meets the
    # support of phi(2**-j .) only for j >= -1.
    j_min = -1
    k = _k_norm(d, N)
    chi_hat = chi_profile(k)
    phi_hat = np.stack([phi_profile(k / 2.0**j) for j in range(j_min, j_max + 1)])
    chi_hat.setflags(write=False)
    phi_hat.setflags(write=False)
    return FilterBank(d, N, chi_hat, phi_hat, j_min, j_max, _profile_hash())


def build_filter_bank(grid: GridSpec) -> FilterBank:
    """Dyadic filter bank for the grid (cached per (d, N))."""
    return _build_filters(grid.d, grid.N)


def _apply_multiplier(u: Field, mult: np.ndarray | None) -> Field:
    if mult is None:
        return Field.zeros(u.grid)
    return Field.from_spectrum(u.grid, u.spectrum * mult)


def dyadic_block(u: Field, b: BlockIndex) -> Field:
    """Frequency-localized piece Delta_j u (or the homogeneous variant)."""
    bank = build_filter_bank(u.grid)
    return _apply_multiplier(u, bank.block_multiplier(b))


def low_freq_cutoff(u: Field, m: int, flavor: str = HOMOGENEOUS) -> Field:
    """Low-frequency cutoff S_m u; identity once 2**m exceeds Nyquist * 4/3."""
    bank = build_filter_bank(u.grid)
    return _apply_multiplier(u, bank.lowpass_multiplier(m, flavor))


def block_l2_norms(u: Field, flavor: str, p: float = 2.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-block L^p norms of the dyadic pieces of ``u``.

    Returns ``(j_indices, norms)``; norms are summed over components in
    quadrature for p = 2 and pointwise-euclidean sup for p = inf.
    """
    bank = build_filter_bank(u.grid)
    js = np.array(list(bank.block_range(flavor)), dtype=int)
    spec = u.spectrum
    out = np.empty(len(js))
    scale = u.grid.L**u.grid.d / u.grid.size**2  # discrete Parseval weight
    for i, j in enumerate(js):
        mult = bank.block_multiplier(BlockIndex(int(j), flavor))
        if p == 2.0:
            out[i] = np.sqrt(np.sum(np.abs(mult * spec) ** 2) * scale)
        else:
            blk = _apply_multiplier(u, mult)
            out[i] = blk.linf_norm()
    return js, out


def homogeneous_tail_mass(u: Field) -> float:
    """L2 mass of the zero mode, invisible to the homogeneous blocks."""
    mean = u.mean()
    return float(np.sqrt(np.sum(mean**2) * u.grid.L**u.grid.d))


# ---------------------------------------------------------------------------
# Spectral calculus
# ---------------------------------------------------------------------------

def partial_derivative(u: Field, axis: int, normalized: bool = False) -> Field:
    """Spectral d/dx_axis; physical units unless ``normalized`` is set."""
    k = u.grid.wavenumbers()[axis]
    scale = 1.0 if normalized else u.grid.xi_scale
    return Field.from_spectrum(u.grid, u.spectrum * (1j * scale * k))


def spectral_gradient(u: Field, normalized: bool = False) -> Field:
    """All first derivatives; component i, direction a at index i*d + a."""
    grid = u.grid
    k = grid.wavenumbers()
    scale = 1.0 if normalized else grid.xi_scale
    spec = u.spectrum
    out = np.empty((grid.n, grid.d) + grid.shape, dtype=complex)
    for a in range(grid.d):
        out[:, a] = spec * (1j * scale * k[a])
    out = out.reshape((grid.n * grid.d,) + grid.shape)
    return Field.from_spectrum(grid.with_components(grid.n * grid.d), out)


def gradient_array(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Spectral gradient of a raw component array: (n, *shape) -> (n, d, *shape)."""
    axes = tuple(range(1, grid.d + 1))
    spec = fftn(values, axes=axes)
    k = grid.wavenumbers()
    out = np.empty(values.shape[:1] + (grid.d,) + grid.shape)
    for a in range(grid.d):
        out[:, a] = ifftn(spec * (1j * grid.xi_scale * k[a]), axes=axes).real
    return out


@lru_cache(maxsize=32)
def _dealias_mask(d: int, N: int) -> np.ndarray:
    k = _wavenumbers(d, N)
    mask = np.all(np.abs(k) <= N / 3.0, axis=0)
    mask.setflags(write=False)
    return mask


def dealias_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """2/3-rule truncation, applied after pointwise nonlinear evaluations."""
    axes = tuple(range(1, grid.d + 1)) if values.ndim > grid.d else tuple(range(grid.d))
    spec = fftn(values, axes=axes)
    spec *= _dealias_mask(grid.d, grid.N)
    return ifftn(spec, axes=axes).real


def dealias(u: Field) -> Field:
    return Field.from_spectrum(u.grid, u.spectrum * _dealias_mask(u.grid.d, u.grid.N))


def refine_field(u: Field, factor: int = 2) -> Field:
    """Fourier interpolation onto a grid refined by ``factor`` (same function)."""
    if factor < 1 or (factor & (factor - 1)) != 0:
        raise ValueError("refinement factor must be a power of two")
    if factor == 1:
        return u
    g = u.grid
    fine = g.refined(factor)
    spec = np.fft.fftshift(u.spectrum, axes=tuple(range(1, g.d + 1)))
    pad = (fine.N - g.N) // 2
    widths = [(0, 0)] + [(pad, pad)] * g.d
    spec = np.pad(spec, widths)
    spec = np.fft.ifftshift(spec, axes=tuple(range(1, g.d + 1)))
    return Field.from_spectrum(fine, spec * factor**g.d)


def guard_band_fraction(u: Field) -> float:
    """Fraction of L2 mass outside the reconstruction guard band."""
    bank = build_filter_bank(u.grid)
    k = u.grid.k_norm()
    outside = k > bank.guard_band_radius
    spec = u.spectrum
    total = np.sum(np.abs(spec) ** 2)
    if total == 0.0:
        return 0.0
    return float(np.sum(np.abs(spec[:, outside]) ** 2) / total)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_field(u: Field, path: str | Path) -> None:
    """Flat little-endian binary: magic, header (d, N, L, n), float64 values."""
    path = Path(path)
    header = _FIELD_MAGIC + struct.pack("<iidi", u.grid.d, u.grid.N, u.grid.L, u.grid.n)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(u.values.astype("<f8").tobytes())


def load_field(path: str | Path) -> Field:
    with open(Path(path), "rb") as fh:
        magic = fh.read(4)
        if magic != _FIELD_MAGIC:
            raise ValueError(f"not a field file: bad magic {magic!r}")
        d, N, L, n = struct.unpack("<iidi", fh.read(20))
        grid = GridSpec(d, N, L, n)
        data = np.frombuffer(fh.read(), dtype="<f8").reshape((n,) + grid.shape)
    return Field(grid, np.ascontiguousarray(data))


def field_to_csv_1d(u: Field, path: str | Path) -> None:
    """CSV export of a 1D slice (first axis, other indices at 0)."""
    path = Path(path)
    x = u.grid.axis()
    sl = (slice(None), slice(None)) + (0,) * (u.grid.d - 1)
    vals = u.values[sl]
    with open(path, "w") as fh:
        cols = ",".join(f"u{i}" for i in range(u.grid.n))
        fh.write(f"x,{cols}\n")
        for i in range(u.grid.N):
            row = ",".join(repr(float(v)) for v in vals[:, i])
            fh.write(f"{repr(float(x[i]))},{row}\n")


def warn_if_outside_guard_band(u: Field, where: str, tol: float = 1e-8) -> float:
    frac = guard_band_fraction(u)
    if frac > tol:
        warnings.warn(
            f"{where}: {frac:.2e} of the spectral mass lies outside the guard band; "
            "dyadic analysis drops that tail",
            stacklevel=3,
        )
    return frac
