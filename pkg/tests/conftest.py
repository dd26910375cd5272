import numpy as np
import pytest

from lpflow.grid import Field, GridSpec, build_filter_bank


@pytest.fixture
def grid1d() -> GridSpec:
    return GridSpec(d=1, N=64)


@pytest.fixture
def grid2d() -> GridSpec:
    return GridSpec(d=2, N=32)


def make_band_limited(grid: GridSpec, seed: int, kmax: float | None = None) -> Field:
    """Random real field with spectrum confined to the guard band."""
    bank = build_filter_bank(grid)
    kmax = bank.guard_band_radius / 2.0 if kmax is None else kmax
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((grid.n,) + grid.shape)
    spec = np.fft.fftn(vals, axes=tuple(range(1, grid.d + 1)))
    spec[:, grid.k_norm() > kmax] = 0.0
    return Field.from_spectrum(grid, spec)


def single_mode(grid: GridSpec, kvec, amplitude: float = 1.0, phase: float = 0.0) -> Field:
    """cos(k . x + phase) placed in every component."""
    mesh = grid.mesh()
    arg = sum(float(k) * grid.xi_scale * X for k, X in zip(kvec, mesh)) + phase
    vals = np.broadcast_to(amplitude * np.cos(arg), (grid.n,) + grid.shape).copy()
    return Field(grid, vals)
