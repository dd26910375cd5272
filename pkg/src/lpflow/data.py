"""Seeded initial-data and corpus field generators.

All generators confine the spectrum to the reconstruction guard band (half
of it by default) so that dyadic analysis of the generated fields is exact.
"""

from __future__ import annotations

import numpy as np

from lpflow.grid import Field, GridSpec, build_filter_bank


def default_kmax(grid: GridSpec) -> float:
    return build_filter_bank(grid).guard_band_radius / 2.0


def _truncate(grid: GridSpec, values: np.ndarray, kmax: float | None) -> np.ndarray:
    kmax = default_kmax(grid) if kmax is None else kmax
    axes = tuple(range(1, grid.d + 1))
    spec = np.fft.fftn(values, axes=axes)
    spec[:, grid.k_norm() > kmax] = 0.0
    return np.fft.ifftn(spec, axes=axes).real


def single_mode_field(grid: GridSpec, kvec, amplitude: float = 1.0,
                      phase: float = 0.0, component: int = 0) -> Field:
    """cos(k . x + phase) in one component, zero elsewhere."""
    mesh = grid.mesh()
    arg = sum(float(k) * grid.xi_scale * X for k, X in zip(kvec, mesh)) + phase
    vals = np.zeros((grid.n,) + grid.shape)
    vals[component] = amplitude * np.cos(arg)
    return Field(grid, vals)


def gaussian_bump(grid: GridSpec, amplitude: float = 1.0, width: float | None = None,
                  center=None, component: int = 0, kmax: float | None = None,
                  zero_mean: bool = True) -> Field:
    """Periodized Gaussian bump, spectrally truncated to the guard band."""
    width = grid.L / 8.0 if width is None else width
    center = (grid.L / 2.0,) * grid.d if center is None else center
    mesh = grid.mesh()
    r2 = np.zeros(grid.shape)
    for X, c in zip(mesh, center):
        delta = np.abs(X - c)
        delta = np.minimum(delta, grid.L - delta)
        r2 += delta**2
    bump = amplitude * np.exp(-r2 / (2.0 * width**2))
    if zero_mean:
        bump = bump - bump.mean()
    vals = np.zeros((grid.n,) + grid.shape)
    vals[component] = bump
    return Field(grid, _truncate(grid, vals, kmax))


def multiscale_random(grid: GridSpec, seed: int, slope: float | None = None,
                      amplitude: float = 1.0, kmax: float | None = None) -> Field:
    """Random band-limited field with power-law spectral slope (default -(d+1)/2)."""
    slope = -(grid.d + 1) / 2.0 if slope is None else slope
    kmax = default_kmax(grid) if kmax is None else kmax
    rng = np.random.default_rng(seed)
    vals = rng.standard_normal((grid.n,) + grid.shape)
    axes = tuple(range(1, grid.d + 1))
    spec = np.fft.fftn(vals, axes=axes)
    k = grid.k_norm()
    shaping = np.where((k > 0) & (k <= kmax), np.maximum(k, 1.0) ** slope, 0.0)
    out = np.fft.ifftn(spec * shaping, axes=axes).real
    peak = np.abs(out).max()
    if peak > 0:
        out *= amplitude / peak
    return Field(grid, out)


def smooth_system_data(grid: GridSpec, n: int, amplitude: float, seed: int = 0) -> Field:
    """Small smooth initial perturbation for an n-component system: distinct
    bump/wave profiles per component, sup-norm calibrated to ``amplitude``."""
    rng = np.random.default_rng(seed)
    vals = np.zeros((n,) + grid.shape)
    mesh = grid.mesh()
    for i in range(n):
        w = grid.L / rng.uniform(6.0, 12.0)
        c = tuple(rng.uniform(0, grid.L) for _ in range(grid.d))
        g = gaussian_bump(grid.with_components(1), 1.0, w, c, kmax=default_kmax(grid))
        wave = np.ones(grid.shape)
        for X in mesh:
            wave = wave * np.cos(2.0 * np.pi * X / grid.L + rng.uniform(0, 2 * np.pi))
        vals[i] = g.values[0] + 0.3 * wave
    field = Field(grid.with_components(n), _truncate(grid.with_components(n), vals, None))
    peak = np.abs(field.values).max()
    return field * (amplitude / peak if peak > 0 else 1.0)
