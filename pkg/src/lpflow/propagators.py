"""Linear propagators: exact constant-coefficient parabolic evolution,
frozen-coefficient time steppers, and smoothing-estimate verification.

The constant-coefficient system ``S dV/dt = -Z(D) V`` (symbol
``Z(xi) = sum_ab xi_a xi_b Z^{ab}``) is solved exactly per Fourier mode via
matrix exponentials.  Variable-coefficient steps treat the constant part at
the reference state exactly and the residual explicitly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg

from lpflow.grid import (
    Field,
    GridSpec,
    dealias_values,
    gradient_array,
    block_l2_norms,
    build_filter_bank,
    save_field,
    load_field,
)
from lpflow import norms as _norms


class CFLViolation(ValueError):
    """Requested hyperbolic step exceeds the admissible CFL time step."""

    def __init__(self, dt: float, admissible: float):
        super().__init__(f"dt={dt:g} violates CFL; admissible dt <= {admissible:g}")
        self.admissible = admissible


class EllipticityFailure(ValueError):
    """Diffusion symbol lost positivity at some sampled grid state."""


@dataclass(eq=False)
class Trajectory:
    """Uniformly sampled time series of Fields with a per-block norm cache."""

    times: np.ndarray
    fields: list[Field]
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.times = np.asarray(self.times, dtype=np.float64)
        if len(self.times) != len(self.fields):
            raise ValueError("times and fields length mismatch")
        if len(self.times) == 0:
            raise ValueError("empty trajectory")
        if abs(self.times[0]) > 1e-14:
            raise ValueError("trajectory must start at t = 0")
        if len(self.times) > 2:
            dts = np.diff(self.times)
            if not np.allclose(dts, dts[0], rtol=1e-8, atol=1e-12):
                raise ValueError("trajectory samples must be uniformly spaced")
        self._block_cache: dict = {}

    @property
    def grid(self) -> GridSpec:
        return self.fields[0].grid

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def __len__(self) -> int:
        return len(self.times)

    def map(self, fn: Callable[[Field], Field], **meta) -> "Trajectory":
        return Trajectory(self.times.copy(), [fn(f) for f in self.fields], {**self.meta, **meta})

    def components(self, lo: int, hi: int) -> "Trajectory":
        return self.map(lambda f: f.component(lo, hi))

    def __sub__(self, other: "Trajectory") -> "Trajectory":
        if len(self) != len(other):
            raise ValueError("trajectory length mismatch")
        return Trajectory(
            self.times.copy(),
            [a - b for a, b in zip(self.fields, other.fields)],
            dict(self.meta),
        )

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        g = self.grid
        manifest = {
            "times": [float(t) for t in self.times],
            "grid": {"d": g.d, "N": g.N, "L": g.L, "n": g.n},
            "meta": self.meta,
            "snapshots": [f"field_{i:05d}.bin" for i in range(len(self))],
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2))
        for name, f in zip(manifest["snapshots"], self.fields):
            save_field(f, directory / name)

    @classmethod
    def load(cls, directory: str | Path) -> "Trajectory":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        fields = [load_field(directory / name) for name in manifest["snapshots"]]
        return cls(np.array(manifest["times"]), fields, manifest.get("meta", {}))


# ---------------------------------------------------------------------------
# Matrix functions on batched per-mode operators
# ---------------------------------------------------------------------------

def _phi1(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=complex)
    small = np.abs(z) < 1e-5
    zs = z[small]
    out[small] = 1.0 + zs / 2.0 + zs**2 / 6.0 + zs**3 / 24.0
    zb = z[~small]
    out[~small] = (np.exp(zb) - 1.0) / zb
    return out


def _phi2(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=complex)
    small = np.abs(z) < 1e-4
    zs = z[small]
    out[small] = 0.5 + zs / 6.0 + zs**2 / 24.0 + zs**3 / 120.0
    zb = z[~small]
    out[~small] = (np.exp(zb) - 1.0 - zb) / zb**2
    return out


def _matrix_function(A: np.ndarray, fn: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Apply a scalar function to a batch (M, n, n) via eigendecomposition.

    Falls back to scaling-and-squaring scipy.linalg.expm (fn must then be exp)
    on modes where the eigenbasis is too ill-conditioned.
    """
    n = A.shape[-1]
    if n == 1:
        return fn(A[..., 0, 0])[..., None, None]
    w, V = np.linalg.eig(A)
    fw = fn(w)
    out = np.einsum("mij,mj,mjk->mik", V, fw, np.linalg.inv(V))
    recon = np.einsum("mij,mj,mjk->mik", V, w, np.linalg.inv(V))
    scale = np.maximum(np.abs(A).sum(axis=(-2, -1)), 1e-30)
    err = np.abs(recon - A).sum(axis=(-2, -1)) / scale
    bad = ~np.isfinite(err) | (err > 1e-10)
    if np.any(bad):
        if fn is not np.exp:
            raise np.linalg.LinAlgError("non-diagonalizable mode in phi-function path")
        for m in np.nonzero(bad)[0]:
            out[m] = scipy.linalg.expm(A[m])
    return out


def _apply_mode_matrices(F: np.ndarray, values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Per-mode matmul in Fourier space: F (M, n, n) applied to (n, *shape)."""
    from lpflow.grid import fftn, ifftn

    axes = tuple(range(1, grid.d + 1))
    spec = fftn(values, axes=axes).reshape(values.shape[0], -1)
    out = np.einsum("mij,jm->im", F, spec).reshape(values.shape)
    return ifftn(out, axes=axes).real


def _unit_directions(d: int) -> np.ndarray:
    if d == 1:
        return np.array([[1.0]])
    if d == 2:
        angles = np.linspace(0.0, np.pi, 16, endpoint=False)
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    rng = np.random.default_rng(20240901)
    dirs = rng.standard_normal((48, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.concatenate([np.eye(3), dirs])


@dataclass(eq=False)
class ConstantParabolicOp:
    """Constant-coefficient operator pair (S, Z^{ab}) with per-mode caches.

    ``S`` must be symmetric positive definite; ``Z(xi)`` must satisfy
    ``Re(Z(xi) z . z) >= kappa |xi|^gamma |z|^2`` with ``kappa > 0`` (checked
    by direction sampling, the sampled value is recorded as ``kappa_hat``).

    The solver path always assembles the degree-2 symbol from ``Z_bar``;
    ``symbol_fn`` together with ``gamma != 2`` exists for the
    smoothing-verification path, where the symbol may be any positively
    homogeneous map ``(M, d) -> (M, n2, n2)``.
    """

    S_bar: np.ndarray            # (n2, n2)
    Z_bar: np.ndarray            # (d, d, n2, n2)
    gamma: float = 2.0
    symbol_fn: Callable[[np.ndarray], np.ndarray] | None = None

    def __post_init__(self) -> None:
        self.S_bar = np.asarray(self.S_bar, dtype=np.float64)
        self.Z_bar = np.asarray(self.Z_bar, dtype=np.float64)
        n2 = self.S_bar.shape[0]
        if self.S_bar.shape != (n2, n2):
            raise ValueError("S_bar must be square")
        if np.abs(self.S_bar - self.S_bar.T).max() > 1e-12 * max(np.abs(self.S_bar).max(), 1.0):
            raise ValueError("S_bar must be symmetric")
        eigs = np.linalg.eigvalsh(self.S_bar)
        if eigs.min() <= 0.0:
            raise ValueError(f"S_bar must be positive definite, eigenvalues {eigs}")
        d = self.Z_bar.shape[0]
        if self.Z_bar.shape != (d, d, n2, n2):
            raise ValueError("Z_bar must have shape (d, d, n2, n2)")
        self._sqrt_cond = float(np.sqrt(eigs.max() / eigs.min()))
        self._mode_cache: dict = {}
        kappa_lo, kappa_hi = self.kappa_envelope()
        if kappa_lo <= 0.0:
            raise EllipticityFailure(f"sampled kappa = {kappa_lo:g} <= 0")
        self.kappa_hat = kappa_lo

    @property
    def d(self) -> int:
        return self.Z_bar.shape[0]

    @property
    def n2(self) -> int:
        return self.S_bar.shape[0]

    @property
    def sqrt_cond(self) -> float:
        return self._sqrt_cond

    def symbol(self, xi: np.ndarray) -> np.ndarray:
        """Z(xi) for stacked frequencies xi of shape (M, d): returns (M, n2, n2)."""
        if self.symbol_fn is not None:
            return self.symbol_fn(xi)
        return np.einsum("ma,mb,abij->mij", xi, xi, self.Z_bar)

    def kappa_envelope(self) -> tuple[float, float]:
        """Sampled min/max eigenvalues of sym Z(xi-hat) over unit directions."""
        dirs = _unit_directions(self.d)
        sym = self.symbol(dirs)
        sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
        eigs = np.linalg.eigvalsh(sym)
        return float(eigs.min()), float(eigs.max())

    def rate_envelope(self) -> tuple[float, float]:
        """Min/max per-mode decay rates of the S-weighted norm at |xi| = 1."""
        dirs = _unit_directions(self.d)
        sym = self.symbol(dirs)
        sym = 0.5 * (sym + np.swapaxes(sym, -1, -2))
        lo, hi = np.inf, -np.inf
        for m in range(sym.shape[0]):
            eigs = scipy.linalg.eigh(sym[m], self.S_bar, eigvals_only=True)
            lo, hi = min(lo, eigs.min()), max(hi, eigs.max())
        return float(lo), float(hi)

    def _modes(self, grid: GridSpec) -> dict:
        key = (grid.d, grid.N, grid.L)
        if key not in self._mode_cache:
            k = grid.wavenumbers().reshape(grid.d, -1).T * grid.xi_scale
            B = np.linalg.solve(self.S_bar, self.symbol(k).reshape(-1, self.n2, self.n2))
            B = B.reshape(grid.size, self.n2, self.n2)
            self._mode_cache[key] = {"B": B}
        return self._mode_cache[key]

    def propagator(self, grid: GridSpec, t: float) -> np.ndarray:
        """exp(-t S^{-1} Z(xi)) for every resolved mode, shape (M, n2, n2)."""
        B = self._modes(grid)["B"]
        return _matrix_function(-t * B, np.exp).real

    def etd_factors(self, grid: GridSpec, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(E, dt*phi1, dt*phi2) of the per-mode linear part, cached per dt."""
        modes = self._modes(grid)
        key = ("etd", dt)
        if key not in modes:
            A = -dt * modes["B"]
            E = _matrix_function(A, np.exp).real
            P1 = dt * _matrix_function(A, _phi1).real
            P2 = dt * _matrix_function(A, _phi2).real
            modes[key] = (E, P1, P2)
        return modes[key]

    def apply(self, u: Field, t: float) -> Field:
        return Field(u.grid, _apply_mode_matrices(self.propagator(u.grid, t), u.values, u.grid))

    def time_derivative(self, u: Field) -> Field:
        """Exact d/dt of the propagated solution at the current state."""
        B = self._modes(u.grid)["B"]
        return Field(u.grid, -_apply_mode_matrices(B, u.values, u.grid))


def heat_operator(d: int, n2: int = 1, diffusivity: float = 1.0) -> ConstantParabolicOp:
    """Scalar heat case: S = I, Z(xi) = diffusivity |xi|^2 I."""
    Z = np.zeros((d, d, n2, n2))
    for a in range(d):
        Z[a, a] = diffusivity * np.eye(n2)
    return ConstantParabolicOp(np.eye(n2), Z)


def solve_constant_parabolic(V0: Field, op: ConstantParabolicOp, T: float, samples: int) -> Trajectory:
    """Exact per-mode solution on [0, T] with ``samples`` uniform snapshots."""
    if samples < 2:
        raise ValueError("need at least two samples")
    if V0.grid.n != op.n2 or V0.grid.d != op.d:
        raise ValueError("field/operator shape mismatch")
    times = np.linspace(0.0, T, samples)
    fields = [V0]
    step = op.propagator(V0.grid, times[1] - times[0])
    cur = V0.values
    for _ in times[1:]:
        cur = _apply_mode_matrices(step, cur, V0.grid)
        fields.append(Field(V0.grid, cur))
    return Trajectory(times, fields, {"scheme": "exact-mode", "T": float(T)})


# ---------------------------------------------------------------------------
# Frozen-coefficient steppers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrozenCoeffStep:
    """Explicit step configuration shared by both inner steppers."""

    dt: float
    cfl_safety: float = 0.5
    scheme: str = "rk4"

    def __post_init__(self) -> None:
        if not (self.dt > 0):
            raise ValueError("dt must be positive")
        if not (0.0 < self.cfl_safety < 1.0):
            raise ValueError("cfl_safety must lie in (0, 1)")


def _flat(values: np.ndarray) -> np.ndarray:
    return values.reshape(values.shape[0], -1)


def _batched_inv(mats: np.ndarray) -> np.ndarray:
    """(n, n, M) -> (M, n, n) inverse."""
    return np.linalg.inv(np.moveaxis(mats, -1, 0))


def _wave_speed_from_A(A: np.ndarray, d: int) -> float:
    n1 = A.shape[-1]
    speed = 0.0
    for xi in _unit_directions(d):
        Mdir = np.einsum("a,amij->mij", xi, A)
        if n1 == 1:
            speed = max(speed, float(np.abs(Mdir).max()))
        else:
            speed = max(speed, float(np.abs(np.linalg.eigvals(Mdir)).max()))
    return speed


def hyperbolic_wave_speed(system, U: Field) -> float:
    """Max |eigenvalue| of sum_a xi_a (S0_11)^-1 S^a_11 over unit xi and grid states."""
    if system.n1 == 0:
        return 0.0
    return _wave_speed_from_A(prepare_hyperbolic_coeffs(system, U).A, U.grid.d)


def admissible_hyperbolic_dt(system, U: Field, cfl_safety: float = 0.5) -> float:
    speed = hyperbolic_wave_speed(system, U)
    if speed == 0.0:
        return np.inf
    return cfl_safety * U.grid.dx / speed


def _admissible_dt_from_coeffs(coeffs: "HyperbolicCoeffs", grid: GridSpec,
                               cfl_safety: float) -> float:
    speed = _wave_speed_from_A(coeffs.A, grid.d)
    if speed == 0.0:
        return np.inf
    return cfl_safety * grid.dx / speed


@dataclass(eq=False)
class HyperbolicCoeffs:
    """Precomputed frozen-coefficient data for the hyperbolic step."""

    A: np.ndarray          # (d, M, n1, n1) advection matrices
    S0inv: np.ndarray      # (M, n1, n1)


def prepare_hyperbolic_coeffs(system, U_frozen: Field) -> HyperbolicCoeffs:
    Uv = _flat(U_frozen.values)
    S0inv = _batched_inv(system.S0_block(Uv, 1, 1))
    A = np.stack(
        [np.einsum("mij,mjk->mik", S0inv, np.moveaxis(system.Salpha_block(Uv, a, 1, 1), -1, 0))
         for a in range(U_frozen.grid.d)]
    )
    return HyperbolicCoeffs(A, S0inv)


def step_linear_hyperbolic(system, V1: Field, U_frozen: Field, theta1: Field,
                           step: FrozenCoeffStep, check_cfl: bool = True,
                           coeffs: HyperbolicCoeffs | None = None) -> Field:
    """One RK4 step of the symmetric hyperbolic block with frozen coefficients.

    Advances ``dV1/dt = -sum_a (S0_11)^-1 S^a_11 d_a V1 + (S0_11)^-1 theta1``
    with spectral derivatives; every assembled right-hand side is dealiased.
    """
    grid = V1.grid
    if coeffs is None:
        system.require_phase(U_frozen)
        coeffs = prepare_hyperbolic_coeffs(system, U_frozen)
    A, S0inv = coeffs.A, coeffs.S0inv
    if check_cfl:
        adm = admissible_hyperbolic_dt(system, U_frozen, step.cfl_safety)
        if step.dt > adm:
            raise CFLViolation(step.dt, adm)
    rhs = np.einsum("mij,jm->im", S0inv, _flat(theta1.values)).reshape(V1.values.shape)

    def F(v: np.ndarray) -> np.ndarray:
        dv = _flat(gradient_array(v, grid).reshape((grid.n * grid.d,) + grid.shape))
        dv = dv.reshape(v.shape[0], grid.d, -1)
        adv = np.einsum("amij,jam->im", A, dv).reshape(v.shape)
        return dealias_values(rhs - adv, grid)

    v = V1.values
    dt = step.dt
    k1 = F(v)
    k2 = F(v + 0.5 * dt * k1)
    k3 = F(v + 0.5 * dt * k2)
    k4 = F(v + dt * k3)
    # keep the state inside the dealias band: roundoff seeded outside it is
    # not damped by the frozen-coefficient dynamics and would grow
    return Field(grid, dealias_values(v + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), grid))


def check_pointwise_ellipticity(system, U: Field, floor: float = 0.0,
                                Z: np.ndarray | None = None) -> float:
    """Min eigenvalue of the symmetrized diffusion symbol over axes directions
    and grid states; raises EllipticityFailure when it drops to ``floor``.
    ``Z`` may carry the precomputed (d, d, M, n2, n2) tensor."""
    grid = U.grid
    if Z is None:
        Uv = _flat(U.values)
        Z = np.empty((grid.d, grid.d, grid.size, system.n2, system.n2))
        for a in range(grid.d):
            for b in range(grid.d):
                Z[a, b] = np.moveaxis(system.Z_block(Uv, a, b), -1, 0)
    worst = np.inf
    for a in range(grid.d):
        sym = 0.5 * (Z[a, a] + np.swapaxes(Z[a, a], -1, -2))
        worst = min(worst, float(np.linalg.eigvalsh(sym).min()))
    if worst <= floor:
        raise EllipticityFailure(f"diffusion symbol eigenvalue {worst:g} <= {floor:g}")
    return worst


@dataclass(eq=False)
class ParabolicCoeffs:
    """Precomputed frozen-coefficient data for the parabolic step.

    ``Z`` may be evaluated at a different (spectrally localized) state than
    ``S22inv``; the steppers do not care where the matrices came from.
    """

    S22inv: np.ndarray       # (M, n2, n2)
    Z: np.ndarray            # (d, d, M, n2, n2)


def prepare_parabolic_coeffs(system, U_frozen: Field,
                             U_diffusion: Field | None = None) -> ParabolicCoeffs:
    grid = U_frozen.grid
    Uv = _flat(U_frozen.values)
    Ud = _flat(U_diffusion.values) if U_diffusion is not None else Uv
    S22inv = _batched_inv(system.S0_block(Uv, 2, 2))
    Z = np.empty((grid.d, grid.d, grid.size, system.n2, system.n2))
    for a in range(grid.d):
        for b in range(grid.d):
            Z[a, b] = np.moveaxis(system.Z_block(Ud, a, b), -1, 0)
    return ParabolicCoeffs(S22inv, Z)


def step_linear_parabolic_variable(system, V2: Field, U_frozen: Field, theta2: Field,
                                   step: FrozenCoeffStep, op_bar: ConstantParabolicOp,
                                   check_ellipticity: bool = True,
                                   coeffs: ParabolicCoeffs | None = None) -> Field:
    """One ETD2RK step of the parabolic block with frozen coefficients.

    The constant part at the reference state is integrated exactly per mode;
    the divergence-form residual ``d_a((Z(U) - Z_bar) d_b .)`` and the source
    are treated explicitly at second order.
    """
    from lpflow.grid import _dealias_mask, fftn, ifftn

    grid = V2.grid
    if coeffs is None:
        system.require_phase(U_frozen)
        if check_ellipticity:
            check_pointwise_ellipticity(system, U_frozen)
        coeffs = prepare_parabolic_coeffs(system, U_frozen)
    S22inv, Z = coeffs.S22inv, coeffs.Z
    n2, d = grid.n, grid.d
    axes = tuple(range(1, d + 1))
    flux_axes = tuple(range(2, d + 2))
    ik = (1j * grid.xi_scale * grid.wavenumbers()).reshape(d, -1)
    mask = _dealias_mask(d, grid.N).reshape(-1)
    theta_flat = _flat(theta2.values)
    Bbar = op_bar._modes(grid)["B"]

    def N_hat(v_hat: np.ndarray) -> np.ndarray:
        # v_hat flat (n2, M), kept inside the dealias band by construction
        dv_hat = v_hat[:, None, :] * ik[None, :, :]
        dv = ifftn(dv_hat.reshape((n2, d) + grid.shape), axes=flux_axes).real
        flux = np.einsum("abmij,jbm->aim", Z, dv.reshape(n2, d, -1))
        flux_hat = fftn(flux.reshape((d, n2) + grid.shape), axes=flux_axes)
        div_hat = np.einsum("am,aim->im", ik, flux_hat.reshape(d, n2, -1))
        div = ifftn(div_hat.reshape((n2,) + grid.shape), axes=axes).real
        full = np.einsum("mij,jm->im", S22inv, div.reshape(n2, -1) + theta_flat)
        full_hat = fftn(full.reshape((n2,) + grid.shape), axes=axes).reshape(n2, -1)
        lin = np.einsum("mij,jm->im", Bbar, v_hat)
        return full_hat * mask + lin

    E, P1, P2 = op_bar.etd_factors(grid, step.dt)

    def apply(F: np.ndarray, w_hat: np.ndarray) -> np.ndarray:
        return np.einsum("mij,jm->im", F, w_hat)

    # state stays inside the dealias band: roundoff seeded outside it is not
    # damped by the frozen-coefficient dynamics and would grow
    v_hat = fftn(V2.values, axes=axes).reshape(n2, -1) * mask
    Nv = N_hat(v_hat)
    a_hat = apply(E, v_hat) + apply(P1, Nv)
    out_hat = a_hat + apply(P2, N_hat(a_hat) - Nv)
    out = ifftn(out_hat.reshape((n2,) + grid.shape), axes=axes).real
    return Field(grid, np.ascontiguousarray(out))


# ---------------------------------------------------------------------------
# Smoothing-estimate verification
# ---------------------------------------------------------------------------

@dataclass
class BlockSmoothingRow:
    j: int
    sup_ratio: float
    c_fit: float | None
    envelope: tuple[float, float]
    in_envelope: bool | None
    l1_constant: float | None
    note: str = ""


@dataclass
class SmoothingReport:
    rows: list[BlockSmoothingRow]
    low_block_constant: float
    sqrt_cond: float
    sup_tol: float = 1e-9

    @property
    def sup_ok(self) -> bool:
        return all(r.sup_ratio <= self.sqrt_cond + self.sup_tol for r in self.rows)

    @property
    def envelope_ok(self) -> bool:
        return all(r.in_envelope for r in self.rows if r.in_envelope is not None)

    @property
    def low_block_ok(self) -> bool:
        return self.low_block_constant <= self.sqrt_cond + 1e-6


def _log_slope(t: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of log(y) against t."""
    ly = np.log(y)
    t0 = t - t.mean()
    return float(np.sum(t0 * (ly - ly.mean())) / np.sum(t0**2))


def verify_smoothing_estimates(traj: Trajectory, op: ConstantParabolicOp, V0: Field,
                               s: float, T: float, h: float) -> SmoothingReport:
    """Check per-block decay of the exact propagator on [0, T + h].

    For every annulus the sup-in-time ratio is bounded by sqrt(cond(S)),
    the fitted absolute decay rate divided by ``4^j`` (physical scaling
    removed) must land in the symbol-support envelope, and the low block
    satisfies the integrated bound with the same constant.
    """
    grid = V0.grid
    bank = build_filter_bank(grid)
    times = np.asarray(traj.times)
    if times[-1] < T + h - 1e-12:
        raise ValueError("trajectory does not cover [0, T + h]")
    js, series = _norms.block_norm_series(traj, "nonhomogeneous")
    _, base = block_l2_norms(V0, "nonhomogeneous")
    rate_lo, rate_hi = op.rate_envelope()
    xi2 = grid.xi_scale**op.gamma
    window = (times >= T - 1e-12) & (times <= T + h + 1e-12)
    w_t = times[window]
    rows: list[BlockSmoothingRow] = []
    floor = 1e-13 * max(base.max(), 1e-300)
    for i, j in enumerate(js):
        if j < 0:
            continue
        y = series[:, i]
        if base[i] <= floor:
            rows.append(BlockSmoothingRow(int(j), 0.0, None, (0, 0), None, None, "empty block"))
            continue
        sup_ratio = float(y.max() / base[i])
        live = y > max(1e-13 * base[i], 1e-300)
        if live.sum() < 3:
            rows.append(BlockSmoothingRow(int(j), sup_ratio, None, (0, 0), None, None,
                                          "block decays below floor; fit skipped"))
            continue
        rate = -_log_slope(times[live], y[live])
        scale = 2.0 ** (float(j) * op.gamma) * xi2
        env = (rate_lo * (3.0 / 4.0) ** op.gamma * scale,
               rate_hi * (8.0 / 3.0) ** op.gamma * scale)
        in_env = env[0] * (1 - 1e-9) <= rate <= env[1] * (1 + 1e-9)
        # Integrated gain over [T, T+h] against the fitted rate structure
        lhs = np.trapezoid(2.0 ** (float(j) * (s + op.gamma)) * y[window], w_t)
        denom = np.exp(-rate * T) * (1.0 - np.exp(-rate * h)) * 2.0 ** (float(j) * s) * base[i]
        c0 = float(lhs / denom) if denom > 0 else np.inf
        rows.append(BlockSmoothingRow(int(j), sup_ratio, rate / scale,
                                      (env[0] / scale, env[1] / scale), in_env, c0))
    # Low block: integral of max(||block||, ||d/dt block||) against h * B^s norm
    low_idx = int(np.nonzero(js == -1)[0][0])
    low_vals = series[window, low_idx]
    dt_traj = Trajectory(times, [op.time_derivative(f) for f in traj.fields])
    _, dt_series = _norms.block_norm_series(dt_traj, "nonhomogeneous")
    low_pair = np.maximum(low_vals, dt_series[window, low_idx])
    bnorm = _norms.besov_norm(V0, _norms.BesovIndex(s)).total
    las = float(np.trapezoid(low_pair, w_t) / (h * bnorm)) if bnorm > 0 else 0.0
    return SmoothingReport(rows, las, op.sqrt_cond)


# ---------------------------------------------------------------------------
# ODE lemma
# ---------------------------------------------------------------------------

@dataclass
class OdeLemmaReport:
    hypothesis_ok: bool
    conclusion_ok: bool | None
    hypothesis_margin: float
    conclusion_margin: float | None

    @property
    def ok(self) -> bool:
        return self.hypothesis_ok and bool(self.conclusion_ok)


def verify_ode_lemma(times: np.ndarray, X: np.ndarray, A: np.ndarray, B: float,
                     tol: float | None = None) -> OdeLemmaReport:
    """Differential-inequality lemma: from ``X'/2 + B X <= A sqrt(X)`` deduce
    ``sqrt(X)(t) + B int sqrt(X) <= sqrt(X)(0) + int A`` at every sample."""
    times = np.asarray(times, dtype=float)
    X = np.asarray(X, dtype=float)
    A = np.asarray(A, dtype=float)
    if np.any(X < 0) or np.any(A < 0) or B < 0:
        raise ValueError("lemma hypotheses need X >= 0, A >= 0, B >= 0")
    dt = times[1] - times[0]
    if tol is None:
        tol = 50.0 * dt**2 * max(np.abs(X).max(), 1.0) * (1.0 + B) ** 3 + 1e-12
    dX = np.gradient(X, times, edge_order=2)
    lhs_h = 0.5 * dX + B * X
    rhs_h = A * np.sqrt(X)
    hyp_margin = float((rhs_h - lhs_h).min())
    hypothesis_ok = bool(hyp_margin >= -tol)
    if not hypothesis_ok:
        return OdeLemmaReport(False, None, hyp_margin, None)
    sqrtX = np.sqrt(X)
    int_sqrt = np.concatenate([[0.0], np.cumsum((sqrtX[1:] + sqrtX[:-1]) / 2.0 * dt)])
    int_A = np.concatenate([[0.0], np.cumsum((A[1:] + A[:-1]) / 2.0 * dt)])
    lhs_c = sqrtX + B * int_sqrt
    rhs_c = sqrtX[0] + int_A
    margin = float((rhs_c - lhs_c).min())
    return OdeLemmaReport(True, bool(margin >= -tol), hyp_margin, margin)
