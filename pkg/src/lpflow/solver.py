"""Iterative construction of solutions to the nonlinear coupled system.

Each iterate solves the pair of linear equations with coefficients and
sources frozen at the previous iterate: a symmetric hyperbolic equation for
the undiffused block and a parabolic one for the diffused block.  The
subcritical scheme truncates the data at dyadic level p + 1; the critical
scheme additionally freezes the parabolic coefficients at a low-pass
filtered first block and runs its own admissibility rules for the
truncation level m and the horizon T.

Hypothesis monitors measure, and never gate, the iteration; only leaving
the phase space (or, on the critical path, a pointwise drift past d1)
aborts a run.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from lpflow.grid import (
    HOMOGENEOUS,
    NONHOMOGENEOUS,
    Field,
    GridSpec,
    block_l2_norms,
    build_filter_bank,
    dealias_values,
    gradient_array,
    low_freq_cutoff,
    stack_fields,
)
from lpflow.norms import BesovIndex, besov_norm, chemin_lerner_norm, lebesgue_besov_norm
from lpflow.propagators import (
    ConstantParabolicOp,
    FrozenCoeffStep,
    Trajectory,
    solve_constant_parabolic,
    step_linear_hyperbolic,
    step_linear_parabolic_variable,
)
from lpflow.systems import PhaseSpaceViolation, SystemSpec


class CriticalMonitorViolation(RuntimeError):
    """Pointwise drift of the hyperbolic block exceeded d1."""

    def __init__(self, t: float, where: int, value: float, bound: float):
        super().__init__(
            f"|V1(t,x) - V1_0(x)| = {value:g} > d1 = {bound:g} at t = {t:g}, "
            f"flat index {where}"
        )
        self.t = t
        self.where = where


@dataclass
class IterationConfig:
    """Knobs of the iteration; symbols follow the well-posedness analysis."""

    s: float
    R: float = 1.0
    eta: float = 0.25
    T: float | None = None
    m: int = 0
    dt: float = 1e-3
    p_max: int = 12
    contraction_tol: float = 1e-10
    eps_weight: float = 0.25        # the 1/(4C) weight on the hyperbolic part of X_p
    c_rate: float | None = None     # low-frequency decay rate in the T rules
    C_const: float = 1.0            # constant in the eta^2/C budget
    max_samples: int = 129          # recorded snapshots per inner solve
    cfl_safety: float = 0.5

    def __post_init__(self) -> None:
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.R < 1.0:
            raise ValueError("size bound R must be >= 1")
        if self.m < 0:
            raise ValueError("truncation index m must be >= 0")
        if self.T is not None and self.T <= 0.0:
            raise ValueError("time horizon T must be positive")
        if self.dt <= 0.0 or self.p_max < 1:
            raise ValueError("dt must be positive and p_max >= 1")


@dataclass
class HypothesisStatus:
    name: str
    value: float
    threshold: float
    larger_is_ok: bool = False

    @property
    def ok(self) -> bool:
        if self.larger_is_ok:
            return self.value >= self.threshold
        return self.value <= self.threshold

    @property
    def margin(self) -> float:
        return (self.value - self.threshold) if self.larger_is_ok \
            else (self.threshold - self.value)

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "ok": self.ok, "margin": self.margin}


@dataclass
class IterationRecord:
    p: int
    X_p: float
    ratio: float | None
    residual: float
    hypotheses: dict[str, HypothesisStatus]

    def as_dict(self) -> dict:
        return {"p": self.p, "X_p": self.X_p, "ratio": self.ratio,
                "residual": self.residual,
                "hypotheses": {k: v.as_dict() for k, v in self.hypotheses.items()}}


@dataclass
class IterationDiagnostics:
    records: list[IterationRecord]
    fitted: dict
    final_status: str = "cap"

    @property
    def X_series(self) -> list[float]:
        return [r.X_p for r in self.records]

    @property
    def ratios(self) -> list[float | None]:
        return [r.ratio for r in self.records]

    def as_dict(self) -> dict:
        return {"final_status": self.final_status, "fitted": self.fitted,
                "iterations": [r.as_dict() for r in self.records]}


@dataclass
class SplitState:
    """Parabolic-block splitting into the constant-coefficient flow plus rest."""

    V2_L: Trajectory
    V_S: Trajectory

    def check_consistency(self, v2: Trajectory, rtol: float = 1e-10) -> float:
        worst = 0.0
        for f, fl, fs in zip(v2.fields, self.V2_L.fields, self.V_S.fields):
            err = (f - (fl + fs)).l2_norm()
            worst = max(worst, err / max(f.l2_norm(), 1e-300))
        if worst > rtol:
            raise AssertionError(f"splitting defect {worst:g} exceeds {rtol:g}")
        return worst


@dataclass
class RunResult:
    """Converged (or capped) run with everything the verifiers need."""

    traj: Trajectory            # final iterate, all n components
    coeff: Trajectory           # U used in the final linear solve
    theta1: Trajectory
    theta2: Trajectory
    dt_v: Trajectory            # d/dt of the final iterate from the equations
    split: SplitState
    diagnostics: IterationDiagnostics
    config: IterationConfig
    system: SystemSpec
    T: float

    @property
    def v1(self) -> Trajectory:
        return self.traj.components(0, self.system.n1)

    @property
    def v2(self) -> Trajectory:
        return self.traj.components(self.system.n1, self.system.n)


# ---------------------------------------------------------------------------
# Admissible-horizon rules
# ---------------------------------------------------------------------------

def compute_T0(V0_2: Field, eta: float, c: float, C: float, s: float) -> float:
    """Largest h with ``h + sum_{j>=0} (1 - e^{-c 4^j h}) 2^{js} ||Delta_j V0^2|| <= eta^2/C``.

    The left side is strictly increasing in h, so the supremum is a bisection
    on [0, eta^2/C].
    """
    if c <= 0 or C <= 0 or not (0 < eta < 1):
        raise ValueError("need c > 0, C > 0 and eta in (0, 1)")
    js, blocks = block_l2_norms(V0_2, NONHOMOGENEOUS)
    keep = js >= 0
    b = 2.0 ** (s * js[keep].astype(float)) * blocks[keep]
    rates = c * 4.0 ** js[keep].astype(float)
    target = eta**2 / C

    def G(h: float) -> float:
        return h + float(np.sum((1.0 - np.exp(-rates * h)) * b)) - target

    if b.sum() == 0.0:
        return target
    return float(brentq(G, 0.0, target, xtol=1e-14, rtol=1e-12))


def critical_truncation_level(V0_1: Field, eta: float, m_min: int = 0) -> int:
    """Smallest m with high-frequency tail sum <= sqrt(eta)/2 in hom B^{d/2}."""
    d = V0_1.grid.d
    js, blocks = block_l2_norms(V0_1, HOMOGENEOUS)
    weighted = 2.0 ** (d / 2.0 * js.astype(float)) * blocks
    target = 0.5 * math.sqrt(eta)
    for m in range(m_min, int(js.max()) + 2):
        if float(weighted[js >= m].sum()) <= target:
            return m
    return int(js.max()) + 1


def critical_horizon(V0_2: Field, eta: float, c: float, C0: float,
                     cap: float = 1.0) -> float:
    """Largest h with ``C0 sum_j (1 - e^{-c 4^j h}) 2^{j(d/2-1)} ||dot-Delta_j V0^2|| <= eta^2``."""
    d = V0_2.grid.d
    js, blocks = block_l2_norms(V0_2, HOMOGENEOUS)
    b = 2.0 ** ((d / 2.0 - 1.0) * js.astype(float)) * blocks
    rates = c * 4.0 ** js.astype(float)
    target = eta**2

    def G(h: float) -> float:
        return C0 * float(np.sum((1.0 - np.exp(-rates * h)) * b)) - target

    if b.sum() == 0.0 or G(cap) <= 0.0:
        return cap
    return float(brentq(G, 0.0, cap, xtol=1e-14, rtol=1e-12))


def _default_c_rate(op: ConstantParabolicOp, grid: GridSpec) -> float:
    return op.kappa_hat * (3.0 / 4.0) ** 2 * grid.xi_scale**2


# ---------------------------------------------------------------------------
# Inner linear solve
# ---------------------------------------------------------------------------

def _grad_flat(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    return gradient_array(values, grid).reshape(values.shape[0], grid.d, -1)


def _sources_at(spec: SystemSpec, V: Field) -> tuple[Field, Field]:
    """Theta^1, Theta^2 of the linearization, frozen at the state U = U_bar + V."""
    grid = V.grid
    n1, n2, d = spec.n1, spec.n2, spec.d
    Uv = (spec.U_bar[:, None] + V.values.reshape(spec.n, -1))
    gradV = _grad_flat(V.values, grid)
    f = spec.f(Uv, gradV)
    th1 = f[:n1].copy()
    th2 = f[n1:].copy()
    for a in range(d):
        if n1 > 0:
            S12 = spec.Salpha_block(Uv, a, 1, 2)
            th1 -= np.einsum("ijm,jm->im", S12, gradV[n1:, a])
            S21 = spec.Salpha_block(Uv, a, 2, 1)
            th2 -= np.einsum("ijm,jm->im", S21, gradV[:n1, a])
        S22 = spec.Salpha_block(Uv, a, 2, 2)
        th2 -= np.einsum("ijm,jm->im", S22, gradV[n1:, a])
    sh1 = (n1,) + grid.shape
    sh2 = (n2,) + grid.shape
    g1 = grid.with_components(n1) if n1 > 0 else None
    theta1 = Field(g1, dealias_values(th1.reshape(sh1), grid)) if n1 > 0 else None
    theta2 = Field(grid.with_components(n2), dealias_values(th2.reshape(sh2), grid))
    return theta1, theta2


def _critical_correction(spec: SystemSpec, V: Field, U_full: Field,
                         U_frozen: Field) -> Field:
    """Diffusion-localization error moved to the parabolic source.

    The inner solve diffuses with Z at the low-pass state; adding
    ``div((Z(U) - Z(U_m)) grad V2_prev)`` keeps the fixed point at the
    unlocalized system.
    """
    grid = V.grid
    n1, n2, d = spec.n1, spec.n2, spec.d
    Uf = U_full.values.reshape(spec.n, -1)
    Um = U_frozen.values.reshape(spec.n, -1)
    gradV2 = _grad_flat(V.values[n1:], grid)
    flux = np.zeros((d, n2) + grid.shape)
    for a in range(d):
        acc = np.zeros((n2, grid.size))
        for b in range(d):
            dZ = spec.Z_block(Uf, a, b) - spec.Z_block(Um, a, b)
            acc += np.einsum("ijm,jm->im", dZ, gradV2[:, b])
        flux[a] = dealias_values(acc.reshape((n2,) + grid.shape), grid)
    corr = np.zeros((n2,) + grid.shape)
    for a in range(d):
        corr += gradient_array(flux[a], grid)[:, a]
    return Field(grid.with_components(n2), dealias_values(corr, grid))


def _time_derivatives(spec: SystemSpec, V: Field, U: Field, theta1: Field | None,
                      theta2: Field) -> Field:
    """d/dt V from the two linear equations at frozen coefficients."""
    grid = V.grid
    n1, n2, d = spec.n1, spec.n2, spec.d
    Uv = U.values.reshape(spec.n, -1)
    out = np.zeros((spec.n,) + grid.shape)
    gradV = _grad_flat(V.values, grid)
    if n1 > 0:
        S0inv = np.linalg.inv(np.moveaxis(spec.S0_block(Uv, 1, 1), -1, 0))
        acc = _flatten_field(theta1)
        for a in range(d):
            S11 = spec.Salpha_block(Uv, a, 1, 1)
            acc = acc - np.einsum("ijm,jm->im", S11, gradV[:n1, a])
        out[:n1] = np.einsum("mij,jm->im", S0inv, acc).reshape((n1,) + grid.shape)
    S22inv = np.linalg.inv(np.moveaxis(spec.S0_block(Uv, 2, 2), -1, 0))
    flux = np.zeros((d, n2) + grid.shape)
    for a in range(d):
        acc = np.zeros((n2, grid.size))
        for b in range(d):
            Zab = spec.Z_block(Uv, a, b)
            acc += np.einsum("ijm,jm->im", Zab, gradV[n1:, b])
        flux[a] = dealias_values(acc.reshape((n2,) + grid.shape), grid)
    div = np.zeros((n2,) + grid.shape)
    for a in range(d):
        div += gradient_array(flux[a], grid)[:, a]
    rhs = div.reshape(n2, -1) + _flatten_field(theta2)
    out[n1:] = np.einsum("mij,jm->im", S22inv, rhs).reshape((n2,) + grid.shape)
    return Field(grid.with_components(spec.n), dealias_values(out, grid))


def _flatten_field(f: Field | None) -> np.ndarray:
    if f is None:
        return 0.0
    return f.values.reshape(f.grid.n, -1)


@dataclass
class _InnerSolveResult:
    traj: Trajectory
    theta1: Trajectory | None
    theta2: Trajectory
    dt_v: Trajectory
    coeff: Trajectory


def _solve_linear_pair(spec: SystemSpec, prev: Trajectory, data: Field,
                       cfg: IterationConfig, op_bar: ConstantParabolicOp,
                       times: np.ndarray, stride: int, dt: float,
                       critical_m: int | None = None,
                       p_label: int = 0) -> _InnerSolveResult:
    """One sweep of the linearized system with coefficients from ``prev``.

    ``prev`` holds recorded samples at ``times``; inner steps between two
    samples reuse the left sample's coefficients (assembled once per
    interval).  On the critical path the diffusion tensor is evaluated at the
    low-pass filtered first block and the difference is fed back through the
    source.
    """
    from lpflow.propagators import (
        CFLViolation,
        _admissible_dt_from_coeffs,
        check_pointwise_ellipticity,
        prepare_hyperbolic_coeffs,
        prepare_parabolic_coeffs,
    )

    grid = data.grid
    n1 = spec.n1
    step = FrozenCoeffStep(dt=dt, cfl_safety=cfg.cfl_safety)
    v = data
    rec_fields = [v]
    th1_list, th2_list, dtv_list, coeff_list = [], [], [], []
    hyper = n1 > 0
    for i_rec in range(len(times) - 1):
        Vp = prev.fields[i_rec]
        U = Field(grid.with_components(spec.n),
                  spec.U_bar[(...,) + (None,) * grid.d] + Vp.values)
        spec.require_phase(U, when=f"t={times[i_rec]:.5g}, iterate p={p_label}")
        theta1, theta2 = _sources_at(spec, Vp)
        if critical_m is not None:
            V1m = low_freq_cutoff(Vp.component(0, n1), critical_m + 1, HOMOGENEOUS)
            mean_shift = Vp.component(0, n1).mean() - V1m.mean()
            U_frozen = Field(
                grid.with_components(spec.n),
                np.concatenate([
                    spec.U_bar[:n1][(...,) + (None,) * grid.d]
                    + V1m.values + mean_shift[(...,) + (None,) * grid.d],
                    spec.U_bar[n1:][(...,) + (None,) * grid.d] + Vp.values[n1:],
                ]),
            )
            theta2 = theta2 + _critical_correction(spec, Vp, U, U_frozen)
        else:
            U_frozen = None
        th1_list.append(theta1)
        th2_list.append(theta2)
        coeff_list.append(U)
        dtv_list.append(_time_derivatives(spec, v, U, theta1, theta2))
        if hyper:
            hcoef = prepare_hyperbolic_coeffs(spec, U)
            adm = _admissible_dt_from_coeffs(hcoef, grid, cfg.cfl_safety)
            if dt > adm:
                raise CFLViolation(dt, adm)
        pcoef = prepare_parabolic_coeffs(spec, U, U_diffusion=U_frozen)
        check_pointwise_ellipticity(spec, U_frozen if U_frozen is not None else U,
                                    Z=pcoef.Z)
        v1 = v.component(0, n1) if hyper else None
        v2 = v.component(n1, spec.n)
        for _ in range(stride):
            if hyper:
                v1 = step_linear_hyperbolic(spec, v1, U, theta1, step,
                                            check_cfl=False, coeffs=hcoef)
            v2 = step_linear_parabolic_variable(spec, v2, U, theta2, step, op_bar,
                                                coeffs=pcoef)
        v = stack_fields([v1, v2]) if hyper else v2
        rec_fields.append(v)
    # trailing records at the final sample
    Vp = prev.fields[-1]
    U = Field(grid.with_components(spec.n),
              spec.U_bar[(...,) + (None,) * grid.d] + Vp.values)
    theta1, theta2 = _sources_at(spec, Vp)
    th1_list.append(theta1)
    th2_list.append(theta2)
    coeff_list.append(U)
    dtv_list.append(_time_derivatives(spec, v, U, theta1, theta2))
    return _InnerSolveResult(
        traj=Trajectory(times, rec_fields, {"scheme": "rk4+etd2rk", "dt": dt,
                                            "stride": stride}),
        theta1=Trajectory(times, th1_list) if hyper else None,
        theta2=Trajectory(times, th2_list),
        dt_v=Trajectory(times, dtv_list),
        coeff=Trajectory(times, coeff_list),
    )


# ---------------------------------------------------------------------------
# Contraction functional and residual
# ---------------------------------------------------------------------------

def contraction_norm(delta: Trajectory, n1: int, s: float, eps_weight: float,
                     R: float, flavor: str = NONHOMOGENEOUS) -> float:
    """X_p: weighted sup of the hyperbolic part at level s plus the parabolic
    part at s-1 (sup) and s+1 (time integral)."""
    total = 0.0
    if n1 > 0:
        v1 = delta.components(0, n1)
        total += eps_weight / R * lebesgue_besov_norm(v1, BesovIndex(s, flavor=flavor), math.inf)
    v2 = delta.components(n1, delta.grid.n)
    total += lebesgue_besov_norm(v2, BesovIndex(s - 1.0, flavor=flavor), math.inf)
    total += lebesgue_besov_norm(v2, BesovIndex(s + 1.0, flavor=flavor), 1.0)
    return total


def nonlinear_residual(spec: SystemSpec, traj: Trajectory, max_evals: int = 9) -> float:
    """Max-over-time L2 residual of the nonlinear system along a trajectory,
    with d/dt from centered differences (its O(dt^2) error is the floor).
    Evaluated on at most ``max_evals`` interior samples."""
    grid = traj.grid
    n1, n2, d = spec.n1, spec.n2, spec.d
    times = traj.times
    vals = np.stack([f.values for f in traj.fields])
    dt_vals = np.gradient(vals, times, axis=0, edge_order=2)
    worst = 0.0
    interior = np.arange(1, len(times) - 1)
    if len(interior) > max_evals:
        interior = interior[np.linspace(0, len(interior) - 1, max_evals).astype(int)]
    for i in interior:
        V = traj.fields[i]
        Uv = spec.U_bar[:, None] + V.values.reshape(spec.n, -1)
        gradV = _grad_flat(V.values, grid)
        res = np.einsum("ijm,jm->im", spec.assemble_S0(Uv),
                        dt_vals[i].reshape(spec.n, -1))
        for a in range(d):
            Sa = spec.assemble_Salpha(Uv, a)
            res += np.einsum("ijm,jm->im", Sa, gradV[:, a])
        flux = np.zeros((d, n2) + grid.shape)
        for a in range(d):
            acc = np.zeros((n2, grid.size))
            for b in range(d):
                acc += np.einsum("ijm,jm->im", spec.Z_block(Uv, a, b), gradV[n1:, b])
            flux[a] = dealias_values(acc.reshape((n2,) + grid.shape), grid)
        div = np.zeros((n2,) + grid.shape)
        for a in range(d):
            div += gradient_array(flux[a], grid)[:, a]
        res[n1:] -= div.reshape(n2, -1)
        res -= spec.f(Uv, gradV)
        res_field = Field(grid.with_components(spec.n),
                          dealias_values(res.reshape((spec.n,) + grid.shape), grid))
        worst = max(worst, res_field.l2_norm())
    return worst


def transport_conservation_gap(spec: SystemSpec, traj: Trajectory,
                               floor: float = 0.0) -> dict:
    """Mean drift of the first (scalar, conserved) block versus the integrated
    dealiasing gap between the transport and conservative forms.

    The reported budget adds ``floor`` for the solver's own discretization
    (contraction gap plus time-integration error): mean conservation is exact
    only at the fixed point integrated exactly in time.
    """
    if spec.n1 != 1:
        return {}
    grid = traj.grid
    n1 = spec.n1
    means = [float(f.component(0, 1).mean()[0]) for f in traj.fields]
    gap = 0.0
    w = np.full(len(traj.times), traj.dt)
    w[0] = w[-1] = traj.dt / 2.0
    for wi, f in zip(w, traj.fields):
        rho = spec.U_bar[0] + f.values[0]
        uvals = spec.U_bar[1:][(...,) + (None,) * grid.d] + f.values[1:]
        grad_rho = gradient_array(rho[None], grid)[0]
        transport = np.zeros(grid.shape)
        divu = np.zeros(grid.shape)
        for a in range(grid.d):
            transport += dealias_values((uvals[a] * grad_rho[a])[None], grid)[0]
            divu += gradient_array(uvals[a][None], grid)[0, a]
        transport += dealias_values((rho * divu)[None], grid)[0]
        conservative = np.zeros(grid.shape)
        for a in range(grid.d):
            flux = dealias_values((rho * uvals[a])[None], grid)
            conservative += gradient_array(flux, grid)[0, a]
        diff = Field(grid.with_components(1), (transport - conservative)[None])
        gap += wi * diff.l2_norm()
    drift = max(abs(m - means[0]) for m in means)
    return {"mean_drift": drift, "dealias_residual_integral": gap,
            "mean_drift_budget": gap + floor}


# ---------------------------------------------------------------------------
# Hypothesis monitors
# ---------------------------------------------------------------------------

def _split_for(iterate: Trajectory, V2L_base: Trajectory, n1: int,
               trunc_multiplier) -> SplitState:
    """Split V^2 = V^2_L + V_S with the iterate's own data truncation applied
    to the constant-coefficient flow so that V_S(0) = 0 exactly."""
    v2 = iterate.components(n1, iterate.grid.n)
    V2L = V2L_base.map(trunc_multiplier)
    VS = v2 - V2L
    return SplitState(V2_L=V2L, V_S=VS)


def check_hypotheses_subcritical(split: SplitState, v1_traj: Trajectory | None,
                                 v2_traj: Trajectory, dtv_traj: Trajectory,
                                 dtv2L_traj: Trajectory, cfg: IterationConfig,
                                 spec: SystemSpec, full_traj: Trajectory,
                                 R_eff: float) -> dict[str, HypothesisStatus]:
    s, eta = cfg.s, cfg.eta
    out: dict[str, HypothesisStatus] = {}
    v1_sup = lebesgue_besov_norm(v1_traj, BesovIndex(s + 1.0), math.inf) if v1_traj else 0.0
    v2_sup = lebesgue_besov_norm(v2_traj, BesovIndex(s), math.inf)
    out["H1"] = HypothesisStatus("H1 size bound", max(v1_sup, v2_sup), R_eff)
    h2 = lebesgue_besov_norm(dtv2L_traj, BesovIndex(s), 1.0) \
        + lebesgue_besov_norm(split.V2_L, BesovIndex(s + 2.0), 1.0)
    out["H2"] = HypothesisStatus("H2 free-flow smallness", h2, eta**2)
    dtv2 = dtv_traj.components(spec.n1, spec.n)
    dtVS = dtv2 - dtv2L_traj
    h3 = lebesgue_besov_norm(split.V_S, BesovIndex(s), math.inf) \
        + lebesgue_besov_norm(split.V_S, BesovIndex(s + 2.0), 1.0) \
        + lebesgue_besov_norm(dtVS, BesovIndex(s), 1.0)
    out["H3"] = HypothesisStatus("H3 remainder smallness", h3, eta)
    h4 = lebesgue_besov_norm(dtv_traj, BesovIndex(s), 1.0)
    out["H4"] = HypothesisStatus("H4 time-derivative budget", h4, math.sqrt(eta))
    margin = min(
        spec.phase_margin(spec.U_bar[(...,) + (None,) * full_traj.grid.d] + f.values)
        for f in full_traj.fields
    )
    out["H5"] = HypothesisStatus("H5 compact range", margin, 0.0, larger_is_ok=True)
    return out


def _critical_monitors(spec: SystemSpec, iterate: Trajectory, split: SplitState,
                       dtv2L: Trajectory, V0: Field, cfg: IterationConfig,
                       m: int, M1: float, d1: float) -> dict[str, HypothesisStatus]:
    d = iterate.grid.d
    half = d / 2.0
    n1 = spec.n1
    v1 = iterate.components(0, n1)
    out: dict[str, HypothesisStatus] = {}
    c1 = chemin_lerner_norm(v1, BesovIndex(half, flavor=HOMOGENEOUS), math.inf).total
    out["C1"] = HypothesisStatus("C1 hyperbolic size", c1, M1)
    tail = v1.map(lambda f: f - low_freq_cutoff(f, m + 1, HOMOGENEOUS))
    c2 = chemin_lerner_norm(tail, BesovIndex(half, flavor=HOMOGENEOUS), math.inf).total
    out["C2"] = HypothesisStatus("C2 coefficient localization", c2, math.sqrt(cfg.eta))
    v10 = V0.values[:n1]
    drift = max(
        float(np.sqrt(((f.values - v10) ** 2).sum(axis=0)).max()) for f in v1.fields
    )
    out["C3"] = HypothesisStatus("C3 pointwise drift", drift, d1)
    c4 = chemin_lerner_norm(split.V_S, BesovIndex(half - 1.0, flavor=HOMOGENEOUS), math.inf).total \
        + lebesgue_besov_norm(split.V_S, BesovIndex(half + 1.0, flavor=HOMOGENEOUS), 1.0)
    out["C4"] = HypothesisStatus("C4 remainder smallness", c4, cfg.eta)
    c5 = lebesgue_besov_norm(dtv2L, BesovIndex(half - 1.0, flavor=HOMOGENEOUS), 1.0) \
        + lebesgue_besov_norm(split.V2_L, BesovIndex(half + 1.0, flavor=HOMOGENEOUS), 1.0)
    out["C5"] = HypothesisStatus("C5 free-flow smallness", c5, cfg.eta**2)
    return out


# ---------------------------------------------------------------------------
# Main iteration drivers
# ---------------------------------------------------------------------------

def _prepare_times(T: float, cfg: IterationConfig) -> tuple[np.ndarray, int, float]:
    n_steps = max(2, math.ceil(T / cfg.dt))
    stride = max(1, math.ceil(n_steps / (cfg.max_samples - 1)))
    n_steps = stride * math.ceil(n_steps / stride)
    dt = T / n_steps
    times = np.linspace(0.0, T, n_steps // stride + 1)
    return times, stride, dt


def _effective_R(cfg: IterationConfig, V0: Field, n1: int, s: float) -> float:
    v1n = besov_norm(V0.component(0, n1), BesovIndex(s + 1.0)).total if n1 else 0.0
    v2n = besov_norm(V0.component(n1, V0.grid.n), BesovIndex(s)).total
    return max(cfg.R, 1.0, 2.0 * (v1n + v2n))


def iterate_subcritical(spec: SystemSpec, V0: Field, cfg: IterationConfig) -> RunResult:
    """Friedrichs-type iteration at subcritical regularity (profile B or C)."""
    grid = V0.grid
    if grid.n != spec.n or grid.d != spec.d:
        raise ValueError("data shape does not match the system")
    if cfg.s < spec.d / 2.0:
        raise ValueError(f"need s >= d/2, got s={cfg.s}, d={spec.d}")
    if spec.d == 1 and abs(cfg.s - 0.5) < 1e-12:
        warnings.warn("d=1, s=1/2 endpoint: generic path, convergence may degrade")
    spec.require_phase(spec.U_bar[(...,) + (None,) * grid.d] + V0.values, when="t=0")
    op_bar = spec.constant_parabolic_op()
    c_rate = cfg.c_rate if cfg.c_rate is not None else _default_c_rate(op_bar, grid)
    V0_2 = V0.component(spec.n1, spec.n)
    T = cfg.T if cfg.T is not None else compute_T0(V0_2, cfg.eta, c_rate, cfg.C_const, cfg.s)
    times, stride, dt = _prepare_times(T, cfg)
    R_eff = _effective_R(cfg, V0, spec.n1, cfg.s)
    V2L_base = solve_constant_parabolic(V0_2, op_bar, T, len(times))
    dtv2L_base = V2L_base.map(op_bar.time_derivative)

    zeros1 = np.zeros((spec.n1,) + grid.shape)
    prev = Trajectory(times, [Field(grid, np.concatenate([zeros1, f.values]))
                              for f in V2L_base.fields], {"iterate": 0})
    bank = build_filter_bank(grid)

    def trunc(p: int):
        mult = bank.lowpass_multiplier(p, NONHOMOGENEOUS)
        return lambda f: Field.from_spectrum(f.grid, f.spectrum * mult)

    records: list[IterationRecord] = []
    X_prev: float | None = None
    result: _InnerSolveResult | None = None
    split: SplitState | None = None
    status = "cap"
    for p in range(cfg.p_max):
        data = trunc(p + 1)(V0)
        result = _solve_linear_pair(spec, prev, data, cfg, op_bar, times, stride, dt,
                                    p_label=p + 1)
        delta = result.traj - prev
        X_p = contraction_norm(delta, spec.n1, cfg.s, cfg.eps_weight, R_eff)
        split = _split_for(result.traj, V2L_base, spec.n1, trunc(p + 1))
        dtv2L = dtv2L_base.map(trunc(p + 1))
        hyps = check_hypotheses_subcritical(
            split, result.traj.components(0, spec.n1) if spec.n1 else None,
            result.traj.components(spec.n1, spec.n), result.dt_v, dtv2L,
            cfg, spec, result.traj, R_eff,
        )
        residual = nonlinear_residual(spec, result.traj)
        ratio = (X_p / X_prev) if (X_prev is not None and X_prev > 1e-300) else None
        records.append(IterationRecord(p, X_p, ratio, residual, hyps))
        prev = result.traj
        X_prev = X_p
        if X_p < cfg.contraction_tol:
            status = "converged"
            break
    if status == "cap" and records and not all(h.ok for h in records[-1].hypotheses.values()):
        status = "hypothesis-failure"
    scale = max(f.l2_norm() for f in prev.fields)
    discretization_floor = (X_prev or 0.0) + dt**2 * T * (1.0 + scale)
    diagnostics = IterationDiagnostics(
        records,
        fitted={"T": T, "dt": dt, "stride": stride, "R_eff": R_eff,
                "c_rate": c_rate, "eps_weight": cfg.eps_weight,
                **transport_conservation_gap(spec, prev, discretization_floor)},
        final_status=status,
    )
    return RunResult(result.traj, result.coeff, result.theta1, result.theta2,
                     result.dt_v, split, diagnostics, cfg, spec, T)


def solve_critical(spec: SystemSpec, V0: Field, cfg: IterationConfig) -> RunResult:
    """Critical-regularity scheme with low-frequency coefficient freezing.

    Requires d >= 2 and the affine/U1-only coefficient structure (profile C).
    Aborts when the pointwise drift monitor (C3) or the phase space is
    violated.
    """
    grid = V0.grid
    if spec.d == 1:
        raise ValueError("the critical path requires d >= 2")
    if spec.assumption_profile != "C":
        raise ValueError("the critical path requires a profile-C system")
    if grid.n != spec.n:
        raise ValueError("data shape does not match the system")
    spec.require_phase(spec.U_bar[(...,) + (None,) * grid.d] + V0.values, when="t=0")
    n1 = spec.n1
    op_bar = spec.constant_parabolic_op()
    c_rate = cfg.c_rate if cfg.c_rate is not None else _default_c_rate(op_bar, grid)
    V0_1, V0_2 = V0.component(0, n1), V0.component(n1, spec.n)
    half = spec.d / 2.0
    M1 = 1.0 + 2.0 * besov_norm(V0_1, BesovIndex(half, flavor=HOMOGENEOUS)).total
    m = critical_truncation_level(V0_1, cfg.eta, cfg.m)
    T_rule = critical_horizon(V0_2, cfg.eta, c_rate, op_bar.sqrt_cond,
                              cap=cfg.T if cfg.T is not None else 1.0)
    T = min(cfg.T, T_rule) if cfg.T is not None else T_rule
    if spec.hyperbolic_phase_distance is not None:
        U1_0 = spec.U_bar[:n1, None] + V0_1.values.reshape(n1, -1)
        d1 = 0.5 * float(np.min(spec.hyperbolic_phase_distance(
            np.concatenate([U1_0, np.zeros((spec.n - n1, U1_0.shape[1]))]))))
    else:
        d1 = np.inf
    times, stride, dt = _prepare_times(T, cfg)
    V2L_base = solve_constant_parabolic(V0_2, op_bar, T, len(times))
    dtv2L_base = V2L_base.map(op_bar.time_derivative)
    bank = build_filter_bank(grid)

    def trunc(p: int):
        # spectral smoothing of the data: homogeneous blocks |j| <= p plus the mean
        keep = [j for j in bank.block_range_homogeneous if abs(j) <= p]

        def apply(f: Field) -> Field:
            mult = np.zeros(grid.shape)
            for j in keep:
                mult = mult + bank.phi_j(j)
            mean_mask = (grid.k_norm() == 0.0)
            out = f.spectrum * (mult + mean_mask)
            return Field.from_spectrum(f.grid, out)

        return apply

    records: list[IterationRecord] = []
    X_prev: float | None = None
    result: _InnerSolveResult | None = None
    split: SplitState | None = None
    prev = Trajectory(times, [Field(grid, np.concatenate(
        [np.zeros((n1,) + grid.shape), f.values])) for f in V2L_base.fields])
    status = "cap"
    for p in range(cfg.p_max):
        data = trunc(p + 1)(V0)
        result = _solve_linear_pair(spec, prev, data, cfg, op_bar, times, stride, dt,
                                    critical_m=m, p_label=p + 1)
        delta = result.traj - prev
        X_p = contraction_norm(delta, n1, half, cfg.eps_weight,
                               max(cfg.R, M1), flavor=HOMOGENEOUS)
        split = _split_for(result.traj, V2L_base, n1, trunc(p + 1))
        dtv2L = dtv2L_base.map(trunc(p + 1))
        monitors = _critical_monitors(spec, result.traj, split, dtv2L, data, cfg,
                                      m, M1, d1)
        if not monitors["C3"].ok:
            v1 = result.traj.components(0, n1)
            for t, f in zip(v1.times, v1.fields):
                dev = np.sqrt(((f.values - data.values[:n1]) ** 2).sum(axis=0))
                if dev.max() > d1:
                    raise CriticalMonitorViolation(
                        float(t), int(dev.argmax()), float(dev.max()), d1)
        residual = nonlinear_residual(spec, result.traj)
        ratio = (X_p / X_prev) if (X_prev is not None and X_prev > 1e-300) else None
        records.append(IterationRecord(p, X_p, ratio, residual, monitors))
        prev = result.traj
        X_prev = X_p
        if X_p < cfg.contraction_tol:
            status = "converged"
            break
    if status == "cap" and records and not all(h.ok for h in records[-1].hypotheses.values()):
        status = "hypothesis-failure"
    scale = max(f.l2_norm() for f in prev.fields)
    discretization_floor = (X_prev or 0.0) + dt**2 * T * (1.0 + scale)
    diagnostics = IterationDiagnostics(
        records,
        fitted={"T": T, "dt": dt, "stride": stride, "m": m, "M1": M1, "d1": d1,
                "c_rate": c_rate,
                **transport_conservation_gap(spec, prev, discretization_floor)},
        final_status=status,
    )
    return RunResult(result.traj, result.coeff, result.theta1, result.theta2,
                     result.dt_v, split, diagnostics, cfg, spec, T)


# ---------------------------------------------------------------------------
# Continuation criterion and continuous dependence
# ---------------------------------------------------------------------------

@dataclass
class ContinuationSeries:
    times: np.ndarray
    integrand: np.ndarray            # per-sample criterion integrand
    cumulative: np.ndarray           # running integral
    sup_grad_v1: np.ndarray          # running sup of |grad V1|_inf
    reduced_cumulative: np.ndarray | None   # profile-C variant, if applicable

    def final(self) -> dict:
        out = {"criterion_integral": float(self.cumulative[-1]),
               "sup_grad_v1": float(self.sup_grad_v1[-1])}
        if self.reduced_cumulative is not None:
            out["reduced_integral"] = float(self.reduced_cumulative[-1])
        return out


def continuation_monitor(traj: Trajectory, spec: SystemSpec) -> ContinuationSeries:
    """Criterion quantities whose finiteness allows continuing the solution."""
    grid = traj.grid
    n1, d = spec.n1, spec.d
    times = traj.times
    n_samp = len(times)
    S011 = np.empty((n_samp, n1, n1, grid.size))
    S022 = np.empty((n_samp, spec.n2, spec.n2, grid.size))
    Salpha11 = np.empty((n_samp, d, n1, n1, grid.size))
    grad_inf = np.empty(n_samp)
    grad1_inf = np.empty(n_samp)
    grad2_inf = np.empty(n_samp)
    for i, f in enumerate(traj.fields):
        Uv = spec.U_bar[:, None] + f.values.reshape(spec.n, -1)
        S011[i] = spec.S0_block(Uv, 1, 1)
        S022[i] = spec.S0_block(Uv, 2, 2)
        for a in range(d):
            Salpha11[i, a] = spec.Salpha_block(Uv, a, 1, 1)
        g = gradient_array(f.values, grid).reshape(spec.n, d, -1)
        grad_inf[i] = np.sqrt((g**2).sum(axis=(0, 1))).max()
        grad1_inf[i] = np.sqrt((g[:n1] ** 2).sum(axis=(0, 1))).max() if n1 else 0.0
        grad2_inf[i] = np.sqrt((g[n1:] ** 2).sum(axis=(0, 1))).max()
    dtS011 = np.gradient(S011, times, axis=0, edge_order=2) if n_samp > 2 else np.zeros_like(S011)
    dtS022 = np.gradient(S022, times, axis=0, edge_order=2) if n_samp > 2 else np.zeros_like(S022)
    q2 = np.zeros(n_samp)
    for i in range(n_samp):
        acc = dtS011[i].copy()
        for a in range(d):
            coefs = Salpha11[i, a].reshape(n1 * n1, *grid.shape)
            acc += gradient_array(coefs, grid)[:, a].reshape(n1, n1, grid.size)
        q2[i] = np.abs(acc).sum(axis=(0, 1)).max() if n1 else 0.0
    q3 = np.abs(dtS022).sum(axis=(1, 2)).max(axis=-1)
    integrand = grad_inf**2 + q2 + q3
    dt = traj.dt
    cumulative = np.concatenate([[0.0], np.cumsum((integrand[1:] + integrand[:-1]) / 2 * dt)])
    sup1 = np.maximum.accumulate(grad1_inf)
    reduced = None
    if spec.assumption_profile == "C":
        red_int = grad1_inf**2 + grad2_inf
        reduced = np.concatenate([[0.0], np.cumsum((red_int[1:] + red_int[:-1]) / 2 * dt)])
    return ContinuationSeries(times, integrand, cumulative, sup1, reduced)


@dataclass
class StabilityReport:
    epsilons: list[float]
    ratios: list[float]
    converged: list[bool]
    max_factor: float

    @property
    def ok(self) -> bool:
        return self.max_factor < 3.0 and all(self.converged)


def continuous_dependence_experiment(spec: SystemSpec, V0: Field,
                                     epsilons: list[float], cfg: IterationConfig,
                                     perturbation: Field | None = None) -> StabilityReport:
    """Perturb the data by eps * P and measure sup_t of the weak-norm response
    per unit eps; linear response makes the ratios eps-independent."""
    from lpflow.data import smooth_system_data

    base = iterate_subcritical(spec, V0, cfg)
    if perturbation is None:
        perturbation = smooth_system_data(V0.grid, V0.grid.n, 1.0, seed=2718)
    cfg_fixed = IterationConfig(**{**cfg.__dict__, "T": base.T})
    s = cfg.s
    ratios, converged = [], []
    for eps in epsilons:
        try:
            run = iterate_subcritical(spec, V0 + eps * perturbation, cfg_fixed)
        except PhaseSpaceViolation:
            converged.append(False)
            ratios.append(math.nan)
            continue
        delta = run.traj - base.traj
        v1 = delta.components(0, spec.n1)
        v2 = delta.components(spec.n1, spec.n)
        weak = lebesgue_besov_norm(v1, BesovIndex(s), math.inf) \
            + lebesgue_besov_norm(v2, BesovIndex(s - 1.0), math.inf)
        ratios.append(weak / eps)
        converged.append(True)
    live = [r for r, c in zip(ratios, converged) if c and r > 0]
    factor = (max(live) / min(live)) if len(live) >= 2 else math.inf
    return StabilityReport(list(epsilons), ratios, converged, factor)
