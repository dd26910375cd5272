"""Hyperbolic-parabolic systems in symmetrized normal form.

A system is data: block-matrix evaluators over state vectors, a reference
state, a phase-space predicate, and a split source.  The concrete instances
are the Navier-Stokes-Fourier system and the barotropic compressible
Navier-Stokes system; new systems only need the assemblers and predicate.

Evaluator convention: states are stacked as arrays ``U`` of shape (n, M)
(grid points or arbitrary sample batches); matrix evaluators return
``(n, n, M)`` (or ``(n2, n2, M)`` for diffusion blocks).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dfield
from typing import Callable

import numpy as np

from lpflow.grid import Field
from lpflow.propagators import ConstantParabolicOp, EllipticityFailure


class PhaseSpaceViolation(ValueError):
    """State left the admissible phase space."""

    def __init__(self, message: str, worst_state: np.ndarray, where: int):
        super().__init__(message)
        self.worst_state = worst_state
        self.where = where


@dataclass
class SourceParts:
    """Split source f = (f1, f21 + f22 + f23) with the structure used by the
    well-posedness assumptions; any part may be None (zero)."""

    f1: Callable[[np.ndarray], np.ndarray] | None = None
    f21: Callable[[np.ndarray], np.ndarray] | None = None
    f22: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None   # (U, grad U1)
    f23: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None   # (U, grad U2)


@dataclass(eq=False)
class SystemSpec:
    """A partially diffusive system in normal form; immutable after build."""

    name: str
    n1: int
    n2: int
    d: int
    U_bar: np.ndarray
    assemble_S0: Callable[[np.ndarray], np.ndarray]
    assemble_Salpha: Callable[[np.ndarray, int], np.ndarray]
    assemble_Z: Callable[[np.ndarray, int, int], np.ndarray]
    phase_membership: Callable[[np.ndarray], np.ndarray]
    phase_distance: Callable[[np.ndarray], np.ndarray] | None = None
    source: SourceParts = dfield(default_factory=SourceParts)
    assumption_profile: str = "B"
    hyperbolic_phase_distance: Callable[[np.ndarray], np.ndarray] | None = None
    meta: dict = dfield(default_factory=dict)

    def __post_init__(self) -> None:
        self.U_bar = np.asarray(self.U_bar, dtype=np.float64)
        if self.U_bar.shape != (self.n,):
            raise ValueError("U_bar must have n = n1 + n2 entries")
        if not np.all(self.phase_membership(self.U_bar[:, None])):
            raise ValueError("reference state must lie inside the phase space")

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    def _slices(self, i: int) -> slice:
        return slice(0, self.n1) if i == 1 else slice(self.n1, self.n)

    def S0_block(self, U: np.ndarray, i: int, j: int) -> np.ndarray:
        return self.assemble_S0(U)[self._slices(i), self._slices(j)]

    def Salpha_block(self, U: np.ndarray, a: int, i: int, j: int) -> np.ndarray:
        return self.assemble_Salpha(U, a)[self._slices(i), self._slices(j)]

    def Z_block(self, U: np.ndarray, a: int, b: int) -> np.ndarray:
        return self.assemble_Z(U, a, b)

    def f(self, U: np.ndarray, gradU: np.ndarray) -> np.ndarray:
        """Full source (n, M); gradU has shape (n, d, M)."""
        out = np.zeros_like(U)
        s = self.source
        if s.f1 is not None:
            out[: self.n1] += s.f1(U)
        if s.f21 is not None:
            out[self.n1 :] += s.f21(U)
        if s.f22 is not None:
            out[self.n1 :] += s.f22(U, gradU[: self.n1])
        if s.f23 is not None:
            out[self.n1 :] += s.f23(U, gradU[self.n1 :])
        return out

    def require_phase(self, U: Field | np.ndarray, when: str = "") -> None:
        Uv = (U.values if isinstance(U, Field) else np.asarray(U)).reshape(self.n, -1)
        ok = self.phase_membership(Uv)
        if not np.all(ok):
            bad = int(np.argmin(ok))
            raise PhaseSpaceViolation(
                f"phase-space exit{' ' + when if when else ''}: state "
                f"{Uv[:, bad]} at flat index {bad}",
                Uv[:, bad].copy(),
                bad,
            )

    def phase_margin(self, U: Field | np.ndarray) -> float:
        """Smallest distance to the phase boundary over the batch (inf if unknown)."""
        if self.phase_distance is None:
            return np.inf
        Uv = (U.values if isinstance(U, Field) else np.asarray(U)).reshape(self.n, -1)
        return float(np.min(self.phase_distance(Uv)))

    def constant_parabolic_op(self) -> ConstantParabolicOp:
        """Constant-coefficient diffusion operator frozen at the reference state."""
        Ub = self.U_bar[:, None]
        S = self.S0_block(Ub, 2, 2)[..., 0]
        Z = np.empty((self.d, self.d, self.n2, self.n2))
        for a in range(self.d):
            for b in range(self.d):
                Z[a, b] = self.Z_block(Ub, a, b)[..., 0]
        return ConstantParabolicOp(S, Z)


# ---------------------------------------------------------------------------
# Concrete systems
# ---------------------------------------------------------------------------

def _box_membership(lo: np.ndarray, hi: np.ndarray, idx: list[int]):
    def member(U: np.ndarray) -> np.ndarray:
        ok = np.ones(U.shape[1], dtype=bool)
        for i, l, h in zip(idx, lo, hi):
            ok &= (U[i] > l) & (U[i] < h)
        return ok

    def distance(U: np.ndarray) -> np.ndarray:
        m = np.full(U.shape[1], np.inf)
        for i, l, h in zip(idx, lo, hi):
            m = np.minimum(m, np.minimum(U[i] - l, h - U[i]))
        return m

    return member, distance


def assemble_nsf(gas: dict, transport: dict, d: int = 2,
                 U_bar: np.ndarray | None = None,
                 rho_bounds: tuple[float, float] = (0.05, 20.0),
                 theta_bounds: tuple[float, float] = (0.05, 20.0)) -> SystemSpec:
    """Navier-Stokes-Fourier with an ideal gas: p = R rho theta, e = c_v theta.

    State ordering U = (rho, u_1..u_d, theta); the temperature equation is
    normalized by 1/theta, which puts the diffusion in the divergence form
    d_a((k/theta) d_a theta) and the quadratic heating into the source.
    """
    R, c_v = float(gas["R"]), float(gas["c_v"])
    mu, lam, k = float(transport["mu"]), float(transport["lam"]), float(transport["k"])
    nu = 2.0 * mu + lam
    if mu <= 0 or nu <= 0 or k <= 0:
        raise ValueError(f"transport coefficients must satisfy mu>0, nu=2mu+lam>0, k>0; "
                         f"got mu={mu}, nu={nu}, k={k}")
    if R <= 0 or c_v <= 0:
        raise ValueError("ideal gas needs R > 0 and c_v > 0")
    n1, n2, n = 1, d + 1, d + 2
    if U_bar is None:
        U_bar = np.array([1.0] + [0.0] * d + [1.0])

    def S0(U: np.ndarray) -> np.ndarray:
        rho, theta = U[0], U[n - 1]
        M = U.shape[1]
        out = np.zeros((n, n, M))
        out[0, 0] = R * theta / rho          # p_rho / rho
        for i in range(d):
            out[1 + i, 1 + i] = rho
        out[n - 1, n - 1] = rho * c_v / theta
        return out

    def Salpha(U: np.ndarray, a: int) -> np.ndarray:
        rho, theta = U[0], U[n - 1]
        ua = U[1 + a]
        p_rho = R * theta
        p_theta = R * rho
        M = U.shape[1]
        out = np.zeros((n, n, M))
        out[0, 0] = p_rho / rho * ua
        out[0, 1 + a] = p_rho
        out[1 + a, 0] = p_rho
        for i in range(d):
            out[1 + i, 1 + i] = rho * ua
        out[1 + a, n - 1] = p_theta
        out[n - 1, 1 + a] = p_theta
        out[n - 1, n - 1] = rho * c_v / theta * ua
        return out

    def Z(U: np.ndarray, a: int, b: int) -> np.ndarray:
        theta = U[n - 1]
        M = U.shape[1]
        out = np.zeros((n2, n2, M))
        for i in range(d):
            for kk in range(d):
                out[i, kk] = mu * ((a == b) * (i == kk) + (b == i) * (a == kk)) \
                    + lam * (a == i) * (b == kk)
        out[d, d] = (k / theta) * (a == b)
        return out

    def f23(U: np.ndarray, gradU2: np.ndarray) -> np.ndarray:
        # gradU2: (n2, d, M) = gradients of (u, theta)
        theta = U[n - 1]
        du = gradU2[:d]                       # du[i, a] = d_a u_i
        dtheta = gradU2[d]                    # (d, M)
        heating = np.zeros(U.shape[1])
        divu = np.zeros(U.shape[1])
        for i in range(d):
            divu += du[i, i]
            for jj in range(d):
                heating += (mu / 2.0) * (du[i, jj] + du[jj, i]) ** 2
        heating += lam * divu**2
        out = np.zeros((n2, U.shape[1]))
        out[d] = heating / theta + k * np.sum(dtheta**2, axis=0) / theta**2
        return out

    member, distance = _box_membership(
        np.array([rho_bounds[0], theta_bounds[0]]),
        np.array([rho_bounds[1], theta_bounds[1]]),
        [0, n - 1],
    )
    return SystemSpec(
        name="nsf",
        n1=n1, n2=n2, d=d,
        U_bar=U_bar,
        assemble_S0=S0,
        assemble_Salpha=Salpha,
        assemble_Z=Z,
        phase_membership=member,
        phase_distance=distance,
        source=SourceParts(f23=f23),
        assumption_profile="B",
        meta={"gas": {"R": R, "c_v": c_v},
              "transport": {"mu": mu, "lam": lam, "k": k},
              "bounds": {"rho": rho_bounds, "theta": theta_bounds}},
    )


def assemble_barotropic(pressure: Callable[[np.ndarray], np.ndarray],
                        pressure_prime: Callable[[np.ndarray], np.ndarray],
                        transport: dict, d: int = 1,
                        rho_bar: float = 1.0,
                        rho_bounds: tuple[float, float] = (0.1, 10.0)) -> SystemSpec:
    """Barotropic compressible Navier-Stokes: state U = (rho, u_1..u_d).

    ``transport['mu']`` and ``transport['lam']`` may be floats or callables
    of rho.  The admitted density range must stay away from vacuum.
    """
    if rho_bounds[0] <= 0.0:
        raise ValueError("phase space must keep the density away from vacuum")
    mu_in, lam_in = transport["mu"], transport["lam"]
    mu = mu_in if callable(mu_in) else (lambda r, _v=float(mu_in): np.full_like(r, _v))
    lam = lam_in if callable(lam_in) else (lambda r, _v=float(lam_in): np.full_like(r, _v))
    rho_grid = np.linspace(rho_bounds[0], rho_bounds[1], 512)
    if np.any(pressure_prime(rho_grid) <= 0):
        raise ValueError("pressure law must satisfy p' > 0 on the admitted range")
    if np.any(mu(rho_grid) <= 0) or np.any(2 * mu(rho_grid) + lam(rho_grid) <= 0):
        raise ValueError("transport must satisfy mu > 0 and nu = 2 mu + lam > 0")
    n1, n2, n = 1, d, d + 1

    def S0(U: np.ndarray) -> np.ndarray:
        rho = U[0]
        M = U.shape[1]
        out = np.zeros((n, n, M))
        out[0, 0] = pressure_prime(rho) / rho
        for i in range(d):
            out[1 + i, 1 + i] = rho
        return out

    def Salpha(U: np.ndarray, a: int) -> np.ndarray:
        rho = U[0]
        ua = U[1 + a]
        p_rho = pressure_prime(rho)
        M = U.shape[1]
        out = np.zeros((n, n, M))
        out[0, 0] = p_rho / rho * ua
        out[0, 1 + a] = p_rho
        out[1 + a, 0] = p_rho
        for i in range(d):
            out[1 + i, 1 + i] = rho * ua
        return out

    def Z(U: np.ndarray, a: int, b: int) -> np.ndarray:
        rho = U[0]
        m, l = mu(rho), lam(rho)
        M = U.shape[1]
        out = np.zeros((n2, n2, M))
        for i in range(d):
            for kk in range(d):
                out[i, kk] = m * ((a == b) * (i == kk) + (b == i) * (a == kk)) \
                    + l * (a == i) * (b == kk)
        return out

    member, distance = _box_membership(
        np.array([rho_bounds[0]]), np.array([rho_bounds[1]]), [0]
    )

    def hyp_distance(U: np.ndarray) -> np.ndarray:
        return np.minimum(U[0] - rho_bounds[0], rho_bounds[1] - U[0])

    return SystemSpec(
        name="barotropic",
        n1=n1, n2=n2, d=d,
        U_bar=np.array([rho_bar] + [0.0] * d),
        assemble_S0=S0,
        assemble_Salpha=Salpha,
        assemble_Z=Z,
        phase_membership=member,
        phase_distance=distance,
        hyperbolic_phase_distance=hyp_distance,
        source=SourceParts(),
        assumption_profile="C",
        meta={"rho_bounds": rho_bounds, "rho_bar": rho_bar},
    )


def gamma_law_barotropic(gamma: float = 2.0, a: float = 1.0, **kwargs) -> SystemSpec:
    """Barotropic system with p(rho) = a rho^gamma (unit viscosity by default)."""
    kwargs.setdefault("transport", {"mu": 1.0, "lam": 0.0})
    spec = assemble_barotropic(
        pressure=lambda r: a * r**gamma,
        pressure_prime=lambda r: a * gamma * r ** (gamma - 1.0),
        **kwargs,
    )
    spec.meta.update({"gamma": gamma, "a": a})
    return spec


# ---------------------------------------------------------------------------
# Structural checks
# ---------------------------------------------------------------------------

@dataclass
class EllipticityReport:
    c1_hat: float
    worst_xi: np.ndarray
    worst_lambda: np.ndarray
    worst_U: np.ndarray
    sample_count: int


def draw_state_samples(spec: SystemSpec, count: int, rng: np.random.Generator,
                       box: dict | None = None) -> np.ndarray:
    """Uniform state samples inside a compact box of the phase space."""
    out = np.empty((spec.n, count))
    if spec.name == "nsf":
        b = box or {"rho": (0.5, 2.0), "u": (-1.0, 1.0), "theta": (0.5, 2.0)}
        out[0] = rng.uniform(*b["rho"], count)
        for i in range(spec.d):
            out[1 + i] = rng.uniform(*b["u"], count)
        out[spec.n - 1] = rng.uniform(*b["theta"], count)
    elif spec.name == "barotropic":
        b = box or {"rho": (0.5, 2.0), "u": (-1.0, 1.0)}
        out[0] = rng.uniform(*b["rho"], count)
        for i in range(spec.d):
            out[1 + i] = rng.uniform(*b["u"], count)
    else:
        b = box or {"all": (-0.5, 0.5)}
        lo, hi = b.get("all", (-0.5, 0.5))
        out = spec.U_bar[:, None] + rng.uniform(lo, hi, (spec.n, count))
    return out


def unit_sphere_samples(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((count, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def check_strong_ellipticity(spec: SystemSpec, U_samples: np.ndarray,
                             xi_samples: np.ndarray, lambda_samples: np.ndarray,
                             reject_nonpositive: bool = True) -> EllipticityReport:
    """Sampled minimum of the ellipticity Rayleigh quotient.

    ``U_samples``: (n, M); ``xi_samples``: (M, d) and ``lambda_samples``:
    (M, n2), both normalized per row internally.
    """
    xi = xi_samples / np.linalg.norm(xi_samples, axis=1, keepdims=True)
    lm = lambda_samples / np.linalg.norm(lambda_samples, axis=1, keepdims=True)
    M = U_samples.shape[1]
    quad = np.zeros(M)
    for a in range(spec.d):
        for b in range(spec.d):
            Zab = spec.Z_block(U_samples, a, b)      # (n2, n2, M)
            quad += xi[:, a] * xi[:, b] * np.einsum("mi,ijm,mj->m", lm, Zab, lm)
    worst = int(np.argmin(quad))
    report = EllipticityReport(
        c1_hat=float(quad[worst]),
        worst_xi=xi[worst].copy(),
        worst_lambda=lm[worst].copy(),
        worst_U=U_samples[:, worst].copy(),
        sample_count=M,
    )
    if reject_nonpositive and report.c1_hat <= 0.0:
        err = EllipticityFailure(
            f"strong ellipticity fails: quotient {report.c1_hat:g} at "
            f"U={report.worst_U}, xi={report.worst_xi}, lambda={report.worst_lambda}"
        )
        err.report = report
        raise err
    return report


@dataclass
class CheckItem:
    name: str
    ok: bool
    residual: float
    note: str = ""


@dataclass
class AssumptionReport:
    assumption: str
    items: list[CheckItem]

    @property
    def ok(self) -> bool:
        return all(item.ok for item in self.items)

    def failures(self) -> list[CheckItem]:
        return [i for i in self.items if not i.ok]


def _max_abs(x: np.ndarray) -> float:
    return float(np.abs(x).max()) if x.size else 0.0


def _sym_residual(mats: np.ndarray) -> float:
    """Max antisymmetric part of a stack (k, k, M)."""
    return _max_abs(0.5 * (mats - np.swapaxes(mats, 0, 1)))


def check_assumption_B(spec: SystemSpec, U_samples: np.ndarray,
                       tol: float = 1e-10) -> AssumptionReport:
    """Verify the block/symmetry/positivity structure at sampled states."""
    items: list[CheckItem] = []
    n1 = spec.n1
    S0 = spec.assemble_S0(U_samples)
    off = _max_abs(S0[:n1, n1:]) + _max_abs(S0[n1:, :n1])
    items.append(CheckItem("S0 block diagonal", off <= tol, off))
    S0m = np.moveaxis(S0, -1, 0)
    smallest_sv = float(np.linalg.svd(S0m, compute_uv=False).min())
    items.append(CheckItem("S0 invertible", smallest_sv > tol, smallest_sv,
                           "smallest singular value"))
    S22 = spec.S0_block(U_samples, 2, 2)
    sym22 = _sym_residual(S22)
    min_eig = float(np.linalg.eigvalsh(np.moveaxis(S22, -1, 0)).min())
    items.append(CheckItem("S0_22 symmetric positive definite",
                           sym22 <= tol and min_eig > tol, min(min_eig, -sym22) * -1.0
                           if sym22 > tol else min_eig,
                           f"symmetry defect {sym22:.2e}, min eigenvalue {min_eig:.2e}"))
    if n1 > 0:
        res_a = max(_sym_residual(spec.Salpha_block(U_samples, a, 1, 1))
                    for a in range(spec.d))
        S11 = np.moveaxis(spec.S0_block(U_samples, 1, 1), -1, 0)
        s11_spd = (_sym_residual(np.moveaxis(S11, 0, -1)) <= tol
                   and float(np.linalg.eigvalsh(S11).min()) > tol)
        S11inv = np.linalg.inv(S11)
        res_b = max(
            _sym_residual(np.moveaxis(
                np.einsum("mij,mjk->mik", S11inv,
                          np.moveaxis(spec.Salpha_block(U_samples, a, 1, 1), -1, 0)),
                0, -1))
            for a in range(spec.d)
        )
        ok = (res_a <= tol and s11_spd) or res_b <= tol
        branch = "S^a_11 symmetric with S0_11 SPD" if (res_a <= tol and s11_spd) \
            else "(S0_11)^-1 S^a_11 symmetric"
        items.append(CheckItem("hyperbolic block symmetry", ok, min(res_a, res_b), branch))
    else:
        items.append(CheckItem("hyperbolic block symmetry", True, 0.0, "vacuous: n1 = 0"))
    rng = np.random.default_rng(0)
    M = U_samples.shape[1]
    try:
        rep = check_strong_ellipticity(
            spec, U_samples,
            unit_sphere_samples(spec.d, M, rng),
            unit_sphere_samples(spec.n2, M, rng),
        )
        items.append(CheckItem("dissipation block strongly elliptic", True, rep.c1_hat,
                               f"sampled c1 = {rep.c1_hat:.3e}"))
    except EllipticityFailure as exc:
        items.append(CheckItem("dissipation block strongly elliptic", False,
                               exc.report.c1_hat, str(exc)))
    items.append(_source_vanishing_item(spec, tol))
    return AssumptionReport("B", items)


def _source_vanishing_item(spec: SystemSpec, tol: float) -> CheckItem:
    Ub = spec.U_bar[:, None]
    zero_grad1 = np.zeros((spec.n1, spec.d, 1))
    zero_grad2 = np.zeros((spec.n2, spec.d, 1))
    residual = 0.0
    s = spec.source
    if s.f1 is not None:
        residual = max(residual, _max_abs(s.f1(Ub)))
    if s.f21 is not None:
        residual = max(residual, _max_abs(s.f21(Ub)))
    if s.f22 is not None:
        residual = max(residual, _max_abs(s.f22(Ub, zero_grad1)))
    if s.f23 is not None:
        residual = max(residual, _max_abs(s.f23(Ub, zero_grad2)))
    return CheckItem("source vanishes at reference state", residual <= tol, residual)


def _fd_directional(fn: Callable[[np.ndarray], np.ndarray], U: np.ndarray,
                    direction: np.ndarray, h: float) -> np.ndarray:
    return (fn(U + h * direction[:, None]) - fn(U - h * direction[:, None])) / (2 * h)


def _fd_second(fn: Callable[[np.ndarray], np.ndarray], U: np.ndarray,
               direction: np.ndarray, h: float) -> np.ndarray:
    # Undivided second difference: exactly ~ulp for affine maps regardless of
    # h (dividing by h^2 would amplify roundoff past any useful tolerance).
    return fn(U + h * direction[:, None]) - 2 * fn(U) + fn(U - h * direction[:, None])


def _component_dirs(n: int, comps: range, extra_pairs: bool = True) -> list[np.ndarray]:
    dirs = []
    for i in comps:
        e = np.zeros(n)
        e[i] = 1.0
        dirs.append(e)
    if extra_pairs and len(comps) >= 2:
        lst = list(comps)
        for i, j in zip(lst[:-1], lst[1:]):
            e = np.zeros(n)
            e[i] = e[j] = np.sqrt(0.5)
            dirs.append(e)
    return dirs


def check_assumption_C(spec: SystemSpec, U_samples: np.ndarray,
                       h: float = 1e-5, tol: float = 1e-6) -> AssumptionReport:
    """Finite-difference tests of the critical-regularity structure.

    Residuals are confirmed at h/2 (Richardson style) so genuine structure
    violations are separated from roundoff; affine maps give exactly zero
    second differences regardless of h.
    """
    if h <= 0:
        raise ValueError("perturbation size h must be positive")
    items: list[CheckItem] = []
    n, n1 = spec.n, spec.n1
    u2_dirs = _component_dirs(n, range(n1, n))
    u1_dirs = _component_dirs(n, range(0, n1))

    def fd_residual(fn, dirs, second=False) -> float:
        op = _fd_second if second else _fd_directional
        res = max((_max_abs(op(fn, U_samples, e, hh)) for e in dirs for hh in (h, h / 2)),
                  default=0.0)
        return res

    S22 = lambda U: spec.S0_block(U, 2, 2)
    r = fd_residual(S22, u2_dirs)
    items.append(CheckItem("S0_22 depends only on U1", r <= tol, r))
    sym22 = _sym_residual(S22(U_samples))
    min_eig = float(np.linalg.eigvalsh(np.moveaxis(S22(U_samples), -1, 0)).min())
    items.append(CheckItem("S0_22 symmetric positive definite",
                           sym22 <= 1e-10 and min_eig > 0, min_eig,
                           f"symmetry defect {sym22:.2e}"))

    affine_tol = 1e-12
    r = max(fd_residual(lambda U, a=a: spec.Salpha_block(U, a, 2, 1), u2_dirs, second=True)
            for a in range(spec.d))
    r = max(r, max(fd_residual(lambda U, a=a: spec.Salpha_block(U, a, 2, 2), u2_dirs, second=True)
                   for a in range(spec.d)))
    items.append(CheckItem("S^a_21, S^a_22 affine in U2", r <= affine_tol, r,
                           "undivided second difference"))

    def tilde(U: np.ndarray, a: int, j: int) -> np.ndarray:
        S11inv = np.linalg.inv(np.moveaxis(spec.S0_block(U, 1, 1), -1, 0))
        blk = np.moveaxis(spec.Salpha_block(U, a, 1, j), -1, 0)
        return np.moveaxis(np.einsum("mij,mjk->mik", S11inv, blk), 0, -1)

    if n1 > 0:
        r = max(fd_residual(lambda U, a=a: tilde(U, a, 2), u2_dirs) for a in range(spec.d))
        items.append(CheckItem("(S0_11)^-1 S^a_12 depends only on U1", r <= tol, r))
        r_sym = max(_sym_residual(tilde(U_samples, a, 1)) for a in range(spec.d))
        r_aff = max(fd_residual(lambda U, a=a: tilde(U, a, 1), u2_dirs, second=True)
                    for a in range(spec.d))
        r_u1 = max(
            (fd_residual(lambda U, a=a: tilde(U, a, 1), u1_dirs) for a in range(spec.d)),
            default=0.0,
        ) if u1_dirs else 0.0
        ok = r_sym <= 1e-10 and r_aff <= affine_tol and r_u1 <= tol
        items.append(CheckItem("(S0_11)^-1 S^a_11 symmetric, affine in U2, free of U1",
                               ok, max(r_sym, r_aff, r_u1),
                               f"sym {r_sym:.2e}, affinity {r_aff:.2e}, dU1 {r_u1:.2e}"))
    else:
        items.append(CheckItem("(S0_11)^-1 S^a_12 depends only on U1", True, 0.0, "vacuous"))
        items.append(CheckItem("(S0_11)^-1 S^a_11 symmetric, affine in U2, free of U1",
                               True, 0.0, "vacuous"))

    r = max(fd_residual(lambda U, a=a, b=b: spec.Z_block(U, a, b), u2_dirs)
            for a in range(spec.d) for b in range(spec.d))
    items.append(CheckItem("Z^{ab} depends only on U1", r <= tol, r))

    rng = np.random.default_rng(12)
    g1 = rng.standard_normal((spec.n1, spec.d, U_samples.shape[1]))
    g2 = rng.standard_normal((spec.n2, spec.d, U_samples.shape[1]))
    grad = np.concatenate([g1, g2])
    r = _max_abs(spec.f(U_samples, grad) - spec.f(U_samples, np.zeros_like(grad)))
    src_item = _source_vanishing_item(spec, 1e-10)
    items.append(CheckItem("source depends on U only and vanishes at reference",
                           r <= tol and src_item.ok, max(r, src_item.residual),
                           f"gradient sensitivity {r:.2e}"))
    return AssumptionReport("C", items)


@dataclass
class EntropyReport:
    omega_hat: float | None
    checked: int
    skipped: int
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.omega_hat is None or self.omega_hat > 0.0


def check_entropy_dissipativity(spec: SystemSpec,
                                hessian: Callable[[np.ndarray], np.ndarray],
                                B_alpha: Callable[[np.ndarray, np.ndarray], np.ndarray],
                                u_samples: np.ndarray,
                                xi_samples: np.ndarray,
                                X_samples: np.ndarray,
                                floor: float = 1e-12) -> EntropyReport:
    """Sampled entropy-dissipativity ratio.

    ``hessian(u)`` returns D^2 eta, shape (n, n, M); ``B_alpha(xi, u)`` returns
    the partial symbols stacked as (d, n, n, M).  The ratio
    ``D^2eta(X, B(xi,u) X) / sum_a |B^a(xi,u) X|^2`` is minimized over samples
    whose denominator exceeds ``floor`` times the natural scale.
    """
    H = hessian(u_samples)                        # (n, n, M)
    Ba = B_alpha(xi_samples, u_samples)           # (d, n, n, M)
    B = np.einsum("ma,aijm->ijm", xi_samples, Ba)
    BX = np.einsum("ijm,jm->im", B, X_samples)
    num = np.einsum("im,ijm,jm->m", X_samples, H, BX)
    BaX = np.einsum("aijm,jm->aim", Ba, X_samples)
    den = np.einsum("aim,aim->m", BaX, BaX)
    scale = np.einsum("im,im->m", X_samples, X_samples) * \
        np.einsum("ma,ma->m", xi_samples, xi_samples)
    live = den > floor * np.maximum(scale, 1e-300)
    skipped = int(np.sum(~live))
    if not np.any(live):
        return EntropyReport(None, 0, skipped,
                             "all denominators at floor (degenerate hyperbolic case)")
    ratio = num[live] / den[live]
    return EntropyReport(float(ratio.min()), int(np.sum(live)), skipped)
