"""Numerical stress tests of the functional inequalities.

"Verification" here means: no violations (a vanishing right-hand side forces
a vanishing left-hand side), fitted constants finite, and stable under grid
refinement.  Constants the analysis leaves existential are fitted as the max
ratio over a seeded corpus and reported, never asserted against fixed values.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from lpflow.data import gaussian_bump, multiscale_random, single_mode_field
from lpflow.grid import (
    HOMOGENEOUS,
    NONHOMOGENEOUS,
    BlockIndex,
    Field,
    GridSpec,
    build_filter_bank,
    dealias,
    dyadic_block,
    gradient_array,
    guard_band_fraction,
    refine_field,
    spectral_gradient,
)
from lpflow.norms import BesovIndex, besov_norm
from lpflow.solver import RunResult
from lpflow.systems import SystemSpec, check_strong_ellipticity, unit_sphere_samples

DEFAULT_CORPUS_SEED = 20240817


@dataclass(eq=False)
class Corpus:
    """Seeded test-function families, all confined to the guard band."""

    grid: GridSpec
    fields: list[Field]
    seed: int

    @classmethod
    def generate(cls, grid: GridSpec, seed: int = DEFAULT_CORPUS_SEED,
                 members_per_family: int = 20) -> "Corpus":
        if grid.n != 1:
            grid = grid.with_components(1)
        fields: list[Field] = []
        rng = np.random.default_rng(seed)
        for i in range(members_per_family):
            fields.append(multiscale_random(grid, seed=seed + 1000 + i))
        widths = [grid.L / 6.0, grid.L / 12.0, grid.L / 24.0]
        for i in range(members_per_family):
            w = widths[i % 3]
            center = tuple(rng.uniform(0, grid.L) for _ in range(grid.d))
            fields.append(gaussian_bump(grid, amplitude=1.0, width=w, center=center))
        bank = build_filter_bank(grid)
        count = 0
        while count < members_per_family:
            j = count % (bank.j_max + 1)
            k = min(1.4 * 2.0**j, bank.guard_band_radius / 2.0)
            kvec = [0.0] * grid.d
            kvec[count % grid.d] = round(k) if round(k) >= 1 else 1
            fields.append(single_mode_field(grid, kvec, amplitude=1.0,
                                            phase=rng.uniform(0, 2 * np.pi)))
            count += 1
        for f in fields:
            assert guard_band_fraction(f) <= 1e-20
        return cls(grid, fields, seed)

    def refine(self, factor: int = 2) -> "Corpus":
        """Same functions sampled on a grid refined by ``factor``."""
        return Corpus(self.grid.refined(factor),
                      [refine_field(f, factor) for f in self.fields], self.seed)

    def pairs(self, count: int = 100) -> list[tuple[int, int]]:
        rng = np.random.default_rng(self.seed + 7)
        n = len(self.fields)
        return [tuple(rng.integers(0, n, 2)) for _ in range(count)]


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class FormFit:
    """One inequality form: per-instance ratios against the constant-free RHS."""

    label: str
    ratios: list[float]
    violations: list[int]
    fine_C: float | None = None

    @property
    def fitted_C(self) -> float:
        live = [r for r in self.ratios if np.isfinite(r)]
        return max(live) if live else 0.0

    @property
    def stable(self) -> bool | None:
        if self.fine_C is None:
            return None
        base = max(self.fitted_C, 1e-300)
        return abs(self.fine_C - self.fitted_C) <= 0.25 * base

    @property
    def passed(self) -> bool:
        ok = not self.violations and np.isfinite(self.fitted_C)
        if self.stable is not None:
            ok = ok and self.stable
        return ok


@dataclass
class InequalityReport:
    name: str
    params: dict
    forms: list[FormFit]

    @property
    def fitted_C(self) -> float:
        return max((f.fitted_C for f in self.forms), default=0.0)

    @property
    def violations(self) -> list:
        return [(f.label, i) for f in self.forms for i in f.violations]

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.forms)

    def attach_fine(self, fine: "InequalityReport") -> None:
        by_label = {f.label: f for f in fine.forms}
        for f in self.forms:
            f.fine_C = by_label[f.label].fitted_C

    def to_json(self, path: str | Path | None = None) -> dict:
        payload = {
            "name": self.name,
            "params": self.params,
            "passed": self.passed,
            "forms": [
                {"label": f.label, "fitted_C": f.fitted_C, "fine_C": f.fine_C,
                 "stable": f.stable, "violations": f.violations,
                 "instances": len(f.ratios)}
                for f in self.forms
            ],
        }
        if path is not None:
            Path(path).write_text(json.dumps(payload, indent=2))
        return payload


def _ratio(lhs: float, rhs: float, idx: int, violations: list[int],
           atol: float = 1e-13) -> float:
    if rhs <= atol:
        if lhs > atol:
            violations.append(idx)
            return math.inf
        return 0.0
    return lhs / rhs


def _with_refinement(build: Callable[[Corpus], InequalityReport], corpus: Corpus,
                     refined: Corpus | None) -> InequalityReport:
    report = build(corpus)
    if refined is not None:
        report.attach_fine(build(refined))
    return report


# ---------------------------------------------------------------------------
# Product, commutator, composition
# ---------------------------------------------------------------------------

def _product(a: Field, b: Field) -> Field:
    return dealias(Field(a.grid, a.values * b.values))


def verify_product_law(corpus: Corpus, s: float, pair_count: int = 100,
                       refined: Corpus | None = None) -> InequalityReport:
    """Bilinear product bounds in B^s_{2,1}.

    Forms: the critical-index bound ``||ab|| <= C ||a||_{B^{d/2}} ||b||_{B^s}``
    for -d/2 < s <= d/2, and (for s > 0) the symmetric sup-norm bound.
    """
    d = corpus.grid.d
    if not (-d / 2.0 < s <= d / 2.0):
        raise ValueError(f"product law needs -d/2 < s <= d/2, got s={s}")

    def build(c: Corpus) -> InequalityReport:
        half = BesovIndex(d / 2.0)
        idx_s = BesovIndex(s)
        ratios2, viol2 = [], []
        ratios1, viol1 = [], []
        for k, (i, j) in enumerate(c.pairs(pair_count)):
            a, b = c.fields[i], c.fields[j]
            lhs = besov_norm(_product(a, b), idx_s).total
            rhs2 = besov_norm(a, half).total * besov_norm(b, idx_s).total
            ratios2.append(_ratio(lhs, rhs2, k, viol2))
            if s > 0:
                rhs1 = a.linf_norm() * besov_norm(b, idx_s).total \
                    + b.linf_norm() * besov_norm(a, idx_s).total
                ratios1.append(_ratio(lhs, rhs1, k, viol1))
        forms = [FormFit("critical-index", ratios2, viol2)]
        if s > 0:
            forms.append(FormFit("sup-symmetric", ratios1, viol1))
        return InequalityReport("product", {"s": s, "d": d, "N": c.grid.N}, forms)

    return _with_refinement(build, corpus, refined)


def commutator_blocks(a: Field, b: Field) -> tuple[np.ndarray, np.ndarray]:
    """Per-block L2 norms of [a, Delta_j] b = a (Delta_j b) - Delta_j(ab)."""
    bank = build_filter_bank(a.grid)
    ab = _product(a, b)
    js, norms = [], []
    for j in bank.block_range_nonhomogeneous:
        blk = BlockIndex(j, NONHOMOGENEOUS)
        comm = _product(a, dyadic_block(b, blk)) - dyadic_block(ab, blk)
        js.append(j)
        norms.append(comm.l2_norm())
    return np.array(js), np.array(norms)


def verify_commutator(corpus: Corpus, sigma: float, pair_count: int = 60,
                      refined: Corpus | None = None) -> InequalityReport:
    """Commutator bounds ``||[a, Delta_j] b|| <= C 2^{-j sigma} c_j RHS``.

    The per-block sequence is folded through ``sum_j c_j = 1``: summing over
    blocks turns the statement into ``sum_j 2^{j sigma} ||[a,Delta_j]b|| <=
    C * RHS``, and the reconstructed c_j sum to one by construction.
    """
    d = corpus.grid.d

    def build(c: Corpus) -> InequalityReport:
        idx_lo = BesovIndex(sigma - 1.0)
        ratios_pos, viol_pos = [], []
        ratios_gen, viol_gen = [], []
        cj_checksum = None
        worst = -1.0
        for k, (i, j) in enumerate(c.pairs(pair_count)):
            a, b = c.fields[i], c.fields[j]
            js, comm = commutator_blocks(a, b)
            lhs = float(np.sum(2.0 ** (sigma * js.astype(float)) * comm))
            grad_a = spectral_gradient(a)
            if sigma > 0:
                rhs = grad_a.linf_norm() * besov_norm(b, idx_lo).total \
                    + b.linf_norm() * besov_norm(grad_a, idx_lo).total
                r = _ratio(lhs, rhs, k, viol_pos)
                ratios_pos.append(r)
                if r > worst and np.isfinite(r) and rhs > 0:
                    worst = r
                    cj = 2.0 ** (sigma * js.astype(float)) * comm / (r * rhs)
                    cj_checksum = float(cj.sum())
            if -d / 2.0 < sigma <= d / 2.0 + 1.0:
                cap = max(
                    besov_norm(grad_a, BesovIndex(d / 2.0, r=math.inf)).total,
                    grad_a.linf_norm(),
                )
                rhs = cap * besov_norm(b, idx_lo).total
                ratios_gen.append(_ratio(lhs, rhs, k, viol_gen))
        forms = []
        if sigma > 0:
            forms.append(FormFit("gradient-sup", ratios_pos, viol_pos))
        if -d / 2.0 < sigma <= d / 2.0 + 1.0:
            forms.append(FormFit("critical-cap", ratios_gen, viol_gen))
        if not forms:
            raise ValueError(f"sigma={sigma} outside both admissible ranges")
        return InequalityReport(
            "commutator",
            {"sigma": sigma, "d": d, "N": c.grid.N, "cj_sum": cj_checksum},
            forms,
        )

    return _with_refinement(build, corpus, refined)


@dataclass
class SmoothMap:
    """Scalar composition map with a sup-derivative bound callback."""

    fn: Callable[[np.ndarray], np.ndarray]
    derivative_bound: Callable[[float], float]
    name: str = "f"

    def __post_init__(self) -> None:
        val = float(self.fn(np.zeros(1))[0])
        if abs(val) > 1e-12:
            raise ValueError(f"composition map must satisfy f(0) = 0, got f(0) = {val}")


def verify_composition(corpus: Corpus, f: SmoothMap, s: float, pair_count: int = 40,
                       refined: Corpus | None = None) -> InequalityReport:
    """Composition bounds ``||f o u|| <= C(f', ||u||_inf) ||u||`` plus the
    Lipschitz difference form on pairs."""
    if s <= 0:
        raise ValueError("composition law needs s > 0")
    d = corpus.grid.d
    idx = BesovIndex(s)
    idx_cap = BesovIndex(max(s, d / 2.0))

    def compose(u: Field) -> Field:
        return dealias(Field(u.grid, f.fn(u.values)))

    def build(c: Corpus) -> InequalityReport:
        ratios_b, viol_b = [], []
        ratios_d, viol_d = [], []
        for k, u in enumerate(c.fields):
            lhs = besov_norm(compose(u), idx).total
            rhs = f.derivative_bound(u.linf_norm()) * besov_norm(u, idx).total
            ratios_b.append(_ratio(lhs, rhs, k, viol_b))
        for k, (i, j) in enumerate(c.pairs(pair_count)):
            u, v = c.fields[i], c.fields[j]
            lhs = besov_norm(compose(u) - compose(v), idx).total
            amp = max(u.linf_norm(), v.linf_norm())
            cap = max(besov_norm(u, idx_cap).total, besov_norm(v, idx_cap).total)
            rhs = f.derivative_bound(amp) * (1.0 + cap) * besov_norm(u - v, idx).total
            ratios_d.append(_ratio(lhs, rhs, k, viol_d))
        return InequalityReport(
            "composition", {"s": s, "map": f.name, "N": c.grid.N},
            [FormFit("base", ratios_b, viol_b), FormFit("difference", ratios_d, viol_d)],
        )

    return _with_refinement(build, corpus, refined)


# ---------------------------------------------------------------------------
# Garding inequality
# ---------------------------------------------------------------------------

def vector_corpus(corpus: Corpus, n2: int, count: int = 20) -> list[Field]:
    """n2-component test functions assembled from corpus members."""
    out = []
    n = len(corpus.fields)
    rng = np.random.default_rng(corpus.seed + 13)
    for _ in range(count):
        idxs = rng.integers(0, n, n2)
        vals = np.concatenate([corpus.fields[i].values for i in idxs])
        out.append(Field(corpus.grid.with_components(n2), vals))
    return out


def garding_lhs(spec: SystemSpec, U_field: Field, f: Field) -> float:
    """-sum int Z^{ab}_{ij}(U) d_a d_b f^i f^j dx with spectral derivatives."""
    grid = f.grid
    n2, d = spec.n2, grid.d
    Uv = U_field.values.reshape(spec.n, -1)
    k = grid.wavenumbers().reshape(d, -1) * grid.xi_scale
    spec_f = f.spectrum.reshape(n2, -1)
    total = 0.0
    from lpflow.grid import ifftn

    for a in range(d):
        for b in range(d):
            dd = ifftn((-k[a] * k[b] * spec_f).reshape((n2,) + grid.shape),
                       axes=tuple(range(1, d + 1))).real
            Zab = spec.Z_block(Uv, a, b)
            total -= float(np.sum(
                np.einsum("ijm,im,jm->m", Zab, dd.reshape(n2, -1),
                          f.values.reshape(n2, -1))
            ) * grid.cell_volume)
    return total


def verify_garding(spec: SystemSpec, U_field: Field, f_corpus: Sequence[Field],
                   epsilon: float, c: float | None = None,
                   refined: tuple[Field, Sequence[Field]] | None = None) -> InequalityReport:
    """Coercivity up to lower order: LHS >= c ||grad f||^2 - eps ||grad^2 f|| ||f||
    - C ||f||^2 with ``c`` from the sampled ellipticity constant and ``C``
    fitted as the smallest constant making every instance pass."""
    if c is None:
        rng = np.random.default_rng(99)
        Uv = U_field.values.reshape(spec.n, -1)
        sub = Uv[:, :: max(1, Uv.shape[1] // 4096)]
        M = sub.shape[1]
        rep = check_strong_ellipticity(
            spec, sub, unit_sphere_samples(spec.d, M, rng),
            unit_sphere_samples(spec.n2, M, rng),
        )
        c = rep.c1_hat

    def build(U: Field, fs: Sequence[Field]) -> InequalityReport:
        needs = []
        for f in fs:
            lhs = garding_lhs(spec, U, f)
            grad = spectral_gradient(f)
            hess = spectral_gradient(grad)
            need = (c * grad.l2_norm() ** 2 - epsilon * hess.l2_norm() * f.l2_norm()
                    - lhs) / max(f.l2_norm() ** 2, 1e-300)
            needs.append(need)
        C_fit = max(max(needs), 0.0)
        ratios = [n / max(C_fit, 1e-300) if C_fit > 0 else 0.0 for n in needs]
        form = FormFit("coercivity-defect", ratios, [])
        rep = InequalityReport(
            "garding", {"epsilon": epsilon, "c": c, "C_fit": C_fit,
                        "N": fs[0].grid.N}, [form])
        return rep

    report = build(U_field, list(f_corpus))
    if refined is not None:
        fine = build(refined[0], list(refined[1]))
        report.params["C_fit_fine"] = fine.params["C_fit"]
        base = max(report.params["C_fit"], 1e-12)
        report.params["C_stable"] = abs(fine.params["C_fit"] - report.params["C_fit"]) \
            <= 0.25 * max(base, 1.0)
    return report


# ---------------------------------------------------------------------------
# A priori trajectory estimates
# ---------------------------------------------------------------------------

@dataclass
class AprioriReport:
    name: str
    level: float
    fitted: dict
    margins: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.margins >= -1e-12)) and \
            all(np.isfinite(v) for v in self.fitted.values())

    def to_json(self, path: str | Path | None = None) -> dict:
        payload = {"name": self.name, "level": self.level, "fitted": self.fitted,
                   "passed": self.passed, "min_margin": float(self.margins.min())}
        if path is not None:
            Path(path).write_text(json.dumps(payload, indent=2))
        return payload


def _coefficient_div_sup(run: RunResult) -> np.ndarray:
    """||d_t S0_11(U) + sum_a d_a S^a_11(U)||_inf per sample."""
    spec = run.system
    traj = run.coeff
    grid = traj.grid
    n1, d = spec.n1, spec.d
    times = traj.times
    S0 = np.empty((len(times), n1, n1, grid.size))
    Sa = np.empty((len(times), d, n1, n1, grid.size))
    for i, f in enumerate(traj.fields):
        Uv = f.values.reshape(spec.n, -1)
        S0[i] = spec.S0_block(Uv, 1, 1)
        for a in range(d):
            Sa[i, a] = spec.Salpha_block(Uv, a, 1, 1)
    dtS0 = np.gradient(S0, times, axis=0, edge_order=2)
    out = np.empty(len(times))
    for i in range(len(times)):
        acc = dtS0[i].copy()
        for a in range(d):
            coefs = Sa[i, a].reshape(n1 * n1, *grid.shape)
            acc += gradient_array(coefs, grid)[:, a].reshape(n1, n1, grid.size)
        out[i] = np.abs(acc).sum(axis=(0, 1)).max()
    return out


def _running_tilde_sup(traj, idx: BesovIndex) -> np.ndarray:
    """Chemin-Lerner sup norm on [0, t_k] for every k."""
    from lpflow.norms import block_norm_series

    js, series = block_norm_series(traj, idx.flavor, idx.p)
    w = 2.0 ** (idx.s * js.astype(float))
    running = np.maximum.accumulate(series, axis=0)
    return (running * w).sum(axis=1)


def _cumulative_l1(traj, idx: BesovIndex) -> np.ndarray:
    from lpflow.norms import block_norm_series

    js, series = block_norm_series(traj, idx.flavor, idx.p)
    w = 2.0 ** (idx.s * js.astype(float))
    totals = (series * w).sum(axis=1)
    dt = traj.times[1] - traj.times[0]
    return np.concatenate([[0.0], np.cumsum((totals[1:] + totals[:-1]) / 2.0 * dt)])


def _besov_series(traj, idx: BesovIndex) -> np.ndarray:
    from lpflow.norms import block_norm_series

    js, series = block_norm_series(traj, idx.flavor, idx.p)
    w = 2.0 ** (idx.s * js.astype(float))
    return (series * w).sum(axis=1)


def _fit_c0_over_grid(lhs: np.ndarray, A: np.ndarray, B: np.ndarray) -> tuple[float, float]:
    """Minimize C0 = max_t lhs / (A + C B) over a log grid of C."""
    if np.all(lhs <= 1e-300):
        return 0.0, 0.0
    best = (math.inf, 0.0)
    for C in np.concatenate([[0.0], np.logspace(-3, 3, 25)]):
        denom = A + C * B
        if np.any(denom <= 0):
            continue
        c0 = float(np.max(lhs / denom))
        if c0 < best[0]:
            best = (c0, float(C))
    return best


def verify_apriori_hyperbolic(run: RunResult, sigma: float | None = None) -> AprioriReport:
    """Linear hyperbolic energy estimate along the final inner solve.

    Checks ``sup_{t' <= t} ||V1(t')||_{B^sigma} <= C0 (||V1_0|| + int ||Theta1||
    + C int Phi1 ||V1||)`` with fitted (C0, C) and per-sample margins.
    """
    if run.theta1 is None:
        raise ValueError("run has no hyperbolic block / source record")
    spec = run.system
    sigma = (run.config.s + 1.0) if sigma is None else sigma
    d = spec.d
    sig_star2 = max(d / 2.0, sigma - 1.0)
    v1 = run.v1
    lhs = _running_tilde_sup(v1, BesovIndex(sigma))
    A = besov_norm(v1.fields[0], BesovIndex(sigma)).total + \
        _cumulative_l1(run.theta1, BesovIndex(sigma))
    div_sup = _coefficient_div_sup(run)
    coeff_v = run.coeff.map(lambda f: Field(
        f.grid, f.values - spec.U_bar[(...,) + (None,) * f.grid.d]))
    phi1 = div_sup + _besov_series(coeff_v, BesovIndex(sig_star2 + 1.0))
    v1_series = _besov_series(v1, BesovIndex(sigma))
    dt = v1.times[1] - v1.times[0]
    integrand = phi1 * v1_series
    B = np.concatenate([[0.0], np.cumsum((integrand[1:] + integrand[:-1]) / 2.0 * dt)])
    c0, C = _fit_c0_over_grid(lhs, A, B)
    margins = c0 * (A + C * B) - lhs
    return AprioriReport("apriori-hyperbolic", sigma,
                         {"C0": c0, "C": C}, margins)


def verify_apriori_parabolic(run: RunResult, s: float | None = None) -> AprioriReport:
    """Linear parabolic energy estimate with the L1-in-time smoothing gain.

    Checks ``tilde-sup ||V2||_{B^s} + c int ||V2||_{B^{s+2}} <= C0 (||V2_0||
    + int ||Theta2|| + C int Phi2 ||V2||)`` with c taken from the reference
    operator's symbol envelope and (C0, C) fitted.
    """
    spec = run.system
    s = run.config.s if s is None else s
    d = spec.d
    s_star = max(d / 2.0, s)
    v2 = run.v2
    op = spec.constant_parabolic_op()
    c_gain = op.kappa_hat * (3.0 / 4.0) ** 2 * v2.grid.xi_scale**2
    lhs = _running_tilde_sup(v2, BesovIndex(s)) + \
        c_gain * _cumulative_l1(v2, BesovIndex(s + 2.0))
    A = besov_norm(v2.fields[0], BesovIndex(s)).total + \
        _cumulative_l1(run.theta2, BesovIndex(s))
    spec_n = spec.n
    times = run.coeff.times
    S22 = np.empty((len(times), spec.n2, spec.n2, v2.grid.size))
    for i, f in enumerate(run.coeff.fields):
        S22[i] = spec.S0_block(f.values.reshape(spec_n, -1), 2, 2)
    dtS22 = np.gradient(S22, times, axis=0, edge_order=2)
    dt_sup = np.abs(dtS22).sum(axis=(1, 2)).max(axis=-1)
    coeff_v = run.coeff.map(lambda f: Field(
        f.grid, f.values - spec.U_bar[(...,) + (None,) * f.grid.d]))
    v_star = _besov_series(coeff_v, BesovIndex(s_star))
    v_star1 = _besov_series(coeff_v, BesovIndex(s_star + 1.0))
    phi2 = 1.0 + dt_sup + (1.0 + v_star) ** 2 * v_star1**2
    v2_series = _besov_series(v2, BesovIndex(s))
    dt = v2.times[1] - v2.times[0]
    integrand = phi2 * v2_series
    B = np.concatenate([[0.0], np.cumsum((integrand[1:] + integrand[:-1]) / 2.0 * dt)])
    c0, C = _fit_c0_over_grid(lhs, A, B)
    margins = c0 * (A + C * B) - lhs
    return AprioriReport("apriori-parabolic", s,
                         {"C0": c0, "C": C, "c_gain": c_gain}, margins)


def apriori_stability(coarse: AprioriReport, fine: AprioriReport) -> dict:
    """Relative drift of the fitted constants between two time resolutions."""
    out = {}
    for key in coarse.fitted:
        a, b = coarse.fitted[key], fine.fitted.get(key, math.nan)
        out[key] = abs(b - a) / max(abs(a), 1e-12)
    return out
