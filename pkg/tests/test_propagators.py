"""Exact propagator, frozen-coefficient steppers, smoothing checks, ODE lemma."""

import math

import numpy as np
import pytest

from lpflow.grid import Field, GridSpec
from lpflow.propagators import (
    CFLViolation,
    ConstantParabolicOp,
    FrozenCoeffStep,
    Trajectory,
    heat_operator,
    solve_constant_parabolic,
    step_linear_hyperbolic,
    step_linear_parabolic_variable,
    verify_ode_lemma,
    verify_smoothing_estimates,
)
from lpflow.systems import gamma_law_barotropic

from conftest import make_band_limited, single_mode


def nsf_viscous_zbar(d, mu, lam, k_over_theta):
    """Constant diffusion tensor of the (u, theta) block."""
    n2 = d + 1
    Z = np.zeros((d, d, n2, n2))
    for a in range(d):
        for b in range(d):
            for i in range(d):
                for kk in range(d):
                    Z[a, b, i, kk] = mu * ((a == b) * (i == kk) + (b == i) * (a == kk)) \
                        + lam * (a == i) * (b == kk)
        Z[a, a, d, d] = k_over_theta
    return Z


class TestConstantParabolic:
    def test_heat_single_mode_exact(self, grid1d):
        op = heat_operator(d=1)
        V0 = single_mode(grid1d, [5])
        T = 0.37
        traj = solve_constant_parabolic(V0, op, T, samples=9)
        for t, f in zip(traj.times, traj.fields):
            exact = math.exp(-25.0 * t)
            assert np.abs(f.values - exact * V0.values).max() <= 1e-12

    def test_zero_data(self, grid1d):
        op = heat_operator(d=1)
        traj = solve_constant_parabolic(Field.zeros(grid1d), op, 0.1, 4)
        assert all(f.l2_norm() == 0.0 for f in traj.fields)

    def test_nsf_viscous_block_decay_rates(self):
        # oracle: eigen-decomposition of the assembled symbol:
        # rates {mu |xi|^2 (x (d-1)), nu |xi|^2, (k/theta) |xi|^2}
        d, mu, lam, kot = 2, 1.0, 0.0, 1.0
        op = ConstantParabolicOp(np.eye(d + 1), nsf_viscous_zbar(d, mu, lam, kot))
        xi = np.array([[0.6, 0.8]])
        sym = op.symbol(xi)[0]
        eigs = np.sort(np.linalg.eigvalsh(sym))
        nu = 2 * mu + lam
        assert np.allclose(eigs, np.sort([mu, nu, kot]), atol=1e-12)
        # and the propagator realizes exp(-t rate) on eigenvectors
        g = GridSpec(d=2, N=32, n=d + 1)
        V0 = Field(g, np.stack([single_mode(g.with_components(1), [3, 0]).values[0]] * (d + 1)))
        traj = solve_constant_parabolic(V0, op, 0.1, 3)
        spec0 = V0.spectrum
        spect = traj.fields[-1].spectrum
        kidx = (3,) + (0,) * (d - 1)
        ratio = spect[(slice(None),) + kidx] / spec0[(slice(None),) + kidx]
        expected = np.linalg.eigvals(
            np.real(np.array(
                [[np.exp(-0.1 * 9.0 * m) for m in [0]]]))) if False else None
        M = op.symbol(np.array([[3.0, 0.0]]))[0]
        expected = np.diag(np.exp(-0.1 * np.diag(M))) if np.allclose(M, np.diag(np.diag(M))) else None
        import scipy.linalg
        E = scipy.linalg.expm(-0.1 * M)
        assert np.allclose(ratio.real, E @ np.ones(d + 1), atol=1e-10)

    def test_semigroup_property(self, grid2d):
        op = heat_operator(d=2, diffusivity=0.7)
        V0 = make_band_limited(grid2d, seed=40)
        one = op.apply(V0, 0.4)
        two = op.apply(op.apply(V0, 0.2), 0.2)
        assert (one - two).l2_norm() <= 1e-12 * max(one.l2_norm(), 1e-30)

    def test_energy_decay_weighted_norm(self, grid1d):
        S = np.array([[2.0, 0.3], [0.3, 1.0]])
        Z = np.zeros((1, 1, 2, 2))
        Z[0, 0] = np.array([[1.5, 0.2], [0.2, 0.8]])
        op = ConstantParabolicOp(S, Z)
        g = grid1d.with_components(2)
        traj = solve_constant_parabolic(make_band_limited(g, seed=41), op, 0.5, 21)
        energies = [
            float(np.sum(f.values * np.einsum("ij,j...->i...", S, f.values)))
            for f in traj.fields
        ]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(energies, energies[1:]))

    def test_non_spd_rejected(self):
        with pytest.raises(ValueError):
            ConstantParabolicOp(np.array([[1.0, 0.0], [0.0, -0.5]]),
                                np.zeros((1, 1, 2, 2)) + np.eye(2))


@pytest.fixture
def baro1d():
    return gamma_law_barotropic(gamma=2.0, d=1)


class TestHyperbolicStep:
    def test_pure_advection_exact_phase(self, baro1d):
        # constant coefficients, speed a: one RK4 step matches e^{-iakt} to O(dt^5)
        g = GridSpec(d=1, N=64)
        a, kmode = 0.8, 3
        U = Field(g.with_components(2), np.stack([np.ones(g.shape), a * np.ones(g.shape)]))
        V1 = single_mode(g, [kmode])
        dt = 0.01
        step = FrozenCoeffStep(dt=dt)
        out = step_linear_hyperbolic(baro1d, V1, U, Field.zeros(g), step)
        x = g.axis()
        exact = np.cos(kmode * (x - a * dt))
        assert np.abs(out.values[0] - exact).max() <= 10 * (kmode * a * dt) ** 5

    def test_zero_fixed_point(self, baro1d):
        g = GridSpec(d=1, N=64)
        U = Field(g.with_components(2), np.stack([np.ones(g.shape), 0.5 * np.ones(g.shape)]))
        out = step_linear_hyperbolic(baro1d, Field.zeros(g), U, Field.zeros(g),
                                     FrozenCoeffStep(dt=0.01))
        assert out.l2_norm() == 0.0

    def test_cfl_violation_reports_admissible(self, baro1d):
        g = GridSpec(d=1, N=64)
        U = Field(g.with_components(2), np.stack([np.ones(g.shape), 2.0 * np.ones(g.shape)]))
        with pytest.raises(CFLViolation) as err:
            step_linear_hyperbolic(baro1d, single_mode(g, [3]), U, Field.zeros(g),
                                   FrozenCoeffStep(dt=10.0))
        assert 0 < err.value.admissible < 10.0

    def test_l2_preservation_constant_symmetric(self, baro1d):
        g = GridSpec(d=1, N=64)
        a, kmode, dt = 0.5, 4, 0.02
        U = Field(g.with_components(2), np.stack([np.ones(g.shape), a * np.ones(g.shape)]))
        V1 = single_mode(g, [kmode])
        out = step_linear_hyperbolic(baro1d, V1, U, Field.zeros(g), FrozenCoeffStep(dt=dt))
        drift = abs(out.l2_norm() - V1.l2_norm()) / V1.l2_norm()
        assert drift <= (kmode * a * dt) ** 4

    def test_variable_coefficient_self_convergence(self, baro1d):
        # oracle: dt/8 reference: observed RK4 order >= 3.8
        g = GridSpec(d=1, N=64)
        x = g.axis()
        U = Field(g.with_components(2),
                  np.stack([1.0 + 0.2 * np.cos(x), 0.4 + 0.25 * np.sin(2 * x)]))
        theta = Field(g, (0.1 * np.cos(3 * x))[None])
        V0 = single_mode(g, [2], amplitude=0.5)
        T = 0.4

        def evolve(nsteps: int) -> Field:
            step = FrozenCoeffStep(dt=T / nsteps)
            v = V0
            for _ in range(nsteps):
                v = step_linear_hyperbolic(baro1d, v, U, theta, step)
            return v

        ref = evolve(256)
        e1 = (evolve(32) - ref).l2_norm()
        e2 = (evolve(64) - ref).l2_norm()
        order = math.log2(e1 / e2)
        assert order >= 3.8


class TestParabolicStep:
    def test_reference_state_matches_exact(self, baro1d):
        g = GridSpec(d=1, N=64)
        op = baro1d.constant_parabolic_op()
        U = Field(g.with_components(2),
                  np.stack([np.ones(g.shape), np.zeros(g.shape)]))
        V2 = single_mode(g, [4], amplitude=0.3)
        dt = 0.02
        out = step_linear_parabolic_variable(baro1d, V2, U, Field.zeros(g),
                                             FrozenCoeffStep(dt=dt), op)
        exact = op.apply(V2, dt)
        assert (out - exact).l2_norm() <= 1e-12 * max(exact.l2_norm(), 1e-30)

    def test_zero_fixed_point(self, baro1d):
        g = GridSpec(d=1, N=64)
        op = baro1d.constant_parabolic_op()
        U = Field(g.with_components(2), np.stack([np.ones(g.shape), np.zeros(g.shape)]))
        out = step_linear_parabolic_variable(baro1d, Field.zeros(g), U, Field.zeros(g),
                                             FrozenCoeffStep(dt=0.01), op)
        assert out.l2_norm() <= 1e-15

    def test_variable_coefficient_self_convergence(self, baro1d):
        # oracle: dt/8 reference: observed ETD2RK order >= 1.8
        g = GridSpec(d=1, N=64)
        x = g.axis()
        op = baro1d.constant_parabolic_op()
        U = Field(g.with_components(2),
                  np.stack([1.0 + 0.15 * np.cos(x), 0.1 * np.sin(x)]))
        theta = Field(g, (0.05 * np.cos(2 * x))[None])
        V0 = single_mode(g, [2], amplitude=0.4)
        T = 0.2

        def evolve(nsteps: int) -> Field:
            step = FrozenCoeffStep(dt=T / nsteps)
            v = V0
            for _ in range(nsteps):
                v = step_linear_parabolic_variable(baro1d, v, U, theta, step, op)
            return v

        ref = evolve(256)
        e1 = (evolve(32) - ref).l2_norm()
        e2 = (evolve(64) - ref).l2_norm()
        order = math.log2(e1 / e2)
        assert order >= 1.8


class TestSmoothingEstimates:
    def test_heat_envelope(self, grid1d):
        # oracle: log-linear fit on the exact heat flow: per-block rate in
        # [(3/4)^2 4^j, (8/3)^2 4^j]
        op = heat_operator(d=1)
        V0 = make_band_limited(grid1d, seed=50)
        T, h = 0.02, 0.03
        traj = solve_constant_parabolic(V0, op, T + h, samples=401)
        rep = verify_smoothing_estimates(traj, op, V0, s=0.0, T=T, h=h)
        assert rep.envelope_ok
        assert rep.sup_ok
        assert rep.low_block_ok and rep.low_block_constant <= 1.0 + 1e-6
        fitted = {r.j: r for r in rep.rows if r.c_fit is not None}
        assert fitted, "expected at least one fitted block"
        for r in fitted.values():
            assert (3 / 4) ** 2 * (1 - 1e-9) <= r.c_fit <= (8 / 3) ** 2 * (1 + 1e-9)
            assert r.l1_constant is not None and np.isfinite(r.l1_constant)

    def test_single_block_data_leaves_others_vacuous(self, grid1d):
        op = heat_operator(d=1)
        V0 = single_mode(grid1d, [3])  # annulus j=1 only
        traj = solve_constant_parabolic(V0, op, 0.05, samples=201)
        rep = verify_smoothing_estimates(traj, op, V0, s=0.0, T=0.02, h=0.03)
        for r in rep.rows:
            if r.j != 1:
                assert r.c_fit is None and "empty" in r.note

    def test_weighted_sup_constant(self, grid1d):
        S = np.array([[4.0, 0.0], [0.0, 1.0]])   # cond = 4, sqrt = 2
        Z = np.zeros((1, 1, 2, 2))
        Z[0, 0] = np.array([[1.0, 0.5], [0.5, 1.0]])
        op = ConstantParabolicOp(S, Z)
        g = grid1d.with_components(2)
        V0 = make_band_limited(g, seed=51)
        traj = solve_constant_parabolic(V0, op, 0.05, samples=201)
        rep = verify_smoothing_estimates(traj, op, V0, s=0.0, T=0.02, h=0.03)
        assert rep.sqrt_cond == pytest.approx(2.0)
        assert rep.sup_ok


class TestOdeLemma:
    def test_constant_equality(self):
        t = np.linspace(0, 1, 101)
        X = np.full_like(t, 4.0)
        rep = verify_ode_lemma(t, X, np.zeros_like(t), 0.0)
        assert rep.ok and abs(rep.conclusion_margin) <= 1e-10

    def test_growing_solution_equality(self):
        # X = (1 + t/2)^2 meets the hypothesis with equality for A = 1/2, B = 0,
        # and the conclusion is an identity.
        t = np.linspace(0, 1, 201)
        X = (1 + t / 2) ** 2
        rep = verify_ode_lemma(t, X, np.full_like(t, 0.5), 0.0)
        assert rep.ok
        assert abs(rep.conclusion_margin) <= 1e-8

    def test_exponential_decay_with_B(self):
        # X = e^{-2Bt} X0, A = 0: hypothesis is an identity and the conclusion
        # integrates to sqrt(X0) exactly.
        B, X0 = 1.3, 2.0
        t = np.linspace(0, 1, 2001)
        X = X0 * np.exp(-2 * B * t)
        rep = verify_ode_lemma(t, X, np.zeros_like(t), B)
        assert rep.ok
        assert abs(rep.conclusion_margin) <= 1e-5

    def test_hypothesis_violation_reported(self):
        t = np.linspace(0, 1, 101)
        X = np.exp(4 * t)  # grows: X'/2 = 2X > A sqrt(X) for A = 0
        rep = verify_ode_lemma(t, X, np.zeros_like(t), 0.0)
        assert not rep.hypothesis_ok and rep.conclusion_ok is None

    def test_negative_inputs_rejected(self):
        t = np.linspace(0, 1, 11)
        with pytest.raises(ValueError):
            verify_ode_lemma(t, -np.ones_like(t), np.zeros_like(t), 0.0)


class TestTrajectory:
    def test_persistence_roundtrip(self, tmp_path, grid1d):
        op = heat_operator(d=1)
        traj = solve_constant_parabolic(make_band_limited(grid1d, seed=60), op, 0.1, 5)
        traj.save(tmp_path / "run")
        back = Trajectory.load(tmp_path / "run")
        assert np.allclose(back.times, traj.times)
        assert all(
            np.array_equal(a.values, b.values) for a, b in zip(back.fields, traj.fields)
        )
        assert back.meta["scheme"] == "exact-mode"

    def test_nonuniform_rejected(self, grid1d):
        f = Field.zeros(grid1d)
        with pytest.raises(ValueError):
            Trajectory(np.array([0.0, 0.1, 0.3]), [f, f, f])


class TestEllipticityGate:
    def test_indefinite_symbol_rejected_by_stepper(self):
        from lpflow.grid import GridSpec
        from lpflow.propagators import EllipticityFailure, heat_operator
        from lpflow.systems import SystemSpec
        import numpy as np

        def S0(U):
            return np.ones((1, 1, U.shape[1]))

        def Salpha(U, a):
            return np.zeros((1, 1, U.shape[1]))

        def bad_Z(U, a, b):
            # sign flips across the grid: loses positivity pointwise
            return (np.sign(U[0]) + 0.5)[None, None, :] * float(a == b)

        bad = SystemSpec(
            name="indefinite", n1=0, n2=1, d=1, U_bar=np.ones(1),
            assemble_S0=S0, assemble_Salpha=Salpha, assemble_Z=bad_Z,
            phase_membership=lambda U: np.ones(U.shape[1], dtype=bool),
        )
        g = GridSpec(d=1, N=32)
        U = Field(g, np.sign(np.cos(g.axis()))[None, :])
        op = heat_operator(d=1)
        with pytest.raises(EllipticityFailure):
            step_linear_parabolic_variable(bad, single_mode(g, [3]), U,
                                           Field.zeros(g), FrozenCoeffStep(dt=0.01), op)


class TestGeneralHomogeneityDegree:
    def test_quartic_symbol_smoothing_envelope(self):
        # homogeneity degree 4: rates in [(3/4)^4, (8/3)^4] * 16^j
        import numpy as np
        from lpflow.grid import GridSpec
        from lpflow.propagators import ConstantParabolicOp, verify_smoothing_estimates

        g = GridSpec(d=1, N=64)

        def quartic(xi):
            mag4 = np.sum(xi**2, axis=1) ** 2
            return mag4[:, None, None] * np.eye(1)

        op = ConstantParabolicOp(np.eye(1), np.zeros((1, 1, 1, 1)), gamma=4.0,
                                 symbol_fn=quartic)
        V0 = make_band_limited(g, seed=90, kmax=6.0)
        T, h = 2e-4, 4e-4
        traj = solve_constant_parabolic(V0, op, T + h, samples=801)
        rep = verify_smoothing_estimates(traj, op, V0, s=0.0, T=T, h=h)
        fitted = [r for r in rep.rows if r.c_fit is not None]
        assert fitted and rep.envelope_ok and rep.sup_ok
