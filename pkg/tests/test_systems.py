"""Structural checks on the concrete hyperbolic-parabolic systems."""

import numpy as np
import pytest

from lpflow.propagators import EllipticityFailure
from lpflow.systems import (
    PhaseSpaceViolation,
    SystemSpec,
    assemble_nsf,
    check_assumption_B,
    check_assumption_C,
    check_entropy_dissipativity,
    check_strong_ellipticity,
    draw_state_samples,
    gamma_law_barotropic,
    unit_sphere_samples,
)


def pure_parabolic_system(d=1):
    """n1 = 0 heat-type system for vacuous-hyperbolic cases."""
    def S0(U):
        return np.ones((1, 1, U.shape[1]))

    def Salpha(U, a):
        return np.zeros((1, 1, U.shape[1]))

    def Z(U, a, b):
        return np.full((1, 1, U.shape[1]), 1.0 if a == b else 0.0)

    return SystemSpec(
        name="heat", n1=0, n2=1, d=d, U_bar=np.zeros(1),
        assemble_S0=S0, assemble_Salpha=Salpha, assemble_Z=Z,
        phase_membership=lambda U: np.ones(U.shape[1], dtype=bool),
    )


class TestAssembleNSF:
    def test_reference_state_matrices(self):
        # R = c_v = 1 at (rho, u, theta) = (1, 0, 1): S0 = identity
        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": 0.0, "k": 1.0}, d=2)
        U = spec.U_bar[:, None]
        S0 = spec.assemble_S0(U)[..., 0]
        assert np.allclose(S0, np.eye(4), atol=1e-14)

    def test_advection_free_at_rest(self):
        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": 0.0, "k": 1.0}, d=2)
        U = spec.U_bar[:, None]
        xi = np.array([0.3, -0.8])
        total = sum(xi[a] * spec.assemble_Salpha(U, a)[..., 0] for a in range(2))
        # u = 0 kills advection: zero diagonal, pressure couplings p_rho xi = xi
        assert np.allclose(np.diag(total), 0.0, atol=1e-14)
        assert np.allclose(total[0, 1:3], xi, atol=1e-14)
        assert np.allclose(total[1:3, 0], xi, atol=1e-14)

    def test_z_symbol_eigenvalues(self):
        # oracle: eigendecomposition of mu |xi|^2 I + (mu + lam) xi (x) xi
        # plus (k/theta)|xi|^2: directions (u2, u1, theta) give {1, 2, 1}
        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": 0.0, "k": 1.0}, d=2)
        U = spec.U_bar[:, None]
        xi = np.array([1.0, 0.0])
        sym = sum(
            xi[a] * xi[b] * spec.Z_block(U, a, b)[..., 0]
            for a in range(2) for b in range(2)
        )
        eigs = np.sort(np.linalg.eigvalsh(sym))
        assert np.allclose(eigs, [1.0, 1.0, 2.0], atol=1e-14)

    def test_transport_sign_rejected(self):
        with pytest.raises(ValueError):
            assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": -2.0, "k": 1.0})
        with pytest.raises(ValueError):
            assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": -1.0, "lam": 0.0, "k": 1.0})

    def test_heating_source_quadratic(self):
        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": 0.5, "k": 2.0}, d=2)
        U = spec.U_bar[:, None]
        g2 = np.zeros((3, 2, 1))
        g2[0, 0] = 1.0  # d_x u_1 = 1
        f = spec.source.f23(U, g2)
        # T = mu/2 * (2)^2 + lam * 1 = 2.5, theta = 1
        assert f[2, 0] == pytest.approx(2.5)
        assert np.allclose(spec.source.f23(U, 0.5 * g2) * 4.0, f)


class TestAssembleBarotropic:
    def test_gamma_law_pressure_derivative(self):
        spec = gamma_law_barotropic(gamma=2.0, d=1)
        U = np.array([[1.0], [0.0]])
        assert spec.assemble_S0(U)[0, 0, 0] == pytest.approx(2.0)  # p_rho(1) = 2

    def test_dimension_bookkeeping_1d(self):
        spec = gamma_law_barotropic(gamma=2.0, d=1)
        assert (spec.n1, spec.n2, spec.n) == (1, 1, 2)
        assert spec.assumption_profile == "C"

    def test_vacuum_rejected(self):
        with pytest.raises(ValueError):
            gamma_law_barotropic(gamma=2.0, d=1, rho_bounds=(0.0, 10.0))

    def test_degenerate_longitudinal_rejected(self):
        with pytest.raises(ValueError):
            gamma_law_barotropic(gamma=2.0, d=1, transport={"mu": 1.0, "lam": -2.0})

    def test_phase_violation_carries_state(self):
        spec = gamma_law_barotropic(gamma=2.0, d=1, rho_bounds=(0.5, 2.0))
        U = np.array([[1.0, 0.3], [0.0, 0.0]])
        with pytest.raises(PhaseSpaceViolation) as err:
            spec.require_phase(U)
        assert err.value.worst_state[0] == pytest.approx(0.3)
        assert err.value.where == 1


class TestStrongEllipticity:
    def test_nsf_unit_constants(self):
        # sampled constant equals min(mu, nu, k/theta) = 1 within 2% at 1e5
        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": 0.0, "k": 1.0}, d=2)
        rng = np.random.default_rng(123)
        M = 100_000
        U = draw_state_samples(spec, M, rng, box={"rho": (0.5, 2.0), "u": (-1, 1),
                                                  "theta": (1.0, 1.0)})
        rep = check_strong_ellipticity(
            spec, U, unit_sphere_samples(2, M, rng), unit_sphere_samples(3, M, rng)
        )
        assert rep.c1_hat == pytest.approx(1.0, rel=0.02)
        assert rep.c1_hat >= 1.0 - 1e-12  # min(mu, nu, k/theta) is a true lower bound
        assert rep.sample_count == M

    def test_negative_lam_limit(self):
        # oracle: min over the quadratic form: nu = 0.5 < mu = 1 < k = 2
        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": -1.5, "k": 2.0}, d=2)
        rng = np.random.default_rng(7)
        estimates = []
        for M in (2_000, 20_000, 80_000):
            U = draw_state_samples(spec, M, rng, box={"rho": (1, 1), "u": (0, 0),
                                                      "theta": (1.0, 1.0)})
            rep = check_strong_ellipticity(
                spec, U, unit_sphere_samples(2, M, rng), unit_sphere_samples(3, M, rng)
            )
            estimates.append(rep.c1_hat)
        assert all(b <= a + 1e-12 for a, b in zip(estimates, estimates[1:]))
        assert estimates[-1] == pytest.approx(0.5, abs=0.03)
        assert estimates[-1] >= 0.5 - 1e-12

    def test_indefinite_symbol_rejected_with_witness(self):
        spec = pure_parabolic_system()

        def bad_Z(U, a, b):
            return np.full((1, 1, U.shape[1]), -1.0 if a == b else 0.0)

        bad = SystemSpec(
            name="bad", n1=0, n2=1, d=1, U_bar=np.zeros(1),
            assemble_S0=spec.assemble_S0, assemble_Salpha=spec.assemble_Salpha,
            assemble_Z=bad_Z,
            phase_membership=lambda U: np.ones(U.shape[1], dtype=bool),
        )
        rng = np.random.default_rng(1)
        U = np.zeros((1, 100))
        with pytest.raises(EllipticityFailure) as err:
            check_strong_ellipticity(bad, U, unit_sphere_samples(1, 100, rng),
                                     unit_sphere_samples(1, 100, rng))
        assert err.value.report.c1_hat < 0


class TestAssumptionB:
    def test_nsf_passes(self):
        spec = assemble_nsf({"R": 1.0, "c_v": 1.5}, {"mu": 1.0, "lam": 0.2, "k": 0.7}, d=2)
        rng = np.random.default_rng(5)
        U = draw_state_samples(spec, 500, rng)
        rep = check_assumption_B(spec, U)
        assert rep.ok, [f"{i.name}: {i.note}" for i in rep.failures()]

    def test_antisymmetric_perturbation_detected(self):
        # custom n1 = 2 system so the 11 block can actually lose symmetry
        eps = 1e-3

        def S0(U):
            return np.broadcast_to(np.eye(3)[..., None], (3, 3, U.shape[1])).copy()

        def Salpha(U, a):
            out = np.zeros((3, 3, U.shape[1]))
            out[0, 1] = 1.0 + eps
            out[1, 0] = 1.0 - eps
            return out

        def Z(U, a, b):
            return np.full((1, 1, U.shape[1]), float(a == b))

        bad = SystemSpec(
            name="wave-heat", n1=2, n2=1, d=1, U_bar=np.zeros(3),
            assemble_S0=S0, assemble_Salpha=Salpha, assemble_Z=Z,
            phase_membership=lambda U: np.ones(U.shape[1], dtype=bool),
        )
        U = np.zeros((3, 100))
        rep = check_assumption_B(bad, U)
        item = next(i for i in rep.items if i.name == "hyperbolic block symmetry")
        assert not item.ok
        assert item.residual == pytest.approx(eps, rel=1e-9)

    def test_n1_zero_vacuous(self):
        spec = pure_parabolic_system()
        U = np.zeros((1, 10))
        rep = check_assumption_B(spec, U)
        item = next(i for i in rep.items if i.name == "hyperbolic block symmetry")
        assert item.ok and "vacuous" in item.note


class TestAssumptionC:
    def test_barotropic_constant_viscosity_passes(self):
        spec = gamma_law_barotropic(gamma=1.4, d=2)
        rng = np.random.default_rng(8)
        U = draw_state_samples(spec, 200, rng)
        rep = check_assumption_C(spec, U)
        assert rep.ok, [f"{i.name}: {i.residual:.2e} {i.note}" for i in rep.failures()]

    def test_velocity_dependent_viscosity_fails_item4(self):
        base = gamma_law_barotropic(gamma=2.0, d=1)

        def bad_Z(U, a, b):
            mu = 1.0 + 0.5 * U[1] ** 2  # viscosity depends on |u|
            return (2.0 * mu * (a == b))[None, None, :]

        bad = SystemSpec(
            name="barotropic", n1=1, n2=1, d=1, U_bar=base.U_bar,
            assemble_S0=base.assemble_S0, assemble_Salpha=base.assemble_Salpha,
            assemble_Z=bad_Z, phase_membership=base.phase_membership,
            assumption_profile="C",
        )
        rng = np.random.default_rng(9)
        U = draw_state_samples(bad, 100, rng)
        rep = check_assumption_C(bad, U, tol=1e-6)
        item = next(i for i in rep.items if i.name == "Z^{ab} depends only on U1")
        assert not item.ok
        assert item.residual >= 10 * 1e-6

    def test_zero_perturbation_rejected(self):
        spec = gamma_law_barotropic(gamma=2.0, d=1)
        with pytest.raises(ValueError):
            check_assumption_C(spec, spec.U_bar[:, None], h=0.0)

    def test_affinity_exact_for_affine_maps(self):
        # second differences of truly affine blocks vanish for any h
        spec = gamma_law_barotropic(gamma=2.0, d=1)
        rng = np.random.default_rng(10)
        U = draw_state_samples(spec, 50, rng)
        for h in (1e-2, 1e-5):
            rep = check_assumption_C(spec, U, h=h)
            item = next(i for i in rep.items if "affine in U2" in i.name)
            assert item.residual <= 1e-12


class TestEntropyDissipativity:
    def test_degenerate_symbol_vacuous(self):
        spec = pure_parabolic_system()
        M = 20
        rng = np.random.default_rng(11)

        def hess(u):
            return np.ones((1, 1, M))

        def B_alpha(xi, u):
            return np.zeros((1, 1, 1, M))

        rep = check_entropy_dissipativity(
            spec, hess, B_alpha, np.zeros((1, M)),
            unit_sphere_samples(1, M, rng), rng.standard_normal((1, M))
        )
        assert rep.ok and rep.omega_hat is None and rep.skipped == M

    def test_scalar_heat_ratio_one(self):
        spec = pure_parabolic_system()
        M = 200
        rng = np.random.default_rng(12)
        xi = rng.uniform(0.5, 2.0, (M, 1)) * np.sign(rng.standard_normal((M, 1)))

        def hess(u):
            return np.ones((1, 1, M))  # eta = u^2 / 2

        def B_alpha(xi_s, u):
            return np.broadcast_to(xi_s.T[None, None], (1, 1, 1, M)).copy()

        rep = check_entropy_dissipativity(
            spec, hess, B_alpha, np.zeros((1, M)), xi, rng.standard_normal((1, M))
        )
        assert rep.omega_hat == pytest.approx(1.0, rel=1e-10)

    def test_nsf_physical_entropy_positive(self):
        # sampling oracle with the conservative-variable entropy
        # eta = -rho s, s = c_v log(theta) - R log(rho), via symbolic Hessian
        import sympy as sp

        R_, cv_, mu_, nu_, k_ = 1.0, 1.5, 1.0, 2.0, 0.8
        rho, m, E = sp.symbols("rho m E", positive=True)
        theta = (E / rho - m**2 / (2 * rho**2)) / cv_
        eta = -rho * (cv_ * sp.log(theta) - R_ * sp.log(rho))
        U_syms = (rho, m, E)
        H_sym = sp.Matrix([[sp.diff(eta, a, b) for b in U_syms] for a in U_syms])
        H_fn = sp.lambdify(U_syms, H_sym, "numpy")

        rng = np.random.default_rng(13)
        M = 400
        rho_v = rng.uniform(0.5, 2.0, M)
        v_v = rng.uniform(-1.0, 1.0, M)
        th_v = rng.uniform(0.5, 2.0, M)
        m_v = rho_v * v_v
        E_v = rho_v * (cv_ * th_v + v_v**2 / 2)
        u = np.stack([rho_v, m_v, E_v])

        def hess(u_s):
            out = np.empty((3, 3, M))
            for i in range(M):
                out[:, :, i] = H_fn(u_s[0, i], u_s[1, i], u_s[2, i])
            return out

        def B_alpha(xi_s, u_s):
            # d = 1 viscous + heat flux in conservative variables
            r, mm, EE = u_s
            v = mm / r
            th = (EE / r - v**2 / 2) / cv_
            B = np.zeros((1, 3, 3, M))
            B[0, 1, 0] = -nu_ * v / r
            B[0, 1, 1] = nu_ / r
            B[0, 2, 0] = -nu_ * v**2 / r + (k_ / cv_) * (-EE / r**2 + mm**2 / r**3)
            B[0, 2, 1] = nu_ * v / r - (k_ / cv_) * mm / r**2
            B[0, 2, 2] = (k_ / cv_) / r
            return B * xi_s[:, 0]

        xi = np.sign(rng.standard_normal((M, 1)))
        X = rng.standard_normal((3, M))
        spec = pure_parabolic_system()
        rep = check_entropy_dissipativity(spec, hess, B_alpha, u, xi, X)
        assert rep.omega_hat is not None and rep.omega_hat > 0.0


class TestConstantOp:
    def test_nsf_reference_operator_rates(self):
        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": 0.0, "k": 1.0}, d=2)
        op = spec.constant_parabolic_op()
        lo, hi = op.rate_envelope()
        assert lo == pytest.approx(1.0, abs=1e-10)   # min(mu, nu, k/theta)
        assert hi == pytest.approx(2.0, abs=1e-10)   # nu
