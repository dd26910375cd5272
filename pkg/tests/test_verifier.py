"""Inequality stress tests: corpora, fitted constants, and a priori estimates."""

import numpy as np
import pytest

from lpflow.data import smooth_system_data
from lpflow.grid import Field, GridSpec, guard_band_fraction
from lpflow.solver import IterationConfig, iterate_subcritical
from lpflow.systems import gamma_law_barotropic
from lpflow.verifier import (
    Corpus,
    SmoothMap,
    apriori_stability,
    commutator_blocks,
    garding_lhs,
    vector_corpus,
    verify_apriori_hyperbolic,
    verify_apriori_parabolic,
    verify_commutator,
    verify_composition,
    verify_garding,
    verify_product_law,
)

from conftest import make_band_limited, single_mode


@pytest.fixture(scope="module")
def corpus():
    return Corpus.generate(GridSpec(d=1, N=64), members_per_family=8)


@pytest.fixture(scope="module")
def corpus2d():
    return Corpus.generate(GridSpec(d=2, N=32), members_per_family=6)


class TestCorpus:
    def test_guard_band_membership(self, corpus):
        for f in corpus.fields:
            assert guard_band_fraction(f) <= 1e-18

    def test_deterministic(self):
        g = GridSpec(d=1, N=64)
        a = Corpus.generate(g, seed=5, members_per_family=4)
        b = Corpus.generate(g, seed=5, members_per_family=4)
        for fa, fb in zip(a.fields, b.fields):
            assert np.array_equal(fa.values, fb.values)

    def test_refine_preserves_functions(self, corpus):
        fine = corpus.refine()
        assert fine.grid.N == 2 * corpus.grid.N
        for f, g in zip(corpus.fields[:5], fine.fields[:5]):
            assert np.abs(g.values[:, ::2] - f.values).max() <= 1e-12


class TestProductLaw:
    def test_identityish_multiplier(self, corpus):
        # b = 0 gives zero LHS without violations
        rep = verify_product_law(corpus, s=0.5, pair_count=30)
        assert not rep.violations

    def test_scale_invariance_of_ratios(self, corpus):
        # bilinear: rescaling all fields leaves every ratio unchanged
        rep1 = verify_product_law(corpus, s=0.5, pair_count=20)
        scaled = Corpus(corpus.grid, [3.7 * f for f in corpus.fields], corpus.seed)
        rep2 = verify_product_law(scaled, s=0.5, pair_count=20)
        for f1, f2 in zip(rep1.forms, rep2.forms):
            assert np.allclose(f1.ratios, f2.ratios, rtol=1e-10)

    def test_resolution_stability(self, corpus):
        rep = verify_product_law(corpus, s=0.5, pair_count=40, refined=corpus.refine())
        assert rep.passed, rep.to_json()
        for form in rep.forms:
            assert form.stable

    def test_range_rejected(self, corpus):
        with pytest.raises(ValueError):
            verify_product_law(corpus, s=3.0)


class TestCommutator:
    def test_constant_a_commutes(self, grid1d):
        a = Field(grid1d, np.full((1,) + grid1d.shape, 1.3))
        b = make_band_limited(grid1d, seed=77)
        js, comm = commutator_blocks(a, b)
        assert comm.max() <= 1e-13

    def test_separated_modes_block_support(self, grid1d):
        # a low (|k|=1), b high (|k|=12, annulus 3): the commutator lives in
        # the high block's neighborhood only
        a = single_mode(grid1d, [1])
        b = single_mode(grid1d, [12])
        js, comm = commutator_blocks(a, b)
        live = {int(j) for j, c in zip(js, comm) if c > 1e-12}
        assert live and live <= {2, 3, 4}

    def test_corpus_sweep_stable(self, corpus):
        rep = verify_commutator(corpus, sigma=1.0, pair_count=30,
                                refined=corpus.refine())
        assert rep.passed, rep.to_json()
        assert rep.params["cj_sum"] == pytest.approx(1.0, rel=1e-9)


class TestComposition:
    def test_identity_map_ratio_one(self, corpus):
        ident = SmoothMap(lambda x: x, lambda amp: 1.0, "identity")
        rep = verify_composition(corpus, ident, s=0.5, pair_count=10)
        base = next(f for f in rep.forms if f.label == "base")
        assert np.allclose(base.ratios, 1.0, atol=1e-9)

    def test_quadratic_scales_linearly_in_amplitude(self, corpus):
        # f(u) = u^2: the base ratio against C(f') ||u|| scales ~ amplitude
        square = SmoothMap(lambda x: x**2, lambda amp: 2.0 * amp, "square")
        rep_hi = verify_composition(corpus, square, s=0.5, pair_count=5)
        small = Corpus(corpus.grid, [0.1 * f for f in corpus.fields], corpus.seed)
        rep_lo = verify_composition(small, square, s=0.5, pair_count=5)
        hi = next(f for f in rep_hi.forms if f.label == "base").fitted_C
        lo = next(f for f in rep_lo.forms if f.label == "base").fitted_C
        assert lo == pytest.approx(hi, rel=1e-6)  # bound already carries ||u||_inf

    def test_difference_form_zero_on_equal_pair(self, corpus):
        square = SmoothMap(lambda x: x**2, lambda amp: 2.0 * amp, "square")
        u = corpus.fields[0]
        pair_corpus = Corpus(corpus.grid, [u, u], corpus.seed)
        rep = verify_composition(pair_corpus, square, s=0.5, pair_count=6)
        diff = next(f for f in rep.forms if f.label == "difference")
        assert not diff.violations
        assert diff.fitted_C <= 1e-12

    def test_f0_nonzero_rejected(self):
        with pytest.raises(ValueError):
            SmoothMap(lambda x: x + 1.0, lambda amp: 1.0, "affine")


class TestGarding:
    def test_constant_coefficient_single_mode_exact(self):
        # Fourier case: LHS equals the symbol quadratic form exactly
        spec = gamma_law_barotropic(gamma=2.0, d=2)
        g = GridSpec(d=2, N=32, n=3)
        U = Field(g, spec.U_bar[:, None, None] * np.ones((3,) + g.shape))
        gf = g.with_components(2)
        k0 = [3.0, 0.0]
        f = Field(gf, np.stack([
            single_mode(gf.with_components(1), k0).values[0],
            np.zeros(g.shape),
        ]))
        lhs = garding_lhs(spec, U, f)
        # velocity component along e1: longitudinal -> nu |k|^2 ||f||^2
        nu = 2.0 * 1.0 + 0.0
        expected = nu * 9.0 * f.l2_norm() ** 2
        assert lhs == pytest.approx(expected, rel=1e-10)
        assert lhs >= 1.0 * 9.0 * f.l2_norm() ** 2  # >= c1 |k|^2 ||f||^2

    def test_zero_function(self):
        spec = gamma_law_barotropic(gamma=2.0, d=1)
        g = GridSpec(d=1, N=32, n=2)
        U = Field(g, spec.U_bar[:, None] * np.ones((2,) + g.shape))
        f = Field.zeros(g.with_components(1))
        assert garding_lhs(spec, U, f) == 0.0

    def test_variable_coefficients_fit_finite_and_stable(self, corpus2d):
        spec = gamma_law_barotropic(gamma=2.0, d=2)
        g = corpus2d.grid.with_components(3)
        U = Field(g, spec.U_bar[:, None, None]
                  + 0.2 * smooth_system_data(g, 3, amplitude=0.2, seed=31).values)
        fs = vector_corpus(corpus2d, spec.n2, count=10)
        fine_corpus = corpus2d.refine()
        from lpflow.grid import refine_field

        rep = verify_garding(
            spec, U, fs, epsilon=0.5,
            refined=(refine_field(U), [refine_field(f) for f in fs]),
        )
        assert rep.passed
        assert np.isfinite(rep.params["C_fit"])
        assert rep.params["C_stable"], rep.params

    def test_larger_epsilon_needs_smaller_C(self, corpus2d):
        spec = gamma_law_barotropic(gamma=2.0, d=2)
        g = corpus2d.grid.with_components(3)
        U = Field(g, spec.U_bar[:, None, None]
                  + 0.2 * smooth_system_data(g, 3, amplitude=0.2, seed=31).values)
        fs = vector_corpus(corpus2d, spec.n2, count=10)
        c_small = verify_garding(spec, U, fs, epsilon=0.1).params["C_fit"]
        c_large = verify_garding(spec, U, fs, epsilon=2.0).params["C_fit"]
        assert c_large <= c_small + 1e-12


@pytest.fixture(scope="module")
def converged_run():
    spec = gamma_law_barotropic(gamma=2.0, d=1)
    g = GridSpec(d=1, N=64, n=2)
    V0 = smooth_system_data(g, 2, amplitude=0.01, seed=3)
    cfg = IterationConfig(s=1.0, eta=0.25, dt=1e-3, p_max=6)
    return iterate_subcritical(spec, V0, cfg)


class TestAprioriEstimates:
    def test_hyperbolic_holds_along_run(self, converged_run):
        rep = verify_apriori_hyperbolic(converged_run)
        assert rep.passed, rep.to_json()
        assert rep.fitted["C0"] >= 1.0 - 1e-9

    def test_parabolic_holds_along_run(self, converged_run):
        rep = verify_apriori_parabolic(converged_run)
        assert rep.passed, rep.to_json()

    def test_constants_stable_under_dt_refinement(self, converged_run):
        spec = gamma_law_barotropic(gamma=2.0, d=1)
        cfg = converged_run.config
        fine_cfg = IterationConfig(**{**cfg.__dict__, "dt": cfg.dt / 2.0,
                                      "T": converged_run.T})
        fine_run = iterate_subcritical(spec, converged_run.traj.fields[0], fine_cfg)
        for verify in (verify_apriori_hyperbolic, verify_apriori_parabolic):
            drift = apriori_stability(verify(converged_run), verify(fine_run))
            assert max(drift.values()) <= 0.25, (verify.__name__, drift)

    def test_missing_source_record_rejected(self, converged_run):
        import dataclasses

        broken = dataclasses.replace(converged_run, theta1=None)
        with pytest.raises(ValueError):
            verify_apriori_hyperbolic(broken)

    def test_zero_run_trivial(self):
        spec = gamma_law_barotropic(gamma=2.0, d=1)
        g = GridSpec(d=1, N=32, n=2)
        run = iterate_subcritical(spec, Field.zeros(g),
                                  IterationConfig(s=1.0, eta=0.25, dt=1e-3, p_max=2))
        rep = verify_apriori_hyperbolic(run)
        assert rep.passed


class TestGardingNSF:
    def test_nsf_variable_state_fit_finite(self):
        from lpflow.systems import assemble_nsf
        from lpflow.data import smooth_system_data
        from lpflow.verifier import Corpus, vector_corpus, verify_garding

        spec = assemble_nsf({"R": 1.0, "c_v": 1.0}, {"mu": 1.0, "lam": 0.0, "k": 1.0}, d=2)
        corpus = Corpus.generate(GridSpec(d=2, N=32), members_per_family=4)
        g = corpus.grid.with_components(spec.n)
        import numpy as np

        U = Field(g, spec.U_bar[:, None, None]
                  + smooth_system_data(g, spec.n, 0.2, seed=41).values)
        fs = vector_corpus(corpus, spec.n2, count=8)
        rep = verify_garding(spec, U, fs, epsilon=0.5)
        assert rep.passed
        assert np.isfinite(rep.params["C_fit"]) and rep.params["c"] > 0
