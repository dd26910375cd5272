"""Property-based checks of the norm and decomposition invariants."""

import math

import numpy as np
from hypothesis import given, settings, strategies as st

from lpflow.grid import HOMOGENEOUS, GridSpec
from lpflow.norms import BesovIndex, besov_norm

from conftest import make_band_limited, single_mode

GRID = GridSpec(d=1, N=64)

reg_exponents = st.floats(min_value=-2.0, max_value=2.5, allow_nan=False,
                          allow_infinity=False)
seeds = st.integers(min_value=0, max_value=10_000)


@settings(max_examples=25, deadline=None)
@given(s=reg_exponents, seed=seeds)
def test_ell_r_monotonicity_any_exponent(s, seed):
    u = make_band_limited(GRID, seed=seed)
    t_inf = besov_norm(u, BesovIndex(s, r=math.inf)).total
    t_2 = besov_norm(u, BesovIndex(s, r=2.0)).total
    t_1 = besov_norm(u, BesovIndex(s, r=1.0)).total
    assert t_inf <= t_2 * (1 + 1e-12)
    assert t_2 <= t_1 * (1 + 1e-12)


@settings(max_examples=25, deadline=None)
@given(s=reg_exponents, amplitude=st.floats(min_value=1e-3, max_value=1e3))
def test_one_annulus_shift_scales_by_2_to_s(s, amplitude):
    # equal-mass spectrum shift by one annulus multiplies the homogeneous
    # per-block weight by exactly 2^s
    lo = single_mode(GRID, [3], amplitude=amplitude)
    hi = single_mode(GRID, [6], amplitude=amplitude)
    n_lo = besov_norm(lo, BesovIndex(s, flavor=HOMOGENEOUS)).total
    n_hi = besov_norm(hi, BesovIndex(s, flavor=HOMOGENEOUS)).total
    assert n_hi == 2.0**s * n_lo or abs(n_hi - 2.0**s * n_lo) <= 1e-10 * n_hi


@settings(max_examples=25, deadline=None)
@given(seed=seeds, scale=st.floats(min_value=1e-6, max_value=1e6))
def test_norm_homogeneity_in_amplitude(seed, scale):
    u = make_band_limited(GRID, seed=seed)
    idx = BesovIndex(0.75)
    base = besov_norm(u, idx).total
    scaled = besov_norm(scale * u, idx).total
    assert scaled == (np.float64(scale) * base) or \
        abs(scaled - scale * base) <= 1e-10 * max(scaled, 1e-300)


@settings(max_examples=15, deadline=None)
@given(seed=seeds)
def test_triangle_inequality(seed):
    u = make_band_limited(GRID, seed=seed)
    v = make_band_limited(GRID, seed=seed + 1)
    idx = BesovIndex(1.0)
    assert besov_norm(u + v, idx).total <= \
        (besov_norm(u, idx).total + besov_norm(v, idx).total) * (1 + 1e-12)
