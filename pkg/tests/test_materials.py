import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tperiodic.materials import (
    MU0_INV,
    Material,
    flux_bounds,
    monotonicity_constants,
    nu,
    nu_prime,
    source_current,
    transformer_materials,
)

TABLE = transformer_materials()
NONLINEAR = ["iron", "steel"]


def test_air_reluctivity_is_vacuum_value():
    assert nu("air", 0.0) == pytest.approx(795774.715, rel=1e-9)
    assert nu("air", 7.3) == pytest.approx(1e7 / (4 * math.pi), rel=1e-15)


def test_iron_and_steel_values():
    assert nu("iron", 0.0) == pytest.approx(29.0, rel=1e-14)
    # 2.196 * 9 > log(136026): the cap is active
    assert 2.196 * 9 > math.log(136026)
    assert nu("iron", 3.0) == pytest.approx(795775.25, rel=1e-12)
    assert nu("steel", 0.0) == pytest.approx(173.913, rel=1e-14)


def test_unknown_region_rejected():
    with pytest.raises(KeyError, match="unknown region"):
        nu("copper", 1.0)


def test_nu_prime_trivial_cases():
    assert nu_prime("air", 1.0) == 0.0
    assert nu_prime("iron", 0.0) == 0.0
    assert nu_prime("iron", 2.5) == 0.0  # capped branch


def test_material_validation():
    with pytest.raises(ValueError):
        Material(sigma=-1.0, a=0, b=0, c=1, d=1)
    with pytest.raises(ValueError):
        Material(sigma=0.0, a=1, b=1, c=2, d=0)


@pytest.mark.parametrize("region", NONLINEAR)
def test_nu_prime_matches_central_differences(region):
    mat = TABLE[region]
    s = np.linspace(0.05, 3.0, 200)
    s = s[np.abs(s - mat.s_cap) > 1e-2]
    h = 1e-6
    fd = (mat.nu(s + h) - mat.nu(s - h)) / (2 * h)
    exact = mat.nu_prime(s)
    scale = np.maximum(np.abs(exact), 1e-300)
    mask = exact != 0
    np.testing.assert_array_less(np.abs(fd - exact)[mask] / scale[mask], 1e-6)
    np.testing.assert_allclose(fd[~mask], 0.0, atol=1e-3)


@settings(max_examples=200, deadline=None)
@given(region=st.sampled_from(sorted(TABLE)), s1=st.floats(0, 3), s2=st.floats(0, 3))
def test_reluctivity_properties(region, s1, s2):
    lo, hi = sorted((s1, s2))
    mat = TABLE[region]
    assert mat.nu(lo) >= mat.d > 0
    assert mat.nu(hi) >= mat.nu(lo)
    if hi > lo:
        assert mat.nu(hi) * hi > mat.nu(lo) * lo


def test_flux_bounds_air_is_constant():
    b = flux_bounds(TABLE)["air"]
    assert b.lam == b.Lam == pytest.approx(MU0_INV)


def test_flux_bounds_iron_at_cap_onset_against_sampling_oracle():
    s_max = 2.32
    b = flux_bounds(TABLE, s_max=s_max, samples=200)["iron"]
    # independent oracle: dense sampling of nu and the finite-difference slope of nu(s) s
    s = np.linspace(0.0, s_max, 10_001)
    g = TABLE["iron"].nu(s) * s
    slope = np.gradient(g, s)
    lam_o = min(TABLE["iron"].nu(s).min(), slope.min())
    Lam_o = max(TABLE["iron"].nu(s).max(), slope.max())
    assert b.Lam >= b.lam >= 29.0 - 1e-12
    assert b.lam == pytest.approx(lam_o, rel=1e-6)
    assert b.Lam == pytest.approx(Lam_o, rel=1e-2)


def test_flux_bounds_includes_cap_supremum():
    mat = TABLE["iron"]
    b = flux_bounds(TABLE, s_max=3.0, samples=11)["iron"]
    sc = mat.s_cap
    just_below = mat.flux_slope(sc * (1 - 1e-12))
    assert b.Lam >= just_below * (1 - 1e-9)


def test_flux_bounds_widen_monotonically():
    prev = None
    for s_max in (0.5, 1.0, 2.0, 3.0):
        cur = flux_bounds(TABLE, s_max=s_max, samples=500)
        if prev:
            for lab in cur:
                assert cur[lab].Lam >= prev[lab].Lam
                assert cur[lab].lam <= prev[lab].lam
        prev = cur


def test_monotonicity_constants():
    gamma, L = monotonicity_constants(flux_bounds(TABLE))
    assert gamma == pytest.approx(29.0)
    assert L > MU0_INV


def test_source_current():
    assert source_current("winding_plus", 0.0, 0.02) == pytest.approx(1.9e4)
    assert source_current("winding_minus", 0.0, 0.02) == pytest.approx(-1.9e4)
    assert source_current("winding_plus", 0.005, 0.02) == pytest.approx(0.0, abs=1e-10)
    assert source_current("iron", 0.003, 0.02) == 0.0
    with pytest.raises(ValueError):
        source_current("iron", 0.0, 0.0)


def test_overrides():
    t = TABLE.with_overrides({"steel": {"sigma": 0.0}})
    assert t["steel"].sigma == 0.0 and t["steel"].a == TABLE["steel"].a
    assert TABLE["steel"].sigma == 1e7
