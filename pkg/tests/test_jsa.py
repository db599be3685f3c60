import math

import numpy as np
import pytest

from heraldsim.errors import DegenerateGrid, GridSpanTooSmall, GridTooCoarse, NegativeIntensity, WrongKind
from heraldsim.jsa import (
    FWHM_PER_SIGMA,
    GridSpec,
    JsaGrid,
    PhaseMatchConfig,
    PumpConfig,
    blur_jsi,
    compute_jsa,
    double_gaussian_schmidt_number,
    energy_conserving_partner,
    fwhm,
    jsi_from_jsa,
    marginal_spectrum,
    model_from_jsa,
    phase_match_from_pump,
    ratio_for_schmidt,
    read_jsi_text,
    schmidt_decompose,
    schmidt_lower_bound,
    schmidt_number_converged,
    write_jsi_text,
)

PUMP = PumpConfig()
PM = phase_match_from_pump(PUMP)


def pm_with_ratio(ratio, diff=0.15):
    return PhaseMatchConfig(1540.0, energy_conserving_partner(769.0, 1540.0), ratio * diff, diff)


def test_energy_conservation():
    idler = energy_conserving_partner(769.0, 1540.0)
    assert np.isclose(1 / 769.0, 1 / 1540.0 + 1 / idler)
    assert np.isclose(idler, 1536.0052, atol=1e-4)


@pytest.mark.parametrize("k", [1.0, 1.2, 2.0, 4.5])
def test_ratio_schmidt_inverse(k):
    assert np.isclose(double_gaussian_schmidt_number(ratio_for_schmidt(k)), k)


def test_default_pump_ratio():
    assert np.isclose(PM.width_ratio, 1.8633, atol=1e-4)


@pytest.mark.parametrize("ratio", [1.0, 1.8633249580710798, 3.0, 0.5])
def test_svd_matches_closed_form(ratio):
    grid = compute_jsa(PUMP, pm_with_ratio(ratio), GridSpec(320, 320, half_span_sigma=5.0))
    _, k = schmidt_decompose(grid)
    assert np.isclose(k, double_gaussian_schmidt_number(ratio), rtol=1e-4)


def test_default_source_k_and_fwhm():
    jsa = compute_jsa(PUMP, PM, GridSpec(256, 256))
    s, k = schmidt_decompose(jsa)
    assert np.isclose(k, 1.2, atol=1e-4)
    assert np.isclose(np.sum(s ** 2), 1.0)
    assert np.all(np.diff(s) <= 0)
    jsi = jsi_from_jsa(jsa)
    assert np.isclose(marginal_spectrum(jsi, "signal")[2], 0.48, atol=2e-3)
    assert np.isclose(marginal_spectrum(jsi, "idler")[2], 0.48, atol=5e-3)


def test_normalisations():
    jsa = compute_jsa(PUMP, PM, GridSpec(256, 256))
    assert np.isclose(np.sum(jsa.values ** 2), 1.0)
    assert np.isclose(np.sum(jsi_from_jsa(jsa).values), 1.0)
    with pytest.raises(ValueError):
        jsa.values[0, 0] = 1.0


def test_convergence_check():
    k, delta, ok = schmidt_number_converged(PUMP, PM, GridSpec(256, 256))
    assert ok and delta < 1e-6
    assert np.isclose(k, 1.2, atol=1e-4)


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        compute_jsa(PUMP, PM, GridSpec(64, 64))


def test_grid_span_too_small():
    with pytest.raises(GridSpanTooSmall):
        compute_jsa(PUMP, PM, GridSpec(512, 512, signal_range_nm=(1539.8, 1540.2)))


def test_energy_violating_idler_rejected():
    bad = PhaseMatchConfig(1540.0, 1530.0, PM.sum_freq_sigma, PM.diff_freq_sigma)
    with pytest.raises(ValueError):
        compute_jsa(PUMP, bad, GridSpec(256, 256))


def test_wrong_kind():
    jsa = compute_jsa(PUMP, PM, GridSpec(256, 256))
    jsi = jsi_from_jsa(jsa)
    with pytest.raises(WrongKind):
        schmidt_decompose(jsi)
    with pytest.raises(WrongKind):
        schmidt_lower_bound(jsa)
    with pytest.raises(WrongKind):
        jsi_from_jsa(jsi)


def test_degenerate_and_negative():
    ax = np.linspace(0, 1, 4)
    with pytest.raises(DegenerateGrid):
        schmidt_decompose(JsaGrid(ax, ax, np.zeros((4, 4))))
    v = np.ones((4, 4))
    v[0, 0] = -1
    with pytest.raises(NegativeIntensity):
        schmidt_lower_bound(JsaGrid(ax, ax, v, "intensity", normalize=False))


def test_lower_bound_tight_and_blur_lowers_it():
    jsi = jsi_from_jsa(compute_jsa(PUMP, PM, GridSpec(256, 256)))
    k0 = schmidt_lower_bound(jsi)
    assert np.isclose(k0, 1.2, atol=1e-4)
    k_blur = schmidt_lower_bound(blur_jsi(jsi, 0.2))
    assert 1.05 < k_blur < k0


def test_product_state_has_unit_k():
    ax = np.linspace(-3, 3, 101)
    f = np.exp(-ax ** 2)
    _, k = schmidt_decompose(JsaGrid(ax, ax, np.outer(f, np.cos(ax) ** 2)))
    assert np.isclose(k, 1.0)


def test_fwhm_of_gaussian_and_edge_cases():
    x = np.linspace(-10, 10, 4001)
    assert np.isclose(fwhm(x, np.exp(-x ** 2 / 2)), FWHM_PER_SIGMA, rtol=1e-5)
    assert fwhm(x, np.zeros_like(x)) == 0.0
    assert fwhm(x[:1], np.ones(1)) == 0.0


def test_model_from_jsa():
    jsa = compute_jsa(PUMP, PM, GridSpec(256, 256))
    m = model_from_jsa(jsa, 0.023)
    assert np.isclose(m.mean_n, 0.023)
    assert np.isclose(m.schmidt_k, 1.2, atol=1e-4)


def test_text_roundtrip(tmp_path):
    jsi = jsi_from_jsa(compute_jsa(PUMP, PM, GridSpec(256, 256)))
    p = tmp_path / "jsi.txt"
    write_jsi_text(jsi, p)
    back = read_jsi_text(p)
    assert back.kind == "intensity" and back.shape == jsi.shape
    assert np.allclose(back.values, jsi.values, rtol=1e-9)
    assert np.allclose(back.signal_axis, jsi.signal_axis, atol=1e-8)
    assert math.isclose(schmidt_lower_bound(back), schmidt_lower_bound(jsi), rel_tol=1e-7)


def test_malformed_text(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("1 2\n3 4\n")
    with pytest.raises(ValueError):
        read_jsi_text(p)
