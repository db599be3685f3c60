import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heraldsim.errors import AllModesEmpty, InvalidSchmidtNumber, NonpositivePower, ZeroHeraldEfficiency, ZeroMeanPhoton
from heraldsim.squeezed_state import (
    SqueezedSourceModel,
    TruncationWarning,
    analytic_prediction,
    click_probabilities,
    effective_schmidt_number,
    expected_estimators,
    g2_auto_analytic,
    g2_cross_analytic,
    g2_heralded_analytic,
    g2_heralded_from_unheralded,
    mean_from_squeezing,
    mean_photon_from_g2_cross,
    mean_photon_number,
    pair_number_pgf,
    pair_probabilities,
    power_sweep,
    squeezing_from_mean,
)


def total_pair_distribution(mode_means, n_max=60):
    """P(N) of the total pair number by convolving per-mode thermal laws (truncated)."""
    dist = np.zeros(n_max + 1)
    dist[0] = 1.0
    n = np.arange(n_max + 1)
    for mu in mode_means:
        lam2 = mu / (1.0 + mu)
        thermal = (1.0 - lam2) * lam2 ** n
        dist = np.convolve(dist, thermal)[: n_max + 1]
    return dist


def brute_clicks(mode_means, eta_h, eta_1, eta_2, r):
    """Click probabilities by summing over the truncated pair-number distribution."""
    p = total_pair_distribution(mode_means)
    n = np.arange(p.size)
    a_h, a_1, a_2 = 1 - eta_h, 1 - r * eta_1, 1 - (1 - r) * eta_2
    a_12 = 1 - r * eta_1 - (1 - r) * eta_2

    def silent(x):
        return float(np.sum(p * x ** n))

    q = {"h": silent(a_h), "1": silent(a_1), "2": silent(a_2), "1h": silent(a_1 * a_h),
         "2h": silent(a_2 * a_h), "12": silent(a_12), "12h": silent(a_12 * a_h)}
    return {
        "h": 1 - q["h"], "1": 1 - q["1"], "2": 1 - q["2"],
        "1h": 1 - q["1"] - q["h"] + q["1h"],
        "2h": 1 - q["2"] - q["h"] + q["2h"],
        "12": 1 - q["1"] - q["2"] + q["12"],
        "12h": 1 - q["1"] - q["2"] - q["h"] + q["12"] + q["1h"] + q["2h"] - q["12h"],
    }


# --- model construction -------------------------------------------------------

@pytest.mark.parametrize("n,k", [(0.023, 1.0), (0.023, 1.4), (0.01, 1.714), (0.5, 3.0), (0.05, 7.3)])
def test_from_schmidt_hits_targets(n, k):
    m = SqueezedSourceModel.from_schmidt(n, k)
    assert np.isclose(m.mean_n, n, rtol=1e-12)
    assert np.isclose(m.schmidt_k, k, rtol=1e-12)
    assert len(m.mode_means) == math.ceil(k - 1e-12)


def test_effective_schmidt_two_unequal_modes():
    assert np.isclose(effective_schmidt_number(SqueezedSourceModel((0.03, 0.01))), 1.6)


def test_all_modes_empty():
    with pytest.raises(AllModesEmpty):
        effective_schmidt_number(SqueezedSourceModel((0.0, 0.0)))


def test_negative_mode_mean_rejected():
    with pytest.raises(ValueError):
        SqueezedSourceModel((0.1, -0.01))


def test_invalid_schmidt():
    with pytest.raises(InvalidSchmidtNumber):
        SqueezedSourceModel.from_schmidt(0.02, 0.5)


def test_scaled_keeps_shape():
    m = SqueezedSourceModel.from_schmidt(0.023, 1.4)
    s = m.scaled(2.5)
    assert np.isclose(s.mean_n, 2.5 * 0.023)
    assert np.isclose(s.schmidt_k, 1.4, rtol=1e-13)


# --- closed forms -------------------------------------------------------------

def test_squeezing_from_mean_example():
    assert np.isclose(squeezing_from_mean(0.023, 1.4), 0.0161630, rtol=1e-5)


@pytest.mark.parametrize("n,k", [(0.023, 1.4), (0.3, 1.0), (2.0, 5.0)])
def test_squeezing_roundtrip(n, k):
    assert np.isclose(mean_from_squeezing(squeezing_from_mean(n, k), k), n, rtol=1e-12)


def test_pair_probabilities_example():
    p1, p2 = pair_probabilities(0.0162, 1.4)
    assert np.isclose(p1, 0.02268, rtol=1e-10)
    assert np.isclose(p2, 4.4089e-4, rtol=1e-4)


def test_pair_probabilities_match_thermal_enumeration():
    # K equal modes: P(N=1) ~ K lam2, P(N=2) ~ K(K+1)/2 lam2^2 to leading order
    k, lam2 = 3, 1e-4
    dist = total_pair_distribution([lam2 / (1 - lam2)] * k)
    p1, p2 = pair_probabilities(lam2, k)
    assert np.isclose(dist[1], p1, rtol=5e-4)
    assert np.isclose(dist[2], p2, rtol=1e-3)


def test_truncation_warning():
    with pytest.warns(TruncationWarning):
        pair_probabilities(0.2, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pair_probabilities(0.01, 1.4)


@pytest.mark.parametrize("k,expected", [(1.0, 2.0), (1.4, 1.7142857142857), (5.0, 1.2)])
def test_g2_auto(k, expected):
    assert np.isclose(g2_auto_analytic(k), expected)


def test_g2_cross_and_inverse():
    assert np.isclose(g2_cross_analytic(0.023), 1 + 1 / 0.023)
    assert np.isclose(mean_photon_from_g2_cross(101.0), 0.0099, rtol=1e-3)
    assert np.isclose(mean_photon_from_g2_cross(101.0, exact=True), 0.01)
    with pytest.raises(ZeroMeanPhoton):
        g2_cross_analytic(0.0)


def test_g2_heralded_limit_value():
    # vanishing herald efficiency, <n> = 0.023, K = 1.4
    lam2 = squeezing_from_mean(0.023, 1.4)
    assert np.isclose(g2_heralded_analytic(lam2, 1.4, None), 0.077583, atol=1e-6)


def test_g2_heralded_from_unheralded_example():
    assert np.isclose(g2_heralded_from_unheralded(0.023, 1.714), 0.078844, atol=1e-6)
    assert np.isclose(g2_heralded_from_unheralded(0.023, 1 + 1 / 1.4), 0.078857, atol=1e-6)


@pytest.mark.parametrize("k", [1.0, 1.4, 5.0])
def test_g2_heralded_unit_efficiency_is_half_limit(k):
    lam2 = squeezing_from_mean(0.023, k)
    assert np.isclose(g2_heralded_analytic(lam2, k, 1.0), 0.5 * g2_heralded_analytic(lam2, k, None))


def test_zero_herald_efficiency():
    with pytest.raises(ZeroHeraldEfficiency):
        g2_heralded_analytic(0.01, 1.4, 0.0)


def test_analytic_prediction_fields():
    p = analytic_prediction(SqueezedSourceModel.from_schmidt(0.023, 1.4), eta_h=0.03)
    assert np.isclose(p.g2_cross, 1 + 1 / 0.023)
    assert np.isclose(p.g2_auto, 1 + 1 / 1.4)
    assert np.isclose(p.g2_heralded_approx, 0.078857, atol=1e-6)
    assert p.small_n_regime


def test_power_sweep_constant_k_and_linear_mean():
    m = SqueezedSourceModel.from_schmidt(0.023, 1.4)
    preds = power_sweep(m, 60.0, [10, 20, 30, 40, 50, 60])
    ks = np.array([p.schmidt_k for p in preds])
    assert np.ptp(ks) < 1e-12
    assert np.allclose([p.mean_n for p in preds], 0.023 * np.arange(1, 7) / 6)
    assert np.isclose(preds[-1].g2_heralded_approx, 0.078857, atol=1e-6)
    with pytest.raises(NonpositivePower):
        power_sweep(m, 60.0, [10, 0])
    with pytest.raises(NonpositivePower):
        power_sweep(m, 0.0, [10])


# --- exact click statistics ---------------------------------------------------

def test_pgf_matches_enumeration():
    m = SqueezedSourceModel((0.05, 0.02, 0.01))
    dist = total_pair_distribution(m.mode_means)
    for z in (0.0, 0.3, 0.9):
        assert np.isclose(pair_number_pgf(m, z), np.sum(dist * z ** np.arange(dist.size)), rtol=1e-12)


@pytest.mark.parametrize("means,eta_h,eta_1,eta_2,r", [
    ((0.023,), 1.0, 0.8, 0.8, 0.495),
    ((0.0164, 0.0066), 0.03, 0.8, 0.7, 0.495),
    ((0.2, 0.1, 0.05), 0.5, 0.3, 0.9, 0.3),
])
def test_click_probabilities_match_enumeration(means, eta_h, eta_1, eta_2, r):
    m = SqueezedSourceModel(means)
    got = click_probabilities(m, eta_h, eta_1, eta_2, r)
    want = brute_clicks(means, eta_h, eta_1, eta_2, r)
    for key in want:
        assert np.isclose(got[key], want[key], rtol=1e-9, atol=1e-15), key


def test_expected_estimators_low_gain_limits():
    # photon-number statistics survive weak detection unchanged
    m = SqueezedSourceModel.from_schmidt(0.01, 1.4)
    e = expected_estimators(m, 1e-3, 1e-3, 1e-3, 0.5)
    # thermal multimode pairs: E[N^2] / <n>^2 = 1 + 1/<n> + 1/K
    assert np.isclose(e["g2_cross"], 1 + 1 / 0.01 + 1 / 1.4, rtol=1e-4)
    assert np.isclose(e["g2_auto"], 1 + 1 / 1.4, rtol=1e-4)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(1e-4, 0.5), min_size=1, max_size=4),
    st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.01, 1.0), st.floats(0.05, 0.95),
)
def test_click_probabilities_are_consistent(means, eta_h, eta_1, eta_2, r):
    p = click_probabilities(SqueezedSourceModel(tuple(means)), eta_h, eta_1, eta_2, r)
    assert all(-1e-12 <= v <= 1 + 1e-12 for v in p.values())
    assert p["12h"] <= min(p["1h"], p["2h"], p["12"]) + 1e-12
    assert p["1h"] <= min(p["1"], p["h"]) + 1e-12
