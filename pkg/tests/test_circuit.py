import math

import numpy as np
import pytest

from heraldsim.circuit import (
    NM_PER_CM,
    TransmissionSpectrum,
    WaveguideCircuit,
    airy_transmission,
    extract_loss_from_contrast,
    find_extrema,
    fp_transmission_spectrum,
    free_spectral_range,
    fringe_contrast,
    fringe_contrasts,
    fringe_period_samples,
    mmi_unitary,
    ra_from_contrast,
    read_spectrum,
    splitting_ratio_estimate,
    write_spectrum,
)
from heraldsim.errors import AxisMismatch, IoFailure, NoFringesDetected, ZeroTotalPower

WL = np.linspace(1535.0, 1545.0, 20001)


def multipass_transmission(wl, r, a, n_g, length_cm, n_trips=400):
    """Cavity transmission by summing the transmitted field of each round trip."""
    delta = 4 * np.pi * n_g * length_cm * NM_PER_CM / wl
    field = np.zeros_like(wl, dtype=complex)
    for m in range(n_trips):
        field += (1 - r) * math.sqrt(a) * (r * a) ** m * np.exp(1j * m * delta)
    return np.abs(field) ** 2


def test_airy_matches_multipass_sum():
    wl = np.linspace(1539.0, 1541.0, 3001)
    got = airy_transmission(wl, 0.27, math.exp(-1.3 * 0.3), 3.5, 0.3)
    want = multipass_transmission(wl, 0.27, math.exp(-1.3 * 0.3), 3.5, 0.3)
    assert np.allclose(got, want, rtol=1e-10)


def test_contrast_closed_form_vs_brute_extremes():
    a = math.exp(-1.3 * 0.3)
    phase = np.linspace(0, np.pi, 200001)
    ra = 0.27 * a
    t = (1 - 0.27) ** 2 * a / ((1 - ra) ** 2 + 4 * ra * np.sin(phase) ** 2)
    brute = (t.max() - t.min()) / (t.max() + t.min())
    assert np.isclose(fringe_contrast(0.27, 1.3, 0.3), brute, rtol=1e-9)
    assert np.isclose(brute, 0.353788, atol=1e-6)


@pytest.mark.parametrize("c", [0.05, 0.353788, 0.9])
def test_ra_from_contrast_inverts(c):
    ra = ra_from_contrast(c)
    assert np.isclose(2 * ra / (1 + ra * ra), c)


def test_free_spectral_range():
    assert np.isclose(free_spectral_range(1540.0, 3.5, 0.3), 1540.0 ** 2 / (2 * 3.5 * 0.3e7))
    fsr = free_spectral_range(1540.0, 3.5, 0.3)
    spec = fp_transmission_spectrum(WaveguideCircuit(), 1, WL)
    mi = find_extrema(spec.power)[0]
    measured = np.median(np.diff(WL[np.round(mi).astype(int)]))
    assert np.isclose(measured, fsr, rtol=0.01)


def test_fringe_period_samples():
    spec = fp_transmission_spectrum(WaveguideCircuit(), 1, WL)
    fsr = free_spectral_range(1540.0, 3.5, 0.3)
    assert np.isclose(fringe_period_samples(spec.power), fsr / (WL[1] - WL[0]), rtol=0.02)


@pytest.mark.parametrize("pol,alpha", [("TE", 0.9), ("TM", 1.3)])
@pytest.mark.parametrize("n_points", [2001, 20001])
def test_loss_recovery_noiseless(pol, alpha, n_points):
    wl = np.linspace(1535.0, 1545.0, n_points)
    spec = fp_transmission_spectrum(WaveguideCircuit(), 1, wl, pol)
    est = extract_loss_from_contrast(spec, 0.27, 0.3)
    assert np.isclose(est.alpha, alpha, rtol=1e-3)
    assert est.n_fringes >= 10


@pytest.mark.parametrize("pol,alpha", [("TE", 0.9), ("TM", 1.3)])
def test_loss_recovery_with_noise(pol, alpha):
    rng = np.random.default_rng(3)
    spec = fp_transmission_spectrum(WaveguideCircuit(), 1, WL, pol)
    noisy = TransmissionSpectrum(WL, spec.power * (1 + 0.003 * rng.standard_normal(WL.size)))
    est = extract_loss_from_contrast(noisy, 0.27, 0.3)
    assert abs(est.alpha - alpha) <= 0.02 * alpha


def test_fringe_contrast_tm_default():
    spec = fp_transmission_spectrum(WaveguideCircuit(), 1, WL, "TM")
    assert np.allclose(fringe_contrasts(spec), 0.353788, atol=1e-4)


def test_no_fringes():
    flat = TransmissionSpectrum(WL, np.ones_like(WL))
    with pytest.raises(NoFringesDetected):
        extract_loss_from_contrast(flat, 0.27, 0.3)


def test_splitting_ratio_in_phase_ports():
    c = WaveguideCircuit(splitter_phase=0.0)
    r, sigma = splitting_ratio_estimate(fp_transmission_spectrum(c, 1, WL), fp_transmission_spectrum(c, 2, WL))
    assert np.isclose(r, 0.495, atol=1e-9)
    assert sigma < 1e-9


def test_splitting_ratio_quadrature_ports_band_average():
    # out-of-phase fringes leave the average close to the ratio but spread it widely
    c = WaveguideCircuit()
    r, sigma = splitting_ratio_estimate(fp_transmission_spectrum(c, 1, WL), fp_transmission_spectrum(c, 2, WL))
    assert abs(r - 0.495) < 0.01
    assert sigma > 0.05


def test_axis_mismatch_and_zero_power():
    a = TransmissionSpectrum(WL, np.ones_like(WL))
    with pytest.raises(AxisMismatch):
        splitting_ratio_estimate(a, TransmissionSpectrum(WL + 0.1, np.ones_like(WL)))
    z = TransmissionSpectrum(WL, np.zeros_like(WL))
    with pytest.raises(ZeroTotalPower):
        splitting_ratio_estimate(z, z)


@pytest.mark.parametrize("ratio,phase", [(0.5, 0.0), (0.495, 1.1), (0.2, math.pi / 2)])
def test_mmi_unitary(ratio, phase):
    u = mmi_unitary(ratio, phase)
    assert np.allclose(u.conj().T @ u, np.eye(2))
    assert np.isclose(abs(u[0, 0]) ** 2, ratio)


def test_circuit_validation():
    with pytest.raises(ValueError):
        WaveguideCircuit(facet_reflectivity=1.0)
    with pytest.raises(ValueError):
        WaveguideCircuit(splitter_ratio=1.2)
    with pytest.raises(ValueError):
        TransmissionSpectrum([1, 2], [1, -1])


def test_spectrum_roundtrip(tmp_path):
    spec = fp_transmission_spectrum(WaveguideCircuit(), 2, WL[:500])
    p = tmp_path / "s.txt"
    write_spectrum(spec, p)
    back = read_spectrum(p)
    assert back.port == 2
    assert np.allclose(back.power, spec.power, rtol=1e-11)
    assert np.allclose(back.wavelengths, spec.wavelengths, atol=1e-9)


def test_read_csv_spectrum(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("# wl,p\n1540.0,0.5\n1540.1,0.25\n")
    s = read_spectrum(p)
    assert s.port == 1 and np.allclose(s.power, [0.5, 0.25])


def test_read_missing_spectrum(tmp_path):
    with pytest.raises(IoFailure):
        read_spectrum(tmp_path / "none.txt")
