import numpy as np
import pytest

from heraldsim.circuit import WaveguideCircuit, fp_transmission_spectrum
from heraldsim.errors import IoFailure
from heraldsim.jsa import GridSpec, PumpConfig, compute_jsa, jsi_from_jsa, phase_match_from_pump
from heraldsim.plots import emit_plot
from heraldsim.squeezed_state import SqueezedSourceModel, power_sweep

WL = np.linspace(1539, 1541, 801)


@pytest.fixture(scope="module")
def jsi():
    pump = PumpConfig()
    return jsi_from_jsa(compute_jsa(pump, phase_match_from_pump(pump), GridSpec(256, 256)))


def sweep_rows():
    return power_sweep(SqueezedSourceModel.from_schmidt(0.023, 1.4), 60.0, [10, 20, 30, 40, 50, 60], eta_h=1.0)


def spectra():
    c = WaveguideCircuit()
    return [fp_transmission_spectrum(c, 1, WL), fp_transmission_spectrum(c, 2, WL)]


@pytest.mark.parametrize("kind,make", [("spectrum", spectra), ("sweep", sweep_rows), ("heatmap", None)])
def test_output_is_deterministic(tmp_path, jsi, kind, make):
    data = jsi if make is None else make()
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    emit_plot(data, kind, a, title="x")
    emit_plot(data, kind, b, title="x")
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().lstrip().startswith("<?xml")


def test_heatmap_axis_labels_in_nm(tmp_path, jsi):
    p = tmp_path / "h.svg"
    emit_plot(jsi, "heatmap", p)
    text = p.read_text()
    assert "Signal wavelength (nm)" in text and "Idler wavelength (nm)" in text


def test_empty_spectrum_gives_bare_axes(tmp_path):
    p = tmp_path / "e.svg"
    emit_plot([], "spectrum", p)
    text = p.read_text()
    assert "Wavelength (nm)" in text
    assert "legend" not in text
    assert "line2d_1" not in text.split("xtick")[0]


def test_spectrum_accepts_mapping_and_tuples(tmp_path):
    emit_plot({"a": (WL, np.ones_like(WL))}, "spectrum", tmp_path / "m.svg")
    emit_plot([("b", WL, np.ones_like(WL))], "spectrum", tmp_path / "t.svg")
    assert "legend" in (tmp_path / "m.svg").read_text()


def test_sweep_curve_is_monotone_in_power(tmp_path):
    rows = sweep_rows()
    g = [r.g2_heralded for r in rows]
    assert np.all(np.diff(g) > 0)
    p = tmp_path / "s.svg"
    emit_plot({"power_mw": [r.power_mw for r in rows], "g2_heralded": g,
               "mc_power_mw": [60.0], "mc_g2_heralded": [0.04], "mc_sigma": [0.002]}, "sweep", p)
    assert "Pump power (mW)" in p.read_text()


def test_non_finite_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_plot([("bad", WL, np.full_like(WL, np.nan))], "spectrum", tmp_path / "n.svg")


def test_unknown_kind(tmp_path):
    with pytest.raises(ValueError):
        emit_plot([], "pie", tmp_path / "x.svg")


def test_unwritable_path(tmp_path):
    with pytest.raises(IoFailure):
        emit_plot([], "spectrum", tmp_path / "missing" / "x.svg")
