"""
Time-of-flight fibre spectrograph.

A dispersive fibre spool turns wavelength into arrival delay after the laser
tag, to first order ``tau = tau_ref + D (lambda - lambda_ref)`` with the total
dispersion ``D`` in ps/nm. This module maps delays back to wavelengths,
accumulates the joint spectrum of heralded pairs from a tag stream, and
provides the simulator hook that gives every generated pair a wavelength
drawn from a model joint spectrum.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .coincidence import PulseCounter, _chunks_of, _probe, estimate_delays
from .errors import ConfigError, NoCoincidences, NoLaserChannel, UnnormalizedGrid
from .jsa import JsaGrid, blur_jsi
from .tagstream import CH_HERALD, CH_LASER, CH_OUT1, CH_OUT2, RECORD_DTYPE

JITTER_RESOLUTION_TOLERANCE = 0.25


@dataclass(frozen=True)
class SpectrographCalibration:
    dispersion_ps_per_nm: float = 1250.0
    reference_delay_ps: float = 50_000.0
    reference_wavelength_nm: float = 1540.0
    resolution_nm: float = 0.2

    def __post_init__(self):
        if self.dispersion_ps_per_nm == 0 or not math.isfinite(self.dispersion_ps_per_nm):
            raise ValueError("dispersion must be finite and non-zero")
        if not self.resolution_nm > 0:
            raise ValueError("resolution must be > 0")

    def jitter_resolution_nm(self, jitter_fwhm_ps: float) -> float:
        """Spectral blur (FWHM, nm) produced by a given timing jitter."""
        return jitter_fwhm_ps / abs(self.dispersion_ps_per_nm)

    def check_jitter(self, jitter_fwhm_ps: float) -> None:
        """Require the detector jitter to reproduce the stated resolution (within 25 %)."""
        implied = self.jitter_resolution_nm(jitter_fwhm_ps)
        if abs(implied / self.resolution_nm - 1.0) > JITTER_RESOLUTION_TOLERANCE:
            raise ConfigError(
                f"{jitter_fwhm_ps:g} ps jitter at {self.dispersion_ps_per_nm:g} ps/nm gives "
                f"{implied:.3g} nm resolution, inconsistent with resolution_nm = {self.resolution_nm:g}",
                field="resolution_nm",
            )


def default_calibrations(idler_center_nm: float = 1536.0052) -> tuple[SpectrographCalibration, SpectrographCalibration]:
    """(signal, idler) calibrations centred on the default pair wavelengths."""
    return SpectrographCalibration(), SpectrographCalibration(reference_wavelength_nm=idler_center_nm)


def time_to_wavelength(cal: SpectrographCalibration, delay_ps):
    return cal.reference_wavelength_nm + (np.asarray(delay_ps, dtype=float) - cal.reference_delay_ps) / cal.dispersion_ps_per_nm


def wavelength_to_time(cal: SpectrographCalibration, wavelength_nm):
    return cal.reference_delay_ps + (np.asarray(wavelength_nm, dtype=float) - cal.reference_wavelength_nm) * cal.dispersion_ps_per_nm


# ---------------------------------------------------------------------------
# simulator hook
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectralSampling:
    """Per-pair wavelengths drawn by inverse transform from a normalised JSI."""

    jsi: JsaGrid
    cal_signal: SpectrographCalibration
    cal_idler: SpectrographCalibration
    _cdf: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cdf = np.cumsum(self.jsi.values.ravel())
        object.__setattr__(self, "_cdf", cdf / cdf[-1])

    def wavelengths_from_uniform(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        flat = np.minimum(np.searchsorted(self._cdf, u, side="right"), self._cdf.size - 1)
        i, j = np.divmod(flat, self.jsi.shape[1])
        return self.jsi.signal_axis[i], self.jsi.idler_axis[j]

    def cal_for(self, channel: int) -> SpectrographCalibration:
        return self.cal_idler if channel == CH_HERALD else self.cal_signal

    def delay_ps(self, channel: int, wavelength_nm: np.ndarray) -> np.ndarray:
        return wavelength_to_time(self.cal_for(channel), wavelength_nm)

    def max_delay_spread_ps(self, channel: int) -> float:
        axis = self.jsi.idler_axis if channel == CH_HERALD else self.jsi.signal_axis
        cal = self.cal_for(channel)
        return float(np.max(np.abs(wavelength_to_time(cal, axis[[0, -1]]) - cal.reference_delay_ps)))


def spectral_sampling_mode(config, jsi: JsaGrid, cal_signal=None, cal_idler=None, check_jitter: bool = True):
    """Copy of ``config`` whose pairs carry wavelengths drawn from ``jsi``.

    Detector delays are moved to the calibrations' reference delays, so the
    arrival time of each photon becomes the spectrograph delay of its
    wavelength (plus detector jitter).
    """
    if jsi.kind != "intensity":
        raise UnnormalizedGrid("spectral sampling needs an intensity grid")
    total = float(np.sum(jsi.values))
    if np.any(jsi.values < 0) or abs(total - 1.0) > 1e-6:
        raise UnnormalizedGrid(f"intensity grid must be non-negative and sum to 1 (sum = {total:.6g})")
    default_s, default_i = default_calibrations(float(jsi.idler_axis[np.argmax(jsi.values.sum(axis=0))]))
    cal_signal = cal_signal or default_s
    cal_idler = cal_idler or default_i
    dets = dict(config.detectors)
    for c in (CH_HERALD, CH_OUT1, CH_OUT2):
        cal = cal_idler if c == CH_HERALD else cal_signal
        d = dets[c]
        if check_jitter and d.jitter_fwhm_ps > 0:
            cal.check_jitter(d.jitter_fwhm_ps)
        dets[c] = replace(d, delay_ns=cal.reference_delay_ps / 1e3)
    return config.with_(detectors=dets, spectral=SpectralSampling(jsi, cal_signal, cal_idler))


def sample_wavelength_pairs(jsi: JsaGrid, n: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``n`` (signal, idler) wavelength pairs from a JSI (bin centres)."""
    from . import rng

    u = rng.uniform(rng.stream_key(seed, rng.SPECTRUM), np.arange(n, dtype=np.uint64))
    return SpectralSampling(jsi, *default_calibrations()).wavelengths_from_uniform(u)


# ---------------------------------------------------------------------------
# reconstruction
# ---------------------------------------------------------------------------

def _edges(bins, rng_nm, center: float, half: float) -> np.ndarray:
    lo, hi = rng_nm if rng_nm is not None else (center - half, center + half)
    return np.linspace(lo, hi, int(bins) + 1)


def heralded_pair_delays(stream, window_ns: float = 2.5, delays_ns: dict | None = None):
    """Delays after the laser tag (ps) of herald and signal photons of every heralded pair.

    Returns (tau_idler, tau_signal) arrays, one entry per (herald, signal)
    coincidence in the same pulse; both output ports count as signal.
    """
    chunks, period = _chunks_of(stream)
    window_ps = window_ns * 1e3
    buf, all_chunks = _probe(chunks)
    head = np.concatenate(buf) if buf else np.empty(0, dtype=RECORD_DTYPE)
    if not np.any(head["channel"] == CH_LASER):
        raise NoLaserChannel("the spectrograph needs laser tags as the time reference")
    if delays_ns is None:
        delays_ps = estimate_delays(head, window_ps, period)
    else:
        delays_ps = {int(c): float(v) * 1e3 for c, v in delays_ns.items()}

    held = {"c": [], "p": [], "o": []}
    out_i, out_s = [], []

    def sink(c, p, o):
        held["c"].append(np.asarray(c))
        held["p"].append(np.asarray(p))
        held["o"].append(np.asarray(o, dtype=float))

    def flush(limit):
        if not held["p"]:
            return
        c, p, o = (np.concatenate(held[k]) for k in ("c", "p", "o"))
        done = p < limit
        h = done & (c == CH_HERALD)
        s = done & (c != CH_HERALD)
        ph, oh = p[h], o[h]
        order = np.argsort(ph, kind="stable")
        ph, oh = ph[order], oh[order]
        ps, os_ = p[s], o[s]
        k = np.searchsorted(ph, ps)
        hit = (k < ph.size) & (ph[np.minimum(k, ph.size - 1)] == ps)
        out_i.append(oh[k[hit]])
        out_s.append(os_[hit])
        held["c"], held["p"], held["o"] = [c[~done]], [p[~done]], [o[~done]]

    counter = PulseCounter(delays_ps, window_ps, n_side=0, sink=sink)
    for chunk in all_chunks:
        counter.push(chunk)
        flush(counter.open0)
    counter.finish()
    flush(np.iinfo(np.int64).max)
    if not out_i:
        return np.zeros(0), np.zeros(0)
    return np.concatenate(out_i), np.concatenate(out_s)


def build_jsi_histogram(
    stream,
    cal_s: SpectrographCalibration,
    cal_i: SpectrographCalibration,
    bins=64,
    signal_range_nm=None,
    idler_range_nm=None,
    window_ns: float = 2.5,
    delays_ns: dict | None = None,
    blur: bool = False,
) -> JsaGrid:
    """Measured joint spectral intensity of heralded pairs.

    Delays of coincident herald/signal tags are mapped to wavelengths and
    histogrammed on uniform axes (default: +-1 nm around each reference
    wavelength). With ``blur=True`` the histogram is additionally convolved
    with the spectrograph resolution, as when comparing a model JSI to a
    measurement.
    """
    tau_i, tau_s = heralded_pair_delays(stream, window_ns, delays_ns)
    if tau_i.size == 0:
        raise NoCoincidences("no heralded coincidences in the stream")
    ls = time_to_wavelength(cal_s, tau_s)
    li = time_to_wavelength(cal_i, tau_i)
    nb_s, nb_i = (bins, bins) if np.isscalar(bins) else bins
    es = _edges(nb_s, signal_range_nm, cal_s.reference_wavelength_nm, 1.0)
    ei = _edges(nb_i, idler_range_nm, cal_i.reference_wavelength_nm, 1.0)
    h, _, _ = np.histogram2d(ls, li, bins=(es, ei))
    if h.sum() == 0:
        raise NoCoincidences("no coincidences fall inside the wavelength ranges")
    grid = JsaGrid(0.5 * (es[1:] + es[:-1]), 0.5 * (ei[1:] + ei[:-1]), h, "intensity")
    if blur:
        grid = blur_jsi(grid, cal_s.resolution_nm)
    return grid


def total_variation(a: JsaGrid, b: JsaGrid) -> float:
    """Half the L1 distance between two intensity grids on the same axes."""
    if a.shape != b.shape:
        raise ValueError("grids differ in shape")
    return 0.5 * float(np.abs(a.values - b.values).sum())


def rebin_jsi(jsi: JsaGrid, signal_edges: np.ndarray, idler_edges: np.ndarray) -> JsaGrid:
    """Integrate a fine intensity grid into coarser bins (by bin-centre assignment)."""
    ii = np.digitize(jsi.signal_axis, signal_edges) - 1
    jj = np.digitize(jsi.idler_axis, idler_edges) - 1
    ns, ni = len(signal_edges) - 1, len(idler_edges) - 1
    out = np.zeros((ns, ni))
    ms, mi = (ii >= 0) & (ii < ns), (jj >= 0) & (jj < ni)
    sub = jsi.values[np.ix_(ms, mi)]
    np.add.at(out, (ii[ms][:, None], jj[mi][None, :]), sub)
    return JsaGrid(0.5 * (signal_edges[1:] + signal_edges[:-1]), 0.5 * (idler_edges[1:] + idler_edges[:-1]), out, "intensity")

