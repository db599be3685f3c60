"""
Classical transmission model of the chip and the inverse problems of chip
characterisation: propagation loss from Fabry-Perot fringe
contrast, and the splitting ratio of the MMI coupler.

The waveguide between the two cleaved facets is an Airy cavity:

    T(l) = f (1 - R)^2 a / [(1 - R a)^2 + 4 R a sin^2(2 pi n_g L / l + phi)]

with single-pass power transmission a = exp(-alpha L), facet reflectivity
R and port fraction f (r for port 1, 1 - r for port 2). The fringe contrast
depends only on R a, which is what makes the loss measurement independent
of the coupling efficiencies.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import find_peaks

from .errors import AxisMismatch, ContrastOutOfRange, IoFailure, NoFringesDetected, ZeroTotalPower

NM_PER_CM = 1e7
MIN_FRINGE_PAIRS = 3


@dataclass(frozen=True)
class WaveguideCircuit:
    device_length_cm: float = 0.3
    facet_reflectivity: float = 0.27
    loss_coeff: dict = field(default_factory=lambda: {"TE": 0.9, "TM": 1.3})
    splitter_ratio: float = 0.495
    splitter_phase: float = math.pi / 2
    group_index: float = 3.5

    def __post_init__(self):
        if not 0 <= self.facet_reflectivity < 1:
            raise ValueError("facet reflectivity must be in [0, 1)")
        if not 0 <= self.splitter_ratio <= 1:
            raise ValueError("splitter ratio must be in [0, 1]")
        if any(a < 0 for a in self.loss_coeff.values()):
            raise ValueError("loss coefficients must be >= 0")
        if not (self.device_length_cm > 0 and self.group_index > 0):
            raise ValueError("device length and group index must be > 0")

    def alpha(self, polarization: str = "TM") -> float:
        return float(self.loss_coeff[polarization])

    def single_pass(self, polarization: str = "TM") -> float:
        return math.exp(-self.alpha(polarization) * self.device_length_cm)


@dataclass(frozen=True)
class TransmissionSpectrum:
    wavelengths: np.ndarray
    power: np.ndarray
    port: int = 1

    def __post_init__(self):
        wl = np.asarray(self.wavelengths, dtype=float)
        p = np.asarray(self.power, dtype=float)
        if wl.shape != p.shape or wl.ndim != 1:
            raise ValueError("wavelengths and power must be 1-D of equal length")
        if wl.size > 1 and not np.all(np.diff(wl) > 0):
            raise ValueError("wavelengths must be strictly increasing")
        if np.any(p < 0):
            raise ValueError("power must be >= 0")
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "power", p)

    def scaled(self, factor: float) -> "TransmissionSpectrum":
        return TransmissionSpectrum(self.wavelengths, self.power * factor, self.port)


@dataclass(frozen=True)
class LossEstimate:
    alpha: float  # cm^-1
    sigma: float
    per_fringe: np.ndarray
    contrasts: np.ndarray

    @property
    def n_fringes(self) -> int:
        return len(self.per_fringe)


def airy_transmission(wavelengths, reflectivity, single_pass, n_g, length_cm, phase=0.0, scale=1.0):
    wl = np.asarray(wavelengths, dtype=float)
    ra = reflectivity * single_pass
    s = np.sin(2.0 * np.pi * n_g * length_cm * NM_PER_CM / wl + phase)
    return scale * (1.0 - reflectivity) ** 2 * single_pass / ((1.0 - ra) ** 2 + 4.0 * ra * s * s)


def fp_transmission_spectrum(
    circuit: WaveguideCircuit, port: int, wavelengths, polarization: str = "TM", input_power: float = 1.0
) -> TransmissionSpectrum:
    """Power leaving output ``port`` (1 or 2) for unit power coupled in."""
    if port not in (1, 2):
        raise ValueError("port must be 1 or 2")
    frac = circuit.splitter_ratio if port == 1 else 1.0 - circuit.splitter_ratio
    phase = 0.0 if port == 1 else circuit.splitter_phase
    p = airy_transmission(
        wavelengths, circuit.facet_reflectivity, circuit.single_pass(polarization),
        circuit.group_index, circuit.device_length_cm, phase, input_power * frac,
    )
    return TransmissionSpectrum(np.asarray(wavelengths, dtype=float), p, port)


def fringe_contrast(reflectivity: float, alpha_per_cm: float, length_cm: float) -> float:
    """(T_max - T_min) / (T_max + T_min) of the Airy function, 2 R a / (1 + (R a)^2)."""
    ra = reflectivity * math.exp(-alpha_per_cm * length_cm)
    return 2.0 * ra / (1.0 + ra * ra)


def free_spectral_range(wavelength_nm: float, group_index: float, length_cm: float) -> float:
    return wavelength_nm ** 2 / (2.0 * group_index * length_cm * NM_PER_CM)


def ra_from_contrast(contrast):
    c = np.asarray(contrast, dtype=float)
    return (1.0 - np.sqrt(1.0 - c * c)) / c


def fringe_period_samples(power: np.ndarray) -> float:
    """Dominant fringe period in samples, from the peak of the FFT magnitude."""
    y = np.asarray(power, dtype=float)
    mag = np.abs(np.fft.rfft(y - y.mean()))
    if mag.size < 3:
        return float(y.size)
    k = 1 + int(np.argmax(mag[1:]))
    return y.size / k


def _vertex(y: np.ndarray, i: int, half: int, kind: int) -> tuple[int, float]:
    """Extremum of a least-squares quartic through y[i-half : i+half+1]."""
    lo, hi = max(i - half, 0), min(i + half + 1, y.size)
    x = np.arange(lo, hi, dtype=float) - i
    seg = y[lo:hi]
    if half < 3 or seg.size < 7:
        # too few samples per fringe for a fit; three-point parabola instead
        k = lo + int(np.argmax(seg) if kind == 1 else np.argmin(seg))
        if 0 < k < y.size - 1:
            ym, y0, yp = y[k - 1], y[k], y[k + 1]
            denom = ym - 2.0 * y0 + yp
            if denom != 0:
                return k, float(y0 - 0.125 * (yp - ym) ** 2 / denom)
        return k, float(y[k])
    coef = np.polyfit(x, seg, 4)
    fine = np.linspace(x[0], x[-1], 16 * seg.size)
    val = np.polyval(coef, fine)
    j = int(np.argmax(val) if kind == 1 else np.argmin(val))
    return i + int(round(fine[j])), float(val[j])


def find_extrema(power: np.ndarray, period: float | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Alternating local maxima and minima of a fringe pattern.

    Candidates are peaks of a lightly smoothed copy at least 0.6 fringe
    periods apart (the period comes from the FFT unless given). Each height
    is then refined with a quartic least-squares fit over a sixth of a
    period of the raw data, which averages out noise without the upward bias
    of taking the largest sample. Returns (max_index, max_value, min_index,
    min_value).
    """
    y = np.asarray(power, dtype=float)
    n = y.size
    empty = np.empty(0)
    if n < 8:
        return empty.astype(int), empty, empty.astype(int), empty
    p = float(period) if period else fringe_period_samples(y)
    smooth_w = int(p / 8) | 1
    f = uniform_filter1d(y, smooth_w, mode="nearest") if smooth_w >= 3 else y
    dist = max(1, int(0.6 * p))
    half = max(2, int(round(p / 12)))
    imax, _ = find_peaks(f, distance=dist)
    imin, _ = find_peaks(-f, distance=dist)

    events = sorted([(int(i), 1) for i in imax] + [(int(i), -1) for i in imin])
    # collapse runs of the same type, keeping the most extreme member
    merged: list[tuple[int, int]] = []
    for i, kind in events:
        if merged and merged[-1][1] == kind:
            j = merged[-1][0]
            if (kind == 1 and f[i] > f[j]) or (kind == -1 and f[i] < f[j]):
                merged[-1] = (i, kind)
        else:
            merged.append((i, kind))

    maxima, minima = [], []
    for i, kind in merged:
        if i < half or i > n - 1 - half:
            continue
        (maxima if kind == 1 else minima).append(_vertex(y, i, half, kind))
    mi = np.array([m[0] for m in maxima], dtype=int)
    mv = np.array([m[1] for m in maxima], dtype=float)
    ni = np.array([m[0] for m in minima], dtype=int)
    nv = np.array([m[1] for m in minima], dtype=float)
    return mi, mv, ni, nv


def fringe_contrasts(spectrum: TransmissionSpectrum) -> np.ndarray:
    """Contrast of every fringe maximum that has a minimum on both sides."""
    mi, mv, ni, nv = find_extrema(spectrum.power)
    out = []
    for idx, top in zip(mi, mv):
        left = np.nonzero(ni < idx)[0]
        right = np.nonzero(ni > idx)[0]
        if left.size == 0 or right.size == 0:
            continue
        bottom = 0.5 * (nv[left[-1]] + nv[right[0]])
        out.append((top - bottom) / (top + bottom))
    return np.asarray(out, dtype=float)


def extract_loss_from_contrast(
    spectrum: TransmissionSpectrum, facet_reflectivity: float, device_length_cm: float
) -> LossEstimate:
    """Propagation loss (cm^-1) from per-fringe contrast, averaged over fringes.

    Each fringe gives R a = (1 - sqrt(1 - C^2)) / C and alpha = -ln(R a / R) / L.
    The spread of per-fringe values is returned as the uncertainty.
    """
    if not 0 < facet_reflectivity < 1:
        raise ValueError("facet reflectivity must be in (0, 1)")
    c = fringe_contrasts(spectrum)
    if c.size < MIN_FRINGE_PAIRS:
        raise NoFringesDetected(
            f"found {c.size} complete fringes; need at least {MIN_FRINGE_PAIRS}"
        )
    if np.any(c >= 1) or np.any(c <= 0):
        raise ContrastOutOfRange(f"fringe contrast outside (0, 1): {c.min():.4g}..{c.max():.4g}")
    ra = ra_from_contrast(c)
    if np.any(ra > facet_reflectivity * (1 + 1e-6)):
        raise ContrastOutOfRange(
            f"R a = {ra.max():.4f} exceeds R = {facet_reflectivity}; reflectivity inconsistent with the fringes"
        )
    alphas = np.maximum(0.0, -np.log(np.minimum(ra / facet_reflectivity, 1.0)) / device_length_cm)
    sigma = float(np.std(alphas, ddof=1)) if alphas.size > 1 else 0.0
    return LossEstimate(float(np.mean(alphas)), sigma, alphas, c)


def splitting_ratio_estimate(
    spec1: TransmissionSpectrum, spec2: TransmissionSpectrum
) -> tuple[float, float]:
    """Band average of P1 / (P1 + P2) and its standard deviation."""
    if spec1.wavelengths.shape != spec2.wavelengths.shape or not np.allclose(
        spec1.wavelengths, spec2.wavelengths, rtol=0, atol=1e-9
    ):
        raise AxisMismatch("the two spectra are sampled on different wavelength axes")
    total = spec1.power + spec2.power
    if np.any(total <= 0):
        raise ZeroTotalPower(f"zero total power at {int(np.sum(total <= 0))} wavelengths")
    ratio = spec1.power / total
    sigma = float(np.std(ratio, ddof=1)) if ratio.size > 1 else 0.0
    return float(np.mean(ratio)), sigma


def mmi_unitary(ratio: float, phase: float = 0.0) -> np.ndarray:
    """2x2 transfer matrix of the coupler; power fraction ``ratio`` stays in the bar port."""
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must be in [0, 1]")
    t, k = math.sqrt(ratio), math.sqrt(1.0 - ratio)
    e = np.exp(1j * phase)
    return np.array([[t, 1j * k * e], [1j * k, t * e]], dtype=complex)


def write_spectrum(spectrum: TransmissionSpectrum, path) -> None:
    try:
        np.savetxt(path, np.column_stack([spectrum.wavelengths, spectrum.power]),
                   fmt="%.9f %.12e", header=f"wavelength_nm power port={spectrum.port}")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_spectrum(path, port: int | None = None) -> TransmissionSpectrum:
    """Two-column text (wavelength nm, power), comma or whitespace delimited."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if port is None:
        first = text.splitlines()[0] if text else ""
        port = 2 if "port=2" in first else 1
    rows = [ln.replace(",", " ").split() for ln in text.splitlines()
            if ln.strip() and not ln.lstrip().startswith("#")]
    try:
        data = np.array([[float(r[0]), float(r[1])] for r in rows], dtype=float).reshape(-1, 2)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: expected two numeric columns") from exc
    return TransmissionSpectrum(data[:, 0], data[:, 1], port)
