"""
Joint spectral amplitude of the transverse-pump pair source.

The biphoton amplitude is modelled as a product of two Gaussians in the
rotated frequency coordinates Omega+ = dw_s + dw_i (set by the pump
spectrum, i.e. pulse duration) and Omega- = dw_s - dw_i (set by the spatial
pump profile along the counterpropagating waveguide, i.e. spot length):

    A = exp(-Omega+**2 / (4 s+**2) - Omega-**2 / (4 s-**2))

so the intensity |A|**2 has standard deviations s+ and s- along those axes.
Grids are sampled uniformly in wavelength; the amplitude carries the
sqrt(d omega / d lambda) Jacobian so singular values of the grid are the
Schmidt coefficients of the continuous state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import (
    DegenerateGrid,
    GridSpanTooSmall,
    GridTooCoarse,
    IoFailure,
    NegativeIntensity,
    WrongKind,
)
from .squeezed_state import SqueezedSourceModel

C_NM_PER_PS = 299792.458
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))
MIN_POINTS_PER_SIGMA = 32
MIN_HALF_SPAN_SIGMA = 3.0

Kind = Literal["amplitude", "intensity"]


def omega(wavelength_nm):
    """Angular frequency in rad/ps of a vacuum wavelength in nm."""
    return 2.0 * np.pi * C_NM_PER_PS / np.asarray(wavelength_nm, dtype=float)


def energy_conserving_partner(pump_nm: float, photon_nm: float) -> float:
    """Wavelength of the twin photon, from 1/l_s + 1/l_i = 1/l_p."""
    inv = 1.0 / pump_nm - 1.0 / photon_nm
    if inv <= 0:
        raise ValueError(f"{photon_nm} nm is not a valid down-converted wavelength for a {pump_nm} nm pump")
    return 1.0 / inv


def sigma_omega_to_nm(sigma_omega: float, center_nm: float) -> float:
    """Convert a small angular-frequency width to a wavelength width at ``center_nm``."""
    return center_nm ** 2 / (2.0 * np.pi * C_NM_PER_PS) * sigma_omega


def sigma_nm_to_omega(sigma_nm: float, center_nm: float) -> float:
    return sigma_nm * 2.0 * np.pi * C_NM_PER_PS / center_nm ** 2


@dataclass(frozen=True)
class PumpConfig:
    center_wavelength_nm: float = 769.0
    pulse_fwhm_ps: float = 5.0
    spot_fwhm_mm: float = 1.5
    incidence_angle_deg: float = 1.4  # metadata; centres are given directly
    rep_rate_mhz: float = 3.8

    def __post_init__(self):
        for name in ("center_wavelength_nm", "pulse_fwhm_ps", "spot_fwhm_mm", "rep_rate_mhz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class PhaseMatchConfig:
    """Centre wavelengths (nm) and Gaussian widths (rad/ps) of the two envelopes."""

    signal_center_nm: float
    idler_center_nm: float
    sum_freq_sigma: float
    diff_freq_sigma: float

    def __post_init__(self):
        if not (self.sum_freq_sigma > 0 and self.diff_freq_sigma > 0):
            raise ValueError("both envelope widths must be > 0")
        if not (self.signal_center_nm > 0 and self.idler_center_nm > 0):
            raise ValueError("centre wavelengths must be > 0")

    @property
    def width_ratio(self) -> float:
        return self.sum_freq_sigma / self.diff_freq_sigma

    @property
    def marginal_sigma_omega(self) -> float:
        """Standard deviation (rad/ps) of either single-photon intensity marginal."""
        return 0.5 * math.hypot(self.sum_freq_sigma, self.diff_freq_sigma)

    def marginal_sigma_nm(self, which: str = "signal") -> float:
        center = self.signal_center_nm if which == "signal" else self.idler_center_nm
        return sigma_omega_to_nm(self.marginal_sigma_omega, center)


@dataclass(frozen=True)
class GridSpec:
    """Grid resolution and extent.

    By default each axis spans ``half_span_sigma`` standard deviations of
    the amplitude marginal (sqrt(2) times the intensity-marginal width)
    either side of its centre; explicit ``(start, stop)`` ranges in nm
    override that.
    """

    n_signal: int = 512
    n_idler: int = 512
    half_span_sigma: float = 4.0
    signal_range_nm: tuple[float, float] | None = None
    idler_range_nm: tuple[float, float] | None = None

    def doubled(self) -> "GridSpec":
        return GridSpec(2 * self.n_signal, 2 * self.n_idler, self.half_span_sigma,
                        self.signal_range_nm, self.idler_range_nm)


class JsaGrid:
    """Joint spectrum sampled on uniform (signal, idler) wavelength axes.

    ``values[i, j]`` belongs to ``signal_axis[i]`` and ``idler_axis[j]``.
    Amplitude grids are normalised so that sum(values**2) == 1, intensity
    grids so that sum(values) == 1. Arrays are read-only.
    """

    def __init__(self, signal_axis, idler_axis, values, kind: Kind = "amplitude", normalize: bool = True):
        if kind not in ("amplitude", "intensity"):
            raise ValueError(f"kind must be 'amplitude' or 'intensity', got {kind!r}")
        s = np.array(signal_axis, dtype=float)
        i = np.array(idler_axis, dtype=float)
        v = np.array(values, dtype=float)
        if s.ndim != 1 or i.ndim != 1 or v.shape != (s.size, i.size):
            raise ValueError(f"grid shape {v.shape} does not match axes ({s.size}, {i.size})")
        for name, ax in (("signal", s), ("idler", i)):
            if ax.size > 1 and not np.all(np.diff(ax) > 0):
                raise ValueError(f"{name} axis must be strictly increasing")
        if not np.all(np.isfinite(v)):
            raise ValueError("grid contains non-finite values")
        if normalize:
            total = float(np.sum(v * v)) if kind == "amplitude" else float(np.sum(v))
            if total > 0:
                v = v / (math.sqrt(total) if kind == "amplitude" else total)
        for arr in (s, i, v):
            arr.setflags(write=False)
        self.signal_axis, self.idler_axis, self.values, self.kind = s, i, v, kind

    @property
    def amplitude(self) -> np.ndarray:
        return self.values

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def step(self, axis: str) -> float:
        ax = self.signal_axis if axis == "signal" else self.idler_axis
        return float(ax[1] - ax[0]) if ax.size > 1 else 1.0

    def __repr__(self):
        return (f"JsaGrid(kind={self.kind!r}, shape={self.shape}, "
                f"signal=[{self.signal_axis[0]:.4f}, {self.signal_axis[-1]:.4f}] nm, "
                f"idler=[{self.idler_axis[0]:.4f}, {self.idler_axis[-1]:.4f}] nm)")


# ---------------------------------------------------------------------------
# pump -> envelope widths
# ---------------------------------------------------------------------------

def double_gaussian_schmidt_number(ratio: float) -> float:
    """Closed-form Schmidt number of a double-Gaussian JSA with width ratio ``s+/s-``."""
    if not ratio > 0:
        raise ValueError("width ratio must be > 0")
    return 0.5 * (ratio + 1.0 / ratio)


def ratio_for_schmidt(k: float) -> float:
    """Width ratio s+/s- (>= 1) that gives Schmidt number ``k``."""
    if k < 1:
        raise ValueError("Schmidt number must be >= 1")
    return k + math.sqrt(k * k - 1.0)


def calibrate_width_coefficients(
    pump: PumpConfig | None = None,
    target_k: float = 1.2,
    target_fwhm_nm: float = 0.48,
    signal_center_nm: float = 1540.0,
) -> tuple[float, float]:
    """Coefficients mapping pulse length and spot length to envelope widths.

    The sum width is ``sum_coeff / pulse_fwhm_ps`` and the difference width
    ``diff_coeff / spot_fwhm_mm`` (both rad/ps). The material group indices
    that fix these coefficients physically are not available, so they are
    solved here to reproduce a target Schmidt number and marginal FWHM at
    the given pump settings. The sum envelope is taken as the wider one.
    """
    pump = pump or PumpConfig()
    r = ratio_for_schmidt(target_k)
    sigma_m = sigma_nm_to_omega(target_fwhm_nm / FWHM_PER_SIGMA, signal_center_nm)
    diff_sigma = 2.0 * sigma_m / math.sqrt(1.0 + r * r)
    sum_sigma = r * diff_sigma
    return sum_sigma * pump.pulse_fwhm_ps, diff_sigma * pump.spot_fwhm_mm


DEFAULT_SUM_COEFF, DEFAULT_DIFF_COEFF = calibrate_width_coefficients()


def phase_match_from_pump(
    pump: PumpConfig,
    signal_center_nm: float = 1540.0,
    idler_center_nm: float | None = None,
    sum_coeff: float = DEFAULT_SUM_COEFF,
    diff_coeff: float = DEFAULT_DIFF_COEFF,
) -> PhaseMatchConfig:
    """Envelope widths for a pump; the idler centre defaults to energy conservation."""
    if idler_center_nm is None:
        idler_center_nm = energy_conserving_partner(pump.center_wavelength_nm, signal_center_nm)
    return PhaseMatchConfig(
        signal_center_nm=signal_center_nm,
        idler_center_nm=idler_center_nm,
        sum_freq_sigma=sum_coeff / pump.pulse_fwhm_ps,
        diff_freq_sigma=diff_coeff / pump.spot_fwhm_mm,
    )


# ---------------------------------------------------------------------------
# grids
# ---------------------------------------------------------------------------

def _axis(center: float, sigma_nm: float, n: int, spec: GridSpec, rng) -> np.ndarray:
    if rng is None:
        half = spec.half_span_sigma * sigma_nm
        lo, hi = center - half, center + half
    else:
        lo, hi = rng
    if n < 2 or not hi > lo:
        raise ValueError("grid axes need at least two points and a positive span")
    if min(center - lo, hi - center) < MIN_HALF_SPAN_SIGMA * sigma_nm * (1 - 1e-9):
        raise GridSpanTooSmall(
            f"axis [{lo:.4f}, {hi:.4f}] nm does not cover +-{MIN_HALF_SPAN_SIGMA:g} sigma "
            f"({sigma_nm:.4g} nm) around {center:.4f} nm"
        )
    density = n * sigma_nm / (hi - lo)
    if density < MIN_POINTS_PER_SIGMA * (1 - 1e-9):
        raise GridTooCoarse(
            f"{density:.1f} points per amplitude sigma; need >= {MIN_POINTS_PER_SIGMA}"
        )
    return np.linspace(lo, hi, n)


def compute_jsa(pump: PumpConfig, pm: PhaseMatchConfig, grid_spec: GridSpec | None = None) -> JsaGrid:
    """Sample the double-Gaussian amplitude on a wavelength grid."""
    spec = grid_spec or GridSpec()
    expected_idler = energy_conserving_partner(pump.center_wavelength_nm, pm.signal_center_nm)
    sig_s = math.sqrt(2.0) * pm.marginal_sigma_nm("signal")
    sig_i = math.sqrt(2.0) * pm.marginal_sigma_nm("idler")
    ls = _axis(pm.signal_center_nm, sig_s, spec.n_signal, spec, spec.signal_range_nm)
    li = _axis(pm.idler_center_nm, sig_i, spec.n_idler, spec, spec.idler_range_nm)
    if abs(pm.idler_center_nm - expected_idler) > (li[1] - li[0]):
        raise ValueError(
            f"idler centre {pm.idler_center_nm:.4f} nm violates energy conservation "
            f"(expected {expected_idler:.4f} nm for a {pump.center_wavelength_nm} nm pump)"
        )
    ws = omega(ls) - omega(pm.signal_center_nm)
    wi = omega(li) - omega(pm.idler_center_nm)
    plus = ws[:, None] + wi[None, :]
    minus = ws[:, None] - wi[None, :]
    amp = np.exp(-plus ** 2 / (4 * pm.sum_freq_sigma ** 2) - minus ** 2 / (4 * pm.diff_freq_sigma ** 2))
    # sqrt(|d omega / d lambda|) per axis, i.e. 1/lambda up to a constant
    amp *= (1.0 / ls)[:, None] * (1.0 / li)[None, :]
    return JsaGrid(ls, li, amp, "amplitude")


def jsi_from_jsa(grid: JsaGrid) -> JsaGrid:
    if grid.kind != "amplitude":
        raise WrongKind(f"expected an amplitude grid, got {grid.kind}")
    return JsaGrid(grid.signal_axis, grid.idler_axis, np.abs(grid.values) ** 2, "intensity")


def _svd_schmidt(values: np.ndarray) -> tuple[np.ndarray, float]:
    if not np.any(values):
        raise DegenerateGrid("grid is identically zero")
    s = np.linalg.svd(values, compute_uv=False)
    s = s / math.sqrt(float(np.sum(s * s)))
    return s, float(1.0 / np.sum(s ** 4))


def schmidt_decompose(grid: JsaGrid) -> tuple[np.ndarray, float]:
    """Normalised singular values (descending, squares summing to 1) and K = 1/sum(s**4)."""
    if grid.kind != "amplitude":
        raise WrongKind("Schmidt decomposition needs an amplitude grid; use schmidt_lower_bound for intensities")
    return _svd_schmidt(grid.values)


def schmidt_lower_bound(jsi: JsaGrid) -> float:
    """Schmidt number of sqrt(JSI).

    Without spectral phases the true amplitude may carry extra structure,
    so this is a lower bound on K; it is tight for real non-negative
    amplitudes.
    """
    if jsi.kind != "intensity":
        raise WrongKind(f"expected an intensity grid, got {jsi.kind}")
    if np.any(jsi.values < 0):
        raise NegativeIntensity("intensity grid has negative entries")
    return _svd_schmidt(np.sqrt(jsi.values))[1]


def schmidt_number_converged(
    pump: PumpConfig, pm: PhaseMatchConfig, grid_spec: GridSpec | None = None, tol: float = 1e-3
) -> tuple[float, float, bool]:
    """K at the requested resolution, its change on doubling the resolution, and whether that is < tol."""
    spec = grid_spec or GridSpec()
    k1 = schmidt_decompose(compute_jsa(pump, pm, spec))[1]
    k2 = schmidt_decompose(compute_jsa(pump, pm, spec.doubled()))[1]
    return k1, abs(k2 - k1), abs(k2 - k1) < tol


def fwhm(x: np.ndarray, y: np.ndarray) -> float:
    """Full width at half maximum, linearly interpolating the half-level crossings.

    A single occupied bin gives one bin width.
    """
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if y.size == 0 or not np.any(y > 0):
        return 0.0
    if y.size == 1:
        return 0.0
    half = 0.5 * y.max()
    above = np.nonzero(y >= half)[0]
    lo, hi = above[0], above[-1]
    if lo > 0:
        left = x[lo - 1] + (half - y[lo - 1]) / (y[lo] - y[lo - 1]) * (x[lo] - x[lo - 1])
    else:
        left = x[0]
    if hi < y.size - 1:
        right = x[hi] + (y[hi] - half) / (y[hi] - y[hi + 1]) * (x[hi + 1] - x[hi])
    else:
        right = x[-1]
    return float(right - left)


def marginal_spectrum(jsi: JsaGrid, axis: str = "signal") -> tuple[np.ndarray, np.ndarray, float]:
    """Single-photon spectrum traced over the other photon: (wavelengths, weights, FWHM nm)."""
    if jsi.kind != "intensity":
        raise WrongKind(f"expected an intensity grid, got {jsi.kind}")
    if axis == "signal":
        wl, w = jsi.signal_axis, jsi.values.sum(axis=1)
    elif axis == "idler":
        wl, w = jsi.idler_axis, jsi.values.sum(axis=0)
    else:
        raise ValueError("axis must be 'signal' or 'idler'")
    total = w.sum()
    if total > 0:
        w = w / total
    return wl.copy(), w, fwhm(wl, w)


def blur_jsi(jsi: JsaGrid, fwhm_nm: float) -> JsaGrid:
    """Convolve an intensity grid with a Gaussian resolution kernel of the given FWHM."""
    if jsi.kind != "intensity":
        raise WrongKind(f"expected an intensity grid, got {jsi.kind}")
    if fwhm_nm <= 0:
        return jsi
    sigma = fwhm_nm / FWHM_PER_SIGMA
    blurred = gaussian_filter(
        jsi.values, sigma=(sigma / jsi.step("signal"), sigma / jsi.step("idler")), mode="constant"
    )
    return JsaGrid(jsi.signal_axis, jsi.idler_axis, blurred, "intensity")


def model_from_jsa(grid: JsaGrid, mean_n: float, weight_floor: float = 1e-12) -> SqueezedSourceModel:
    """Low-gain source model whose mode means follow the Schmidt weights of ``grid``."""
    s, _ = schmidt_decompose(grid) if grid.kind == "amplitude" else _svd_schmidt(np.sqrt(grid.values))
    w = s * s
    w = w[w > weight_floor]
    return SqueezedSourceModel.from_weights(mean_n, w)


# ---------------------------------------------------------------------------
# text I/O
# ---------------------------------------------------------------------------

def write_jsi_text(grid: JsaGrid, path) -> None:
    """Plain-text matrix with a two-line header giving axis ranges and bin counts."""
    s, i = grid.signal_axis, grid.idler_axis
    header = (f"signal_nm {s[0]:.9f} {s[-1]:.9f} {s.size} {grid.kind}\n"
              f"idler_nm {i[0]:.9f} {i[-1]:.9f} {i.size}")
    try:
        np.savetxt(path, grid.values, fmt="%.10e", header=header, comments="# ")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def read_jsi_text(path) -> JsaGrid:
    try:
        with open(path) as fh:
            l1, l2 = fh.readline().split(), fh.readline().split()
        values = np.loadtxt(path, comments="#", ndmin=2)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        assert l1[1] == "signal_nm" and l2[1] == "idler_nm"
        s = np.linspace(float(l1[2]), float(l1[3]), int(l1[4]))
        i = np.linspace(float(l2[2]), float(l2[3]), int(l2[4]))
        kind = l1[5] if len(l1) > 5 else "intensity"
    except (AssertionError, IndexError, ValueError) as exc:
        raise ValueError(f"{path}: malformed JSI header") from exc
    return JsaGrid(s, i, values, kind)

