"""End-to-end workflows shared by the command line and the scenario runner."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .circuit import (
    TransmissionSpectrum,
    extract_loss_from_contrast,
    fp_transmission_spectrum,
    fringe_contrast,
    splitting_ratio_estimate,
)
from .coincidence import CoincidenceCounts, CorrelationReport, analyze, g2_heralded_estimate
from .config import CircuitSpec, RunConfig, SweepSpec
from .errors import ConfigError, IoFailure
from .jsa import JsaGrid, jsi_from_jsa, marginal_spectrum, schmidt_decompose, schmidt_lower_bound
from .montecarlo import ExperimentConfig, simulation_stream
from .squeezed_state import g2_heralded_analytic, power_sweep, squeezing_from_mean

COUNT_KEYS = ("n_pulses", "n_h", "n_1", "n_2", "n_1h", "n_2h", "n_12", "n_12h")


# ---------------------------------------------------------------------------
# correlation runs
# ---------------------------------------------------------------------------

def run_experiment(config: ExperimentConfig, workers: int = 1, window_ns: float | None = None) -> CorrelationReport:
    """Simulate ``config`` and analyse the stream on the fly (nothing is stored)."""
    window = config.coincidence_window_ns if window_ns is None else window_ns
    return analyze(simulation_stream(config, workers=workers), window)


def read_counts(path) -> CoincidenceCounts:
    """Count classes from ``key = value`` lines (the format of a report).

    At least n_h, n_1h, n_2h and n_12h are needed; other count keys are
    optional and anything else is ignored.
    """
    values = {}
    try:
        with open(path) as fh:
            for ln in fh:
                ln = ln.split("#", 1)[0].strip()
                if "=" not in ln:
                    continue
                key, val = (s.strip() for s in ln.split("=", 1))
                if key in COUNT_KEYS:
                    values[key] = int(float(val))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"non-numeric count: {exc}", path=str(path)) from exc
    missing = [k for k in ("n_h", "n_1h", "n_2h", "n_12h") if k not in values]
    if missing:
        raise ConfigError(f"missing counts {missing}", path=str(path))
    n_h, n_1h, n_2h, n_12h = (values.pop(k) for k in ("n_h", "n_1h", "n_2h", "n_12h"))
    return CoincidenceCounts.from_values(n_h, n_1h, n_2h, n_12h, pulse_anchored=False, **values)


# ---------------------------------------------------------------------------
# power sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepTable:
    power_mw: np.ndarray
    mean_n: np.ndarray
    schmidt_k: np.ndarray
    g2_heralded: np.ndarray  # at the configured herald efficiency
    g2_heralded_limit: np.ndarray  # vanishing herald efficiency
    g2_heralded_approx: np.ndarray  # 2 <n> (1 + 1/K)
    eta_h: float
    mc_power_mw: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mc_g2_heralded: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mc_sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def linear_r2(self, column: str = "g2_heralded") -> float:
        """Coefficient of determination of a straight-line fit against power."""
        y = getattr(self, column)
        coef = np.polyfit(self.power_mw, y, 1)
        resid = y - np.polyval(coef, self.power_mw)
        tot = np.sum((y - y.mean()) ** 2)
        return float(1.0 - np.sum(resid ** 2) / tot) if tot > 0 else 1.0

    def mc_pulls(self) -> np.ndarray:
        """(MC - analytic) / sigma for each simulated power."""
        if self.mc_power_mw.size == 0:
            return np.zeros(0)
        ref = np.interp(self.mc_power_mw, self.power_mw, self.g2_heralded)
        return (self.mc_g2_heralded - ref) / self.mc_sigma

    def as_plot_data(self) -> dict:
        return {
            "power_mw": self.power_mw,
            "g2_heralded": self.g2_heralded_approx if self.eta_h == 0 else self.g2_heralded,
            "mc_power_mw": self.mc_power_mw,
            "mc_g2_heralded": self.mc_g2_heralded,
            "mc_sigma": self.mc_sigma,
        }

    def to_text(self, sep: str = ",") -> str:
        cols = ["power_mw", "mean_n", "schmidt_k", "g2_heralded", "g2_heralded_limit", "g2_heralded_approx"]
        rows = [sep.join(cols + ["mc_g2_heralded", "mc_sigma"])]
        mc = {float(p): (g, s) for p, g, s in zip(self.mc_power_mw, self.mc_g2_heralded, self.mc_sigma)}
        for i, p in enumerate(self.power_mw):
            vals = [f"{getattr(self, c)[i]:.10g}" for c in cols]
            g, s = mc.get(float(p), (None, None))
            vals += ["" if g is None else f"{g:.6g}", "" if s is None else f"{s:.6g}"]
            rows.append(sep.join(vals))
        return "\n".join(rows) + "\n"


def run_power_sweep(config: ExperimentConfig, sweep: SweepSpec, workers: int = 1) -> SweepTable:
    """Analytic power sweep, optionally with a simulated point at every power.

    ``config.source`` is the source at ``sweep.ref_power_mw``; all mode means
    scale linearly with pump power. Simulations use ``sweep.mc_pulses``
    pulses with the seed offset by the point index.
    """
    eta_h = config.channel_efficiencies[0]
    preds = power_sweep(config.source, sweep.ref_power_mw, sweep.powers_mw, eta_h if eta_h > 0 else None)
    ks = np.array([p.schmidt_k for p in preds])
    ns = np.array([p.mean_n for p in preds])
    limit = np.array([g2_heralded_analytic(squeezing_from_mean(n, k), k, None) for n, k in zip(ns, ks)])
    table = SweepTable(
        power_mw=np.array([p.power_mw for p in preds]),
        mean_n=ns,
        schmidt_k=ks,
        g2_heralded=np.array([p.g2_heralded for p in preds]),
        g2_heralded_limit=limit,
        g2_heralded_approx=np.array([p.g2_heralded_approx for p in preds]),
        eta_h=eta_h,
    )
    if sweep.mc_pulses > 0:
        g, s = [], []
        for i, p in enumerate(sweep.powers_mw):
            cfg = config.with_(
                source=config.source.scaled(p / sweep.ref_power_mw),
                pump_power_mw=None, calibration=None,
                n_pulses=sweep.mc_pulses, rng_seed=config.rng_seed + i,
            )
            est = g2_heralded_estimate(simulation_stream(cfg, workers=workers), cfg.coincidence_window_ns)
            g.append(est.value)
            s.append(est.sigma)
        table.mc_power_mw = np.asarray(sweep.powers_mw, dtype=float)
        table.mc_g2_heralded = np.asarray(g)
        table.mc_sigma = np.asarray(s)
    return table


# ---------------------------------------------------------------------------
# classical characterisation
# ---------------------------------------------------------------------------

def synthesize_spectra(spec: CircuitSpec, polarization: str = "TM") -> tuple[TransmissionSpectrum, TransmissionSpectrum]:
    """Forward-model both output ports, with optional multiplicative noise."""
    wl = spec.wavelengths()
    out = []
    rng = np.random.default_rng(spec.noise_seed)
    for port in (1, 2):
        s = fp_transmission_spectrum(spec.circuit, port, wl, polarization)
        if spec.noise_rel > 0:
            s = TransmissionSpectrum(wl, s.power * (1.0 + spec.noise_rel * rng.standard_normal(wl.size)), port)
        out.append(s)
    return out[0], out[1]


def characterize_ports(
    spec1: TransmissionSpectrum, spec2: TransmissionSpectrum, facet_reflectivity: float, device_length_cm: float
) -> dict:
    """Loss from the fringes of both ports and the splitting ratio between them."""
    l1 = extract_loss_from_contrast(spec1, facet_reflectivity, device_length_cm)
    l2 = extract_loss_from_contrast(spec2, facet_reflectivity, device_length_cm)
    alphas = np.concatenate([l1.per_fringe, l2.per_fringe])
    r, r_sigma = splitting_ratio_estimate(spec1, spec2)
    return {
        "alpha_per_cm": float(np.mean(alphas)),
        # standard error of the fringe average
        "alpha_sigma": float(np.std(alphas, ddof=1) / np.sqrt(alphas.size)) if alphas.size > 1 else 0.0,
        "alpha_port1": l1.alpha,
        "alpha_port2": l2.alpha,
        "fringe_contrast": float(np.mean(np.concatenate([l1.contrasts, l2.contrasts]))),
        "splitting_ratio": r,
        "splitting_ratio_sigma": r_sigma,
    }


def characterize_circuit(spec: CircuitSpec, polarizations=("TE", "TM")) -> dict:
    """Synthesise and invert spectra for each polarization of the device."""
    dev = spec.circuit
    out = {}
    for pol in polarizations:
        s1, s2 = synthesize_spectra(spec, pol)
        res = characterize_ports(s1, s2, dev.facet_reflectivity, dev.device_length_cm)
        tag = pol.lower()
        out[f"alpha_{tag}_per_cm"] = res["alpha_per_cm"]
        out[f"alpha_{tag}_sigma"] = res["alpha_sigma"]
        out[f"fringe_contrast_{tag}"] = res["fringe_contrast"]
        out[f"fringe_contrast_{tag}_model"] = fringe_contrast(dev.facet_reflectivity, dev.alpha(pol), dev.device_length_cm)
        out[f"splitting_ratio_{tag}"] = res["splitting_ratio"]
        out[f"splitting_ratio_{tag}_sigma"] = res["splitting_ratio_sigma"]
    return out


# ---------------------------------------------------------------------------
# joint spectrum
# ---------------------------------------------------------------------------

def jsa_summary(run: RunConfig) -> tuple[JsaGrid, dict]:
    """Model JSI plus its Schmidt number and marginal widths."""
    amp = run.jsa()
    _, k = schmidt_decompose(amp)
    jsi = jsi_from_jsa(amp)
    return jsi, {
        "schmidt_k": k,
        "width_ratio": run.phase_match.width_ratio,
        "marginal_fwhm_signal_nm": marginal_spectrum(jsi, "signal")[2],
        "marginal_fwhm_idler_nm": marginal_spectrum(jsi, "idler")[2],
    }


def reconstruct_jsi(run: RunConfig, workers: int = 1, blur: bool = False) -> tuple[JsaGrid, dict]:
    """Simulate the time-of-flight measurement described by ``run`` and rebuild the JSI."""
    from .spectrograph import build_jsi_histogram

    cfg = run.experiment
    if cfg is None or cfg.spectral is None:
        raise ConfigError("reconstruction needs [source] and [spectrograph] enabled = true", path=run.path)
    sp = run.spectrograph
    cs, ci = cfg.spectral.cal_signal, cfg.spectral.cal_idler
    h = sp.half_range_nm
    grid = build_jsi_histogram(
        simulation_stream(cfg, workers=workers), cs, ci, bins=sp.bins,
        signal_range_nm=(cs.reference_wavelength_nm - h, cs.reference_wavelength_nm + h),
        idler_range_nm=(ci.reference_wavelength_nm - h, ci.reference_wavelength_nm + h),
        window_ns=cfg.coincidence_window_ns, blur=blur,
    )
    return grid, {
        "reconstructed_lower_bound": schmidt_lower_bound(grid),
        "reconstructed_fwhm_signal_nm": marginal_spectrum(grid, "signal")[2],
        "reconstructed_fwhm_idler_nm": marginal_spectrum(grid, "idler")[2],
    }
