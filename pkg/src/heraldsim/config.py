"""
Strict TOML configuration.

Every key carries its unit in its name (``pump_power_mw``, ``window_ns``).
Unknown sections or keys are rejected with a :class:`ConfigError` that
names the file and the dotted field, so a typo never silently falls back
to a default.

Sections::

    [source]        mean_n, schmidt_k | mode_means | from_jsa, calibration_per_mw
    [experiment]    pump_power_mw, rep_rate_mhz, splitter_ratio, herald_efficiency,
                    signal_efficiency, coincidence_window_ns, n_pulses, rng_seed, max_pairs
    [detectors.*]   all / herald / out1 / out2: DetectorModel fields or dark_rate_hz
    [pump]          PumpConfig fields
    [jsa]           centres, envelope widths and grid of the joint spectrum
    [spectrograph]  enabled, dispersion_ps_per_nm, reference delays and wavelengths
    [circuit]       device and the wavelength sweep used to synthesise spectra
    [sweep]         powers_mw, ref_power_mw, mc_pulses
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .circuit import WaveguideCircuit
from .errors import ConfigError
from .jsa import GridSpec, PhaseMatchConfig, PumpConfig, compute_jsa, jsi_from_jsa, model_from_jsa, phase_match_from_pump
from .montecarlo import DetectorModel, ExperimentConfig, dark_probability_from_rate, default_detectors
from .squeezed_state import SqueezedSourceModel
from .tagstream import CH_HERALD, CH_OUT1, CH_OUT2

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10 only
    import tomli as tomllib

FLOAT, INT, BOOL, STR = "float", "int", "bool", "str"
FLOATS, PAIR = "floats", "float-or-pair"

SOURCE_KEYS = {"mean_n": FLOAT, "schmidt_k": FLOAT, "mode_means": FLOATS, "from_jsa": BOOL, "calibration_per_mw": FLOAT}
EXPERIMENT_KEYS = {
    "pump_power_mw": FLOAT,
    "rep_rate_mhz": FLOAT,
    "splitter_ratio": FLOAT,
    "herald_efficiency": FLOAT,
    "signal_efficiency": PAIR,
    "coincidence_window_ns": FLOAT,
    "n_pulses": INT,
    "rng_seed": INT,
    "max_pairs": INT,
}
DETECTOR_KEYS = {
    "efficiency": FLOAT,
    "dark_count_prob_per_window": FLOAT,
    "dark_rate_hz": FLOAT,
    "jitter_fwhm_ps": FLOAT,
    "gated": BOOL,
    "dead_time_ns": FLOAT,
    "delay_ns": FLOAT,
}
DETECTOR_NAMES = {"herald": CH_HERALD, "out1": CH_OUT1, "out2": CH_OUT2}
PUMP_KEYS = {f.name: FLOAT for f in fields(PumpConfig)}
JSA_KEYS = {
    "signal_center_nm": FLOAT,
    "idler_center_nm": FLOAT,
    "sum_freq_sigma_rad_per_ps": FLOAT,
    "diff_freq_sigma_rad_per_ps": FLOAT,
    "n_signal": INT,
    "n_idler": INT,
    "half_span_sigma": FLOAT,
    "signal_range_nm": FLOATS,
    "idler_range_nm": FLOATS,
}
SPECTROGRAPH_KEYS = {
    "enabled": BOOL,
    "dispersion_ps_per_nm": FLOAT,
    "reference_delay_ps": FLOAT,
    "signal_reference_nm": FLOAT,
    "idler_reference_nm": FLOAT,
    "resolution_nm": FLOAT,
    "bins": INT,
    "half_range_nm": FLOAT,
}
CIRCUIT_KEYS = {
    "device_length_cm": FLOAT,
    "facet_reflectivity": FLOAT,
    "loss_te_per_cm": FLOAT,
    "loss_tm_per_cm": FLOAT,
    "splitter_ratio": FLOAT,
    "splitter_phase_rad": FLOAT,
    "group_index": FLOAT,
    "wavelength_start_nm": FLOAT,
    "wavelength_stop_nm": FLOAT,
    "n_points": INT,
    "noise_rel": FLOAT,
    "noise_seed": INT,
}
SWEEP_KEYS = {"powers_mw": FLOATS, "ref_power_mw": FLOAT, "mc_pulses": INT}

SECTIONS = {
    "source": SOURCE_KEYS,
    "experiment": EXPERIMENT_KEYS,
    "detectors": None,
    "pump": PUMP_KEYS,
    "jsa": JSA_KEYS,
    "spectrograph": SPECTROGRAPH_KEYS,
    "circuit": CIRCUIT_KEYS,
    "sweep": SWEEP_KEYS,
}


@dataclass(frozen=True)
class CircuitSpec:
    """Device plus the wavelength sweep used to synthesise its transmission spectra."""

    circuit: WaveguideCircuit = field(default_factory=WaveguideCircuit)
    wavelength_start_nm: float = 1535.0
    wavelength_stop_nm: float = 1545.0
    n_points: int = 20001
    noise_rel: float = 0.0
    noise_seed: int = 0

    def wavelengths(self) -> np.ndarray:
        return np.linspace(self.wavelength_start_nm, self.wavelength_stop_nm, self.n_points)


@dataclass(frozen=True)
class SpectrographSpec:
    enabled: bool = False
    dispersion_ps_per_nm: float = 1250.0
    reference_delay_ps: float = 50_000.0
    signal_reference_nm: float | None = None
    idler_reference_nm: float | None = None
    resolution_nm: float = 0.2
    bins: int = 64
    half_range_nm: float = 1.0


@dataclass(frozen=True)
class SweepSpec:
    powers_mw: tuple = (10.0, 20.0, 30.0, 40.0, 50.0, 60.0)
    ref_power_mw: float = 60.0
    mc_pulses: int = 0


@dataclass
class RunConfig:
    """Parsed configuration; sections that were absent keep their defaults."""

    experiment: ExperimentConfig | None
    pump: PumpConfig
    phase_match: PhaseMatchConfig
    grid: GridSpec
    spectrograph: SpectrographSpec
    circuit: CircuitSpec
    sweep: SweepSpec
    path: str | None = None
    extra: dict = field(default_factory=dict)

    def jsa(self):
        return compute_jsa(self.pump, self.phase_match, self.grid)

    def jsi(self):
        return jsi_from_jsa(self.jsa())


# ---------------------------------------------------------------------------
# typed key extraction
# ---------------------------------------------------------------------------

def _coerce(value, kind, path, where):
    def bad(expected):
        return ConfigError(f"expected {expected}, got {value!r}", path=path, field=where)

    if kind == FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad("a number")
        if not math.isfinite(value):
            raise bad("a finite number")
        return float(value)
    if kind == INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad("an integer")
        return int(value)
    if kind == BOOL:
        if not isinstance(value, bool):
            raise bad("true or false")
        return value
    if kind == STR:
        if not isinstance(value, str):
            raise bad("a string")
        return value
    if kind == FLOATS:
        if not isinstance(value, list):
            raise bad("a list of numbers")
        return [_coerce(v, FLOAT, path, where) for v in value]
    if kind == PAIR:
        if isinstance(value, list):
            if len(value) != 2:
                raise bad("a number or a pair of numbers")
            return tuple(_coerce(v, FLOAT, path, where) for v in value)
        return _coerce(value, FLOAT, path, where)
    raise AssertionError(kind)


def take(table, schema: dict, path=None, prefix: str = "") -> dict:
    """Validate ``table`` against ``schema`` (key -> kind); unknown keys are errors."""
    if not isinstance(table, dict):
        raise ConfigError("expected a table", path=path, field=prefix or None)
    out = {}
    for key, value in table.items():
        where = f"{prefix}.{key}" if prefix else key
        if key not in schema:
            raise ConfigError(f"unknown key (allowed: {', '.join(sorted(schema))})", path=path, field=where)
        out[key] = _coerce(value, schema[key], path, where)
    return out


def _build(cls, kwargs, path, section):
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), path=path, field=section) from exc


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------

def _detectors(table, window_ns: float, path) -> dict:
    if not isinstance(table, dict):
        raise ConfigError("expected a table", path=path, field="detectors")
    for name in table:
        if name != "all" and name not in DETECTOR_NAMES:
            raise ConfigError("unknown detector (allowed: all, herald, out1, out2)", path=path, field=f"detectors.{name}")
    common = take(table.get("all", {}), DETECTOR_KEYS, path, "detectors.all")
    base = default_detectors(jitter_fwhm_ps=0.0)
    out = {}
    for name, ch in DETECTOR_NAMES.items():
        kw = {f.name: getattr(base[ch], f.name) for f in fields(DetectorModel)}
        kw.update(common)
        kw.update(take(table.get(name, {}), DETECTOR_KEYS, path, f"detectors.{name}"))
        rate = kw.pop("dark_rate_hz", None)
        if rate is not None:
            if "dark_count_prob_per_window" in common or "dark_count_prob_per_window" in table.get(name, {}):
                raise ConfigError("give dark_rate_hz or dark_count_prob_per_window, not both",
                                  path=path, field=f"detectors.{name}")
            kw["dark_count_prob_per_window"] = dark_probability_from_rate(rate, window_ns)
        out[ch] = _build(DetectorModel, kw, path, f"detectors.{name}")
    return out


def _source(table, jsa_amp, path) -> SqueezedSourceModel:
    src = take(table, SOURCE_KEYS, path, "source")
    ways = [k for k in ("schmidt_k", "mode_means", "from_jsa") if src.get(k) not in (None, False)]
    if len(ways) != 1:
        raise ConfigError("give exactly one of schmidt_k, mode_means or from_jsa = true", path=path, field="source")
    mean_n = src.get("mean_n")
    try:
        if "mode_means" in ways:
            model = SqueezedSourceModel(tuple(src["mode_means"]))
            return model.scaled(mean_n / model.mean_n) if mean_n is not None else model
        if mean_n is None:
            raise ConfigError("mean_n is required", path=path, field="source.mean_n")
        if "schmidt_k" in ways:
            return SqueezedSourceModel.from_schmidt(mean_n, src["schmidt_k"])
        return model_from_jsa(jsa_amp(), mean_n)
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), path=path, field="source") from exc


def _circuit(table, path) -> CircuitSpec:
    kw = take(table, CIRCUIT_KEYS, path, "circuit")
    dev = WaveguideCircuit()
    loss = dict(dev.loss_coeff)
    if "loss_te_per_cm" in kw:
        loss["TE"] = kw.pop("loss_te_per_cm")
    if "loss_tm_per_cm" in kw:
        loss["TM"] = kw.pop("loss_tm_per_cm")
    dev_kw = {"loss_coeff": loss}
    for key in ("device_length_cm", "facet_reflectivity", "splitter_ratio", "group_index"):
        if key in kw:
            dev_kw[key] = kw.pop(key)
    if "splitter_phase_rad" in kw:
        dev_kw["splitter_phase"] = kw.pop("splitter_phase_rad")
    device = _build(WaveguideCircuit, dev_kw, path, "circuit")
    spec = CircuitSpec(device, **kw)
    if spec.n_points < 16 or not spec.wavelength_stop_nm > spec.wavelength_start_nm:
        raise ConfigError("need n_points >= 16 and wavelength_stop_nm > wavelength_start_nm", path=path, field="circuit")
    if spec.noise_rel < 0:
        raise ConfigError("noise_rel must be >= 0", path=path, field="circuit.noise_rel")
    return spec


def parse_config(data: dict, path=None, extra_keys: dict | None = None) -> RunConfig:
    """Build a :class:`RunConfig` from an already-parsed TOML document.

    ``extra_keys`` lists additional top-level keys (name -> kind, or None for
    an untyped table) that a caller such as the scenario loader accepts.
    """
    path = str(path) if path is not None else None
    extra_keys = extra_keys or {}
    extra = {}
    for key, value in data.items():
        if key in SECTIONS:
            continue
        if key not in extra_keys:
            raise ConfigError(f"unknown section or key (allowed: {', '.join(sorted(SECTIONS))})", path=path, field=key)
        kind = extra_keys[key]
        extra[key] = value if kind is None else _coerce(value, kind, path, key)

    pump = _build(PumpConfig, take(data.get("pump", {}), PUMP_KEYS, path, "pump"), path, "pump")

    jkw = take(data.get("jsa", {}), JSA_KEYS, path, "jsa")
    pm = phase_match_from_pump(pump, jkw.get("signal_center_nm", 1540.0), jkw.get("idler_center_nm"))
    if "sum_freq_sigma_rad_per_ps" in jkw or "diff_freq_sigma_rad_per_ps" in jkw:
        pm = _build(PhaseMatchConfig, dict(
            signal_center_nm=pm.signal_center_nm,
            idler_center_nm=pm.idler_center_nm,
            sum_freq_sigma=jkw.get("sum_freq_sigma_rad_per_ps", pm.sum_freq_sigma),
            diff_freq_sigma=jkw.get("diff_freq_sigma_rad_per_ps", pm.diff_freq_sigma),
        ), path, "jsa")
    gkw = {k: jkw[k] for k in ("n_signal", "n_idler", "half_span_sigma") if k in jkw}
    for k in ("signal_range_nm", "idler_range_nm"):
        if k in jkw:
            if len(jkw[k]) != 2:
                raise ConfigError("expected [start, stop]", path=path, field=f"jsa.{k}")
            gkw[k] = tuple(jkw[k])
    grid = _build(GridSpec, gkw, path, "jsa")

    spectro = _build(SpectrographSpec, take(data.get("spectrograph", {}), SPECTROGRAPH_KEYS, path, "spectrograph"),
                     path, "spectrograph")
    circuit = _circuit(data.get("circuit", {}), path)
    skw = take(data.get("sweep", {}), SWEEP_KEYS, path, "sweep")
    if "powers_mw" in skw:
        skw["powers_mw"] = tuple(skw["powers_mw"])
    sweep = _build(SweepSpec, skw, path, "sweep")

    cache = {}

    def jsa_amp():
        if "jsa" not in cache:
            cache["jsa"] = compute_jsa(pump, pm, grid)
        return cache["jsa"]

    experiment = None
    if "source" in data:
        source = _source(data["source"], jsa_amp, path)
        ekw = take(data.get("experiment", {}), EXPERIMENT_KEYS, path, "experiment")
        cal = data["source"].get("calibration_per_mw")
        if cal is not None:
            ekw["calibration"] = float(cal)
        window = ekw.get("coincidence_window_ns", 2.5)
        ekw["detectors"] = _detectors(data.get("detectors", {}), window, path)
        experiment = _build(ExperimentConfig, dict(source=source, **ekw), path, "experiment")
        if spectro.enabled:
            from .spectrograph import SpectrographCalibration, spectral_sampling_mode

            jsi = jsi_from_jsa(jsa_amp())
            cals = []
            for ref, default in ((spectro.signal_reference_nm, pm.signal_center_nm),
                                 (spectro.idler_reference_nm, pm.idler_center_nm)):
                cals.append(_build(SpectrographCalibration, dict(
                    dispersion_ps_per_nm=spectro.dispersion_ps_per_nm,
                    reference_delay_ps=spectro.reference_delay_ps,
                    reference_wavelength_nm=ref if ref is not None else default,
                    resolution_nm=spectro.resolution_nm,
                ), path, "spectrograph"))
            try:
                experiment = spectral_sampling_mode(experiment, jsi, *cals)
            except ValueError as exc:
                if isinstance(exc, ConfigError) and exc.path is None:
                    raise ConfigError(str(exc), path=path, field=f"spectrograph.{exc.field}") from exc
                raise
    else:
        for sec in ("experiment", "detectors"):
            if sec in data:
                raise ConfigError("needs a [source] section", path=path, field=sec)
        if spectro.enabled:
            raise ConfigError("spectral sampling needs a [source] section", path=path, field="spectrograph.enabled")

    return RunConfig(experiment, pump, pm, grid, spectro, circuit, sweep, path, extra)


def read_toml(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError:
        raise
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}", path=str(path)) from exc


def load_config(path, extra_keys: dict | None = None) -> RunConfig:
    return parse_config(read_toml(Path(path)), path, extra_keys)


def loads_config(text: str, extra_keys: dict | None = None) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    return parse_config(data, None, extra_keys)
