"""
Pulse-by-pulse Monte-Carlo of the heralded-source experiment.

For every laser pulse the total pair number is drawn exactly from the
multimode thermal (Bose-Einstein) statistics of the source model. Each idler
photon may produce a herald click, each signal photon is routed by the
splitter to port 1 or 2 and may be detected. Detectors are threshold
detectors: one click per channel per pulse at the earliest photon or dark
count, plus Gaussian timing jitter. A laser tag (channel 3) marks every
pulse.

Random numbers come from :mod:`heraldsim.rng`, keyed by (seed, purpose,
channel) and indexed by pulse and photon ordinal, so the output stream is
independent of chunk size and worker count. Chunks of pulses are generated
independently (optionally in threads) and then pass through one ordered
stage that merges them by timestamp and applies detector dead time.
"""
from __future__ import annotations

import math
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from . import rng
from .squeezed_state import SqueezedSourceModel
from .tagstream import (
    CH_HERALD,
    CH_LASER,
    CH_OUT1,
    CH_OUT2,
    FLAG_DARK,
    RECORD_DTYPE,
    TagStream,
    TimeTag,
    array_to_tags,
    read_tagstream,
    write_tagstream,
)

DETECTOR_CHANNELS = (CH_HERALD, CH_OUT1, CH_OUT2)
JITTER_SIGMA_BOUND = 9.0  # Box-Muller deviates never exceed ~8.6 sigma
DEFAULT_CHUNK_PULSES = 1 << 20
FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class DetectorModel:
    """Threshold single-photon detector.

    ``efficiency`` multiplies the collection efficiency of its arm.
    ``delay_ns`` is the mean photon arrival time after the laser tag; gated
    detectors only register clicks inside the coincidence window centred
    there.
    """

    efficiency: float = 1.0
    dark_count_prob_per_window: float = 0.0
    jitter_fwhm_ps: float = 0.0
    gated: bool = True
    dead_time_ns: float = 0.0
    delay_ns: float = 20.0

    def __post_init__(self):
        if not 0 <= self.efficiency <= 1:
            raise ValueError("detector efficiency must be in [0, 1]")
        if not 0 <= self.dark_count_prob_per_window <= 1:
            raise ValueError("dark-count probability must be in [0, 1]")
        if self.jitter_fwhm_ps < 0 or self.dead_time_ns < 0 or self.delay_ns < 0:
            raise ValueError("jitter, dead time and delay must be >= 0")

    @property
    def jitter_sigma_ps(self) -> float:
        return self.jitter_fwhm_ps / FWHM_PER_SIGMA


def default_detectors(jitter_fwhm_ps: float = 250.0, dark: float = 0.0) -> dict[int, DetectorModel]:
    return {
        CH_HERALD: DetectorModel(jitter_fwhm_ps=jitter_fwhm_ps, dark_count_prob_per_window=dark, delay_ns=20.0),
        CH_OUT1: DetectorModel(jitter_fwhm_ps=jitter_fwhm_ps, dark_count_prob_per_window=dark, delay_ns=30.0),
        CH_OUT2: DetectorModel(jitter_fwhm_ps=jitter_fwhm_ps, dark_count_prob_per_window=dark, delay_ns=35.0),
    }


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to simulate one run.

    When ``calibration`` (mean pairs per pulse per mW) and ``pump_power_mw``
    are both given, the source's mode means are rescaled to a total of
    ``calibration * pump_power_mw``; otherwise ``source`` is used as is.
    ``signal_efficiency`` is one value for both output ports or a pair.
    ``max_pairs`` caps the pair number per pulse (used for idealised tests).
    ``spectral`` attaches per-pair wavelengths (see
    :func:`heraldsim.spectrograph.spectral_sampling_mode`).
    """

    source: SqueezedSourceModel
    pump_power_mw: float | None = None
    calibration: float | None = None
    rep_rate_mhz: float = 3.8
    splitter_ratio: float = 0.495
    herald_efficiency: float = 1.0
    signal_efficiency: float | tuple[float, float] = 1.0
    detectors: dict = field(default_factory=default_detectors)
    coincidence_window_ns: float = 2.5
    n_pulses: int = 1
    rng_seed: int = 0
    max_pairs: int | None = None
    spectral: object | None = None

    def __post_init__(self):
        if self.n_pulses < 0:
            raise ValueError("n_pulses must be >= 0")
        if not self.coincidence_window_ns > 0:
            raise ValueError("coincidence window must be > 0")
        if not self.rep_rate_mhz > 0:
            raise ValueError("repetition rate must be > 0")
        for name in ("splitter_ratio", "herald_efficiency"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if not all(0 <= e <= 1 for e in self.signal_efficiencies):
            raise ValueError("signal efficiencies must be in [0, 1]")
        missing = [c for c in DETECTOR_CHANNELS if c not in self.detectors]
        if missing:
            raise ValueError(f"no detector model for channel(s) {missing}")
        if self.max_pairs is not None and self.max_pairs < 0:
            raise ValueError("max_pairs must be >= 0")
        if self.max_pairs is None and not all(math.isfinite(m) for m in self.source.mode_means):
            raise ValueError("infinite mode means need max_pairs")
        w_ps = self.window_ps
        if self.period_ps < w_ps:
            raise ValueError("pulse period must be at least the coincidence window")
        for c in DETECTOR_CHANNELS:
            d = self.detectors[c]
            lo = d.delay_ns * 1e3 - 0.5 * w_ps
            if not d.gated:
                lo = min(lo, d.delay_ns * 1e3 - JITTER_SIGMA_BOUND * d.jitter_sigma_ps - self._spectral_spread_ps(c))
            if lo < 0:
                raise ValueError(
                    f"channel {c}: delay {d.delay_ns} ns is too short for the window/jitter; "
                    "clicks could precede their laser tag"
                )

    def _spectral_spread_ps(self, channel: int) -> float:
        if self.spectral is None:
            return 0.0
        return float(self.spectral.max_delay_spread_ps(channel))

    @property
    def period_ps(self) -> int:
        return int(round(1e6 / self.rep_rate_mhz))

    @property
    def window_ps(self) -> float:
        return self.coincidence_window_ns * 1e3

    @property
    def signal_efficiencies(self) -> tuple[float, float]:
        e = self.signal_efficiency
        if isinstance(e, (tuple, list)):
            return float(e[0]), float(e[1])
        return float(e), float(e)

    @property
    def channel_efficiencies(self) -> dict[int, float]:
        s1, s2 = self.signal_efficiencies
        return {
            CH_HERALD: self.herald_efficiency * self.detectors[CH_HERALD].efficiency,
            CH_OUT1: s1 * self.detectors[CH_OUT1].efficiency,
            CH_OUT2: s2 * self.detectors[CH_OUT2].efficiency,
        }

    def effective_source(self) -> SqueezedSourceModel:
        if self.calibration is None or self.pump_power_mw is None:
            return self.source
        total = self.source.mean_n
        if total == 0:
            return self.source
        return self.source.scaled(self.calibration * self.pump_power_mw / total)

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


def dark_probability_from_rate(rate_hz: float, window_ns: float) -> float:
    """Probability of at least one dark count in a window, for a Poisson dark rate."""
    if rate_hz < 0 or window_ns < 0:
        raise ValueError("rate and window must be >= 0")
    return -math.expm1(-rate_hz * window_ns * 1e-9)


# ---------------------------------------------------------------------------
# per-chunk generation
# ---------------------------------------------------------------------------

class _Plan:
    """Per-run constants shared by all chunk workers (read-only)."""

    def __init__(self, config: ExperimentConfig):
        self.config = config
        seed = config.rng_seed
        mu = np.asarray(config.effective_source().mode_means, dtype=float)
        mu = mu[mu > 0]
        self.mu = mu
        with np.errstate(divide="ignore"):
            self.q = 1.0 / (1.0 + mu)  # P(n_k = 0)
            self.log_p = np.log(mu / (1.0 + mu)) if mu.size else mu  # log ratio of the geometric law
        self.cum_any = 1.0 - np.cumprod(self.q) if mu.size else np.zeros(0)
        self.p_any = float(self.cum_any[-1]) if mu.size else 0.0
        self.eff = config.channel_efficiencies
        self.period = config.period_ps
        self.w = config.window_ps
        self.delay = {c: config.detectors[c].delay_ns * 1e3 for c in DETECTOR_CHANNELS}
        self.keys = {
            "pairs": rng.stream_key(seed, rng.PAIRS),
            "modes": rng.stream_key(seed, rng.PAIRS, 1),
            "idler": rng.stream_key(seed, rng.IDLER),
            "signal": rng.stream_key(seed, rng.SIGNAL),
            "spectrum": rng.stream_key(seed, rng.SPECTRUM),
        }
        for c in DETECTOR_CHANNELS:
            self.keys[("dark", c)] = rng.stream_key(seed, rng.DARK, c)
            self.keys[("dark_t", c)] = rng.stream_key(seed, rng.DARK_TIME, c)
            self.keys[("jitter", c)] = rng.stream_key(seed, rng.JITTER, c)

    def pair_numbers(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pulses with at least one pair and their exact total pair numbers."""
        if self.mu.size == 0 or idx.size == 0:
            return idx[:0], np.zeros(0, dtype=np.int64)
        u = rng.uniform(self.keys["pairs"], idx)
        has = u < self.p_any
        hit = idx[has]
        if hit.size == 0:
            return hit, np.zeros(0, dtype=np.int64)
        # the same uniform, conditioned below p_any, picks the first occupied mode
        first = np.searchsorted(self.cum_any, u[has], side="right")
        n_modes = self.mu.size
        total = np.ones(hit.size, dtype=np.float64)
        for k in range(n_modes):
            active = first <= k
            if not np.any(active):
                continue
            uk = rng.uniform(self.keys["modes"], hit[active], np.uint64(k))
            with np.errstate(divide="ignore", invalid="ignore"):
                extra = np.floor(np.log(uk) / self.log_p[k])
            total[active] += np.where(np.isfinite(extra), extra, np.inf)
        # the conditioned mode already holds the one guaranteed pair counted above
        cap = self.config.max_pairs
        if cap is not None:
            total = np.minimum(total, cap)
        if not np.all(np.isfinite(total)):
            raise OverflowError("unbounded pair number; set max_pairs")
        n = total.astype(np.int64)
        keep = n > 0
        return hit[keep], n[keep]

    def clicks(self, idx: np.ndarray) -> dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]]:
        """Per channel: (pulse_index, timestamp_ps, flags) of every click in these pulses."""
        cfg = self.config
        pulses, npairs = self.pair_numbers(idx)
        photon_pulse = np.repeat(pulses, npairs)
        starts = np.cumsum(npairs) - npairs
        ordinal = (np.arange(photon_pulse.size, dtype=np.int64) - np.repeat(starts, npairs)).astype(np.uint64)
        pp = photon_pulse.astype(np.uint64)

        lam_s = lam_i = None
        if cfg.spectral is not None and pp.size:
            lam_s, lam_i = cfg.spectral.wavelengths_from_uniform(rng.uniform(self.keys["spectrum"], pp, ordinal))

        r = cfg.splitter_ratio
        u_i = rng.uniform(self.keys["idler"], pp, ordinal)
        u_s = rng.uniform(self.keys["signal"], pp, ordinal)
        route = {
            CH_HERALD: (u_i < self.eff[CH_HERALD], lam_i),
            CH_OUT1: (u_s < r * self.eff[CH_OUT1], lam_s),
            CH_OUT2: ((u_s >= r) & (u_s < r + (1.0 - r) * self.eff[CH_OUT2]), lam_s),
        }
        out = {}
        for c, (det, lam) in route.items():
            d = cfg.detectors[c]
            p_idx = photon_pulse[det]
            if lam is not None:
                offset = cfg.spectral.delay_ps(c, lam[det])
            else:
                offset = np.full(p_idx.size, self.delay[c])
            # earliest photon per pulse (photons are grouped by pulse already)
            if p_idx.size:
                order = np.lexsort((offset, p_idx))
                p_sorted, off_sorted = p_idx[order], offset[order]
                first = np.ones(p_sorted.size, dtype=bool)
                first[1:] = p_sorted[1:] != p_sorted[:-1]
                ph_pulse, ph_off = p_sorted[first], off_sorted[first]
            else:
                ph_pulse, ph_off = p_idx, offset
            if d.jitter_sigma_ps > 0 and ph_pulse.size:
                ph_off = ph_off + d.jitter_sigma_ps * rng.normal(self.keys[("jitter", c)], ph_pulse.astype(np.uint64))
            if d.gated and ph_pulse.size:
                lo = self.delay[c] - 0.5 * self.w
                inside = (ph_off >= lo) & (ph_off < lo + self.w)
                ph_pulse, ph_off = ph_pulse[inside], ph_off[inside]

            dk_pulse, dk_off = self._darks(c, idx)
            out[c] = self._combine(ph_pulse, ph_off, dk_pulse, dk_off)
        return out

    def _darks(self, c: int, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        d = self.config.detectors[c]
        p = d.dark_count_prob_per_window
        if p <= 0 or idx.size == 0:
            return idx[:0], np.zeros(0)
        if not d.gated:
            p = min(1.0, p * self.period / self.w)
        hit = idx[rng.uniform(self.keys[("dark", c)], idx) < p]
        u = rng.uniform(self.keys[("dark_t", c)], hit)
        if d.gated:
            off = self.delay[c] - 0.5 * self.w + self.w * u
        else:
            off = self.period * u
        return hit, off

    def _combine(self, ph_pulse, ph_off, dk_pulse, dk_off):
        pulse = np.concatenate([ph_pulse, dk_pulse])
        off = np.concatenate([ph_off, dk_off])
        flags = np.concatenate([np.zeros(ph_pulse.size, np.uint16), np.full(dk_pulse.size, FLAG_DARK, np.uint16)])
        ts = pulse.astype(np.int64) * self.period + np.rint(off).astype(np.int64)
        if dk_pulse.size and ph_pulse.size:
            order = np.lexsort((flags, ts, pulse))
            pulse, ts, flags = pulse[order], ts[order], flags[order]
            first = np.ones(pulse.size, dtype=bool)
            first[1:] = pulse[1:] != pulse[:-1]
            pulse, ts, flags = pulse[first], ts[first], flags[first]
        return pulse, ts, flags

    def chunk(self, start: int, stop: int) -> tuple[np.ndarray, np.ndarray]:
        """Laser records (already ordered) and unordered click records of pulses [start, stop)."""
        idx = np.arange(start, stop, dtype=np.int64)
        per = self.clicks(idx)
        parts = [(np.full(p.size, c, np.uint16), p, t, f) for c, (p, t, f) in per.items()]
        ch = np.concatenate([x[0] for x in parts])
        pl = np.concatenate([x[1] for x in parts])
        ts = np.concatenate([x[2] for x in parts])
        fl = np.concatenate([x[3] for x in parts])
        clicks = np.empty(ch.size, dtype=RECORD_DTYPE)
        clicks["timestamp"], clicks["channel"] = ts, ch
        clicks["flags"], clicks["pulse_index"] = fl, pl
        lasers = np.empty(idx.size, dtype=RECORD_DTYPE)
        lasers["timestamp"] = idx * self.period
        lasers["channel"] = CH_LASER
        lasers["flags"] = 0
        lasers["pulse_index"] = idx
        return lasers, clicks


def sort_records(rec: np.ndarray) -> np.ndarray:
    """Total order used for every stream: timestamp, channel, pulse index, flags."""
    order = np.lexsort((rec["flags"], rec["pulse_index"], rec["channel"], rec["timestamp"]))
    return rec[order]


def merge_sorted(lasers: np.ndarray, clicks: np.ndarray) -> np.ndarray:
    """Merge sorted click records into the (sorted) laser records.

    Detector channels are numbered below the laser channel, so at equal
    timestamps a click goes before the laser tag.
    """
    if clicks.size == 0:
        return lasers
    pos = np.searchsorted(lasers["timestamp"], clicks["timestamp"], side="left")
    out = np.empty(lasers.size + clicks.size, dtype=RECORD_DTYPE)
    slot = pos + np.arange(clicks.size)
    mask = np.ones(out.size, dtype=bool)
    mask[slot] = False
    out[slot] = clicks
    out[mask] = lasers
    return out


class _DeadTime:
    """Per-channel dead time applied in stream order, with state across chunks."""

    def __init__(self, config: ExperimentConfig):
        self.dead = {c: config.detectors[c].dead_time_ns * 1e3 for c in DETECTOR_CHANNELS}
        self.last = {c: None for c in DETECTOR_CHANNELS}

    def active(self) -> bool:
        return any(v > 0 for v in self.dead.values())

    def apply(self, clicks: np.ndarray) -> np.ndarray:
        keep = np.ones(clicks.size, dtype=bool)
        ch = clicks["channel"]
        ts = clicks["timestamp"].astype(np.int64)
        for c, dead in self.dead.items():
            sel = np.nonzero(ch == c)[0]
            if sel.size == 0:
                continue
            t = ts[sel]
            if dead <= 0:
                self.last[c] = int(t[-1])
                continue
            prev = self.last[c]
            gaps = np.diff(t, prepend=t[0] if prev is None else prev)
            if prev is None:
                gaps[0] = np.iinfo(np.int64).max
            if np.all(gaps >= dead):
                self.last[c] = int(t[-1])
                continue
            # a click only blocks later ones if it was itself accepted
            last = prev
            for j, tj in enumerate(t.tolist()):
                if last is not None and tj - last < dead:
                    keep[sel[j]] = False
                else:
                    last = tj
            self.last[c] = last
        return clicks[keep]


def _chunk_bounds(n: int, size: int) -> list[tuple[int, int]]:
    return [(a, min(a + size, n)) for a in range(0, n, size)]


def simulate(
    config: ExperimentConfig, chunk_pulses: int = DEFAULT_CHUNK_PULSES, workers: int = 1
) -> Iterator[np.ndarray]:
    """Yield the run's records in final order, one array per pulse chunk.

    The concatenated output depends only on the configuration (seed
    included), never on ``chunk_pulses`` or ``workers``.
    """
    plan = _Plan(config)
    bounds = _chunk_bounds(config.n_pulses, max(1, int(chunk_pulses)))
    dead = _DeadTime(config)
    carry = np.empty(0, dtype=RECORD_DTYPE)

    def ordered(lasers, clicks, stop):
        nonlocal carry
        clicks = sort_records(np.concatenate([carry, clicks]))
        # clicks of later chunks are never earlier than their own laser tag
        split = np.searchsorted(clicks["timestamp"], np.uint64(stop * plan.period), side="left")
        now, carry = clicks[:split], clicks[split:]
        if dead.active():
            now = dead.apply(now)
        return merge_sorted(lasers, now)

    if workers <= 1:
        for a, b in bounds:
            lasers, clicks = plan.chunk(a, b)
            yield ordered(lasers, clicks, b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            pending: deque = deque()
            it = iter(bounds)
            for a, b in it:
                pending.append((b, pool.submit(plan.chunk, a, b)))
                if len(pending) >= 2 * workers:
                    break
            while pending:
                b, fut = pending.popleft()
                lasers, clicks = fut.result()
                nxt = next(it, None)
                if nxt is not None:
                    pending.append((nxt[1], pool.submit(plan.chunk, *nxt)))
                yield ordered(lasers, clicks, b)
    if carry.size:
        tail = dead.apply(carry) if dead.active() else carry
        yield tail


def simulation_stream(
    config: ExperimentConfig, chunk_pulses: int = DEFAULT_CHUNK_PULSES, workers: int = 1
) -> TagStream:
    """Lazily generated, re-iterable stream (regenerated on every pass)."""
    return TagStream(lambda: simulate(config, chunk_pulses, workers), config.period_ps)


def simulate_run(
    config: ExperimentConfig, path=None, chunk_pulses: int = DEFAULT_CHUNK_PULSES, workers: int = 1
) -> TagStream:
    """Run the simulation; with ``path`` the stream is written there and read back lazily."""
    stream = simulation_stream(config, chunk_pulses, workers)
    if path is None:
        return stream
    write_tagstream(path, stream, config.period_ps)
    return read_tagstream(path)


def sample_pulse(config: ExperimentConfig, pulse_index: int, rng_seed: int | None = None) -> list[TimeTag]:
    """Tags produced by one pulse (laser tag included), in stream order.

    ``rng_seed`` overrides the configured seed; the draw depends only on
    (seed, pulse_index), exactly as inside a full run. Dead time is not
    applied.
    """
    if rng_seed is not None:
        config = config.with_(rng_seed=rng_seed)
    plan = _Plan(config)
    lasers, clicks = plan.chunk(pulse_index, pulse_index + 1)
    return array_to_tags(merge_sorted(lasers, sort_records(clicks)))


def expected_rates(config: ExperimentConfig) -> dict[str, float]:
    """Exact per-pulse click probabilities for this configuration (no jitter/gating losses)."""
    from .squeezed_state import click_probabilities

    eff = config.channel_efficiencies
    dark = [config.detectors[c].dark_count_prob_per_window for c in DETECTOR_CHANNELS]
    return click_probabilities(
        config.effective_source(), eff[CH_HERALD], eff[CH_OUT1], eff[CH_OUT2],
        config.splitter_ratio, dark,
    )

