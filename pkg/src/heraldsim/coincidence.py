"""
Streaming coincidence analysis of time-tag streams.

Tags are anchored to laser pulses: the detector tag on channel ``c`` at time
``t`` belongs to pulse ``p`` if it falls in the half-open window
``[L_p + d_c - w/2, L_p + d_c + w/2)`` around the channel's arrival delay
``d_c``. Each pulse then reduces to a 3-bit click mask (H, out1, out2) from
which every count class follows. Accidental (side-peak) coincidences pair
pulse ``p`` on one channel with pulse ``p + m`` on another, for
``m = +-1 .. +-n_side``.

Everything is single-pass over record chunks, with memory bounded by the
chunk size plus the span of one coincidence window.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import chain
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import chi2

from .errors import (
    InsufficientSidePeaks,
    NoHeraldChannel,
    NoLaserChannel,
    OutOfRange,
    SubPoissonianInput,
    UnsortedStream,
)
from .tagstream import CH_HERALD, CH_LASER, CH_OUT1, CH_OUT2, RECORD_DTYPE, TagStream

DETECTORS = (CH_HERALD, CH_OUT1, CH_OUT2)
BIT = {CH_HERALD: 1, CH_OUT1: 2, CH_OUT2: 4}
PAIRS = ((CH_HERALD, CH_OUT1), (CH_HERALD, CH_OUT2), (CH_OUT1, CH_OUT2))
MIN_SIDE_PEAKS = 10
SMALL_COUNT = 30
DELAY_PROBE_RECORDS = 1 << 22
DELAY_PROBE_TAGS = 2000


# ---------------------------------------------------------------------------
# counts and estimates
# ---------------------------------------------------------------------------

@dataclass
class CoincidenceCounts:
    """Count classes of one analysis; ``side`` maps a channel pair to counts per shift."""

    n_pulses: int = 0
    n_h: int = 0
    n_1: int = 0
    n_2: int = 0
    n_1h: int = 0
    n_2h: int = 0
    n_12: int = 0
    n_12h: int = 0
    shifts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    side: dict = field(default_factory=dict)
    window_ns: float = 2.5
    delays_ns: dict = field(default_factory=dict)
    pulse_anchored: bool = True

    @classmethod
    def from_values(cls, n_h, n_1h, n_2h, n_12h, **kw) -> "CoincidenceCounts":
        """Counts given directly (e.g. quoted from an experiment)."""
        return cls(n_h=int(n_h), n_1h=int(n_1h), n_2h=int(n_2h), n_12h=int(n_12h), **kw)

    def __post_init__(self):
        if self.n_12h > min(self.n_1h, self.n_2h) and (self.n_1h or self.n_2h):
            raise ValueError("triple coincidences exceed a double-coincidence class")
        for f in ("n_pulses", "n_h", "n_1", "n_2", "n_1h", "n_2h", "n_12", "n_12h"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0")

    def side_counts(self, a: int, b: int) -> np.ndarray:
        return np.asarray(self.side.get((a, b), np.zeros(0)), dtype=float)

    def side_mean(self, a: int, b: int) -> float:
        """Mean side-peak count, rescaled to the number of zero-shift pulse pairs."""
        s = self.side_counts(a, b)
        if s.size == 0:
            return float("nan")
        n = self.n_pulses
        if n > 0 and self.pulse_anchored:
            s = s * n / np.maximum(n - np.abs(self.shifts), 1)
        return float(np.mean(s))


@dataclass(frozen=True)
class Estimate:
    value: float
    sigma: float
    interval: tuple[float, float] | None = None  # exact Poisson (95 %) when counts are small
    note: str = ""

    def __iter__(self):
        return iter((self.value, self.sigma))

    def __format__(self, spec):
        spec = spec or ".6g"
        s = f"{self.value:{spec}} +- {self.sigma:{spec}}"
        if self.interval is not None:
            s += f" [{self.interval[0]:{spec}}, {self.interval[1]:{spec}}]"
        return s


def poisson_interval(n: int, confidence: float = 0.95) -> tuple[float, float]:
    """Exact (Garwood) interval for a Poisson mean; one-sided upper bound when n = 0."""
    alpha = 1.0 - confidence
    if n == 0:
        return 0.0, 0.5 * chi2.ppf(confidence, 2)
    return 0.5 * chi2.ppf(alpha / 2, 2 * n), 0.5 * chi2.ppf(1 - alpha / 2, 2 * n + 2)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else float("nan")


def g2_cross_from_counts(c: CoincidenceCounts) -> Estimate:
    """Zero-shift herald-signal coincidences over the mean side peak (both ports pooled)."""
    if c.shifts.size < MIN_SIDE_PEAKS:
        raise InsufficientSidePeaks(f"{c.shifts.size} side peaks available; need >= {MIN_SIDE_PEAKS}")
    n0 = c.n_1h + c.n_2h
    side = c.side_mean(CH_HERALD, CH_OUT1) + c.side_mean(CH_HERALD, CH_OUT2)
    total_side = float(np.sum(c.side_counts(CH_HERALD, CH_OUT1)) + np.sum(c.side_counts(CH_HERALD, CH_OUT2)))
    g = _ratio(n0, side)
    rel = math.sqrt(_ratio(1.0, n0) + _ratio(1.0, total_side)) if n0 > 0 and total_side > 0 else float("nan")
    return Estimate(g, abs(g) * rel)


def g2_auto_from_counts(c: CoincidenceCounts) -> Estimate:
    """4 N12 N / (N1 + N2)^2 with Poisson propagation."""
    if not c.pulse_anchored or c.n_pulses == 0:
        raise NoLaserChannel("unheralded auto-correlation needs the pulse count from a laser channel")
    s = c.n_1 + c.n_2
    g = _ratio(4.0 * c.n_12 * c.n_pulses, float(s) ** 2)
    rel = math.sqrt(_ratio(1.0, c.n_12) + _ratio(4.0, s)) if c.n_12 > 0 and s > 0 else float("nan")
    interval = None
    if c.n_12 < SMALL_COUNT and s > 0:
        lo, hi = poisson_interval(c.n_12)
        scale = 4.0 * c.n_pulses / float(s) ** 2
        interval = (lo * scale, hi * scale)
    return Estimate(g, abs(g) * rel if c.n_12 > 0 else float("nan"), interval)


def g2_heralded_from_counts(c: CoincidenceCounts) -> Estimate:
    """N12H NH / (N1H N2H), with an exact Poisson interval on N12H when it is small."""
    if c.n_h == 0:
        raise NoHeraldChannel("no herald events")
    den = float(c.n_1h) * float(c.n_2h)
    g = _ratio(c.n_12h * float(c.n_h), den)
    if c.n_12h > 0 and den > 0:
        rel = math.sqrt(1.0 / c.n_12h + 1.0 / c.n_1h + 1.0 / c.n_2h + 1.0 / c.n_h)
        sigma = g * rel
    else:
        sigma = float("nan")
    interval = None
    if c.n_12h < SMALL_COUNT and den > 0:
        lo, hi = poisson_interval(c.n_12h)
        scale = c.n_h / den
        interval = (lo * scale, hi * scale)
        if c.n_12h == 0:
            sigma = hi * scale
    return Estimate(g, sigma, interval, "one-sided 95% upper bound" if c.n_12h == 0 else "")


def mean_photon_from_car(g2_cross: float, exact: bool = False) -> float:
    """Mean pair number from the cross-correlation.

    The default ``1 / g2`` is the shortcut valid for g2 >> 1; ``exact=True``
    inverts g2 = 1 + 1/<n>.
    """
    if not g2_cross > 1:
        raise SubPoissonianInput(f"cross-correlation {g2_cross} <= 1 carries no pair information")
    return 1.0 / (g2_cross - 1.0) if exact else 1.0 / g2_cross


def schmidt_from_g2_auto(g2_auto: float) -> float:
    if not 1 < g2_auto <= 2:
        raise OutOfRange(f"g2_auto = {g2_auto} outside (1, 2]")
    return 1.0 / (g2_auto - 1.0)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class CorrelationReport:
    n_pulses: int
    n_h: int
    n_1: int
    n_2: int
    n_1h: int
    n_2h: int
    n_12: int
    n_12h: int
    window_ns: float
    car: Estimate | None
    g2_cross: Estimate | None
    g2_auto: Estimate | None
    g2_heralded: Estimate | None
    mean_n_estimate: Estimate | None
    schmidt_k_estimate: Estimate | None
    delays_ns: dict = field(default_factory=dict)
    background_corrected: bool = False
    counts: CoincidenceCounts | None = field(default=None, repr=False)

    COUNT_FIELDS = ("n_pulses", "n_h", "n_1", "n_2", "n_1h", "n_2h", "n_12", "n_12h")
    ESTIMATE_FIELDS = ("car", "g2_cross", "g2_auto", "g2_heralded", "mean_n_estimate", "schmidt_k_estimate")

    def to_text(self) -> str:
        """Key-value report, one quantity per line."""
        lines = [f"{k} = {getattr(self, k)}" for k in self.COUNT_FIELDS]
        lines.append(f"window_ns = {self.window_ns:g}")
        for ch, d in sorted(self.delays_ns.items()):
            lines.append(f"delay_ns.ch{ch} = {d:.4f}")
        lines.append(f"background_corrected = {str(self.background_corrected).lower()}")
        for k in self.ESTIMATE_FIELDS:
            e = getattr(self, k)
            if e is None:
                lines.append(f"{k} = n/a")
                continue
            lines.append(f"{k} = {e.value:.6g}")
            lines.append(f"{k}.sigma = {e.sigma:.6g}")
            if e.interval is not None:
                lines.append(f"{k}.interval95 = {e.interval[0]:.6g} {e.interval[1]:.6g}")
        return "\n".join(lines) + "\n"

    def to_table(self, sep: str = ",") -> str:
        """Delimited table: quantity, value, sigma."""
        rows = [sep.join(("quantity", "value", "sigma"))]
        rows += [sep.join((k, str(getattr(self, k)), "")) for k in self.COUNT_FIELDS]
        for k in self.ESTIMATE_FIELDS:
            e = getattr(self, k)
            if e is not None:
                rows.append(sep.join((k, f"{e.value:.6g}", f"{e.sigma:.6g}")))
        return "\n".join(rows) + "\n"


def _try(fn, *args):
    try:
        return fn(*args)
    except (InsufficientSidePeaks, NoLaserChannel, NoHeraldChannel):
        return None


def report_from_counts(c: CoincidenceCounts, corrected: bool = False) -> CorrelationReport:
    g2c = _try(g2_cross_from_counts, c)
    g2a = _try(g2_auto_from_counts, c)
    g2h = _try(g2_heralded_from_counts, c)
    car = mean_n = k = None
    if g2c is not None and math.isfinite(g2c.value):
        car = Estimate(g2c.value - 1.0, g2c.sigma)
        if g2c.value > 1:
            mean_n = Estimate(1.0 / g2c.value, g2c.sigma / g2c.value ** 2, note="1/g2 approximation")
    if g2a is not None and math.isfinite(g2a.value) and g2a.value > 1:
        k = Estimate(1.0 / (g2a.value - 1.0), g2a.sigma / (g2a.value - 1.0) ** 2)
    return CorrelationReport(
        c.n_pulses, c.n_h, c.n_1, c.n_2, c.n_1h, c.n_2h, c.n_12, c.n_12h, c.window_ns,
        car, g2c, g2a, g2h, mean_n, k, dict(c.delays_ns), corrected, c,
    )


# ---------------------------------------------------------------------------
# streaming pulse-anchored counting
# ---------------------------------------------------------------------------

def _check_sorted(ts: np.ndarray, last: int | None) -> None:
    if ts.size == 0:
        return
    if last is not None and int(ts[0]) < last:
        raise UnsortedStream(f"timestamp {int(ts[0])} after {last}")
    if ts.size > 1 and np.any(ts[1:] < ts[:-1]):
        i = int(np.argmax(ts[1:] < ts[:-1]))
        raise UnsortedStream(f"timestamp {int(ts[i + 1])} after {int(ts[i])}")


def _chunks_of(stream) -> tuple[Iterable[np.ndarray], int]:
    if isinstance(stream, TagStream):
        return stream.chunks(), stream.rep_period_ps
    if isinstance(stream, np.ndarray):
        return [stream], 0
    return stream, 0


def _peak_delay(offsets: np.ndarray, span: float, window_ps: float, bin_ps: float = 100.0) -> float | None:
    if offsets.size == 0:
        return None
    n_bins = max(1, int(math.ceil(span / bin_ps)))
    hist, edges = np.histogram(offsets, bins=n_bins, range=(0.0, n_bins * bin_ps))
    k = int(np.argmax(hist))
    center = 0.5 * (edges[k] + edges[k + 1])
    near = offsets[np.abs(offsets - center) < 0.5 * window_ps]
    return float(np.median(near)) if near.size else float(center)


def estimate_delays(records: np.ndarray, window_ps: float, period_ps: int = 0) -> dict[int, float]:
    """Arrival delay (ps) of each detector channel after its preceding laser tag.

    The delay is the peak of the histogram of t - L_prev, refined by the
    median of offsets within half a window of the peak. Delays are
    therefore taken modulo the pulse period.
    """
    ts = records["timestamp"].astype(np.int64)
    ch = records["channel"]
    lasers = ts[ch == CH_LASER]
    if lasers.size == 0:
        raise NoLaserChannel("no laser tags to estimate delays against")
    if period_ps <= 0:
        period_ps = int(np.median(np.diff(lasers))) if lasers.size > 1 else int(ts[-1] - lasers[0] + 1)
    out = {}
    for c in DETECTORS:
        t = ts[ch == c]
        j = np.searchsorted(lasers, t, side="right") - 1
        ok = j >= 0
        off = (t[ok] - lasers[j[ok]]).astype(float)
        d = _peak_delay(off, float(period_ps), window_ps)
        if d is not None:
            out[c] = d
    return out


class PulseCounter:
    """Incremental pulse-anchored coincidence counter.

    Feed sorted record chunks with :meth:`push` and call :meth:`finish` once.
    """

    def __init__(self, delays_ps: dict[int, float], window_ps: float, n_side: int = MIN_SIDE_PEAKS, sink=None):
        self.sink = sink  # optional callback(channels, global pulse ids, offsets from laser in ps)
        self.w = float(window_ps)
        self.d = {c: float(delays_ps.get(c, 0.5 * window_ps)) for c in DETECTORS}
        self.n_side = int(n_side)
        self.max_end = max(self.d[c] + 0.5 * self.w for c in DETECTORS)
        self.d_max = max(self.d.values())
        self.last_ts: int | None = None
        self.t_max: float = -math.inf
        # retained lasers: times and the global ordinal of the first one
        self.lasers = np.zeros(0, dtype=np.int64)
        self.laser0 = 0
        self.n_lasers = 0
        # open (incomplete) pulse masks start at global pulse `open0`
        self.masks = np.zeros(0, dtype=np.uint8)
        self.open0 = 0
        self.pend_t = np.zeros(0, dtype=np.int64)
        self.pend_c = np.zeros(0, dtype=np.uint16)
        # finished-pulse accumulators
        self.classes = np.zeros(8, dtype=np.int64)
        self.shifts = np.array([m for m in range(-self.n_side, self.n_side + 1) if m != 0], dtype=int)
        self.side = {p: np.zeros(self.shifts.size, dtype=np.int64) for p in PAIRS}
        self.tail = np.zeros(0, dtype=np.uint8)

    def push(self, rec: np.ndarray) -> None:
        if rec.size == 0:
            return
        ts = rec["timestamp"].astype(np.int64)
        _check_sorted(ts, self.last_ts)
        self.last_ts = int(ts[-1])
        self.t_max = float(ts[-1])
        ch = rec["channel"]
        new_l = ts[ch == CH_LASER]
        if new_l.size:
            self.lasers = np.concatenate([self.lasers, new_l])
            self.masks = np.concatenate([self.masks, np.zeros(new_l.size, dtype=np.uint8)])
            self.n_lasers += new_l.size
        det = ch < CH_LASER
        self._assign(np.concatenate([self.pend_t, ts[det]]), np.concatenate([self.pend_c, ch[det]]), self.t_max)
        self._finalize(self.t_max)
        self._trim()

    def _assign(self, t: np.ndarray, c: np.ndarray, t_max: float) -> None:
        if t.size == 0:
            self.pend_t, self.pend_c = t, c
            return
        d = np.zeros(t.size)
        for ch in DETECTORS:
            d[c == ch] = self.d[ch]
        x = t - d + 0.5 * self.w  # the owner is the last laser at or before x
        ready = x < t_max
        self.pend_t, self.pend_c = t[~ready], c[~ready]
        t, c, x, d = t[ready], c[ready], x[ready], d[ready]
        j = np.searchsorted(self.lasers, x, side="right") - 1
        ok = j >= 0
        ok[ok] &= self.lasers[j[ok]] > (t[ok] - d[ok] - 0.5 * self.w)
        pulse = self.laser0 + j[ok] - self.open0
        bits = np.zeros(ok.sum(), dtype=np.uint8)
        cc = c[ok]
        for ch in DETECTORS:
            bits[cc == ch] = BIT[ch]
        inside = pulse >= 0  # owners already finalised cannot occur for sorted input
        np.bitwise_or.at(self.masks, pulse[inside], bits[inside])
        if self.sink is not None and cc.size:
            jj = j[ok]
            self.sink(cc, self.laser0 + jj, t[ok] - self.lasers[jj])

    def _finalize(self, t_max: float) -> None:
        if math.isinf(t_max):
            k = self.n_lasers
        else:
            k = self.laser0 + int(np.searchsorted(self.lasers, t_max - self.max_end, side="right"))
        n_done = k - self.open0
        if n_done <= 0:
            return
        done, self.masks = self.masks[:n_done], self.masks[n_done:]
        self.open0 = k
        self.classes += np.bincount(done, minlength=8)
        ext = np.concatenate([self.tail, done])
        base = self.tail.size
        for (a, b), acc in self.side.items():
            ia = np.nonzero(ext & BIT[a])[0]
            for s, m in enumerate(self.shifts):
                j = ia + m
                # count each pulse pair once, when its later pulse is finalised
                later = j if m > 0 else ia
                sel = (j >= 0) & (j < ext.size) & (later >= base)
                acc[s] += int(np.count_nonzero(ext[j[sel]] & BIT[b]))
        self.tail = ext[-self.n_side:] if self.n_side else ext[:0]

    def _trim(self) -> None:
        # any tag still to come has x >= t_max - d_max + w/2 (pending ones even more)
        lo = self.t_max - self.d_max + 0.5 * self.w
        keep_from = max(0, int(np.searchsorted(self.lasers, lo, side="right")) - 1)
        keep_from = min(keep_from, self.open0 - self.laser0)
        if keep_from > 0:
            self.lasers = self.lasers[keep_from:]
            self.laser0 += keep_from

    def finish(self) -> CoincidenceCounts:
        self._assign(self.pend_t, self.pend_c, math.inf)
        self._finalize(math.inf)
        cls = self.classes
        idx = np.arange(8)

        def n(mask):
            return int(cls[(idx & mask) == mask].sum())

        return CoincidenceCounts(
            n_pulses=self.n_lasers, n_h=n(1), n_1=n(2), n_2=n(4), n_1h=n(3), n_2h=n(5), n_12=n(6), n_12h=n(7),
            shifts=self.shifts.copy(), side={p: v.copy() for p, v in self.side.items()},
            window_ns=self.w / 1e3, delays_ns={c: v / 1e3 for c, v in self.d.items()},
        )


def _probe(chunks: Iterable[np.ndarray]) -> tuple[list[np.ndarray], Iterable[np.ndarray]]:
    """Buffer leading chunks until every detector has enough tags for a delay estimate."""
    it = iter(chunks)
    buf, n, per = [], 0, np.zeros(4, dtype=np.int64)
    for chunk in it:
        buf.append(chunk)
        n += chunk.size
        per += np.bincount(chunk["channel"], minlength=4)[:4]
        if n >= DELAY_PROBE_RECORDS or np.all(per[:3] >= DELAY_PROBE_TAGS):
            break
    return buf, chain(buf, it)


def count_coincidences(
    stream,
    window_ns: float = 2.5,
    delays_ns: dict | None = None,
    n_side: int = MIN_SIDE_PEAKS,
    period_ps: int | None = None,
) -> CoincidenceCounts:
    """Single-pass count classes and side peaks of a stream.

    Uses the laser channel when present; otherwise falls back to
    herald-anchored delay windows (see :func:`count_coincidences_delay`).
    Channel delays are estimated from the start of the stream unless given.
    """
    chunks, header_period = _chunks_of(stream)
    period = period_ps or header_period
    window_ps = window_ns * 1e3
    buf, all_chunks = _probe(chunks)
    head = np.concatenate(buf) if buf else np.empty(0, dtype=RECORD_DTYPE)
    has_laser = bool(np.any(head["channel"] == CH_LASER))
    if not has_laser:
        return count_coincidences_delay(all_chunks, window_ns, delays_ns, n_side, period, head)
    if period and period < window_ps:
        raise ValueError("pulse period is shorter than the coincidence window")
    if delays_ns is None:
        delays_ps = estimate_delays(head, window_ps, period)
    else:
        delays_ps = {int(c): float(v) * 1e3 for c, v in delays_ns.items()}
    counter = PulseCounter(delays_ps, window_ps, n_side)
    for chunk in all_chunks:
        counter.push(chunk)
    return counter.finish()


# ---------------------------------------------------------------------------
# fallback without a laser channel
# ---------------------------------------------------------------------------

def _relative_delays(head: np.ndarray, window_ps: float, period: int) -> dict[int, float]:
    ts = head["timestamp"].astype(np.int64)
    ch = head["channel"]
    th = ts[ch == CH_HERALD]
    out = {CH_HERALD: 0.0}
    half = period / 2 if period else 50_000.0
    for c in (CH_OUT1, CH_OUT2):
        t = ts[ch == c]
        lo = np.searchsorted(t, th - half, side="left")
        hi = np.searchsorted(t, th + half, side="left")
        cnt = hi - lo
        if cnt.sum() == 0:
            out[c] = 0.0
            continue
        rep = np.repeat(np.arange(th.size), cnt)
        pos = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(lo, cnt)
        diff = (t[pos] - th[rep]).astype(float) + half
        out[c] = _peak_delay(diff, 2 * half, window_ps) - half
    return out


def count_coincidences_delay(
    chunks: Iterable[np.ndarray],
    window_ns: float,
    delays_ns: dict | None,
    n_side: int,
    period_ps: int,
    head: np.ndarray | None = None,
) -> CoincidenceCounts:
    """Herald-anchored counting for streams without laser tags.

    For each herald at t_H, a signal tag on channel c coincides if it lies
    in [t_H + D_c - w/2, t_H + D_c + w/2) with D_c the signal-herald delay;
    side peaks use D_c + m T. Pulse-based quantities (N_pulses, N_12) are
    unavailable.
    """
    w = window_ns * 1e3
    if n_side > 0 and not period_ps:
        raise InsufficientSidePeaks("pulse period unknown: side peaks need the stream's rep_period_ps")
    if delays_ns is not None:
        dh = float(delays_ns.get(CH_HERALD, 0.0)) * 1e3
        rel = {c: float(delays_ns.get(c, 0.0)) * 1e3 - dh for c in (CH_OUT1, CH_OUT2)}
    else:
        rel = _relative_delays(head if head is not None else np.empty(0, RECORD_DTYPE), w, period_ps)
    shifts = np.array([m for m in range(-n_side, n_side + 1) if m != 0], dtype=int)
    offs = np.concatenate([[0], shifts]) * float(period_ps or 0)
    reach_hi = max(rel[CH_OUT1], rel[CH_OUT2]) + offs.max() + 0.5 * w
    reach_lo = min(rel[CH_OUT1], rel[CH_OUT2]) + offs.min() - 0.5 * w
    hits = {c: np.zeros(offs.size, dtype=np.int64) for c in (CH_OUT1, CH_OUT2)}
    both = 0
    singles = np.zeros(3, dtype=np.int64)
    n_h = 0
    pend_h = np.zeros(0, dtype=np.int64)
    sig = {c: np.zeros(0, dtype=np.int64) for c in (CH_OUT1, CH_OUT2)}
    last = None

    def settle(heralds):
        nonlocal both
        present = {}
        for c in (CH_OUT1, CH_OUT2):
            t = sig[c]
            lo = heralds[:, None] + rel[c] + offs[None, :] - 0.5 * w
            a = np.searchsorted(t, lo, side="left")
            b = np.searchsorted(t, lo + w, side="left")
            p = b > a
            hits[c] += p.sum(axis=0)
            present[c] = p[:, 0]
        both += int(np.count_nonzero(present[CH_OUT1] & present[CH_OUT2]))

    for chunk in chunks:
        if chunk.size == 0:
            continue
        ts = chunk["timestamp"].astype(np.int64)
        _check_sorted(ts, last)
        last = int(ts[-1])
        ch = chunk["channel"]
        singles += np.bincount(ch[ch < 3], minlength=3)[:3]
        new_h = ts[ch == CH_HERALD]
        n_h += new_h.size
        for c in (CH_OUT1, CH_OUT2):
            sig[c] = np.concatenate([sig[c], ts[ch == c]])
        pend_h = np.concatenate([pend_h, new_h])
        ready = pend_h + reach_hi < last
        if np.any(ready):
            settle(pend_h[ready])
            pend_h = pend_h[~ready]
        floor = (pend_h[0] if pend_h.size else last) + reach_lo
        for c in sig:
            sig[c] = sig[c][np.searchsorted(sig[c], floor, side="left"):]
    if pend_h.size:
        settle(pend_h)
    side = {
        (CH_HERALD, CH_OUT1): hits[CH_OUT1][1:].copy(),
        (CH_HERALD, CH_OUT2): hits[CH_OUT2][1:].copy(),
    }
    return CoincidenceCounts(
        n_pulses=0, n_h=n_h, n_1=int(singles[1]), n_2=int(singles[2]),
        n_1h=int(hits[CH_OUT1][0]), n_2h=int(hits[CH_OUT2][0]), n_12=0, n_12h=both,
        shifts=shifts if period_ps else shifts[:0], side=side, window_ns=window_ns,
        delays_ns={c: v / 1e3 for c, v in {CH_HERALD: 0.0, **rel}.items()}, pulse_anchored=False,
    )


# ---------------------------------------------------------------------------
# public estimators on streams
# ---------------------------------------------------------------------------

def _counts(data, window_ns, **kw) -> CoincidenceCounts:
    if isinstance(data, CoincidenceCounts):
        return data
    return count_coincidences(data, window_ns, **kw)


def g2_cross_estimate(stream, window_ns: float = 2.5, **kw) -> Estimate:
    """Signal-idler cross-correlation; CAR is this minus one."""
    return g2_cross_from_counts(_counts(stream, window_ns, **kw))


def g2_auto_estimate(stream, window_ns: float = 2.5, **kw) -> Estimate:
    """Unheralded signal auto-correlation from per-pulse singles and coincidences."""
    return g2_auto_from_counts(_counts(stream, window_ns, **kw))


def g2_heralded_estimate(stream, window_ns: float = 2.5, **kw) -> Estimate:
    """Heralded auto-correlation N12H NH / (N1H N2H)."""
    return g2_heralded_from_counts(_counts(stream, window_ns, **kw))


def analyze(
    stream,
    window_ns: float = 2.5,
    delays_ns: dict | None = None,
    n_side: int = MIN_SIDE_PEAKS,
    dark_probs: Sequence[float] | None = None,
) -> CorrelationReport:
    """Full report of a stream; with ``dark_probs`` the counts are background corrected."""
    counts = count_coincidences(stream, window_ns, delays_ns, n_side)
    report = report_from_counts(counts)
    if dark_probs is not None:
        report = background_correction(report, dark_probs)
    return report


# ---------------------------------------------------------------------------
# background correction
# ---------------------------------------------------------------------------

def _no_click_probs(c: CoincidenceCounts) -> dict[str, float]:
    n = float(c.n_pulses)
    return {
        "h": 1 - c.n_h / n,
        "1": 1 - c.n_1 / n,
        "2": 1 - c.n_2 / n,
        "1h": 1 - (c.n_1 + c.n_h - c.n_1h) / n,
        "2h": 1 - (c.n_2 + c.n_h - c.n_2h) / n,
        "12": 1 - (c.n_1 + c.n_2 - c.n_12) / n,
        "12h": 1 - (c.n_1 + c.n_2 + c.n_h - c.n_12 - c.n_1h - c.n_2h + c.n_12h) / n,
    }


def background_correction(report: CorrelationReport, dark_probs: Sequence[float]) -> CorrelationReport:
    """Remove independent per-window dark clicks from every count class.

    A dark count is independent of the photons, so for any set S of
    channels P(no click in S) = P_photon(no click in S) * prod_{c in S}(1 - d_c).
    Dividing out the dark factor and re-applying inclusion-exclusion gives
    photon-only counts; side peaks (products of independent singles) are
    rescaled by the ratio of corrected to raw singles. Counts are clipped at
    zero, and the subtracted amount is added to the Poisson variance.
    """
    d_h, d_1, d_2 = (float(x) for x in dark_probs)
    c = report.counts
    if c is None or c.n_pulses == 0:
        raise NoLaserChannel("background correction needs pulse-anchored counts")
    if d_h == d_1 == d_2 == 0:
        return report
    q = _no_click_probs(c)
    f = {"h": 1 - d_h, "1": 1 - d_1, "2": 1 - d_2}
    f["1h"], f["2h"], f["12"] = f["1"] * f["h"], f["2"] * f["h"], f["1"] * f["2"]
    f["12h"] = f["1"] * f["2"] * f["h"]
    qp = {k: min(1.0, q[k] / f[k]) for k in q}
    n = float(c.n_pulses)
    p = {
        "h": 1 - qp["h"], "1": 1 - qp["1"], "2": 1 - qp["2"],
        "1h": 1 - qp["1"] - qp["h"] + qp["1h"],
        "2h": 1 - qp["2"] - qp["h"] + qp["2h"],
        "12": 1 - qp["1"] - qp["2"] + qp["12"],
        "12h": 1 - qp["1"] - qp["2"] - qp["h"] + qp["12"] + qp["1h"] + qp["2h"] - qp["12h"],
    }
    new = {k: max(0.0, v * n) for k, v in p.items()}
    raw_single = {CH_HERALD: c.n_h, CH_OUT1: c.n_1, CH_OUT2: c.n_2}
    cor_single = {CH_HERALD: new["h"], CH_OUT1: new["1"], CH_OUT2: new["2"]}
    side = {}
    for (a, b), s in c.side.items():
        scale = _ratio(cor_single[a] * cor_single[b], float(raw_single[a]) * raw_single[b])
        side[(a, b)] = np.asarray(s, dtype=float) * (scale if math.isfinite(scale) else 0.0)
    cc = replace(
        c, n_h=_round(new["h"]), n_1=_round(new["1"]), n_2=_round(new["2"]), n_1h=_round(new["1h"]),
        n_2h=_round(new["2h"]), n_12=_round(new["12"]), n_12h=min(_round(new["12h"]), _round(new["1h"]), _round(new["2h"])),
        side=side,
    )
    out = report_from_counts(cc, corrected=True)
    # inflate the heralded-g2 and auto-g2 uncertainties by the subtracted background
    out.g2_heralded = _inflate(out.g2_heralded, [(c.n_12h, new["12h"]), (c.n_1h, new["1h"]), (c.n_2h, new["2h"])])
    out.g2_auto = _inflate(out.g2_auto, [(c.n_12, new["12"])])
    out.g2_cross = _inflate(out.g2_cross, [(c.n_1h + c.n_2h, new["1h"] + new["2h"])])
    if out.g2_cross is not None and out.car is not None:
        out.car = Estimate(out.car.value, out.g2_cross.sigma)
    return out


def _round(x: float) -> int:
    return int(round(x))


def _inflate(e: Estimate | None, pairs) -> Estimate | None:
    """Add the variance of the subtracted background to an estimate.

    A corrected count N_corr = N_raw - B has variance N_raw + B, i.e.
    2 (N_raw - N_corr) more than the Poisson variance N_corr already used.
    """
    if e is None or not math.isfinite(e.value):
        return e
    extra = 0.0
    for raw, corr in pairs:
        if corr <= 0:
            return Estimate(e.value, float("inf"), e.interval, "background-dominated")
        extra += 2.0 * (raw - corr) / corr ** 2
    if e.value == 0:
        return e
    return Estimate(e.value, math.sqrt(e.sigma ** 2 + e.value ** 2 * max(extra, 0.0)), e.interval, e.note)


def estimate_dark_probabilities(
    stream, window_ns: float, delays_ns: dict, offset_fraction: float = 0.5
) -> tuple[float, float, float]:
    """Per-window dark probabilities from an off-peak window shifted by a fraction of the period.

    Useful for free-running detectors only; gated detectors produce no
    off-peak clicks.
    """
    chunks, period = _chunks_of(stream)
    if not period:
        raise ValueError("pulse period unknown")
    shifted = {int(c): float(v) + offset_fraction * period / 1e3 for c, v in delays_ns.items()}
    shifted = {c: v % (period / 1e3) for c, v in shifted.items()}
    counts = count_coincidences(TagStream(lambda: iter(chunks), period), window_ns, shifted, n_side=0)
    n = max(counts.n_pulses, 1)
    return counts.n_h / n, counts.n_1 / n, counts.n_2 / n


# ---------------------------------------------------------------------------
# start-stop histogram
# ---------------------------------------------------------------------------

def histogram_delays(stream, ch_a: int, ch_b: int, bin_ps: float, span_ns: float) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of t_b - t_a over [-span, +span) for all tag pairs within the span.

    Single pass: each pair is counted once, when its later tag (in stream
    order) arrives, against a bounded buffer of earlier tags. For
    ``ch_a == ch_b`` a tag is never paired with itself, so only
    non-negative differences occur. Returns (bin_edges_ps, counts).
    """
    chunks, _ = _chunks_of(stream)
    span = span_ns * 1e3
    n_bins = int(round(2 * span / bin_ps))
    edges = -span + bin_ps * np.arange(n_bins + 1)
    counts = np.zeros(n_bins, dtype=np.int64)
    same = ch_a == ch_b
    buf_t = np.zeros(0, dtype=np.int64)  # earlier tags of a or b within the span
    buf_c = np.zeros(0, dtype=np.uint16)
    last = None

    def accumulate(t_new, src_t, lo_idx, hi_idx, sign):
        cnt = hi_idx - lo_idx
        tot = int(cnt.sum())
        if tot == 0:
            return
        rep = np.repeat(np.arange(t_new.size), cnt)
        pos = np.arange(tot) - np.repeat(np.cumsum(cnt) - cnt, cnt) + np.repeat(lo_idx, cnt)
        diff = sign * (t_new[rep] - src_t[pos]).astype(float)
        h, _ = np.histogram(diff, bins=edges)
        counts[:] += h

    for chunk in chunks:
        if chunk.size == 0:
            continue
        ts = chunk["timestamp"].astype(np.int64)
        _check_sorted(ts, last)
        last = int(ts[-1])
        sel = (chunk["channel"] == ch_a) | (chunk["channel"] == ch_b)
        t_all = np.concatenate([buf_t, ts[sel]])
        c_all = np.concatenate([buf_c, chunk["channel"][sel]])
        n_old = buf_t.size
        # positions in the combined array are stream positions
        a_pos = np.nonzero(c_all == ch_a)[0]
        b_pos = np.nonzero(c_all == ch_b)[0]
        ta, tb = t_all[a_pos], t_all[b_pos]
        new_b = b_pos >= n_old
        # later b against earlier a: d = t_b - t_a >= 0
        hi = np.searchsorted(a_pos, b_pos[new_b], side="left")
        lo = np.searchsorted(ta, tb[new_b] - span, side="left")
        accumulate(tb[new_b], ta, np.minimum(lo, hi), hi, 1)
        if not same:
            # later a against earlier b: d = t_b - t_a <= 0
            new_a = a_pos >= n_old
            hi = np.searchsorted(b_pos, a_pos[new_a], side="left")
            lo = np.searchsorted(tb, ta[new_a] - span, side="left")
            accumulate(ta[new_a], tb, np.minimum(lo, hi), hi, -1)
        keep = t_all >= last - span
        buf_t, buf_c = t_all[keep], c_all[keep]
    return edges, counts


def write_histogram(edges: np.ndarray, counts: np.ndarray, path) -> None:
    """Two-column text: bin centre (ps), count."""
    centers = 0.5 * (edges[:-1] + edges[1:])
    np.savetxt(path, np.column_stack([centers, counts]), fmt="%.1f %d", header="delay_ps count")


__all__ = [
    "CoincidenceCounts", "CorrelationReport", "Estimate", "PulseCounter", "analyze",
    "background_correction", "count_coincidences", "count_coincidences_delay", "estimate_delays",
    "estimate_dark_probabilities", "g2_auto_estimate", "g2_cross_estimate", "g2_heralded_estimate",
    "g2_auto_from_counts", "g2_cross_from_counts", "g2_heralded_from_counts", "histogram_delays",
    "mean_photon_from_car", "poisson_interval", "report_from_counts", "schmidt_from_g2_auto",
    "write_histogram",
]
