import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from heraldsim.montecarlo import (
    DetectorModel,
    ExperimentConfig,
    _Plan,
    dark_probability_from_rate,
    default_detectors,
    expected_rates,
    sample_pulse,
    simulate,
    simulation_stream,
)
from heraldsim.squeezed_state import SqueezedSourceModel
from heraldsim.tagstream import CH_HERALD, CH_LASER, CH_OUT1, CH_OUT2, FLAG_DARK


def make_config(n_pulses=200_000, mean_n=0.05, k=1.4, **kw):
    kw.setdefault("signal_efficiency", 0.8)
    kw.setdefault("herald_efficiency", 0.5)
    return ExperimentConfig(SqueezedSourceModel.from_schmidt(mean_n, k), n_pulses=n_pulses, rng_seed=11, **kw)


def run(config, chunk=1 << 20, workers=1):
    return np.concatenate(list(simulate(config, chunk, workers)))


def thermal_total(mode_means, n_max):
    dist = np.zeros(n_max + 1)
    dist[0] = 1.0
    n = np.arange(n_max + 1)
    for mu in mode_means:
        lam2 = mu / (1 + mu)
        dist = np.convolve(dist, (1 - lam2) * lam2 ** n)[: n_max + 1]
    return dist


def test_deterministic_across_workers_and_chunks():
    cfg = make_config(150_000)
    ref = run(cfg)
    for chunk, workers in [(4096, 1), (10_000, 4), (7777, 16), (1 << 20, 4)]:
        assert np.array_equal(ref, run(cfg, chunk, workers)), (chunk, workers)


def test_seed_changes_stream():
    cfg = make_config(50_000)
    assert not np.array_equal(run(cfg), run(cfg.with_(rng_seed=12)))


def test_stream_is_time_ordered_and_has_all_lasers():
    rec = run(make_config(100_000))
    assert np.all(np.diff(rec["timestamp"].astype(np.int64)) >= 0)
    lasers = rec[rec["channel"] == CH_LASER]
    assert lasers.size == 100_000
    assert np.array_equal(lasers["pulse_index"], np.arange(100_000))


def test_pair_number_distribution_is_thermal():
    model = SqueezedSourceModel((0.3, 0.15, 0.05))
    plan = _Plan(ExperimentConfig(model, n_pulses=1))
    n = 400_000
    pulses, counts = plan.pair_numbers(np.arange(n, dtype=np.int64))
    observed = np.bincount(counts, minlength=1)
    observed[0] = n - pulses.size
    n_max = 6
    obs = np.append(observed[:n_max], observed[n_max:].sum())
    p = thermal_total(model.mode_means, 80)
    exp = np.append(p[:n_max], p[n_max:].sum()) * n
    assert stats.chisquare(obs, exp / exp.sum() * obs.sum()).pvalue > 1e-4
    assert np.isclose(counts.sum() / n, model.mean_n, rtol=0.01)


def test_max_pairs_cap():
    plan = _Plan(ExperimentConfig(SqueezedSourceModel((2.0,)), n_pulses=1, max_pairs=1))
    _, counts = plan.pair_numbers(np.arange(10_000, dtype=np.int64))
    assert counts.max() == 1


def test_singles_and_coincidences_match_exact_rates():
    cfg = make_config(400_000, mean_n=0.1, detectors=default_detectors(jitter_fwhm_ps=0.0))
    rec = run(cfg)
    n = cfg.n_pulses
    sets = {c: set(rec["pulse_index"][rec["channel"] == c].tolist()) for c in (CH_HERALD, CH_OUT1, CH_OUT2)}
    measured = {
        "h": len(sets[CH_HERALD]), "1": len(sets[CH_OUT1]), "2": len(sets[CH_OUT2]),
        "1h": len(sets[CH_HERALD] & sets[CH_OUT1]), "2h": len(sets[CH_HERALD] & sets[CH_OUT2]),
    }
    want = expected_rates(cfg)
    for key, m in measured.items():
        mean = want[key] * n
        assert abs(m - mean) < 4 * math.sqrt(mean), key


def test_one_click_per_channel_per_pulse():
    rec = run(make_config(100_000, mean_n=0.5, k=1.0))
    for c in (CH_HERALD, CH_OUT1, CH_OUT2):
        p = rec["pulse_index"][rec["channel"] == c]
        assert np.unique(p).size == p.size


def test_gated_dark_counts_fall_in_window():
    det = {c: replace(d, dark_count_prob_per_window=0.02) for c, d in default_detectors(0.0).items()}
    cfg = ExperimentConfig(SqueezedSourceModel((0.0,)), n_pulses=100_000, detectors=det, rng_seed=5)
    rec = run(cfg)
    clicks = rec[rec["channel"] != CH_LASER]
    assert np.all(clicks["flags"] == FLAG_DARK)
    for c in (CH_HERALD, CH_OUT1, CH_OUT2):
        sel = clicks[clicks["channel"] == c]
        assert abs(sel.size - 2000) < 4 * math.sqrt(2000)
        off = sel["timestamp"].astype(np.int64) - sel["pulse_index"].astype(np.int64) * cfg.period_ps
        centre = det[c].delay_ns * 1e3
        assert np.all(np.abs(off - centre) <= 0.5 * cfg.window_ps + 1)


def test_free_running_dark_counts_spread_over_period():
    det = {c: replace(d, dark_count_prob_per_window=0.002, gated=False) for c, d in default_detectors(0.0).items()}
    cfg = ExperimentConfig(SqueezedSourceModel((0.0,)), n_pulses=100_000, detectors=det, rng_seed=5)
    rec = run(cfg)
    sel = rec[rec["channel"] == CH_OUT1]
    expected = 100_000 * 0.002 * cfg.period_ps / cfg.window_ps
    assert abs(sel.size - expected) < 4 * math.sqrt(expected)
    off = sel["timestamp"].astype(np.int64) - sel["pulse_index"].astype(np.int64) * cfg.period_ps
    assert stats.kstest(off / cfg.period_ps, "uniform").pvalue > 1e-4


def test_dead_time_enforced():
    det = {c: replace(d, dead_time_ns=400.0) for c, d in default_detectors(250.0).items()}
    cfg = make_config(100_000, mean_n=0.5, detectors=det, herald_efficiency=1.0)
    rec = run(cfg, chunk=3000, workers=4)
    assert np.array_equal(rec, run(cfg))
    for c in (CH_HERALD, CH_OUT1, CH_OUT2):
        t = rec["timestamp"][rec["channel"] == c].astype(np.int64)
        assert np.all(np.diff(t) >= 400_000)


def test_sample_pulse_matches_full_run():
    cfg = make_config(20_000, mean_n=0.5)
    rec = run(cfg)
    for p in (0, 17, 19_999):
        tags = sample_pulse(cfg, p)
        sel = rec[rec["pulse_index"] == p]
        assert [t.timestamp_ps for t in tags] == sel["timestamp"].tolist()
        assert [t.channel for t in tags] == sel["channel"].tolist()


def test_simulation_stream_reiterable():
    s = simulation_stream(make_config(20_000), chunk_pulses=5000)
    assert np.array_equal(s.to_array(), s.to_array())


def test_calibration_scales_source():
    cfg = ExperimentConfig(SqueezedSourceModel.from_schmidt(0.01, 1.4), pump_power_mw=30.0, calibration=0.023 / 60)
    src = cfg.effective_source()
    assert np.isclose(src.mean_n, 0.0115)
    assert np.isclose(src.schmidt_k, 1.4)


def test_dark_probability_from_rate():
    assert np.isclose(dark_probability_from_rate(100.0, 2.5), 2.5e-7, rtol=1e-6)
    assert dark_probability_from_rate(0.0, 2.5) == 0.0
    with pytest.raises(ValueError):
        dark_probability_from_rate(-1.0, 2.5)


@pytest.mark.parametrize("kw", [
    {"herald_efficiency": 1.5},
    {"signal_efficiency": (0.5, -0.1)},
    {"coincidence_window_ns": 0.0},
    {"n_pulses": -1},
    {"detectors": {CH_HERALD: DetectorModel(delay_ns=0.5)}},
    {"detectors": {**default_detectors(), CH_OUT1: DetectorModel(delay_ns=1.0)}},
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        ExperimentConfig(SqueezedSourceModel.from_schmidt(0.02, 1.4), **kw)


def test_detector_validation():
    with pytest.raises(ValueError):
        DetectorModel(efficiency=1.1)
    with pytest.raises(ValueError):
        DetectorModel(jitter_fwhm_ps=-1)
