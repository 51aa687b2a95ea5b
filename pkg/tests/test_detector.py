import numpy as np
import pytest

from emanakey import (
    DegenerateTraceError,
    DetectorConfig,
    NoSignalError,
    SampleRateError,
    apply_channel,
    bandpass,
    build_keystroke_transaction,
    detect,
    form_edge_series,
    get_preset,
    key_by_label,
    match,
    normalize,
    radiate,
    threshold_and_peaks,
)
from emanakey.channel import EmanationTrace
from emanakey.detector import DEFAULT_CONFIG, amplitude_envelope, _band_envelope
from emanakey.edges import EdgeSeries

from oracle import agreement_score_oracle

FS = 250e6
CFG = DEFAULT_CONFIG


def tone(freq, n=8192, fs=FS):
    return np.sin(2 * np.pi * freq * np.arange(n) / fs)


def identity_trace(label="a"):
    clean = radiate(build_keystroke_transaction(key_by_label(label)))
    return apply_channel(clean, get_preset("identity"), FS)


# --- config ---------------------------------------------------------------


def test_config_defaults_are_operating_values():
    assert CFG.band_low == 10e6
    assert CFG.band_high == 18e6
    assert CFG.amplitude == 3.3
    assert CFG.skip_fraction == 0.01
    assert CFG.floor == pytest.approx(3.3 / 2)
    assert CFG.min_peak_separation == pytest.approx(2 / 3)
    assert CFG.proximity_window == pytest.approx(1 / 3)
    assert CFG.offset_search == 2


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(band_low=20e6, band_high=18e6)
    with pytest.raises(ValueError):
        DetectorConfig(skip_fraction=0.6)
    with pytest.raises(ValueError):
        DetectorConfig(filter_taps=100)


def test_config_file_roundtrip(tmp_path):
    cfg = DetectorConfig(offset_search=3, zero_floor=1.0)
    path = tmp_path / "detector.json"
    cfg.to_file(path)
    assert DetectorConfig.from_file(path) == cfg


# --- bandpass -------------------------------------------------------------


def test_bandpass_passes_center_tone():
    out = bandpass(tone(14e6), FS)
    gain_db = 20 * np.log10(np.abs(out[2000:-2000]).max())
    assert abs(gain_db) < 1.0


def test_bandpass_rejects_fm_band_tone():
    out = bandpass(tone(100e6), FS)
    assert 20 * np.log10(np.abs(out[2000:-2000]).max() + 1e-300) < -40.0


def test_bandpass_removes_fm_interference_scenario():
    x = tone(14e6) + 5.0 * tone(95.5e6) + 3.0 * tone(104e6)
    out = bandpass(x, FS)
    spec = np.abs(np.fft.rfft(out))
    freqs = np.fft.rfftfreq(out.size, 1 / FS)
    fm = spec[(freqs > 88e6) & (freqs < 108e6)].max()
    band = spec[(freqs > 13e6) & (freqs < 15e6)].max()
    assert fm < band * 10 ** (-40 / 20)


def test_bandpass_requires_adequate_rate():
    with pytest.raises(SampleRateError):
        bandpass(tone(5e6, fs=30e6), 30e6)


def test_fused_envelope_matches_composition():
    trace = identity_trace("g")
    fused = _band_envelope(trace.samples, FS, CFG)
    composed = amplitude_envelope(bandpass(trace.samples, FS, CFG))
    peak = composed.max()
    assert np.abs(fused[400:-400] - composed[400:-400]).max() < 1e-3 * peak


# --- normalize ------------------------------------------------------------


def test_normalize_scale_invariant():
    rng = np.random.default_rng(3)
    x = rng.normal(size=4000)
    a = normalize(x)
    b = normalize(123.456 * x)
    assert np.allclose(a, b, rtol=1e-9)


def test_normalize_constant_trace():
    out = normalize(np.ones(1000))
    assert np.allclose(out, 3.3)


def test_normalize_skips_lone_spike():
    x = np.ones(1000)
    x[500] = 1000.0  # single huge glitch atop a flat signal
    out = normalize(x)
    assert out[499] == pytest.approx(3.3)  # signal scaled by its own level
    assert out[500] == pytest.approx(3.3)  # spike clipped to A
    assert np.abs(out).max() <= 3.3 + 1e-12


def test_normalize_rejects_all_zero():
    with pytest.raises(DegenerateTraceError):
        normalize(np.zeros(100))


# --- threshold_and_peaks ---------------------------------------------------


def test_peaks_respect_min_separation():
    n = 4000
    x = np.zeros(n)
    # two candidate bumps half a bit apart; only the larger survives
    bit_samples = FS / 12e6
    i0 = 2000
    i1 = i0 + int(0.5 * bit_samples)
    x[i0 - 1 : i0 + 2] = [2.0, 3.0, 2.0]
    x[i1 - 1 : i1 + 2] = [1.8, 2.6, 1.8]
    times = threshold_and_peaks(x, FS)
    assert times.size == 1
    assert times[0] == pytest.approx(i0 / FS)


def test_peaks_clean_two_edges():
    n = 4000
    x = np.zeros(n)
    bit_samples = int(FS / 12e6)
    for i in (1000, 1000 + 2 * bit_samples):
        x[i - 1 : i + 2] = [2.0, 3.0, 2.0]
    times = threshold_and_peaks(x, FS)
    assert times.size == 2
    assert times[0] == pytest.approx(1000 / FS, abs=0.6 / FS)


def test_peaks_below_floor_ignored():
    x = np.zeros(2000)
    x[1000] = 1.0  # below A/2
    with pytest.raises(NoSignalError):
        threshold_and_peaks(x, FS)


def test_peak_count_matches_reference_on_clean_trace(refs):
    trace = identity_trace("a")
    envelope = _band_envelope(trace.samples, FS, CFG)
    peaks = threshold_and_peaks(normalize(envelope), FS)
    assert peaks.size == refs[key_by_label("a")].ones


def test_no_peak_pair_violates_separation_on_detection(refs):
    preset = get_preset("open-space-3.8m")
    clean = radiate(build_keystroke_transaction(key_by_label("w")))
    trace = apply_channel(clean, preset, FS, rng=np.random.default_rng(42))
    envelope = _band_envelope(trace.samples, FS, CFG)
    peaks = threshold_and_peaks(normalize(envelope), FS)
    min_gap = np.diff(peaks).min()
    assert min_gap >= (2 / 3) * (1 / 12e6) * 0.999


# --- form_edge_series -------------------------------------------------------


def make_ref(n=20):
    slots = np.zeros(n, dtype=np.uint8)
    slots[[0, 3, 7, 12]] = 1
    return EdgeSeries(slots=slots, bit_width=1 / 12e6)


def test_form_series_exact_centers():
    ref = make_ref()
    bit = ref.bit_width
    peaks = np.array([0.0, 3 * bit, 7 * bit, 12 * bit]) + 5e-6
    series = form_edge_series(peaks, ref)
    assert np.array_equal(series.slots, ref.slots)


def test_form_series_tolerates_jitter():
    ref = make_ref()
    bit = ref.bit_width
    rng = np.random.default_rng(8)
    jitter = rng.uniform(-0.3 * bit, 0.3 * bit, size=3)
    peaks = np.concatenate(([0.0], np.array([3, 7, 12]) * bit + jitter)) + 5e-6
    series = form_edge_series(peaks, ref)
    assert np.array_equal(series.slots, ref.slots)


def test_form_series_spurious_peak_adds_one():
    ref = make_ref()
    bit = ref.bit_width
    peaks = np.array([0.0, 3 * bit, 5 * bit, 7 * bit, 12 * bit]) + 5e-6
    series = form_edge_series(peaks, ref)
    assert series.slots[5] == 1
    assert int(series.slots.sum()) == ref.ones + 1


def test_form_series_peak_outside_proximity_ignored():
    ref = make_ref()
    bit = ref.bit_width
    peaks = np.array([0.0, 3 * bit, 8.5 * bit, 12 * bit]) + 5e-6
    series = form_edge_series(peaks, ref)
    assert series.slots[8] == 0
    assert series.slots[9] == 0


def test_form_series_needs_peaks():
    with pytest.raises(NoSignalError):
        form_edge_series(np.array([]), make_ref())


# --- match ------------------------------------------------------------------


def test_match_self_is_perfect(refs):
    target = key_by_label("Q")
    result = match(refs[target], refs)
    assert result.key == target
    assert result.score == 1.0
    assert result.margin > 0


def test_match_survives_single_flip(refs):
    target = key_by_label("Q")
    flipped = refs[target].slots.copy()
    flipped[40] ^= 1
    result = match(
        EdgeSeries(slots=flipped, bit_width=refs[target].bit_width), refs
    )
    assert result.key == target


def test_match_all_zero_series_agrees_with_oracle(refs):
    width = refs.max_slots()
    zero = EdgeSeries(slots=np.zeros(width, dtype=np.uint8), bit_width=1 / 12e6)
    result = match(zero, refs)
    # independent scoring sweep over every reference
    best_key, best_score = None, -1.0
    for key in refs.keys_in_order():
        score = agreement_score_oracle([0] * width, list(refs[key].slots))
        if score > best_score:
            best_key, best_score = key, score
    assert result.key == best_key
    assert result.score == pytest.approx(best_score)


def test_match_reports_tie(refs):
    # a series equidistant between the two closest references triggers
    # the tie flag and resolves to the lower key index
    from emanakey import min_pairwise_distance

    d_min, ka, kb = min_pairwise_distance(refs)
    assert d_min % 2 == 0
    a, b = refs[ka], refs[kb]
    width = min(len(a), len(b))
    diff = np.flatnonzero(a.slots[:width] != b.slots[:width])
    hybrid = a.slots[:width].copy()
    flip = diff[: d_min // 2]
    hybrid[flip] = b.slots[flip]
    result = match(EdgeSeries(slots=hybrid, bit_width=a.bit_width), refs)
    assert result.score == result.runner_up_score
    assert result.tie
    assert result.key.index < result.runner_up.index


def test_match_score_normalized_by_reference_length(refs):
    target = key_by_label("A")  # one of the longer (stuffed) references
    result = match(refs[target], refs)
    assert result.key == target
    assert result.score == 1.0


# --- detect -----------------------------------------------------------------


def test_detect_identity_roundtrip(refs):
    for label in ("a", "Z", "0", "ENTER", "SHIFT"):
        trace = identity_trace(label)
        result = detect(trace, refs)
        assert result.key == key_by_label(label)
        assert result.score == 1.0
        assert result.margin > 0


def test_detect_scale_invariance_exact(refs):
    preset = get_preset("open-space-3m")
    clean = radiate(build_keystroke_transaction(key_by_label("m")))
    trace = apply_channel(clean, preset, FS, rng=np.random.default_rng(17))
    base = detect(trace, refs)
    for c in (1e-3, 0.5, 2.0, 1e3):
        scaled = EmanationTrace(
            samples=trace.samples.astype(np.float64) * c,
            sample_rate=trace.sample_rate,
        )
        result = detect(scaled, refs)
        assert result.key == base.key
        assert result.score == base.score
        assert result.alignment_offset == base.alignment_offset
        assert np.array_equal(
            result.detected_edges.slots, base.detected_edges.slots
        )


def test_detect_no_signal_is_typed_error(refs):
    quiet = EmanationTrace(samples=np.zeros(4000, dtype=np.float32), sample_rate=FS)
    with pytest.raises(NoSignalError):
        detect(quiet, refs)


def test_detect_survives_early_noise_peak(refs):
    # a lone pre-signal burst must not wreck the alignment grid
    label = "t"
    trace = identity_trace(label)
    samples = trace.samples.astype(np.float64)
    burst_t = 0.35e-6  # inside the leading pad
    from emanakey.channel import _glitch_burst

    burst = _glitch_burst(0.9 * np.abs(samples).max(), FS)
    i = int(burst_t * FS)
    samples[i : i + burst.size] += burst
    result = detect(EmanationTrace(samples=samples, sample_rate=FS), refs)
    assert result.key == key_by_label(label)


def test_detect_deterministic(refs):
    preset = get_preset("open-space-3.8m")
    clean = radiate(build_keystroke_transaction(key_by_label("5")))
    trace = apply_channel(clean, preset, FS, rng=np.random.default_rng(23))
    r1 = detect(trace, refs)
    r2 = detect(trace, refs)
    assert r1.key == r2.key
    assert r1.score == r2.score
    assert r1.runner_up == r2.runner_up
    assert np.array_equal(r1.detected_edges.slots, r2.detected_edges.slots)


def test_detect_result_invariants(refs):
    trace = identity_trace("f")
    result = detect(trace, refs)
    assert 0.0 <= result.runner_up_score <= result.score <= 1.0
    assert result.margin >= 0.0
    assert result.key != result.runner_up


def test_accuracy_monotone_in_noise(refs):
    # statistical: mean accuracy must not rise as noise grows
    from emanakey.channel import synth_dataset
    from dataclasses import replace

    base = get_preset("open-space-3m")
    keys = refs.keys_in_order()
    densities = [2e-9, 4e-9, 6.5e-9, 1e-8]
    accs = []
    for i, density in enumerate(densities):
        preset = replace(base, noise_density=density, seed=900 + i)
        good = total = 0
        for trace in synth_dataset(keys, preset, repeats=8):
            try:
                good += detect(trace, refs).key == trace.ground_truth
            except NoSignalError:
                pass
            total += 1
        accs.append(good / total)
    for lo, hi in zip(accs[1:], accs[:-1]):
        assert lo <= hi + 0.02, f"accuracy rose with noise: {accs}"
