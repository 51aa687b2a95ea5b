import numpy as np
import pytest

from emanakey import (
    ChannelPreset,
    Interferer,
    PulseShape,
    UnknownPresetError,
    apply_channel,
    available_presets,
    build_keystroke_transaction,
    distance_to_gain_db,
    edges_analytic,
    get_preset,
    inject_glitch,
    key_by_label,
    radiate,
    synth_dataset,
)
from emanakey.channel import KNEE_GAIN_DB
from emanakey.edges import EdgeSeries

FS = 250e6


def make_clean(label="a", pulse=None):
    return radiate(build_keystroke_transaction(key_by_label(label)), pulse=pulse)


# --- radiate -------------------------------------------------------------


def test_radiate_zero_edges_is_silent():
    series = EdgeSeries(slots=np.zeros(50, dtype=np.uint8), bit_width=1 / 12e6)
    wave = radiate(series, sample_rate=FS)
    assert np.all(wave == 0.0)


def test_radiate_single_edge_single_pulse():
    slots = np.zeros(50, dtype=np.uint8)
    slots[25] = 1
    series = EdgeSeries(slots=slots, bit_width=1 / 12e6)
    wave = radiate(series, sample_rate=FS, pad_before=1e-6, pad_after=1e-6)
    peak_t = np.argmax(np.abs(wave)) / FS
    expected = 1e-6 + 25 / 12e6
    assert peak_t == pytest.approx(expected, abs=4e-9)
    # energy confined near the pulse
    window = np.abs(wave[int((expected - 0.3e-6) * FS) : int((expected + 0.3e-6) * FS)])
    assert np.abs(wave).sum() == pytest.approx(window.sum(), rel=1e-6)


def test_radiate_bursts_align_with_reference_slots():
    frame = build_keystroke_transaction(key_by_label("a"))
    series = edges_analytic(frame)
    wave = radiate(frame, sample_rate=FS)
    bit = series.bit_width
    envelope = np.abs(wave)
    edge_energy = 0.0
    empty_energy = 0.0
    for s in range(len(series)):
        t = 1e-6 + s * bit
        seg = envelope[int((t - bit / 4) * FS) : int((t + bit / 4) * FS)]
        if series.slots[s]:
            edge_energy += float(np.max(seg))
        else:
            empty_energy += float(np.max(seg))
    assert edge_energy / series.ones > 4 * empty_energy / (len(series) - series.ones)


def test_pulse_spectrum_centered_in_band():
    pulse = PulseShape()
    t = np.arange(-400, 401) / FS
    w = pulse.waveform(t)
    spec = np.abs(np.fft.rfft(w, 1 << 14)) ** 2
    freqs = np.fft.rfftfreq(1 << 14, 1 / FS)
    total = spec.sum()
    in_band = spec[(freqs >= 10e6) & (freqs <= 18e6)].sum()
    assert in_band / total > 0.40
    peak_freq = freqs[np.argmax(spec)]
    assert 10e6 < peak_freq < 18e6


# --- apply_channel -------------------------------------------------------


def test_identity_channel_is_transparent(identity_preset):
    clean = make_clean()
    trace = apply_channel(clean, identity_preset, FS)
    assert np.allclose(trace.samples, clean.astype(np.float32), atol=0)
    assert trace.sample_rate == FS


def test_seed_determinism():
    preset = get_preset("open-space-3m")
    clean = make_clean()
    t1 = apply_channel(clean, preset, FS)
    t2 = apply_channel(clean, preset, FS)
    assert np.array_equal(t1.samples, t2.samples)


def test_shielding_attenuates_signal_only():
    base = ChannelPreset(name="t", gain_db=-60.0, noise_density=2e-9, seed=5)
    shielded = ChannelPreset(
        name="t", gain_db=-60.0, noise_density=2e-9, shielding_db=30.0, seed=5
    )
    clean = make_clean().astype(np.float64)
    t0 = apply_channel(clean, base, FS).samples.astype(np.float64)
    t1 = apply_channel(clean, shielded, FS).samples.astype(np.float64)
    # same seed -> identical noise, so subtracting the known signal parts
    # must leave the same residue: the signal dropped by exactly 30 dB
    sig0 = clean * 10 ** (-60 / 20)
    sig1 = clean * 10 ** (-90 / 20)
    assert np.allclose(t0 - sig0, t1 - sig1, rtol=0, atol=1e-9)
    assert sig1.max() / sig0.max() == pytest.approx(10 ** (-30 / 20), rel=1e-12)


def test_linearity_of_deterministic_path(identity_preset):
    clean = make_clean()
    t1 = apply_channel(clean, identity_preset, FS).samples.astype(np.float64)
    t2 = apply_channel(3.0 * clean, identity_preset, FS).samples.astype(np.float64)
    assert np.allclose(t2, 3.0 * t1, rtol=1e-6)


def test_coupling_gain_scales_signal():
    p1 = ChannelPreset(name="c", gain_db=-60.0, seed=1, body_coupling_gain=1.0)
    p4 = ChannelPreset(name="c", gain_db=-60.0, seed=1, body_coupling_gain=4.0)
    clean = make_clean()
    t1 = apply_channel(clean, p1, FS).samples
    t4 = apply_channel(clean, p4, FS).samples
    assert np.allclose(t4, 4.0 * t1, rtol=1e-6)


def test_fm_interferers_visible_raw_and_removed_by_bandpass():
    from emanakey.detector import bandpass

    preset = get_preset("open-space-3m")
    clean = make_clean()
    trace = apply_channel(clean, preset, FS)
    spec = np.abs(np.fft.rfft(trace.samples.astype(np.float64)))
    freqs = np.fft.rfftfreq(trace.samples.size, 1 / FS)
    fm = (freqs >= 88e6) & (freqs <= 108e6)
    band = (freqs >= 10e6) & (freqs <= 18e6)
    assert spec[fm].max() > spec[band].max()  # interference dominates raw

    filtered = bandpass(trace.samples, FS)
    fspec = np.abs(np.fft.rfft(filtered))
    in_band_peak = fspec[band].max()
    out_band_peak = fspec[fm].max()
    assert out_band_peak < in_band_peak * 10 ** (-40 / 20)


def test_interferer_band_placement():
    for name in available_presets():
        preset = get_preset(name)
        for interferer in preset.interferers:
            lo = interferer.center_hz - interferer.bandwidth_hz / 2
            hi = interferer.center_hz + interferer.bandwidth_hz / 2
            in_fm = 88e6 <= lo and hi <= 108e6
            mobile = interferer.center_hz >= 600e6
            assert in_fm or mobile


def test_mobile_tone_omitted_when_rate_too_low():
    intf = Interferer(740e6, 0.0, 1e-6)
    preset = ChannelPreset(name="m", gain_db=0.0, interferers=(intf,), seed=2)
    clean = make_clean()
    trace = apply_channel(clean, preset, FS)  # 740 MHz > Nyquist guard at 250 MS/s
    assert np.allclose(trace.samples, clean.astype(np.float32), atol=0)


# --- glitches ------------------------------------------------------------


def test_inject_zero_glitches_is_identity(identity_preset):
    trace = apply_channel(make_clean(), identity_preset, FS)
    assert inject_glitch(trace, 0) is trace


def test_glitch_amplitude_exceeds_robust_max(identity_preset):
    trace = apply_channel(make_clean(), identity_preset, FS)
    robust = np.percentile(np.abs(trace.samples), 99.0)
    glitched = inject_glitch(trace, 3, amplitude=(2.5, 4.0), seed=9)
    assert np.abs(glitched.samples).max() > 2.0 * robust


def test_glitch_at_given_time(identity_preset):
    trace = apply_channel(make_clean(), identity_preset, FS)
    t_g = 4.0e-6
    glitched = inject_glitch(trace, 1, amplitude=3.0, times=np.array([t_g]), seed=1)
    delta = np.abs(glitched.samples.astype(np.float64) - trace.samples)
    assert np.argmax(delta) == pytest.approx(t_g * FS, abs=2)


def test_glitch_count_validation(identity_preset):
    trace = apply_channel(make_clean(), identity_preset, FS)
    with pytest.raises(ValueError):
        inject_glitch(trace, -1)


# --- datasets ------------------------------------------------------------


def test_synth_dataset_shape():
    keys = [key_by_label(c) for c in "abc"]
    preset = get_preset("open-space-3m")
    traces = synth_dataset(keys, preset, repeats=2)
    assert len(traces) == 6
    assert [t.ground_truth.label for t in traces] == ["a", "b", "c", "a", "b", "c"]


def test_synth_dataset_reproducible():
    keys = [key_by_label("q")]
    preset = get_preset("open-space-3.8m")
    a = synth_dataset(keys, preset, repeats=2)
    b = synth_dataset(keys, preset, repeats=2)
    for x, y in zip(a, b):
        assert np.array_equal(x.samples, y.samples)


def test_synth_dataset_fresh_noise_per_trace():
    keys = [key_by_label("q")]
    preset = get_preset("open-space-3.8m")
    traces = synth_dataset(keys, preset, repeats=2)
    assert not np.array_equal(traces[0].samples, traces[1].samples)


def test_synth_dataset_rejects_empty():
    with pytest.raises(ValueError):
        synth_dataset([], get_preset("identity"))


# --- presets -------------------------------------------------------------


def test_required_presets_exist():
    names = set(available_presets())
    assert {
        "open-space-0.5m",
        "open-space-2.5m",
        "open-space-3m",
        "open-space-3.8m",
        "office-12m",
        "building-9.4m",
    } <= names


def test_preset_ladder_follows_free_space_falloff():
    g38 = get_preset("open-space-3.8m").gain_db
    assert g38 == pytest.approx(KNEE_GAIN_DB, abs=1e-6)
    for d, name in ((0.5, "open-space-0.5m"), (2.5, "open-space-2.5m"),
                    (3.0, "open-space-3m")):
        assert get_preset(name).gain_db == pytest.approx(
            distance_to_gain_db(d), abs=2e-3
        )


def test_preset_validation():
    with pytest.raises(ValueError):
        ChannelPreset(name="bad", body_coupling_gain=5.0)
    with pytest.raises(ValueError):
        ChannelPreset(name="bad", shielding_db=31.0)
    with pytest.raises(ValueError):
        ChannelPreset(name="bad", glitch_rate=-0.1)


def test_unknown_preset_lists_available():
    with pytest.raises(UnknownPresetError) as err:
        get_preset("open-space-99m")
    assert "open-space-3.8m" in str(err.value)


def test_preset_roundtrip_via_dict():
    preset = get_preset("office-12m")
    again = ChannelPreset.from_dict(preset.to_dict())
    assert again == preset
