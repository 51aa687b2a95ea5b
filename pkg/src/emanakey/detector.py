"""Emanation-trace keystroke detector.

Pipeline: bandpass the trace to the 10-18 MHz emission band, normalize to
+/-3.3 V using the 99th-percentile amplitude (so a lone interference spike
cannot distort the scaling), zero everything below half amplitude, detect
peaks with a two-thirds-bit minimum separation, form a binary edge series
on a grid anchored at a detected peak, and return the reference with the
highest slot agreement.

Alignment has no hardware trigger to lean on, so the slot grid is anchored
at a detected peak and searched: the first few peaks are tried as anchor
candidates (a single early noise peak must not wreck the grid) and the
anchor's slot index is searched over a small window. Every stage after
normalization is scale-free, so detection results are invariant to trace
scaling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import signal as sp_signal

from .channel import EmanationTrace
from .edges import EdgeSeries, ReferenceSet
from .errors import DegenerateTraceError, NoSignalError, SampleRateError
from .keys import KeyId


@dataclass(frozen=True)
class DetectorConfig:
    """Detection parameters; defaults are the operating values."""

    band_low: float = 10e6  # Hz
    band_high: float = 18e6  # Hz
    amplitude: float = 3.3  # V, normalization target A
    skip_fraction: float = 0.01  # top fraction ignored when scaling
    zero_floor: float | None = None  # volts; defaults to A/2
    min_peak_separation: float = 2.0 / 3.0  # fraction of a bit width
    proximity_window: float = 1.0 / 3.0  # fraction of a bit width
    offset_search: int = 2  # +/- slots around each anchor
    anchor_candidates: int = 3  # leading peaks tried as grid anchor
    bit_rate: float = 12e6
    filter_taps: int = 321
    min_peaks: int = 10  # fewer detected peaks -> no-signal error

    def __post_init__(self):
        if self.band_low >= self.band_high:
            raise ValueError("band_low must be below band_high")
        if not 0 < self.skip_fraction < 0.5:
            raise ValueError("skip_fraction must lie in (0, 0.5)")
        if self.filter_taps % 2 == 0:
            raise ValueError("filter_taps must be odd (linear phase, type I)")

    @property
    def floor(self) -> float:
        return self.amplitude / 2.0 if self.zero_floor is None else self.zero_floor

    @property
    def bit_width(self) -> float:
        return 1.0 / self.bit_rate

    def to_file(self, path: str | Path) -> None:
        doc = {
            "band_low_hz": self.band_low,
            "band_high_hz": self.band_high,
            "amplitude_v": self.amplitude,
            "skip_fraction": self.skip_fraction,
            "zero_floor_v": self.zero_floor,
            "min_peak_separation_bits": self.min_peak_separation,
            "proximity_window_bits": self.proximity_window,
            "offset_search_slots": self.offset_search,
            "anchor_candidates": self.anchor_candidates,
            "bit_rate_bps": self.bit_rate,
            "filter_taps": self.filter_taps,
            "min_peaks": self.min_peaks,
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_file(cls, path: str | Path) -> "DetectorConfig":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(
            band_low=doc["band_low_hz"],
            band_high=doc["band_high_hz"],
            amplitude=doc["amplitude_v"],
            skip_fraction=doc["skip_fraction"],
            zero_floor=doc.get("zero_floor_v"),
            min_peak_separation=doc["min_peak_separation_bits"],
            proximity_window=doc["proximity_window_bits"],
            offset_search=doc["offset_search_slots"],
            anchor_candidates=doc.get("anchor_candidates", 3),
            bit_rate=doc["bit_rate_bps"],
            filter_taps=doc["filter_taps"],
            min_peaks=doc.get("min_peaks", 10),
        )


DEFAULT_CONFIG = DetectorConfig()


@dataclass(frozen=True)
class DetectionResult:
    """Winning key with score, runner-up and diagnostic alignment info."""

    key: KeyId
    score: float
    runner_up: KeyId
    runner_up_score: float
    detected_edges: EdgeSeries
    alignment_offset: int
    tie: bool = False

    @property
    def margin(self) -> float:
        return self.score - self.runner_up_score


@lru_cache(maxsize=8)
def _bandpass_taps(
    sample_rate: float, band_low: float, band_high: float, taps: int
) -> np.ndarray:
    # Gaussian-cored magnitude response with -3 dB points at the band
    # edges. A flat-top design truncates the edge-pulse spectrum sharply
    # and its time-domain ringing bleeds each pulse into neighboring bit
    # slots above the A/2 floor; Gaussian-on-Gaussian leaves no ringing.
    center = 0.5 * (band_low + band_high)
    sigma_f = (band_high - band_low) / 2.0 / 0.65  # band edges at ~-1.9 dB
    nyquist = sample_rate / 2.0
    freqs = np.linspace(0.0, nyquist, 4097)
    resp = np.exp(-0.5 * ((freqs - center) / sigma_f) ** 2)
    resp[freqs > center + 3.5 * sigma_f] = 0.0
    resp[freqs < center - 3.5 * sigma_f] = 0.0
    return sp_signal.firwin2(
        taps, freqs, resp, fs=sample_rate, window=("kaiser", 5.0)
    )


def bandpass(
    samples: np.ndarray, sample_rate: float, cfg: DetectorConfig = DEFAULT_CONFIG
) -> np.ndarray:
    """Linear-phase FIR bandpass, group delay removed by centered convolution."""
    if sample_rate <= 2 * cfg.band_high:
        raise SampleRateError(
            f"sample rate {sample_rate:g} too low for a {cfg.band_high:g} Hz band edge"
        )
    taps = _bandpass_taps(sample_rate, cfg.band_low, cfg.band_high, cfg.filter_taps)
    x = np.asarray(samples, dtype=np.float64)
    return sp_signal.fftconvolve(x, taps, mode="same")


def amplitude_envelope(filtered: np.ndarray) -> np.ndarray:
    """Instantaneous amplitude of the band-limited signal.

    Peak decisions run on the envelope, not on the oscillating samples:
    the carrier puts |x| maxima on a half-period comb, and noise can hop
    the apparent maximum one lobe sideways, out of the slot proximity
    window. The envelope has a single smooth lobe per edge burst.
    """
    analytic = sp_signal.hilbert(np.asarray(filtered, dtype=np.float64))
    return np.abs(analytic)


_band_env_cache: dict = {}


def _band_envelope(
    samples: np.ndarray, sample_rate: float, cfg: DetectorConfig
) -> np.ndarray:
    """Fused bandpass + envelope: one forward FFT, one inverse FFT.

    Numerically equivalent (away from the trace ends) to
    amplitude_envelope(bandpass(x)); used by detect() for speed.
    """
    if sample_rate <= 2 * cfg.band_high:
        raise SampleRateError(
            f"sample rate {sample_rate:g} too low for a {cfg.band_high:g} Hz band edge"
        )
    x = np.asarray(samples, dtype=np.float64)
    n = x.size
    key = (n, sample_rate, cfg.band_low, cfg.band_high, cfg.filter_taps)
    cached = _band_env_cache.get(key)
    if cached is None:
        taps = _bandpass_taps(
            sample_rate, cfg.band_low, cfg.band_high, cfg.filter_taps
        )
        from scipy.fft import next_fast_len

        nfft = next_fast_len(n + taps.size - 1)
        h_spec = np.fft.rfft(taps, nfft)
        if len(_band_env_cache) > 16:
            _band_env_cache.clear()
        cached = (nfft, h_spec, taps.size)
        _band_env_cache[key] = cached
    nfft, h_spec, ntaps = cached
    spec = np.fft.rfft(x, nfft) * h_spec
    # Analytic-signal spectrum: keep positive frequencies doubled.
    full = np.zeros(nfft, dtype=np.complex128)
    full[0] = spec[0]
    half = nfft // 2
    full[1:half] = 2.0 * spec[1:half]
    if nfft % 2 == 0:
        full[half] = spec[half]
    else:
        full[half] = 2.0 * spec[half]
    analytic = np.fft.ifft(full)
    start = (ntaps - 1) // 2  # 'same' alignment, group delay removed
    return np.abs(analytic[start : start + n])


def normalize(
    samples: np.ndarray, cfg: DetectorConfig = DEFAULT_CONFIG
) -> np.ndarray:
    """Scale so the 99th-percentile amplitude maps to A; clip to +/-A.

    Skipping the top fraction keeps a lone interference spike from
    deflating the scale; the spike itself is clipped to A.
    """
    x = np.asarray(samples, dtype=np.float64)
    s_max = np.percentile(np.abs(x), 100.0 * (1.0 - cfg.skip_fraction))
    if s_max <= 0.0:
        raise DegenerateTraceError("all-zero trace cannot be normalized")
    return np.clip(x * (cfg.amplitude / s_max), -cfg.amplitude, cfg.amplitude)


def threshold_and_peaks(
    normalized: np.ndarray,
    sample_rate: float,
    cfg: DetectorConfig = DEFAULT_CONFIG,
) -> np.ndarray:
    """Peak times (s) of |x| after flooring values below A/2 to zero.

    No two peaks are closer than min_peak_separation of a bit width; the
    higher peak wins a conflict window.
    """
    y = np.abs(np.asarray(normalized, dtype=np.float64))
    y[y < cfg.floor] = 0.0
    min_sep = max(
        1, int(round(cfg.min_peak_separation * cfg.bit_width * sample_rate))
    )
    peaks, _ = sp_signal.find_peaks(y, height=cfg.floor, distance=min_sep)
    if peaks.size == 0:
        raise NoSignalError("no peaks above the amplitude floor")
    return peaks / sample_rate


def form_edge_series(
    peak_times: np.ndarray,
    reference: EdgeSeries,
    cfg: DetectorConfig = DEFAULT_CONFIG,
    anchor_time: float | None = None,
    anchor_slot: int = 0,
) -> EdgeSeries:
    """Binary series over the reference's slot grid.

    The grid puts ``anchor_slot`` at ``anchor_time`` (default: the first
    peak at slot 0). A slot reads '1' when any peak lies within the
    proximity window of its boundary; peaks drift, so proximity rather
    than exact coincidence decides.
    """
    peak_times = np.asarray(peak_times, dtype=np.float64)
    if peak_times.size == 0:
        raise NoSignalError("cannot form an edge series from zero peaks")
    anchor = peak_times[0] if anchor_time is None else anchor_time
    bit = reference.bit_width
    slots = _slots_from_peaks(
        peak_times, anchor, anchor_slot, bit, len(reference), cfg.proximity_window
    )
    return EdgeSeries(
        slots=slots, bit_width=bit, origin=anchor - anchor_slot * bit
    )


def _slots_from_peaks(
    peak_times: np.ndarray,
    anchor: float,
    anchor_slot: int,
    bit_width: float,
    n_slots: int,
    proximity: float,
) -> np.ndarray:
    pos = (peak_times - anchor) / bit_width + anchor_slot
    idx = np.rint(pos).astype(int)
    close = np.abs(pos - idx) <= proximity
    valid = close & (idx >= 0) & (idx < n_slots)
    slots = np.zeros(n_slots, dtype=np.uint8)
    slots[idx[valid]] = 1
    return slots


def _grid_slot_matrix(
    peak_times: np.ndarray,
    anchors: np.ndarray,
    anchor_slots: np.ndarray,
    bit_width: float,
    n_slots: int,
    proximity: float,
) -> np.ndarray:
    """Slot vectors for every (anchor, anchor_slot) grid at once: (G, n_slots)."""
    pos = (peak_times[None, :] - anchors[:, None]) / bit_width
    pos = pos + anchor_slots[:, None]
    idx = np.rint(pos).astype(np.int64)
    ok = (np.abs(pos - idx) <= proximity) & (idx >= 0) & (idx < n_slots)
    slots = np.zeros((anchors.size, n_slots), dtype=bool)
    rows = np.broadcast_to(np.arange(anchors.size)[:, None], idx.shape)
    slots[rows[ok], idx[ok]] = True
    return slots


def _score_against(
    detected: np.ndarray, ref_matrix: np.ndarray, ref_lengths: np.ndarray
) -> np.ndarray:
    """Agreement fraction of one padded series against every reference row.

    Agreement is counted over each reference's own slot range (detected
    slots are zero-padded/truncated to the common width), normalized by
    reference length so stuffing-length differences do not bias the match.
    """
    width = ref_matrix.shape[1]
    d = detected[:width]
    if d.size < width:
        d = np.pad(d, (0, width - d.size))
    mism = d[None, :] != ref_matrix
    cols = np.arange(width)
    in_range = cols[None, :] < ref_lengths[:, None]
    mismatches = np.count_nonzero(mism & in_range, axis=1)
    return (ref_lengths - mismatches) / ref_lengths


def match(
    detected: EdgeSeries,
    refs: ReferenceSet,
    cfg: DetectorConfig = DEFAULT_CONFIG,
) -> DetectionResult:
    """Highest-agreement reference, searched over +/-offset_search shifts.

    Ties resolve to the lowest key index and are flagged.
    """
    keys = refs.keys_in_order()
    ref_bool, ref_lengths, _ = refs.scoring_arrays()
    width = ref_bool.shape[1]
    ref_matrix = ref_bool.view(np.uint8)

    best_per_key = np.full(len(keys), -1.0)
    best_offsets = np.zeros(len(keys), dtype=int)
    base = np.zeros(width + 2 * cfg.offset_search, dtype=np.uint8)
    n = min(len(detected), width + cfg.offset_search)
    base[cfg.offset_search : cfg.offset_search + n] = detected.slots[:n]
    for shift in range(-cfg.offset_search, cfg.offset_search + 1):
        shifted = base[cfg.offset_search + shift : cfg.offset_search + shift + width]
        scores = _score_against(shifted, ref_matrix, ref_lengths)
        update = scores > best_per_key
        best_per_key[update] = scores[update]
        best_offsets[update] = shift
    return _result_from_scores(
        keys, best_per_key, best_offsets, detected_series=detected
    )


def _result_from_scores(
    keys: list[KeyId],
    scores: np.ndarray,
    offsets: np.ndarray,
    detected_series: EdgeSeries,
) -> DetectionResult:
    order = np.argsort(-scores, kind="stable")  # stable: ties -> lowest index
    winner, runner = int(order[0]), int(order[1])
    tie = bool(scores[winner] == scores[runner])
    return DetectionResult(
        key=keys[winner],
        score=float(scores[winner]),
        runner_up=keys[runner],
        runner_up_score=float(scores[runner]),
        detected_edges=detected_series,
        alignment_offset=int(offsets[winner]),
        tie=tie,
    )


def detect(
    trace: EmanationTrace,
    refs: ReferenceSet,
    cfg: DetectorConfig = DEFAULT_CONFIG,
) -> DetectionResult:
    """Full pipeline: bandpass, envelope, normalize, floor+peaks, align, match."""
    envelope = _band_envelope(trace.samples, trace.sample_rate, cfg)
    try:
        normalized = normalize(envelope, cfg)
    except DegenerateTraceError as exc:
        raise NoSignalError(str(exc)) from exc
    peak_times = threshold_and_peaks(normalized, trace.sample_rate, cfg)
    if peak_times.size < cfg.min_peaks:
        raise NoSignalError(
            f"only {peak_times.size} peaks detected (< {cfg.min_peaks}); "
            "trace carries no usable signal"
        )

    keys = refs.keys_in_order()
    ref_bool, ref_lengths, in_range = refs.scoring_arrays()
    width = ref_bool.shape[1]
    bit = 1.0 / refs.bit_rate

    n_anchors = min(cfg.anchor_candidates, peak_times.size)
    offsets_1d = np.arange(-cfg.offset_search, cfg.offset_search + 1)
    anchors = np.repeat(peak_times[:n_anchors], offsets_1d.size)
    anchor_slots = np.tile(offsets_1d, n_anchors)
    grid_slots = _grid_slot_matrix(
        peak_times, anchors, anchor_slots, bit, width, cfg.proximity_window
    )
    # (grids, keys): mismatches counted over each reference's own length.
    mism = (grid_slots[:, None, :] != ref_bool[None, :, :]) & in_range[None, :, :]
    scores = 1.0 - mism.sum(axis=2) / ref_lengths[None, :]

    best_grid = np.argmax(scores, axis=0)  # first maximal grid per key
    key_range = np.arange(len(keys))
    best_per_key = scores[best_grid, key_range]
    best_offsets = anchor_slots[best_grid]

    winner = int(np.argmax(best_per_key))
    g = int(best_grid[winner])
    detected = EdgeSeries(
        slots=grid_slots[g, : ref_lengths[winner]].astype(np.uint8),
        bit_width=bit,
        origin=float(anchors[g]) - int(anchor_slots[g]) * bit,
    )
    return _result_from_scores(keys, best_per_key, best_offsets, detected)
