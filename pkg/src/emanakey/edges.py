"""Reference edge series: the binary classification feature.

An edge series has one slot per bit interval over the capture window; a
slot holds '1' when the differential line changes state at that bit
boundary. Emanation bursts occur at exactly those switching instants, so
the series is both the per-key reference and the detector's feature.

Two generation routes exist and must agree on clean input: the analytic
route reads transitions straight off the encoded line states, and the
probed-waveform route runs the wire-capture pipeline (lowpass, differentiate,
peak detect) over a synthesized differential trace.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal as sp_signal

from .bits import DIFFERENTIAL_LEVEL, LineState
from .errors import EmptySeriesError, SampleRateError
from .frames import FULL_SPEED_BIT_RATE, Frame, PacketKind, build_keystroke_transaction
from .keys import KEYS, KeyId

DIFFERENTIAL_SWING_V = 3.3

# Wire-pipeline defaults. The lowpass is a short, gentle FIR: at 12 Mbps a
# bit-rate-alternating stretch has its fundamental at 6 MHz, just past the
# cutoff, and must survive with enough amplitude to keep every edge
# detectable. End-of-packet transitions swing half the J<->K span, so the
# peak threshold sits below one half of the full-swing derivative.
WIRED_LOWPASS_CUTOFF_HZ = 5e6
WIRED_LOWPASS_TAPS = 41
WIRED_PEAK_THRESHOLD = 0.35
WIRED_RISE_TIME_S = 8e-9
PEAK_SEPARATION_BIT_FRACTION = 2.0 / 3.0


@dataclass(frozen=True)
class EdgeSeries:
    """Binary per-slot edge indicator with its time base."""

    slots: np.ndarray
    bit_width: float
    origin: float = 0.0

    def __post_init__(self):
        object.__setattr__(
            self, "slots", np.ascontiguousarray(self.slots, dtype=np.uint8)
        )
        if self.slots.ndim != 1:
            raise ValueError("slots must be a 1-D binary vector")
        if not np.all((self.slots == 0) | (self.slots == 1)):
            raise ValueError("slots must contain only 0 and 1")

    def __len__(self) -> int:
        return int(self.slots.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, EdgeSeries):
            return NotImplemented
        return (
            np.array_equal(self.slots, other.slots)
            and self.bit_width == other.bit_width
            and self.origin == other.origin
        )

    def __hash__(self):
        return hash((self.slots.tobytes(), self.bit_width, self.origin))

    @property
    def ones(self) -> int:
        return int(self.slots.sum())

    def edge_times(self) -> np.ndarray:
        """Times of the '1' slots (slot start = bit boundary)."""
        return self.origin + np.flatnonzero(self.slots) * self.bit_width


def edges_analytic(frame: Frame, window: str = "capture") -> EdgeSeries:
    """Slot i is 1 iff the differential line state changes at boundary i.

    The line idles at J before the window, so the opening SYNC transition
    lands in slot 0.
    """
    states = frame.slot_states(window)
    prev = LineState.J
    slots = np.zeros(len(states), dtype=np.uint8)
    for i, s in enumerate(states):
        slots[i] = 1 if s != prev else 0
        prev = s
    return EdgeSeries(slots=slots, bit_width=frame.bit_time, origin=0.0)


def edge_signs(frame: Frame, window: str = "capture") -> np.ndarray:
    """Sign of the differential level change at each '1' slot, else 0."""
    states = frame.slot_states(window)
    prev = LineState.J
    signs = np.zeros(len(states), dtype=np.int8)
    for i, s in enumerate(states):
        if s != prev:
            delta = DIFFERENTIAL_LEVEL[s] - DIFFERENTIAL_LEVEL[prev]
            signs[i] = 1 if delta > 0 else -1
        prev = s
    return signs


def simulate_probed_waveform(
    frame: Frame,
    sample_rate: float,
    rise_time: float = WIRED_RISE_TIME_S,
    pad: float = 1e-6,
    window: str = "capture",
) -> np.ndarray:
    """Differential voltage seen by wire probes across the data pair.

    Trapezoidal +/-3.3 V (0 V during end-of-packet) with linear ramps of
    ``rise_time`` centered on the bit boundaries, padded with idle line on
    both sides. Probing the pair differentially keeps every state change
    visible, including the half-swing end-of-packet transitions.
    """
    if sample_rate < 10 * frame.bit_rate:
        raise SampleRateError(
            f"sample rate {sample_rate:g} below 10x bit rate {frame.bit_rate:g}"
        )
    bit = frame.bit_time
    levels = [
        DIFFERENTIAL_LEVEL[s] * DIFFERENTIAL_SWING_V for s in frame.slot_states(window)
    ]
    idle = DIFFERENTIAL_LEVEL[LineState.J] * DIFFERENTIAL_SWING_V
    bounded = [idle] + levels + [idle]

    # Breakpoints for np.interp: each boundary contributes the end of the
    # previous level and the start of the next, rise_time apart.
    xp: list[float] = [-pad]
    fp: list[float] = [idle]
    for i in range(len(bounded) - 1):
        t = i * bit  # boundary between bounded[i] and bounded[i+1]
        xp.append(t - rise_time / 2)
        fp.append(bounded[i])
        xp.append(t + rise_time / 2)
        fp.append(bounded[i + 1])
    end = (len(levels)) * bit
    xp.append(end + pad)
    fp.append(idle)

    n = int(round((end + 2 * pad) * sample_rate))
    t = np.arange(n) / sample_rate - pad
    return np.interp(t, xp, fp).astype(np.float64)


def wired_pipeline_edges(
    waveform: np.ndarray,
    sample_rate: float,
    bit_width: float = 1.0 / FULL_SPEED_BIT_RATE,
    expected_slots: int | None = None,
    cutoff_hz: float = WIRED_LOWPASS_CUTOFF_HZ,
    taps: int = WIRED_LOWPASS_TAPS,
    threshold: float = WIRED_PEAK_THRESHOLD,
) -> EdgeSeries:
    """Wire-capture edge extraction: lowpass, differentiate, peak detect.

    Peaks of the absolute derivative mark the transitions; slots are
    assigned on a grid anchored at the first peak. ``expected_slots`` pads
    the series with trailing zero slots up to the window length when the
    caller knows it (references do); otherwise the series ends at the last
    detected edge.
    """
    x = np.asarray(waveform, dtype=np.float64)
    # Odd-length symmetric FIR + centered convolution = group delay removed.
    fir = sp_signal.firwin(taps, cutoff_hz, fs=sample_rate)
    filtered = np.convolve(x, fir, mode="same")
    deriv = np.abs(np.gradient(filtered))

    robust_max = np.percentile(deriv, 99.0)
    min_sep = max(1, int(round(PEAK_SEPARATION_BIT_FRACTION * bit_width * sample_rate)))
    peaks, _ = sp_signal.find_peaks(
        deriv, height=threshold * robust_max, distance=min_sep
    )
    if peaks.size == 0:
        raise EmptySeriesError("no derivative peaks found in probed waveform")

    peak_times = peaks / sample_rate
    anchor = peak_times[0]
    slot_idx = np.rint((peak_times - anchor) / bit_width).astype(int)
    n_slots = expected_slots if expected_slots is not None else int(slot_idx[-1]) + 1
    slots = np.zeros(n_slots, dtype=np.uint8)
    valid = (slot_idx >= 0) & (slot_idx < n_slots)
    slots[slot_idx[valid]] = 1
    return EdgeSeries(slots=slots, bit_width=bit_width, origin=anchor)


@dataclass(frozen=True)
class ReferenceSet:
    """The per-key reference edge series, immutable once built."""

    entries: dict[KeyId, EdgeSeries]
    bit_rate: float
    method: str
    config_hash: str = ""
    _cache: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        widths = {e.bit_width for e in self.entries.values()}
        if len(widths) > 1:
            raise ValueError("all reference entries must share one bit width")

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, key: KeyId) -> EdgeSeries:
        return self.entries[key]

    def keys_in_order(self) -> list[KeyId]:
        if "keys" not in self._cache:
            self._cache["keys"] = sorted(self.entries, key=lambda k: k.index)
        return self._cache["keys"]

    def max_slots(self) -> int:
        return max(len(e) for e in self.entries.values())

    def padded_matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """(refs, lengths): slot matrix zero-padded to the longest entry."""
        if "matrix" not in self._cache:
            keys = self.keys_in_order()
            width = self.max_slots()
            mat = np.zeros((len(keys), width), dtype=np.uint8)
            lengths = np.zeros(len(keys), dtype=np.int64)
            for row, key in enumerate(keys):
                series = self.entries[key]
                mat[row, : len(series)] = series.slots
                lengths[row] = len(series)
            self._cache["matrix"] = (mat, lengths)
        return self._cache["matrix"]

    def scoring_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(bool matrix, lengths, in-range mask) for vectorized matching."""
        if "scoring" not in self._cache:
            mat, lengths = self.padded_matrix()
            in_range = np.arange(mat.shape[1])[None, :] < lengths[:, None]
            self._cache["scoring"] = (mat.astype(bool), lengths, in_range)
        return self._cache["scoring"]


def _config_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def build_reference_set(
    method: str = "analytic",
    keys: tuple[KeyId, ...] = KEYS,
    data_toggle: PacketKind = PacketKind.DATA0,
    address: int = 1,
    endpoint: int = 1,
    gap_bits: int = 2,
    sample_rate: float = 250e6,
) -> ReferenceSet:
    """Generate the reference series for every key, deterministically.

    ``method="analytic"`` reads edges off the encoded line states;
    ``method="pipeline"`` pushes a synthesized probe waveform through the
    wire-capture pipeline. The two agree exactly on clean synthesis.
    """
    if method not in ("analytic", "pipeline"):
        raise ValueError(f"method must be 'analytic' or 'pipeline', got {method!r}")
    entries: dict[KeyId, EdgeSeries] = {}
    for key in keys:
        frame = build_keystroke_transaction(
            key,
            data_toggle=data_toggle,
            address=address,
            endpoint=endpoint,
            gap_bits=gap_bits,
        )
        analytic = edges_analytic(frame)
        if method == "analytic":
            entries[key] = analytic
        else:
            waveform = simulate_probed_waveform(frame, sample_rate)
            series = wired_pipeline_edges(
                waveform,
                sample_rate,
                bit_width=frame.bit_time,
                expected_slots=len(analytic),
            )
            entries[key] = replace(series, origin=0.0)
    params = {
        "method": method,
        "data_toggle": data_toggle.name,
        "address": address,
        "endpoint": endpoint,
        "gap_bits": gap_bits,
        "sample_rate": sample_rate if method == "pipeline" else None,
        "bit_rate": FULL_SPEED_BIT_RATE,
    }
    return ReferenceSet(
        entries=entries,
        bit_rate=FULL_SPEED_BIT_RATE,
        method=method,
        config_hash=_config_hash(params),
    )


def pairwise_distance(a: EdgeSeries, b: EdgeSeries, shift: int = 0) -> int:
    """Hamming distance over zero-padded common length, with ``b`` shifted."""
    n = max(len(a), len(b)) + abs(shift)
    va = np.zeros(n, dtype=np.uint8)
    vb = np.zeros(n, dtype=np.uint8)
    va[: len(a)] = a.slots
    if shift >= 0:
        vb[shift : shift + len(b)] = b.slots
    else:
        vb[: len(b) + shift] = b.slots[-shift:]
    return int(np.count_nonzero(va != vb))


def min_pairwise_distance(
    refs: ReferenceSet, max_shift: int = 0
) -> tuple[int, KeyId, KeyId]:
    """Smallest pairwise distance over the set, minimized over +/-max_shift.

    This distance bounds single-trace error tolerance: a detected series
    with e corrupted slots cannot reach a wrong key while 2e < d_min.
    """
    keys = refs.keys_in_order()
    best = None
    for i, ka in enumerate(keys):
        for kb in keys[i + 1 :]:
            d = min(
                pairwise_distance(refs[ka], refs[kb], shift)
                for shift in range(-max_shift, max_shift + 1)
            )
            if best is None or d < best[0]:
                best = (d, ka, kb)
    return best
