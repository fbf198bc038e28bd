"""Heart rate from BVP and the per-second cardio features."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import signal
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from .frames import FeatureFrame
from .session import ChannelSeries, Session, minmax_scale

logger = logging.getLogger(__name__)

REFRACTORY_S = 0.33
PROMINENCE_FRACTION = 0.3
AMPLITUDE_WINDOW_S = 10.0
BPM_GATE = (25.0, 220.0)
CARDIO_COLUMNS = ["bvp", "hr"]


class UnpulsatileSignal(ValueError):
    pass


@dataclass(frozen=True)
class HeartRateResult:
    hr: ChannelSeries
    beat_times: np.ndarray
    dropped_beats: int


def detect_beats(bvp: ChannelSeries) -> np.ndarray:
    """Systolic peak indices: local maxima at least 0.33 s apart whose prominence
    exceeds 0.3x the rolling 10 s peak-to-peak amplitude."""
    x = bvp.values
    fs = bvp.rate_hz
    win = max(3, int(round(AMPLITUDE_WINDOW_S * fs)))
    amplitude = maximum_filter1d(x, win, mode="nearest") - minimum_filter1d(x, win, mode="nearest")
    if not np.any(amplitude > 0):
        return np.array([], dtype=int)
    distance = max(1, int(np.ceil(REFRACTORY_S * fs)))
    peaks, _ = signal.find_peaks(x, distance=distance, prominence=(PROMINENCE_FRACTION * amplitude, None))
    return peaks


def hr_from_bvp(bvp: ChannelSeries, with_diagnostics: bool = False):
    """1 Hz heart rate from inter-beat intervals, median-filtered and held from the previous beat."""
    if bvp.rate_hz < 32:
        raise ValueError("BVP rate must be >= 32 Hz")
    if bvp.duration_s < 3:
        raise ValueError("BVP record must be >= 3 s")
    peaks = detect_beats(bvp)
    if len(peaks) < 2:
        raise UnpulsatileSignal("unpulsatile signal")
    t = bvp.start_s + peaks / bvp.rate_hz
    bpm = 60.0 / np.diff(t)
    beat_t = t[1:]
    keep = (bpm >= BPM_GATE[0]) & (bpm <= BPM_GATE[1])
    dropped = int((~keep).sum())
    if dropped:
        logger.info("hr_from_bvp: dropped %d out-of-gate beat(s)", dropped)
    bpm, beat_t = bpm[keep], beat_t[keep]
    if len(bpm) == 0:
        raise UnpulsatileSignal("unpulsatile signal")
    padded = np.concatenate([bpm[:1], bpm, bpm[-1:]])
    bpm = np.median(np.lib.stride_tricks.sliding_window_view(padded, 3), axis=1)
    n_sec = int(np.floor(bvp.duration_s + 1e-9))
    grid = bvp.start_s + np.arange(n_sec) + 1.0
    last = np.searchsorted(beat_t, grid, side="right") - 1
    hr = bpm[np.clip(last, 0, None)]
    series = ChannelSeries("HR", 1.0, bvp.start_s, hr)
    if with_diagnostics:
        return HeartRateResult(series, beat_t, dropped)
    return series


def extract_cardio_features(session: Session, scale_mode: str = "offline", bvp_bounds=None,
                            hr_bounds=None, reducer: str = "mean") -> FeatureFrame:
    """Per-second mean (or RMS) of scaled BVP and the scaled 1 Hz heart rate."""
    n_sec = int(np.floor(session.duration_s + 1e-9))
    bvp = minmax_scale(session.bvp, scale_mode, bvp_bounds)
    per = int(round(bvp.rate_hz))
    w = bvp.values[: n_sec * per].reshape(n_sec, per)
    if reducer == "rms":
        bvp_col = np.sqrt((w ** 2).mean(axis=1))
    else:
        bvp_col = w.mean(axis=1)
    hr = session.hr if session.hr is not None else hr_from_bvp(session.bvp)
    hr_vals = minmax_scale(hr, scale_mode, hr_bounds).values
    hr_col = np.full(n_sec, np.nan)
    m = min(n_sec, len(hr_vals))
    hr_col[:m] = hr_vals[:m]
    return FeatureFrame(session.participant_id, session.walk_id, np.arange(n_sec),
                        CARDIO_COLUMNS, np.column_stack([bvp_col, hr_col]))
