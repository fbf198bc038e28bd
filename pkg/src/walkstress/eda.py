"""Skin-conductance conditioning, continuous tonic/phasic decomposition and SCR features."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal
from scipy.fft import next_fast_len
from scipy.interpolate import PchipInterpolator
from scipy.ndimage import gaussian_filter1d

from .frames import FeatureFrame
from .session import ChannelSeries, Session, minmax_scale

logger = logging.getLogger(__name__)

LOWPASS_HZ = 0.6
DEFAULT_IRF = (1.0, 3.75)
DEFAULT_THRESHOLD = 0.01
REGULARIZATION = 1e-4
ANCHOR_SPACING_S = 10.0
DRIVER_SMOOTH_S = 0.2
ONSET_FRACTION = 0.5
EDA_COLUMNS = ["tm", "n_scr", "scr_amp_sum", "phasic_mean", "phasic_max", "phasic_cum"]
RAW_EDA_COLUMN = "raw_eda"


class DecompositionError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message if residual is None else f"{message} (residual={residual:.4g})")
        self.residual = residual


@dataclass(frozen=True)
class Scr:
    onset_s: float
    peak_s: float
    amplitude: float


@dataclass(frozen=True)
class EdaDecomposition:
    conditioned: ChannelSeries
    tonic: ChannelSeries
    phasic_driver: ChannelSeries
    scrs: tuple[Scr, ...]
    irf: tuple[float, float]
    reconstruction_error: float

    def phasic(self) -> np.ndarray:
        """The phasic driver re-convolved with the impulse response."""
        fs = self.phasic_driver.rate_hz
        b = bateman(len(self.phasic_driver), fs, *self.irf)
        return signal.fftconvolve(self.phasic_driver.values, b)[: len(b)] / fs


def lowpass_eda(eda: ChannelSeries, cutoff_hz: float = LOWPASS_HZ) -> ChannelSeries:
    """First-order Butterworth low-pass, single forward pass, started in steady state."""
    if eda.rate_hz <= 2 * cutoff_hz:
        raise ValueError(f"rate {eda.rate_hz} Hz too low for a {cutoff_hz} Hz low-pass")
    b, a = signal.butter(1, cutoff_hz, btype="low", fs=eda.rate_hz)
    zi = signal.lfilter_zi(b, a) * eda.values[0]
    out, _ = signal.lfilter(b, a, eda.values, zi=zi)
    return eda.with_values(out)


def bateman(n: int, fs: float, tau1: float, tau2: float) -> np.ndarray:
    """Peak-normalised biexponential impulse response exp(-t/tau2) - exp(-t/tau1)."""
    if tau1 <= 0 or tau2 <= 0 or tau1 == tau2:
        raise ValueError("IRF time constants must be positive and distinct")
    rise, decay = sorted((tau1, tau2))
    t = np.arange(n) / fs
    b = np.exp(-t / decay) - np.exp(-t / rise)
    t_peak = rise * decay / (decay - rise) * np.log(decay / rise)
    return b / (np.exp(-t_peak / decay) - np.exp(-t_peak / rise))


def _irf_len(fs: float, irf) -> int:
    return int(np.ceil(12 * max(irf) * fs))


def deconvolve(x: np.ndarray, fs: float, irf=DEFAULT_IRF, reg: float = REGULARIZATION,
               smooth_s: float = DRIVER_SMOOTH_S) -> np.ndarray:
    """Driver d (per second) with x(t) = integral d(s) b(t - s) ds, Tikhonov-regularised.

    The record is padded on both sides with its edge values so the driver sees
    a steady history instead of the FFT wrap-around. The driver is then
    smoothed with a Gaussian of SD ``smooth_s`` seconds.
    """
    L = _irf_len(fs, irf)
    b = bateman(L, fs, *irf) / fs
    y = np.concatenate([np.full(L, x[0]), x, np.full(L, x[-1])])
    nfft = next_fast_len(len(y) + L)
    B = np.fft.rfft(b, nfft)
    Y = np.fft.rfft(y, nfft)
    power = np.abs(B) ** 2
    D = Y * np.conj(B) / (power + reg * power.max())
    d = np.fft.irfft(D, nfft)
    if smooth_s > 0:
        d = gaussian_filter1d(d, smooth_s * fs, mode="nearest")
    return d[L:L + len(x)]


def _convolve_with_history(d: np.ndarray, fs: float, irf) -> np.ndarray:
    L = _irf_len(fs, irf)
    b = bateman(L, fs, *irf) / fs
    padded = np.concatenate([np.full(L, d[0]), d])
    return signal.fftconvolve(padded, b)[L:L + len(d)]


def _scr_bounds(d: np.ndarray, peaks: np.ndarray, fs: float) -> list[tuple[int, int]]:
    bounds = []
    back, fwd = int(round(4 * fs)), int(round(8 * fs))
    for k, p in enumerate(peaks):
        lo = max(0, p - back, peaks[k - 1] if k else 0)
        hi = min(len(d) - 1, p + fwd, peaks[k + 1] if k + 1 < len(peaks) else len(d) - 1)
        onset = p
        while onset > lo and d[onset - 1] < d[onset]:
            onset -= 1
        end = p
        while end < hi and d[end + 1] < d[end]:
            end += 1
        bounds.append((onset, end))
    return bounds


def detect_scrs(phasic_driver: ChannelSeries, threshold: float = DEFAULT_THRESHOLD,
                irf=DEFAULT_IRF) -> list[Scr]:
    """SCRs are driver maxima with prominence >= threshold.

    The onset is the driver trough preceding the peak, moved forward to the
    first sample that reaches half of the rise. The amplitude is the
    rise of the re-convolved response of that driver segment above its onset
    value, i.e. in skin-conductance units.
    """
    d = phasic_driver.values
    fs = phasic_driver.rate_hz
    if not np.any(d):
        return []
    peaks, _ = signal.find_peaks(d, prominence=threshold)
    if len(peaks) == 0:
        return []
    b = bateman(_irf_len(fs, irf), fs, *irf) / fs
    out = []
    for (trough, end), p in zip(_scr_bounds(d, peaks, fs), peaks):
        excess = np.clip(d[trough:end + 1] - d[trough], 0.0, None)
        response = signal.fftconvolve(excess, b)
        k = int(np.argmax(response))
        # skip the skirt the smoothing spreads ahead of the impulse
        rise = d[trough:p + 1] - d[trough]
        onset = trough + int(np.argmax(rise >= ONSET_FRACTION * rise[-1]))
        out.append(Scr(phasic_driver.start_s + onset / fs, phasic_driver.start_s + (trough + k) / fs,
                       float(response[k])))
    return out


def cda_decompose(eda: ChannelSeries, irf=DEFAULT_IRF, threshold: float = DEFAULT_THRESHOLD,
                  reg: float = REGULARIZATION, anchor_spacing_s: float = ANCHOR_SPACING_S
                  ) -> EdaDecomposition:
    """Split a conditioned EDA record into tonic level and non-negative phasic driver.

    The tonic driver is a PCHIP curve through medians of the driver outside
    detected responses, one anchor per ``anchor_spacing_s`` bin.
    """
    x = eda.values
    fs = eda.rate_hz
    driver = deconvolve(x, fs, irf, reg)

    peaks, _ = signal.find_peaks(driver, prominence=threshold)
    inside = np.zeros(len(x), dtype=bool)
    for onset, end in _scr_bounds(driver, peaks, fs):
        inside[onset:end + 1] = True
    bin_len = max(1, int(round(anchor_spacing_s * fs)))
    anchor_t, anchor_v = [], []
    for start in range(0, len(x), bin_len):
        idx = np.flatnonzero(~inside[start:start + bin_len]) + start
        if len(idx):
            anchor_t.append(float(np.median(idx)))
            anchor_v.append(float(np.median(driver[idx])))
    if not anchor_t:
        raise DecompositionError("no inter-impulse samples to fit the tonic component")
    if len(anchor_t) == 1:
        tonic_driver = np.full(len(x), anchor_v[0])
    else:
        tonic_driver = PchipInterpolator(anchor_t, anchor_v, extrapolate=True)(np.arange(len(x)))

    phasic_driver = np.clip(driver - tonic_driver, 0.0, None)
    tonic = np.clip(_convolve_with_history(tonic_driver, fs, irf), 0.0, np.maximum(x, 0.0))
    b = bateman(len(x), fs, *irf) / fs
    phasic = signal.fftconvolve(phasic_driver, b)[: len(x)]
    resid = x - tonic - phasic
    norm = np.linalg.norm(x)
    err = float(np.linalg.norm(resid) / norm) if norm > 0 else float(np.linalg.norm(resid))
    if not np.all(np.isfinite(tonic)) or not np.isfinite(err):
        raise DecompositionError("tonic fit did not converge", err)
    driver_series = eda.with_values(phasic_driver)
    return EdaDecomposition(eda, eda.with_values(tonic), driver_series,
                            tuple(detect_scrs(driver_series, threshold, irf)), tuple(irf), err)


def condition_eda(eda: ChannelSeries, scale_mode: str = "offline", bounds=None) -> ChannelSeries:
    return minmax_scale(lowpass_eda(eda), scale_mode, bounds)


def _second_index(series: ChannelSeries, n_sec: int) -> np.ndarray:
    sec = np.floor(series.times + 1e-9).astype(np.int64)
    return np.where((sec >= 0) & (sec < n_sec), sec, -1)


def _per_second(values: np.ndarray, sec: np.ndarray, n_sec: int, how: str) -> np.ndarray:
    ok = sec >= 0
    counts = np.bincount(sec[ok], minlength=n_sec)[:n_sec]
    if how == "max":
        out = np.full(n_sec, -np.inf)
        np.maximum.at(out, sec[ok], values[ok])
    else:
        out = np.bincount(sec[ok], weights=values[ok], minlength=n_sec)[:n_sec]
        if how == "mean":
            with np.errstate(invalid="ignore", divide="ignore"):
                out = out / counts
    out[counts == 0] = np.nan
    return out


def extract_eda_features(session: Session, decomposition: EdaDecomposition | None = None,
                         scale_mode: str = "offline", bounds=None, raw_bounds=None,
                         threshold: float = DEFAULT_THRESHOLD, irf=DEFAULT_IRF) -> FeatureFrame:
    """Six decomposition features plus the min-max-scaled raw signal, one row per second."""
    if decomposition is None:
        decomposition = cda_decompose(condition_eda(session.eda, scale_mode, bounds), irf, threshold)
    n_sec = int(np.floor(session.duration_s + 1e-9))
    fs = decomposition.tonic.rate_hz
    sec = _second_index(decomposition.tonic, n_sec)
    drv = decomposition.phasic_driver.values
    n_scr = np.zeros(n_sec)
    amp = np.zeros(n_sec)
    for scr in decomposition.scrs:
        k = int(np.floor(scr.onset_s + 1e-9))
        if 0 <= k < n_sec:
            n_scr[k] += 1
            amp[k] += scr.amplitude
    raw = minmax_scale(session.eda, scale_mode, raw_bounds)
    cols = [
        _per_second(decomposition.tonic.values, sec, n_sec, "mean"),
        n_scr,
        amp,
        _per_second(drv, sec, n_sec, "mean"),
        _per_second(drv, sec, n_sec, "max"),
        _per_second(drv / fs, sec, n_sec, "sum"),
        _per_second(raw.values, _second_index(raw, n_sec), n_sec, "mean"),
    ]
    return FeatureFrame(session.participant_id, session.walk_id, np.arange(n_sec),
                        EDA_COLUMNS + [RAW_EDA_COLUMN], np.column_stack(cols))


def write_decomposition(decomp: EdaDecomposition, raw: ChannelSeries, directory: str | Path) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    t = decomp.tonic.times
    with (d / "decomposition.csv").open("w") as fh:
        fh.write("t_s,raw,tonic,driver\n")
        for row in zip(t, raw.values, decomp.tonic.values, decomp.phasic_driver.values):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    with (d / "scrs.csv").open("w") as fh:
        fh.write("onset_s,peak_s,amplitude\n")
        for s in decomp.scrs:
            fh.write(f"{s.onset_s!r},{s.peak_s!r},{s.amplitude!r}\n")
