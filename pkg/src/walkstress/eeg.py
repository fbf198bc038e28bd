"""Per-second EEG features: band RIR, spectral and SVD entropy, ERD/ERS, frontal asymmetry."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .frames import FeatureFrame
from .session import BAND_NAMES, EEG_CHANNELS, Session, preprocess_eeg

logger = logging.getLogger(__name__)

BAND_EDGES = (0.5, 4.0, 7.0, 10.0, 13.0, 30.0, 60.0)
N_BANDS = len(BAND_NAMES)
EMBED_DIM = 20
EMBED_DELAY = 2
RESTING_WINDOW_S = 10


@dataclass(frozen=True)
class BandDefinition:
    name: str
    f_lo: float
    f_hi: float


DEFAULT_BANDS = tuple(BandDefinition(n, BAND_EDGES[i], BAND_EDGES[i + 1])
                      for i, n in enumerate(BAND_NAMES))


class SilentWindowError(ValueError):
    """Band ratios are undefined for an all-zero window."""


def band_bin_ranges(n: int, fs: float, bands=DEFAULT_BANDS) -> list[tuple[int, int]]:
    """Inclusive DFT bin ranges per band; neighbouring bands share their edge bin."""
    for b in bands:
        if not b.f_lo < b.f_hi <= fs / 2:
            raise ValueError(f"band {b.name} must satisfy f_lo < f_hi <= fs/2")
    return [(int(np.floor(n * b.f_lo / fs)), int(np.floor(n * b.f_hi / fs))) for b in bands]


def band_psi(windows: np.ndarray, fs: float, bands=DEFAULT_BANDS) -> np.ndarray:
    """Spectral magnitude sums per band for windows stacked on the last axis."""
    windows = np.asarray(windows, dtype=float)
    n = windows.shape[-1]
    if n < 2 or fs <= 0:
        raise ValueError("need a window of >= 2 samples and fs > 0")
    mag = np.abs(np.fft.fft(windows, axis=-1))
    return np.stack([mag[..., lo:hi + 1].sum(axis=-1)
                     for lo, hi in band_bin_ranges(n, fs, bands)], axis=-1)


def band_psi_rir(window: np.ndarray, fs: float = 128.0, bands=DEFAULT_BANDS):
    """Return (psi, rir) for one window; raises SilentWindowError on an all-zero window."""
    psi = band_psi(window, fs, bands)
    total = psi.sum()
    if total <= 0:
        raise SilentWindowError("silent window")
    return psi, psi / total


def spectral_entropy(rir) -> float | np.ndarray:
    """Entropy of the band distribution, normalised by log(K); 0*log(0) counts as 0."""
    rir = np.asarray(rir, dtype=float)
    k = rir.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(rir > 0, rir * np.log(np.where(rir > 0, rir, 1.0)), 0.0)
    h = -terms.sum(axis=-1) / np.log(k)
    return float(h) if np.ndim(h) == 0 else h


def delay_embedding(x: np.ndarray, dim: int = EMBED_DIM, tau: int = EMBED_DELAY) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n_rows = x.shape[-1] - (dim - 1) * tau
    if n_rows < 1:
        raise ValueError(f"window too short for embedding (dim={dim}, tau={tau})")
    idx = np.arange(n_rows)[:, None] + tau * np.arange(dim)[None, :]
    return x[..., idx]


def svd_entropy(window, d_e: int = EMBED_DIM, tau: int = EMBED_DELAY) -> float | np.ndarray:
    """Shannon entropy (bits) of the normalised singular values of the delay embedding.

    Works on a single window or a stack of windows. All-zero windows give NaN.
    """
    emb = delay_embedding(window, d_e, tau)
    sv = np.linalg.svd(emb, compute_uv=False)
    # numerical rank: singular values at round-off level count as zero
    cutoff = sv[..., :1] * max(emb.shape[-2:]) * np.finfo(float).eps
    sv = np.where(sv > cutoff, sv, 0.0)
    total = sv.sum(axis=-1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = sv / total
        terms = np.where(p > 0, p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
    h = 0.0 - terms.sum(axis=-1)
    h = np.where(total[..., 0] > 0, h, np.nan)
    return float(h) if np.ndim(h) == 0 else h


def erd_ers(rir, resting_rir) -> np.ndarray:
    """Percent band-power change against rest; positive is desynchronisation."""
    rir = np.asarray(rir, dtype=float)
    rest = np.asarray(resting_rir, dtype=float)
    if np.any(rest <= 0):
        raise ValueError("undefined baseline band: resting RIR must be > 0")
    return (rest - rir) / rest * 100.0


def frontal_asymmetry(rir_f3, rir_f4, band: str = "alpha1") -> float:
    """log(F4 / F3) of the given alpha band's RIR; NaN when either side is zero."""
    k = BAND_NAMES.index(band)
    left = float(np.asarray(rir_f3)[k])
    right = float(np.asarray(rir_f4)[k])
    if left <= 0 or right <= 0:
        return float("nan")
    return float(np.log(right) - np.log(left))


def eeg_column_names() -> list[str]:
    cols = []
    for ch in EEG_CHANNELS:
        cols += [f"{ch}_rir_{b}" for b in BAND_NAMES]
        cols += [f"{ch}_erd_{b}" for b in BAND_NAMES]
        cols += [f"{ch}_spec_entropy", f"{ch}_svd_entropy"]
    return cols + ["FAI_alpha1", "FAI_alpha2"]


def windowed_rir(x: np.ndarray, fs: float, n_windows: int):
    """RIR for consecutive 1-s windows; silent windows come back as NaN rows."""
    w = int(round(fs))
    windows = x[: n_windows * w].reshape(n_windows, w)
    psi = band_psi(windows, fs)
    total = psi.sum(axis=1, keepdims=True)
    silent = total[:, 0] <= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        rir = psi / total
    rir[silent] = np.nan
    return windows, rir, silent


def resting_rir_estimate(rir: np.ndarray, seconds: int = RESTING_WINDOW_S) -> np.ndarray:
    """Mean RIR over the first ``seconds`` non-silent windows."""
    head = rir[:seconds]
    head = head[~np.isnan(head).any(axis=1)]
    if len(head) == 0:
        raise ValueError("undefined baseline band: no non-silent resting windows")
    return head.mean(axis=0)


def extract_eeg_features(session: Session, preprocess: bool = True,
                         scale_mode: str = "offline", bounds=None) -> FeatureFrame:
    """198 features per whole second: 14 x (6 RIR + 6 ERD/ERS + 2 entropies) + 2 FAI.

    Silent windows leave NaN only in their own channel's columns (and FAI when
    F3/F4 is involved); the frame's ``invalid`` mask marks those rows.
    """
    series = preprocess_eeg(session, scale_mode, bounds) if preprocess else session.eeg
    fs = series[0].rate_hz
    n_sec = int(np.floor(min(s.duration_s for s in series) + 1e-9))
    if n_sec < 1:
        raise ValueError("session shorter than 1 s")
    blocks = []
    rirs = {}
    invalid = np.zeros(n_sec, dtype=bool)
    for s in series:
        windows, rir, silent = windowed_rir(s.values, fs, n_sec)
        rirs[s.label] = rir
        rest = None
        if session.resting_rir is not None and s.label in session.resting_rir:
            rest = np.asarray(session.resting_rir[s.label], dtype=float)
        else:
            rest = resting_rir_estimate(rir)
        erd = erd_ers(rir, rest)
        spec = spectral_entropy(rir)
        svd = svd_entropy(windows)
        if silent.any():
            logger.info("%s %s: %d silent window(s)", session.key, s.label, int(silent.sum()))
            invalid |= silent
        blocks.append(np.column_stack([rir, erd, spec, svd]))
    k1, k2 = BAND_NAMES.index("alpha1"), BAND_NAMES.index("alpha2")
    with np.errstate(divide="ignore", invalid="ignore"):
        fai = [np.log(rirs["F4"][:, k] / rirs["F3"][:, k]) for k in (k1, k2)]
    fai = np.column_stack(fai)
    fai[~np.isfinite(fai)] = np.nan
    invalid |= np.isnan(fai).any(axis=1)
    values = np.column_stack(blocks + [fai])
    return FeatureFrame(session.participant_id, session.walk_id, np.arange(n_sec),
                        eeg_column_names(), values, invalid)
