import numpy as np
import pytest
from scipy import signal

from walkstress.eda import (DEFAULT_IRF, EDA_COLUMNS, RAW_EDA_COLUMN, bateman, cda_decompose, deconvolve,
                            detect_scrs, extract_eda_features, lowpass_eda)
from walkstress.session import ChannelSeries, minmax_scale
from walkstress.synth import eda_fixture


def test_bateman_shape():
    fs = 4.0
    b = bateman(400, fs, *DEFAULT_IRF)
    t = np.arange(400) / fs
    ref = np.exp(-t / 3.75) - np.exp(-t / 1.0)
    assert np.allclose(b / b.max(), ref / ref.max(), atol=1e-12)
    assert b[0] == 0.0
    assert abs(t[np.argmax(b)] - np.log(3.75) * 3.75 / 2.75) < 0.25


def test_lowpass_is_steady_state():
    x = ChannelSeries("EDA", 4.0, 0.0, np.full(200, 3.0))
    assert np.allclose(lowpass_eda(x).values, 3.0, atol=1e-12)


def test_deconvolve_recovers_impulse():
    fs = 4.0
    n = 400
    driver = np.zeros(n)
    driver[100] = 2.0 * fs
    x = signal.fftconvolve(driver, bateman(n, fs, *DEFAULT_IRF))[:n] / fs
    d = deconvolve(x, fs, DEFAULT_IRF)
    assert abs(int(np.argmax(d)) - 100) <= 1


def test_fixture_decomposition_recovers_truth():
    raw, tonic, onsets, amps = eda_fixture(7)
    lp = lowpass_eda(raw)
    lo, hi = lp.values.min(), lp.values.max()
    dec = cda_decompose(minmax_scale(lp))
    tonic = (tonic - lo) / (hi - lo)
    onsets = np.ceil(onsets * raw.rate_hz) / raw.rate_hz
    det = np.array([s.onset_s for s in dec.scrs])
    assert abs(len(det) - len(onsets)) <= 0.1 * len(onsets)
    err = [np.min(np.abs(det - o)) for o in onsets]
    assert np.median(err) <= 0.5
    rms = np.sqrt(np.mean((dec.tonic.values - tonic) ** 2)) / np.sqrt(np.mean(tonic ** 2))
    assert rms <= 0.05
    assert dec.reconstruction_error <= 0.05
    assert np.all(dec.phasic_driver.values >= 0)
    assert np.all(dec.tonic.values >= 0)


def test_flat_record_has_no_scrs():
    dec = cda_decompose(ChannelSeries("EDA", 4.0, 0.0, np.full(400, 0.5)))
    assert dec.scrs == ()
    assert np.allclose(dec.tonic.values, 0.5, atol=1e-3)


def test_detect_scrs_empty_driver():
    assert detect_scrs(ChannelSeries("d", 4.0, 0.0, np.zeros(100))) == []


def test_features_per_second(small_session):
    session, truth = small_session
    frame = extract_eda_features(session)
    n = int(session.duration_s)
    assert frame.columns == EDA_COLUMNS + [RAW_EDA_COLUMN]
    assert frame.values.shape == (n, 7)
    n_scr = frame.column("n_scr")
    assert np.all(n_scr == np.round(n_scr)) and n_scr.sum() > 0
    assert np.all(frame.column("phasic_max") >= frame.column("phasic_mean") - 1e-12)
    raw = frame.column(RAW_EDA_COLUMN)
    assert raw.min() >= 0 and raw.max() <= 1
    # seconds with zero responses carry zero amplitude
    assert np.all(frame.column("scr_amp_sum")[n_scr == 0] == 0)
