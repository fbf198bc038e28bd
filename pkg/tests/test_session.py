import json

import numpy as np
import pytest

from walkstress.session import (EEG_CHANNELS, ChannelSeries, EnvironmentSchedule, Session, SessionError,
                                baseline_normalize, fft_resample, fill_gaps, load_session, minmax_scale,
                                save_session)


def _cs(values, rate=4.0, label="EDA"):
    return ChannelSeries(label, rate, 0.0, np.asarray(values, dtype=float))


def test_fft_resample_constant_upsample():
    out = fft_resample(np.array([5.0, 5, 5, 5]), 8)
    assert np.allclose(out, 5.0, atol=1e-12)
    assert len(out) == 8


def test_fft_resample_integer_bin_sinusoid():
    n, m = 8, 16
    x = np.sin(2 * np.pi * np.arange(n) / n)
    want = np.sin(2 * np.pi * np.arange(m) / m)
    assert np.max(np.abs(fft_resample(x, m) - want)) < 1e-9


def test_fft_resample_identity_and_roundtrip(rng):
    x = rng.normal(size=40)
    assert np.allclose(fft_resample(x, 40), x, atol=1e-12)
    # band-limited: only low bins populated
    t = np.arange(64)
    y = np.cos(2 * np.pi * 3 * t / 64) + 0.5 * np.sin(2 * np.pi * 7 * t / 64)
    back = fft_resample(fft_resample(y, 150), 64)
    assert np.max(np.abs(back - y)) < 1e-9


def test_fft_resample_series_rate_and_errors():
    s = _cs([1.0, 2.0, 3.0, 4.0], rate=4.0)
    out = fft_resample(s, 8)
    assert out.rate_hz == 8.0 and len(out) == 8
    with pytest.raises(ValueError):
        fft_resample(s, 1)


def test_baseline_normalize_examples():
    s = _cs([1.0, 2.0, 3.0])
    assert np.allclose(baseline_normalize(s, "self").values, [-1, 0, 1])
    assert np.allclose(baseline_normalize(s, 1.0).values, [0, 1, 2])
    z = _cs([-1.0, 0.0, 1.0])
    assert np.allclose(baseline_normalize(z, "self").values, z.values, atol=1e-12)


def test_baseline_self_mean_zero(rng):
    x = rng.normal(1000, 5, size=500)
    out = baseline_normalize(_cs(x), "self").values
    assert abs(out.mean()) <= 1e-12 * np.abs(x).max()


def test_minmax_examples_and_idempotence(rng):
    assert np.allclose(minmax_scale(_cs([2.0, 4, 6])).values, [0, 0.5, 1])
    assert np.allclose(minmax_scale(_cs([7.0, 7, 7])).values, 0.5)
    s = _cs(rng.normal(size=100))
    once = minmax_scale(s)
    assert once.values.min() == 0.0 and once.values.max() == 1.0
    assert np.array_equal(minmax_scale(once).values, once.values)


def test_minmax_streaming_and_pooled_bounds():
    s = _cs([3.0, 1.0, 2.0, 5.0])
    st = minmax_scale(s, "streaming").values
    assert st[0] == 0.5  # single-sample history is constant
    assert st[1] == 0.0 and st[3] == 1.0
    assert np.allclose(minmax_scale(s, bounds=(0.0, 10.0)).values, [0.3, 0.1, 0.2, 0.5])


def test_fill_gaps_recovers_smooth_signal():
    rate = 4.0
    t = np.arange(80) / rate
    x = np.sin(2 * np.pi * 0.1 * t)
    keep = np.ones(80, bool)
    keep[30:33] = False
    grid, n = fill_gaps(t[keep], x[keep], rate)
    assert n == 3 and len(grid) == 80
    # the stretched context block bridges the gap smoothly; exact recovery is not promised
    assert np.max(np.abs(grid[30:33] - x[30:33])) < 0.15
    assert np.array_equal(grid[keep], x[keep])


def test_schedule_invariants():
    with pytest.raises(SessionError):
        EnvironmentSchedule(((0, 5, "A"), (4, 8, "B")), ("A", "B"))
    with pytest.raises(SessionError):
        EnvironmentSchedule(((0, 5, "Z"),), ("A", "B"))
    sch = EnvironmentSchedule(((0, 5, "A"), (7, 9, "B")), ("A", "B"))
    assert sch.class_at(4.9) == "A" and sch.class_at(5.5) is None and sch.class_at(8) == "B"


def test_session_roundtrip_bit_identical(small_session, tmp_path):
    session, _ = small_session
    manifest = save_session(session, tmp_path / "s")
    back = load_session(manifest)
    assert back.key == session.key
    for a, b in zip(session.all_series(), back.all_series()):
        assert a.label == b.label
        assert np.array_equal(a.values, b.values)
        assert np.array_equal(a.times, b.times)
    assert np.array_equal(back.gps, session.gps)
    assert back.schedule == session.schedule
    assert back.resting_eeg_means == session.resting_eeg_means


def test_load_missing_channel_names_it(small_session, tmp_path):
    session, _ = small_session
    manifest = save_session(session, tmp_path / "s")
    eeg = (tmp_path / "s" / "eeg.csv").read_text().splitlines()
    header = eeg[0].split(",")
    drop = header.index("F4")
    rows = [",".join(v for i, v in enumerate(line.split(",")) if i != drop) for line in eeg]
    (tmp_path / "s" / "eeg.csv").write_text("\n".join(rows) + "\n")
    with pytest.raises(SessionError, match="F4"):
        load_session(manifest)


def test_load_duplicate_gps_timestamp(small_session, tmp_path):
    session, _ = small_session
    manifest = save_session(session, tmp_path / "s")
    gps = (tmp_path / "s" / "gps.csv").read_text().splitlines()
    gps[3] = gps[2]
    (tmp_path / "s" / "gps.csv").write_text("\n".join(gps) + "\n")
    with pytest.raises(SessionError, match="non-monotonic GPS"):
        load_session(manifest)


def test_load_reports_file_and_line(small_session, tmp_path):
    session, _ = small_session
    manifest = save_session(session, tmp_path / "s")
    lines = (tmp_path / "s" / "eda.csv").read_text().splitlines()
    lines[5] = "1.000,abc"
    (tmp_path / "s" / "eda.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(SessionError, match=r"eda\.csv:6"):
        load_session(manifest)


def test_load_fills_missing_samples(small_session, tmp_path):
    session, _ = small_session
    manifest = save_session(session, tmp_path / "s")
    lines = (tmp_path / "s" / "eda.csv").read_text().splitlines()
    del lines[10:12]
    (tmp_path / "s" / "eda.csv").write_text("\n".join(lines) + "\n")
    back = load_session(manifest)
    assert len(back.eda) == len(session.eda)
    assert np.all(np.isfinite(back.eda.values))


def test_session_requires_14_channels(small_session):
    session, _ = small_session
    with pytest.raises(SessionError, match="F4"):
        Session("p", "w", "outdoor", tuple(s for s in session.eeg if s.label != "F4"),
                session.eda, session.bvp, session.schedule)
    assert [s.label for s in session.eeg] == list(EEG_CHANNELS)


def test_manifest_is_json(small_session, tmp_path):
    session, _ = small_session
    data = json.loads(save_session(session, tmp_path / "s").read_text())
    assert data["route"] == "outdoor" and data["channels"]["eeg"] == "eeg.csv"
