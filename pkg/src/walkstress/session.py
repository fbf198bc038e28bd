"""Session data model, CSV/JSON ingestion and the signal preprocessing chain."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

EEG_CHANNELS: tuple[str, ...] = (
    "AF3", "F7", "F3", "FC5", "T7", "P7", "O1",
    "O2", "P8", "T8", "FC6", "F4", "F8", "FC4",
)
DEVICE_RATES = {"eeg": 128.0, "eda": 4.0, "bvp": 64.0, "hr": 1.0}
CLASS_SETS = {
    "outdoor": tuple("ABCDEFGH"),
    "indoor": tuple("ABCDE"),
}
BAND_NAMES = ("delta", "theta", "alpha1", "alpha2", "beta", "gamma")
MANIFEST_VERSION = 1


class SessionError(ValueError):
    """Raised for malformed or invariant-violating session input."""


@dataclass(frozen=True)
class ChannelSeries:
    label: str
    rate_hz: float
    start_s: float
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1:
            raise SessionError(f"{self.label}: values must be 1-D")
        if self.rate_hz <= 0:
            raise SessionError(f"{self.label}: rate_hz must be positive")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @property
    def times(self) -> np.ndarray:
        return self.start_s + np.arange(len(self.values)) / self.rate_hz

    @property
    def duration_s(self) -> float:
        return len(self.values) / self.rate_hz

    def with_values(self, values: np.ndarray) -> "ChannelSeries":
        return replace(self, values=np.asarray(values, dtype=float))


@dataclass(frozen=True)
class EnvironmentSchedule:
    segments: tuple[tuple[float, float, str], ...]
    class_set: tuple[str, ...]

    def __post_init__(self):
        segs = tuple((float(a), float(b), str(c)) for a, b, c in self.segments)
        object.__setattr__(self, "segments", segs)
        prev_end = -np.inf
        for start, end, cls in segs:
            if not start < end:
                raise SessionError(f"schedule segment [{start}, {end}) is empty")
            if start < prev_end:
                raise SessionError("schedule segments overlap or are out of order")
            if cls not in self.class_set:
                raise SessionError(f"class {cls!r} not in class set {self.class_set}")
            prev_end = end

    def class_at(self, t: float) -> str | None:
        for start, end, cls in self.segments:
            if start <= t < end:
                return cls
        return None


@dataclass(frozen=True)
class Session:
    participant_id: str
    walk_id: str
    route: Literal["outdoor", "indoor"]
    eeg: tuple[ChannelSeries, ...]
    eda: ChannelSeries
    bvp: ChannelSeries
    schedule: EnvironmentSchedule
    hr: ChannelSeries | None = None
    gps: np.ndarray | None = None  # (n, 3): t_s, lat, lon
    resting_eeg_means: dict[str, float] | None = None
    resting_rir: dict[str, np.ndarray] | None = None

    def __post_init__(self):
        labels = [s.label for s in self.eeg]
        missing = [ch for ch in EEG_CHANNELS if ch not in labels]
        if missing:
            raise SessionError(f"missing EEG channel(s): {', '.join(missing)}")
        if len(labels) != len(EEG_CHANNELS):
            extra = sorted(set(labels) - set(EEG_CHANNELS))
            raise SessionError(f"unexpected EEG channel(s): {', '.join(extra) or 'duplicates'}")
        order = {ch: i for i, ch in enumerate(EEG_CHANNELS)}
        object.__setattr__(self, "eeg", tuple(sorted(self.eeg, key=lambda s: order[s.label])))
        if self.gps is not None:
            gps = np.asarray(self.gps, dtype=float).reshape(-1, 3)
            if np.any(np.diff(gps[:, 0]) <= 0):
                raise SessionError("non-monotonic GPS timestamps")
            object.__setattr__(self, "gps", gps)
        for s in self.all_series():
            if not np.all(np.isfinite(s.values)):
                raise SessionError(f"{s.label}: non-finite samples")

    def all_series(self) -> Iterable[ChannelSeries]:
        yield from self.eeg
        yield self.eda
        yield self.bvp
        if self.hr is not None:
            yield self.hr

    def channel(self, label: str) -> ChannelSeries:
        for s in self.eeg:
            if s.label == label:
                return s
        raise KeyError(label)

    @property
    def duration_s(self) -> float:
        return min(s.start_s + s.duration_s for s in self.all_series())

    @property
    def key(self) -> tuple[str, str]:
        return (self.participant_id, self.walk_id)


@dataclass
class IngestConfig:
    gap_factor: float = 1.5
    gap_context_s: float = 1.0
    rates: dict[str, float] = field(default_factory=lambda: dict(DEVICE_RATES))


# ---------------------------------------------------------------- transforms

def fft_resample(series: ChannelSeries | np.ndarray, target_len: int):
    """Resample to ``target_len`` points by zero-padding or truncating the spectrum.

    Accepts a ChannelSeries (returned with the rate scaled to cover the same
    duration) or a bare array.
    """
    if target_len < 2:
        raise ValueError("target_len must be >= 2")
    x = series.values if isinstance(series, ChannelSeries) else np.asarray(series, dtype=float)
    n = len(x)
    if n < 2:
        raise ValueError("need at least 2 samples to resample")
    if target_len == n:
        out = x.copy()
    else:
        spec = np.fft.rfft(x)
        new = np.zeros(target_len // 2 + 1, dtype=complex)
        m = min(len(spec), len(new))
        new[:m] = spec[:m]
        if target_len > n and n % 2 == 0:
            # split the old Nyquist bin between +/- frequencies
            new[n // 2] *= 0.5
        elif target_len < n and target_len % 2 == 0:
            new[target_len // 2] = 2.0 * spec[target_len // 2].real
        out = np.fft.irfft(new, target_len) * (target_len / n)
    if isinstance(series, ChannelSeries):
        return replace(series, values=out, rate_hz=series.rate_hz * target_len / n)
    return out


def baseline_normalize(series: ChannelSeries, baseline_mean: float | str = "self") -> ChannelSeries:
    x = series.values
    if isinstance(baseline_mean, str):
        if baseline_mean != "self":
            raise ValueError("baseline_mean must be a number or 'self'")
        baseline_mean = x.mean()
    return series.with_values(x - baseline_mean)


def minmax_scale(
    series: ChannelSeries,
    mode: Literal["offline", "streaming"] = "offline",
    bounds: tuple[float, float] | None = None,
) -> ChannelSeries:
    """Scale into [0, 1]. Constant input maps to 0.5.

    ``bounds`` overrides the (min, max) pair, used when scaling is pooled over
    several recordings. ``streaming`` uses the running min/max up to each sample.
    """
    x = series.values
    if len(x) == 0:
        raise ValueError("cannot scale an empty series")
    if mode == "streaming":
        lo = np.minimum.accumulate(x)
        hi = np.maximum.accumulate(x)
    elif bounds is not None:
        lo, hi = np.full_like(x, bounds[0]), np.full_like(x, bounds[1])
    else:
        lo, hi = np.full_like(x, x.min()), np.full_like(x, x.max())
    span = hi - lo
    flat = span <= 0
    out = np.where(flat, 0.5, (x - lo) / np.where(flat, 1.0, span))
    return series.with_values(np.clip(out, 0.0, 1.0))


def fill_gaps(times: np.ndarray, values: np.ndarray, rate_hz: float,
              gap_factor: float = 1.5, context_s: float = 1.0) -> tuple[np.ndarray, int]:
    """Place samples on a uniform grid and fill missing points by FFT interpolation.

    A gap is a timestamp jump larger than ``gap_factor`` sample periods or a
    NaN value. Each gap is filled from up to ``context_s`` seconds of known
    samples on either side, stretched to cover the gap with ``fft_resample``.
    Returns the filled grid values and the number of filled samples.
    """
    period = 1.0 / rate_hz
    idx = np.rint((times - times[0]) / period).astype(np.int64)
    if np.any(np.diff(idx) <= 0):
        bad = int(np.flatnonzero(np.diff(idx) <= 0)[0]) + 1
        raise SessionError(f"samples {bad - 1} and {bad} fall on the same grid point")
    grid = np.full(idx[-1] + 1, np.nan)
    grid[idx] = values
    missing = np.isnan(grid)
    n_missing = int(missing.sum())
    if n_missing == 0:
        return grid, 0
    if missing.all():
        raise SessionError("no valid samples")
    ctx = max(1, int(round(context_s * rate_hz)))
    known = ~missing
    # runs of missing points
    edges = np.diff(np.concatenate([[0], missing.astype(np.int8), [0]]))
    starts, ends = np.flatnonzero(edges == 1), np.flatnonzero(edges == -1)
    filled = grid.copy()
    for a, b in zip(starts, ends):
        left = np.flatnonzero(known[:a])[-ctx:]
        right = np.flatnonzero(known[b:])[:ctx] + b
        ctx_idx = np.concatenate([left, right])
        if len(ctx_idx) < 2:
            filled[a:b] = grid[ctx_idx[0]] if len(ctx_idx) else 0.0
            continue
        block = grid[ctx_idx]
        stretched = fft_resample(block, len(block) + (b - a))
        filled[a:b] = stretched[len(left):len(left) + (b - a)]
    return filled, n_missing


# ----------------------------------------------------------------- ingestion

def _read_csv(path: Path, expected: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    if not path.exists():
        raise SessionError(f"missing file: {path}")
    try:
        frame = pd.read_csv(path, dtype=float, skip_blank_lines=True, float_precision="round_trip")
    except (ValueError, pd.errors.ParserError, pd.errors.EmptyDataError):
        frame = None
    if frame is not None:
        header = [str(h).strip() for h in frame.columns]
        data = frame.to_numpy(dtype=float)
    else:
        header, data = _read_csv_strict(path)
    if expected is not None and header != list(expected):
        raise SessionError(f"{path}:1: expected header {','.join(expected)}, got {','.join(header)}")
    return header, data


def _read_csv_strict(path: Path) -> tuple[list[str], np.ndarray]:
    # slow path; only used to pinpoint the offending line
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SessionError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise SessionError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(v) if v.strip() != "" else np.nan for v in row])
            except ValueError:
                raise SessionError(f"{path}:{lineno}: malformed row {row!r}") from None
    return header, np.array(rows, dtype=float).reshape(-1, len(header))


def _check_times(path: Path, t: np.ndarray, what: str = "timestamps") -> None:
    if np.any(~np.isfinite(t)):
        bad = int(np.flatnonzero(~np.isfinite(t))[0])
        raise SessionError(f"{path}:{bad + 2}: missing timestamp")
    d = np.diff(t)
    if np.any(d <= 0):
        bad = int(np.flatnonzero(d <= 0)[0]) + 1
        raise SessionError(f"{path}:{bad + 2}: non-monotonic {what}")


def _series_from(path: Path, label: str, t: np.ndarray, v: np.ndarray, rate: float,
                 config: IngestConfig) -> ChannelSeries:
    if len(t) < 2:
        raise SessionError(f"{path}: {label} needs at least 2 samples")
    _check_times(path, t)
    values, n_filled = fill_gaps(t, v, rate, config.gap_factor, config.gap_context_s)
    if n_filled:
        logger.info("%s: interpolated %d missing %s samples", path, n_filled, label)
    return ChannelSeries(label, rate, round(float(t[0]), 3), values)


def _load_channel(path: Path, label: str, rate: float, config: IngestConfig) -> ChannelSeries:
    _, data = _read_csv(path, ["t_s", "value"])
    return _series_from(path, label, data[:, 0], data[:, 1], rate, config)


def _load_eeg(base: Path, spec, rate: float, config: IngestConfig) -> list[ChannelSeries]:
    if isinstance(spec, str):
        path = base / spec
        header, data = _read_csv(path)
        if not header or header[0] != "t_s":
            raise SessionError(f"{path}:1: first column must be t_s")
        for ch in header[1:]:
            if ch not in EEG_CHANNELS:
                raise SessionError(f"{path}:1: unknown channel label {ch!r}")
        missing = [ch for ch in EEG_CHANNELS if ch not in header[1:]]
        if missing:
            raise SessionError(f"{path}:1: missing EEG channel(s): {', '.join(missing)}")
        return [_series_from(path, ch, data[:, 0], data[:, j], rate, config)
                for j, ch in enumerate(header) if j > 0]
    out = []
    for ch, rel in spec.items():
        if ch not in EEG_CHANNELS:
            raise SessionError(f"{base}: unknown channel label {ch!r}")
        out.append(_load_channel(base / rel, ch, rate, config))
    missing = [ch for ch in EEG_CHANNELS if ch not in spec]
    if missing:
        raise SessionError(f"{base}: missing EEG channel(s): {', '.join(missing)}")
    return out


def load_schedule(path: Path, route: str) -> EnvironmentSchedule:
    if not path.exists():
        raise SessionError(f"missing file: {path}")
    segments = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["start_s", "end_s", "class_id"]:
            raise SessionError(f"{path}:1: expected header start_s,end_s,class_id")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                segments.append((float(row[0]), float(row[1]), row[2].strip()))
            except (ValueError, IndexError):
                raise SessionError(f"{path}:{lineno}: malformed row {row!r}") from None
    try:
        return EnvironmentSchedule(tuple(segments), CLASS_SETS[route])
    except SessionError as exc:
        raise SessionError(f"{path}: {exc}") from None


def load_session(manifest_path: str | Path, config: IngestConfig | None = None) -> Session:
    """Load a session from its JSON manifest and the CSV files it references."""
    config = config or IngestConfig()
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise SessionError(f"missing file: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise SessionError(f"{manifest_path}:{exc.lineno}: invalid JSON") from None
    base = manifest_path.parent
    try:
        route = manifest["route"]
        chans = manifest["channels"]
        if route not in CLASS_SETS:
            raise SessionError(f"{manifest_path}: unknown route {route!r}")
        rates = {**config.rates, **manifest.get("rates", {})}
        eeg = _load_eeg(base, chans["eeg"], rates["eeg"], config)
        eda = _load_channel(base / chans["eda"], "EDA", rates["eda"], config)
        bvp = _load_channel(base / chans["bvp"], "BVP", rates["bvp"], config)
        hr = _load_channel(base / chans["hr"], "HR", rates["hr"], config) if chans.get("hr") else None
        schedule = load_schedule(base / manifest["schedule"], route)
        participant, walk = str(manifest["participant_id"]), str(manifest["walk_id"])
    except KeyError as exc:
        raise SessionError(f"{manifest_path}: missing manifest key {exc}") from None

    gps = None
    if manifest.get("gps"):
        path = base / manifest["gps"]
        _, data = _read_csv(path, ["t_s", "lat", "lon"])
        if np.any(np.diff(data[:, 0]) <= 0):
            bad = int(np.flatnonzero(np.diff(data[:, 0]) <= 0)[0]) + 1
            raise SessionError(f"{path}:{bad + 2}: non-monotonic GPS timestamps")
        gps = data

    resting_means = None
    if manifest.get("resting_means"):
        path = base / manifest["resting_means"]
        resting_means = {}
        with path.open(newline="") as fh:
            for lineno, row in enumerate(csv.DictReader(fh), start=2):
                try:
                    resting_means[row["channel"]] = float(row["mean"])
                except (KeyError, ValueError, TypeError):
                    raise SessionError(f"{path}:{lineno}: malformed row") from None
    resting_rir = None
    if manifest.get("resting_rir"):
        path = base / manifest["resting_rir"]
        header, rows = None, {}
        with path.open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["channel", *BAND_NAMES]:
                raise SessionError(f"{path}:1: expected header channel,{','.join(BAND_NAMES)}")
            for lineno, row in enumerate(reader, start=2):
                try:
                    rows[row[0]] = np.array([float(v) for v in row[1:]])
                except ValueError:
                    raise SessionError(f"{path}:{lineno}: malformed row") from None
        resting_rir = rows

    try:
        return Session(participant, walk, route, tuple(eeg), eda, bvp, schedule, hr=hr,
                       gps=gps, resting_eeg_means=resting_means, resting_rir=resting_rir)
    except SessionError as exc:
        raise SessionError(f"{manifest_path}: {exc}") from None


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt_time(t: np.ndarray) -> list[str]:
    return [f"{v:.3f}" for v in t]


def save_session(session: Session, directory: str | Path) -> Path:
    """Write ``session`` as manifest + CSV files; returns the manifest path.

    Values are written with round-trip precision, timestamps with millisecond
    precision; the grid itself is rebuilt from start time and rate on load.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    eeg0 = session.eeg[0]
    t = _fmt_time(eeg0.times)
    cols = [s.values for s in session.eeg]
    _write_rows(d / "eeg.csv", ["t_s", *EEG_CHANNELS],
                ([t[i], *(_fmt(c[i]) for c in cols)] for i in range(len(eeg0))))
    channels: dict[str, object] = {"eeg": "eeg.csv"}
    rates = {"eeg": eeg0.rate_hz}
    for name, s in (("eda", session.eda), ("bvp", session.bvp), ("hr", session.hr)):
        if s is None:
            continue
        _write_rows(d / f"{name}.csv", ["t_s", "value"],
                    zip(_fmt_time(s.times), map(_fmt, s.values)))
        channels[name] = f"{name}.csv"
        rates[name] = s.rate_hz
    _write_rows(d / "schedule.csv", ["start_s", "end_s", "class_id"],
                ((_fmt(a), _fmt(b), c) for a, b, c in session.schedule.segments))
    manifest: dict[str, object] = {
        "format_version": MANIFEST_VERSION,
        "participant_id": session.participant_id,
        "walk_id": session.walk_id,
        "route": session.route,
        "channels": channels,
        "rates": rates,
        "schedule": "schedule.csv",
    }
    if session.gps is not None:
        _write_rows(d / "gps.csv", ["t_s", "lat", "lon"],
                    ((f"{r[0]:.3f}", _fmt(r[1]), _fmt(r[2])) for r in session.gps))
        manifest["gps"] = "gps.csv"
    if session.resting_eeg_means is not None:
        _write_rows(d / "resting_means.csv", ["channel", "mean"],
                    ((ch, _fmt(v)) for ch, v in session.resting_eeg_means.items()))
        manifest["resting_means"] = "resting_means.csv"
    if session.resting_rir is not None:
        _write_rows(d / "resting_rir.csv", ["channel", *BAND_NAMES],
                    ((ch, *map(_fmt, v)) for ch, v in session.resting_rir.items()))
        manifest["resting_rir"] = "resting_rir.csv"
    path = d / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def preprocess_eeg(session: Session, scale_mode: Literal["offline", "streaming"] = "offline",
                   bounds: dict[str, tuple[float, float]] | None = None) -> tuple[ChannelSeries, ...]:
    """Baseline-normalize then min-max scale each EEG channel.

    The resting mean is subtracted when the session carries one for the
    channel; otherwise the channel's own mean is used.
    """
    means = session.resting_eeg_means or {}
    out = []
    for s in session.eeg:
        centred = baseline_normalize(s, means.get(s.label, "self"))
        out.append(minmax_scale(centred, scale_mode, (bounds or {}).get(s.label)))
    return tuple(out)
