"""Synthetic walk sessions with planted per-environment profiles and known ground truth."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .eda import DEFAULT_IRF, bateman
from .eeg import band_bin_ranges
from .session import (BAND_NAMES, CLASS_SETS, DEVICE_RATES, EEG_CHANNELS, ChannelSeries,
                      EnvironmentSchedule, Session, save_session)

logger = logging.getLogger(__name__)

# per-bin variance of the resting EEG spectrum, roughly 1/f
BASE_BAND_POWER = (4.0, 2.5, 2.0, 1.6, 0.8, 0.3)
EEG_DC_OFFSET = 4200.0
WALK_SPEED_DEG_S = 1.2e-5  # ~1.3 m/s in latitude degrees
ORIGIN = (52.0, -1.25)
EEG_RESPONSE = 0.6  # exponent on the class band gains


@dataclass(frozen=True)
class ClassProfile:
    tonic: float  # tonic level above the walk baseline, uS
    scr_rate: float  # responses per minute
    scr_amp: float  # mean response amplitude, uS
    hr_offset: float  # bpm
    band_gain: tuple[float, ...] = (1.0,) * 6  # multiplies per-band variance
    speed: float = 1.0  # walking speed multiplier (GPS only)

    def __post_init__(self):
        vals = [self.tonic, self.scr_rate, self.scr_amp, self.hr_offset, self.speed, *self.band_gain]
        if not np.all(np.isfinite(vals)):
            raise ValueError("class profile values must be finite")
        if len(self.band_gain) != len(BAND_NAMES) or min(self.band_gain) <= 0:
            raise ValueError("band_gain needs 6 positive entries")
        if self.scr_rate < 0 or self.scr_amp < 0 or self.speed <= 0:
            raise ValueError("rates, amplitudes and speed must be non-negative")


@dataclass(frozen=True)
class RouteSpec:
    kind: str  # "outdoor" or "indoor"
    classes: dict[str, ClassProfile]
    plan: tuple[tuple[str, float], ...]  # ordered (class, seconds) segments
    gps: bool = True
    eda_noise: float = 0.0015
    bvp_noise: float = 0.05
    tonic_tau_s: float = 12.0

    def __post_init__(self):
        if self.kind not in CLASS_SETS:
            raise ValueError(f"unknown route kind {self.kind!r}")
        for cls, dur in self.plan:
            if cls not in self.classes:
                raise ValueError(f"plan uses undefined class {cls!r}")
            if not dur > 0:
                raise ValueError("segment durations must be positive")

    @property
    def class_set(self) -> tuple[str, ...]:
        return CLASS_SETS[self.kind]

    def class_seconds(self) -> dict[str, float]:
        out: dict[str, float] = {}
        for cls, dur in self.plan:
            out[cls] = out.get(cls, 0.0) + dur
        return out

    def to_json(self) -> dict:
        return {"kind": self.kind, "classes": {k: asdict(v) for k, v in self.classes.items()},
                "plan": [list(p) for p in self.plan], "gps": self.gps, "eda_noise": self.eda_noise,
                "bvp_noise": self.bvp_noise, "tonic_tau_s": self.tonic_tau_s}

    @classmethod
    def from_json(cls, d: dict) -> "RouteSpec":
        classes = {k: ClassProfile(**{**v, "band_gain": tuple(v["band_gain"])})
                   for k, v in d["classes"].items()}
        return cls(d["kind"], classes, tuple((c, float(s)) for c, s in d["plan"]),
                   d.get("gps", True), d.get("eda_noise", 0.0015), d.get("bvp_noise", 0.05),
                   d.get("tonic_tau_s", 12.0))


@dataclass(frozen=True)
class ParticipantOffset:
    """Inter-individual differences. Biases and gains per modality, plus each
    person's own deviation from the shared class responses."""
    eda_bias: float = 0.0
    eda_gain: float = 1.0
    hr_bias: float = 0.0
    bvp_gain: float = 1.0
    eeg_gain: tuple[float, ...] = (1.0,) * 6
    speed: float = 1.0
    drift_amp: float = 0.1
    drift_phase: float = 0.0
    tonic_jitter: dict = field(default_factory=dict)  # class -> uS
    hr_jitter: dict = field(default_factory=dict)  # class -> bpm
    band_jitter: dict = field(default_factory=dict)  # class -> 6 log-gains

    @classmethod
    def random(cls, rng: np.random.Generator, class_set: Sequence[str], strength: float = 1.0
               ) -> "ParticipantOffset":
        s = strength
        return cls(
            eda_bias=float(rng.uniform(1.0, 4.0)),
            eda_gain=float(np.exp(rng.normal(0, 0.3))),
            hr_bias=float(rng.normal(0, 6)),
            bvp_gain=float(np.exp(rng.normal(0, 0.3))),
            eeg_gain=tuple(np.exp(rng.normal(0, 0.2, 6)).tolist()),
            speed=float(rng.uniform(0.9, 1.1)),
            drift_amp=float(rng.uniform(0.05, 0.2)),
            drift_phase=float(rng.uniform(0, 2 * np.pi)),
            tonic_jitter={c: float(rng.normal(0, 0.25 * s)) for c in class_set},
            hr_jitter={c: float(rng.normal(0, 3.0 * s)) for c in class_set},
            band_jitter={c: rng.normal(0, 0.5 * s, 6).tolist() for c in class_set},
        )


@dataclass
class GroundTruth:
    scr_onsets: np.ndarray  # seconds
    scr_amplitudes: np.ndarray  # uS
    tonic: np.ndarray  # uS at the EDA rate
    hr: np.ndarray  # bpm, one value per second
    band_power: np.ndarray  # (n_sec, 6) planted per-bin variance
    labels: np.ndarray  # class per second
    segments: tuple[tuple[float, float, str], ...]

    def to_json(self) -> dict:
        return {"scrs": [{"onset_s": float(o), "amplitude": float(a)}
                         for o, a in zip(self.scr_onsets, self.scr_amplitudes)],
                "segments": [list(s) for s in self.segments]}

    def write(self, directory: str | Path) -> None:
        d = Path(directory)
        (d / "ground_truth.json").write_text(json.dumps(self.to_json(), indent=1) + "\n")
        n = len(self.labels)
        fs = len(self.tonic) / n
        tonic_s = self.tonic[(np.arange(n) * fs).astype(int)]
        with open(d / "ground_truth.csv", "w") as fh:
            fh.write("t_s,label,tonic,hr," + ",".join(f"power_{b}" for b in BAND_NAMES) + "\n")
            for t in range(n):
                bp = ",".join(repr(float(v)) for v in self.band_power[t])
                fh.write(f"{t},{self.labels[t]},{float(tonic_s[t])!r},{float(self.hr[t])!r},{bp}\n")


# ------------------------------------------------------------ canonical routes

def _profiles(kind: str, variant: str) -> dict[str, ClassProfile]:
    g = lambda *v: tuple(float(x) for x in v)  # noqa: E731
    if kind == "outdoor":
        # pairs (B, C), (D, E) and (F, H) share their EDA response and differ
        # only in EEG and heart rate
        base = {
            "A": ClassProfile(0.0, 1.0, 0.15, 0.0, g(1, 1, 1, 1, 1, 1), 1.0),
            "B": ClassProfile(0.6, 2.0, 0.2, 4.0, g(1, 1, 2.5, 2.5, 0.8, 1), 1.1),
            "C": ClassProfile(0.6, 2.0, 0.2, -4.0, g(1, 2.5, 0.7, 0.7, 1.2, 1), 0.9),
            "D": ClassProfile(1.2, 3.0, 0.25, 8.0, g(0.6, 1, 1, 1, 2.5, 2), 0.8),
            "E": ClassProfile(1.2, 3.0, 0.25, 0.0, g(2.5, 1, 1, 1, 0.6, 0.7), 1.0),
            "F": ClassProfile(1.8, 4.0, 0.3, 12.0, g(1, 0.6, 2.5, 1, 1, 2.5), 0.7),
            "G": ClassProfile(0.3, 1.5, 0.2, 2.0, g(1.8, 1.8, 1, 0.6, 1, 1), 1.2),
            "H": ClassProfile(1.8, 4.0, 0.3, 4.0, g(1, 2.2, 1, 2.5, 0.6, 1), 0.6),
        }
    else:
        base = {
            "A": ClassProfile(0.0, 1.0, 0.15, 0.0, g(1, 1, 1, 1, 1, 1), 1.0),
            "B": ClassProfile(0.7, 2.0, 0.2, 5.0, g(1, 1, 2.5, 2.5, 0.8, 1), 0.9),
            "C": ClassProfile(0.7, 2.0, 0.2, -3.0, g(1, 2.5, 0.7, 0.7, 1.2, 1), 1.1),
            "D": ClassProfile(1.4, 3.0, 0.25, 9.0, g(0.6, 1, 1, 1, 2.5, 2), 0.8),
            "E": ClassProfile(1.4, 3.0, 0.25, 2.0, g(2.5, 1, 1, 1, 0.6, 0.7), 0.7),
        }
    if variant == "tm_dominant":
        # tonic level alone carries the class; other modalities are flat
        levels = np.linspace(0.0, 2.8, len(base))
        base = {c: ClassProfile(float(levels[i]), 2.0, 0.2, 0.0, (1.0,) * 6, 1.0)
                for i, c in enumerate(base)}
    elif variant != "default":
        raise ValueError(f"unknown variant {variant!r}")
    return base


OUTDOOR_PLAN = (("A", 40), ("B", 50), ("C", 30), ("A", 30), ("D", 30), ("E", 25), ("A", 34),
                ("F", 20), ("G", 40), ("B", 40), ("A", 30), ("H", 23), ("C", 30), ("D", 25),
                ("F", 20), ("E", 20), ("A", 30))
INDOOR_PLAN = (("A", 49), ("B", 65), ("C", 55), ("D", 73), ("E", 29), ("A", 49))


def canonical_route(kind: str, variant: str = "default", duration_scale: float = 1.0) -> RouteSpec:
    """Route for the canonical benchmarks. ``kind`` is outdoor8 or indoor5."""
    route = {"outdoor8": "outdoor", "indoor5": "indoor"}.get(kind, kind)
    plan = OUTDOOR_PLAN if route == "outdoor" else INDOOR_PLAN
    plan = tuple((c, float(max(3.0, round(s * duration_scale)))) for c, s in plan)
    return RouteSpec(route, _profiles(route, variant), plan, gps=route == "outdoor")


# ------------------------------------------------------------------ generation

def _segments(spec: RouteSpec, speed: float) -> tuple[tuple[float, float, str], ...]:
    out = []
    t = 0.0
    for cls, dur in spec.plan:
        d = float(max(2, round(dur / speed)))
        out.append((t, t + d, cls))
        t += d
    return tuple(out)


def _smooth_steps(levels: np.ndarray, fs: float, tau_s: float) -> np.ndarray:
    """First-order approach towards a piecewise-constant target."""
    if tau_s <= 0:
        return levels.copy()
    a = np.exp(-1.0 / (tau_s * fs))
    out = np.empty_like(levels)
    acc = levels[0]
    for i, v in enumerate(levels):
        acc = a * acc + (1 - a) * v
        out[i] = acc
    return out


def _route_polyline(spec: RouteSpec) -> np.ndarray:
    """One waypoint per segment boundary; fixed for the route so walks overlap."""
    rng = np.random.default_rng(sum(ord(c) for c in spec.kind) + len(spec.plan))
    pts = [np.array(ORIGIN)]
    heading = rng.uniform(0, 2 * np.pi)
    for cls, dur in spec.plan:
        heading += rng.uniform(-1.2, 1.2)
        length = dur * WALK_SPEED_DEG_S * spec.classes[cls].speed
        pts.append(pts[-1] + length * np.array([np.cos(heading), np.sin(heading) * 1.6]))
    return np.array(pts)


def _eeg_channels(band_power: np.ndarray, fs: float, rng: np.random.Generator,
                  resting_means: dict[str, float]) -> list[ChannelSeries]:
    n_sec = band_power.shape[0]
    per = int(fs)
    n_bins = per // 2 + 1
    gains = np.zeros((n_sec, n_bins))
    for k, (lo, hi) in enumerate(band_bin_ranges(per, fs)):
        gains[:, max(lo, 1):hi + 1] = np.sqrt(band_power[:, k])[:, None]
    gains[:, 61:] = np.sqrt(0.05)
    channels = []
    for c, ch in enumerate(EEG_CHANNELS):
        # posterior/temporal channels follow the schedule a little less closely
        follow = 1.0 - 0.3 * (c % 3) / 2
        spec = np.fft.rfft(rng.standard_normal((n_sec, per)), axis=1) * gains ** follow
        x = np.fft.irfft(spec, n=per, axis=1).ravel() * 10.0 + resting_means[ch]
        channels.append(ChannelSeries(ch, fs, 0.0, x))
    return channels


def synth_session(spec: RouteSpec, participant_offset: ParticipantOffset | None = None, seed: int = 0,
                  participant_id: str = "P01", walk_id: str = "W1") -> tuple[Session, GroundTruth]:
    """Generate one walk. Planted curves depend only on ``spec`` and the offset;
    SCR timing and all noise come from ``seed``."""
    off = participant_offset or ParticipantOffset()
    rng = np.random.default_rng(seed)
    segs = _segments(spec, off.speed)
    n_sec = int(segs[-1][1])
    labels = np.empty(n_sec, dtype=object)
    for a, b, cls in segs:
        labels[int(a):int(b)] = cls
    labels = labels.astype(str)
    prof = [spec.classes[c] for c in labels]

    # EDA
    fs_eda = DEVICE_RATES["eda"]
    n_eda = int(n_sec * fs_eda)
    sec_of = (np.arange(n_eda) / fs_eda).astype(int)
    level = np.array([p.tonic + off.tonic_jitter.get(c, 0.0) for p, c in zip(prof, labels)])
    t_eda = np.arange(n_eda) / fs_eda
    drift = off.drift_amp * np.sin(2 * np.pi * t_eda / max(n_sec, 1) + off.drift_phase)
    tonic = off.eda_gain * (_smooth_steps(level[sec_of], fs_eda, spec.tonic_tau_s) + drift) + off.eda_bias
    onsets, amps = [], []
    t = float(rng.exponential(20.0))
    while t < n_sec - 8:
        p = spec.classes[labels[int(t)]]
        if p.scr_rate > 0 and rng.random() < min(1.0, 4.0 * p.scr_rate / 60.0):
            onsets.append(t)
            amps.append(off.eda_gain * p.scr_amp * float(np.exp(rng.normal(0, 0.3))))
            t += 3.0
        t += float(rng.exponential(4.0))
    eda = tonic.copy()
    irf = bateman(n_eda, fs_eda, *DEFAULT_IRF)
    for o, a in zip(onsets, amps):
        k = int(np.ceil(o * fs_eda))
        eda[k:] += a * irf[: n_eda - k]
    eda += rng.normal(0, spec.eda_noise, n_eda)

    # heart rate and BVP
    hr = np.array([75.0 + off.hr_bias + p.hr_offset + off.hr_jitter.get(c, 0.0)
                   for p, c in zip(prof, labels)])
    hr = _smooth_steps(hr, 1.0, 5.0)
    hr += 2.0 * np.sin(2 * np.pi * np.arange(n_sec) / 37.0 + off.drift_phase)
    fs_bvp = DEVICE_RATES["bvp"]
    n_bvp = int(n_sec * fs_bvp)
    t_bvp = np.arange(n_bvp) / fs_bvp
    hr_fine = np.interp(t_bvp, np.arange(n_sec) + 0.5, hr)
    phase = 2 * np.pi * np.cumsum(hr_fine / 60.0) / fs_bvp + rng.uniform(0, 2 * np.pi)
    bvp = off.bvp_gain * (np.sin(phase) + 0.25 * np.sin(2 * phase + 0.5))
    bvp += rng.normal(0, spec.bvp_noise, n_bvp)

    # EEG
    band_power = np.array([[BASE_BAND_POWER[k] * p.band_gain[k] ** EEG_RESPONSE * off.eeg_gain[k]
                            * np.exp(off.band_jitter.get(c, [0.0] * 6)[k]) for k in range(6)]
                           for p, c in zip(prof, labels)])
    means = {ch: EEG_DC_OFFSET + 10.0 * i for i, ch in enumerate(EEG_CHANNELS)}
    eeg = _eeg_channels(band_power, DEVICE_RATES["eeg"], rng, means)

    gps = None
    if spec.gps:
        poly = _route_polyline(spec)
        # position within each segment's leg, speed varying with the class
        frac = np.concatenate([(np.arange(int(b - a)) + 0.5) / (b - a) for a, b, _ in segs])
        seg_idx = np.concatenate([np.full(int(b - a), i) for i, (a, b, _) in enumerate(segs)])
        pos = poly[seg_idx] + frac[:, None] * (poly[seg_idx + 1] - poly[seg_idx])
        pos += rng.normal(0, 2e-6, pos.shape)
        gps = np.column_stack([np.arange(n_sec, dtype=float), pos])

    session = Session(participant_id, walk_id, spec.kind, tuple(eeg),
                      ChannelSeries("EDA", fs_eda, 0.0, eda), ChannelSeries("BVP", fs_bvp, 0.0, bvp),
                      EnvironmentSchedule(segs, spec.class_set), gps=gps, resting_eeg_means=means)
    truth = GroundTruth(np.array(onsets), np.array(amps), tonic, hr, band_power, labels, segs)
    return session, truth


# ------------------------------------------------------------------ benchmarks

@dataclass
class Benchmark:
    kind: str
    spec: RouteSpec
    sessions: list[Session]
    truths: list[GroundTruth]
    offsets: dict[str, ParticipantOffset]
    seed: int

    def write(self, directory: str | Path) -> list[Path]:
        """One session bundle per walk plus an index file; returns the manifest paths."""
        root = Path(directory)
        root.mkdir(parents=True, exist_ok=True)
        manifests = []
        for s, gt in zip(self.sessions, self.truths):
            d = root / f"{s.participant_id}_{s.walk_id}"
            manifests.append(save_session(s, d))
            gt.write(d)
        index = {"kind": self.kind, "seed": self.seed, "route": self.spec.to_json(),
                 "sessions": [str(m.relative_to(root)) for m in manifests]}
        (root / "benchmark.json").write_text(json.dumps(index, indent=1, sort_keys=True) + "\n")
        return manifests


def canonical_benchmark(kind: str = "outdoor8", n_participants: int = 10, n_walks: int = 2, seed: int = 0,
                        duration_scale: float = 1.0, variant: str = "default",
                        participant_offsets: bool = True) -> Benchmark:
    """outdoor8: 8 classes, ~517 s per walk; indoor5: 5 classes, ~320 s per walk."""
    if n_participants < 2:
        raise ValueError("need at least 2 participants")
    spec = canonical_route(kind, variant, duration_scale)
    sessions, truths, offsets = [], [], {}
    for p in range(n_participants):
        pid = f"P{p + 1:02d}"
        prng = np.random.default_rng(np.random.SeedSequence([seed, p]))
        if participant_offsets:
            base = ParticipantOffset.random(prng, spec.class_set)
        else:
            base = ParticipantOffset(eda_bias=2.0, drift_phase=float(prng.uniform(0, 2 * np.pi)))
        offsets[pid] = base
        for w in range(n_walks):
            off = replace(base, speed=base.speed * float(prng.uniform(0.95, 1.05)),
                          drift_phase=base.drift_phase + float(prng.uniform(-1, 1)))
            s, gt = synth_session(spec, off, int(np.random.SeedSequence([seed, p, w]).generate_state(1)[0]),
                                  pid, f"W{w + 1}")
            sessions.append(s)
            truths.append(gt)
    logger.info("%s benchmark: %d sessions, %d s", kind, len(sessions),
                sum(len(t.labels) for t in truths))
    return Benchmark(kind, spec, sessions, truths, offsets, seed)


def eda_fixture(seed: int, duration_s: float = 300.0, noise: float = 0.0015):
    """Stand-alone EDA record (4 Hz) with planted responses, for decomposition checks.

    Returns (ChannelSeries, tonic, onsets_s, amplitudes).
    """
    rng = np.random.default_rng(seed)
    fs = DEVICE_RATES["eda"]
    n = int(duration_s * fs)
    t = np.arange(n) / fs
    tonic = 2 + 0.5 * np.sin(2 * np.pi * t / 250) + 0.003 * t
    onsets = []
    s = 5 + rng.uniform(0, 3)
    while s < duration_s - 10:
        onsets.append(s)
        s += rng.uniform(3, 25)
    amps = rng.uniform(0.1, 0.5, len(onsets))
    x = tonic.copy()
    for o, a in zip(onsets, amps):
        k = int(np.ceil(o * fs))
        x[k:] += a * bateman(n - k, fs, *DEFAULT_IRF)
    x += rng.normal(0, noise, n)
    return ChannelSeries("EDA", fs, 0.0, x), tonic, np.array(onsets), amps
