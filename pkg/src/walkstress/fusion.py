"""Per-second labelling, feature-level fusion into experiment matrices, and CV splits."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .cardio import CARDIO_COLUMNS
from .eda import EDA_COLUMNS, RAW_EDA_COLUMN
from .eeg import eeg_column_names
from .frames import FeatureFrame
from .session import EnvironmentSchedule

logger = logging.getLogger(__name__)

MODALITY_COLUMNS: dict[str, list[str]] = {
    "eeg": eeg_column_names(),
    "eda": list(EDA_COLUMNS),
    "eda_raw": [RAW_EDA_COLUMN],
    "bvp": ["bvp"],
    "hr": ["hr"],
}
MODALITY_ORDER = ("eeg", "eda", "eda_raw", "bvp", "hr")


class FusionError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    id: str
    modalities: tuple[str, ...]
    target: str  # "single" (one-vs-rest per class) or "multi"
    n_features: int

    @property
    def columns(self) -> list[str]:
        return [c for m in MODALITY_ORDER if m in self.modalities for c in MODALITY_COLUMNS[m]]

    def to_json(self) -> dict:
        return {"id": self.id, "modalities": list(self.modalities), "target": self.target,
                "n_features": self.n_features}

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentSpec":
        spec = cls(data["id"], tuple(data["modalities"]), data["target"], int(data["n_features"]))
        if len(spec.columns) != spec.n_features:
            raise FusionError(f"N mismatch: {spec.id} modalities give {len(spec.columns)} "
                              f"columns, the file says {spec.n_features}")
        return spec


def _exp(id_, mods, target):
    cols = sum(len(MODALITY_COLUMNS[m]) for m in mods)
    return ExperimentSpec(id_, tuple(mods), target, cols)


EXPERIMENTS: dict[str, ExperimentSpec] = {
    e.id: e for e in [
        _exp("I", ["eeg"], "single"),
        _exp("II", ["eda"], "single"),
        _exp("III", ["eda_raw", "bvp", "hr"], "single"),
        _exp("IV", ["eeg", "eda"], "single"),
        _exp("V", ["eeg", "eda", "bvp", "hr"], "single"),
        _exp("VI", ["eeg"], "multi"),
        _exp("VII", ["eda"], "multi"),
        _exp("VIII", ["eda_raw", "bvp", "hr"], "multi"),
        _exp("IX", ["eeg", "eda"], "multi"),
        _exp("X", ["eeg", "eda", "bvp", "hr"], "multi"),
    ]
}
EXPERIMENT_WIDTHS = {"I": 198, "II": 6, "III": 3, "IV": 204, "V": 206,
                     "VI": 198, "VII": 6, "VIII": 3, "IX": 204, "X": 206}


@dataclass
class FeatureMatrix:
    X: np.ndarray
    y: np.ndarray
    columns: list[str]
    participants: np.ndarray
    walks: np.ndarray
    seconds: np.ndarray
    class_set: tuple = field(default=())

    def __post_init__(self):
        self.X = np.ascontiguousarray(self.X, dtype=float)
        self.y = np.asarray(self.y)
        if not self.class_set:
            self.class_set = tuple(sorted(set(self.y.tolist())))
        bad = set(self.y.tolist()) - set(self.class_set)
        if bad:
            raise FusionError(f"labels {sorted(bad)} not in class set {self.class_set}")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "FeatureMatrix":
        return FeatureMatrix(self.X[idx], self.y[idx], self.columns, self.participants[idx],
                             self.walks[idx], self.seconds[idx], self.class_set)

    def binary(self, cls) -> "FeatureMatrix":
        """One-vs-rest view: 1 where the row belongs to ``cls``."""
        y = (self.y == cls).astype(np.int64)
        return FeatureMatrix(self.X, y, self.columns, self.participants, self.walks,
                             self.seconds, (0, 1))

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.columns.index(n) for n in names]
        return FeatureMatrix(self.X[:, idx], self.y, list(names), self.participants,
                             self.walks, self.seconds, self.class_set)

    def to_csv(self, path: str | Path, comment: str | None = None) -> None:
        df = pd.DataFrame(self.X, columns=self.columns)
        df.insert(0, "label", self.y)
        df.insert(0, "t_s", self.seconds)
        df.insert(0, "walk", self.walks)
        df.insert(0, "participant", self.participants)
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            df.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")

    @classmethod
    def from_csv(cls, path: str | Path, class_set: tuple = ()) -> "FeatureMatrix":
        df = pd.read_csv(path, dtype={"participant": str, "walk": str, "label": str},
                         comment="#", float_precision="round_trip")
        cols = list(df.columns[4:])
        return cls(df[cols].to_numpy(dtype=float), df["label"].to_numpy(), cols,
                   df["participant"].to_numpy(), df["walk"].to_numpy(),
                   df["t_s"].to_numpy(dtype=np.int64), class_set)


def label_seconds(schedule: EnvironmentSchedule, duration_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Class of the segment containing each whole second; unlabelled seconds are dropped."""
    n = int(np.floor(duration_s + 1e-9))
    secs = np.arange(n)
    labels = np.array([schedule.class_at(float(t)) for t in secs], dtype=object)
    keep = labels != None  # noqa: E711
    dropped = int((~keep).sum())
    if dropped:
        logger.info("label_seconds: %d second(s) outside every segment", dropped)
    return secs[keep], labels[keep].astype(str)


def one_vs_rest(labels: np.ndarray, cls: str) -> np.ndarray:
    return (np.asarray(labels) == cls).astype(np.int64)


def fuse(frames: Sequence[FeatureFrame], spec: ExperimentSpec,
         labels: dict[tuple[str, str], tuple[np.ndarray, np.ndarray]],
         columns: Sequence[str] | None = None, class_set: tuple = ()) -> FeatureMatrix:
    """Inner-join frames on (participant, walk, second) and keep the experiment's columns.

    ``labels`` maps a session key to the (seconds, class ids) pair from
    :func:`label_seconds`. Column order follows the experiment's modality
    order, so the result does not depend on the order of ``frames``.
    """
    wanted = list(columns) if columns is not None else spec.columns
    if len(wanted) != spec.n_features:
        raise FusionError(f"N mismatch: experiment {spec.id} has N = {spec.n_features}, "
                          f"{len(wanted)} columns requested")
    available = {c for f in frames for c in f.columns}
    absent = [c for c in wanted if c not in available]
    if absent:
        raise FusionError(f"N mismatch: experiment {spec.id} needs column(s) {absent[:5]} "
                          f"that no feature frame provides")
    by_key: dict[tuple[str, str], list[FeatureFrame]] = {}
    for f in frames:
        by_key.setdefault(f.key, []).append(f)
    parts = []
    n_invalid = 0
    for key in sorted(by_key):
        if key not in labels:
            continue
        tables = []
        for f in by_key[key]:
            own = [c for c in wanted if c in f.columns]
            if not own:
                continue
            sub = f.select(own)
            df = pd.DataFrame(sub.values, columns=own)
            df["__s"] = sub.seconds
            tables.append(df.set_index("__s"))
        if not tables:
            continue
        joined = tables[0]
        for t in tables[1:]:
            joined = joined.join(t, how="inner")
        lab_s, lab = labels[key]
        lab_df = pd.DataFrame({"__label": lab}, index=pd.Index(lab_s, name="__s"))
        joined = joined.join(lab_df, how="inner")
        missing = [c for c in wanted if c not in joined.columns]
        if missing:
            raise FusionError(f"N mismatch: {key} lacks column(s) {missing[:5]}")
        bad = joined[wanted].isna().any(axis=1)
        n_invalid += int(bad.sum())
        joined = joined[~bad].sort_index()
        parts.append((key, joined))
    if n_invalid:
        logger.info("fuse: dropped %d row(s) with silent-window markers", n_invalid)
    rows = sum(len(j) for _, j in parts)
    if rows == 0:
        raise FusionError("empty join")
    X = np.concatenate([j[wanted].to_numpy(dtype=float) for _, j in parts])
    y = np.concatenate([j["__label"].to_numpy().astype(str) for _, j in parts])
    participants = np.concatenate([np.full(len(j), k[0], dtype=object) for k, j in parts]).astype(str)
    walks = np.concatenate([np.full(len(j), k[1], dtype=object) for k, j in parts]).astype(str)
    seconds = np.concatenate([j.index.to_numpy(dtype=np.int64) for _, j in parts])
    return FeatureMatrix(X, y, wanted, participants, walks, seconds, class_set)


def make_folds(n_rows: int, k: int = 5, seed: int = 0, stratify: np.ndarray | None = None
               ) -> list[tuple[np.ndarray, np.ndarray]]:
    """Shuffled k-fold split. Fold sizes differ by at most one.

    With ``stratify`` (the label vector) each class is dealt round-robin so
    folds keep the class proportions.
    """
    if n_rows < k:
        raise FusionError(f"need at least k={k} rows, got {n_rows}")
    rng = np.random.default_rng(seed)
    if stratify is None:
        order = rng.permutation(n_rows)
    else:
        labels = np.asarray(stratify)
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c))
                                for c in sorted(set(labels.tolist()))])
    assign = np.empty(n_rows, dtype=np.int64)
    assign[order] = np.arange(n_rows) % k
    all_idx = np.arange(n_rows)
    return [(all_idx[assign != f], all_idx[assign == f]) for f in range(k)]


def lopo_folds(matrix: FeatureMatrix) -> list[tuple[np.ndarray, np.ndarray]]:
    """One fold per participant: train on everyone else, test on that participant."""
    people = sorted(set(matrix.participants.tolist()))
    if len(people) < 2:
        raise FusionError("leave-one-participant-out needs at least 2 participants")
    idx = np.arange(len(matrix))
    return [(idx[matrix.participants != p], idx[matrix.participants == p]) for p in people]


def load_experiment(path: str | Path) -> ExperimentSpec:
    return ExperimentSpec.from_json(json.loads(Path(path).read_text()))
