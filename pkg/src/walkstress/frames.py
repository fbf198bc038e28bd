"""Per-second feature tables keyed by (participant, walk, second)."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import pandas as pd


@dataclass
class FeatureFrame:
    participant: str
    walk: str
    seconds: np.ndarray
    columns: list[str]
    values: np.ndarray
    invalid: np.ndarray = field(default=None)

    def __post_init__(self):
        self.seconds = np.asarray(self.seconds, dtype=np.int64)
        self.values = np.asarray(self.values, dtype=float).reshape(len(self.seconds), len(self.columns))
        if self.invalid is None:
            self.invalid = np.isnan(self.values).any(axis=1)
        self.invalid = np.asarray(self.invalid, dtype=bool)

    def __len__(self) -> int:
        return len(self.seconds)

    @property
    def key(self) -> tuple[str, str]:
        return (self.participant, self.walk)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def select(self, names: Sequence[str]) -> "FeatureFrame":
        idx = [self.columns.index(n) for n in names]
        vals = self.values[:, idx]
        return FeatureFrame(self.participant, self.walk, self.seconds, list(names), vals,
                            np.isnan(vals).any(axis=1))


def frames_to_csv(frames: Iterable[FeatureFrame], path: str | Path, comment: str | None = None) -> None:
    """Write frames sharing one column layout as ``t_s,participant,walk,<columns>``.

    ``comment`` becomes a leading ``# ...`` line (readers skip it).
    """
    parts = []
    columns = None
    for f in frames:
        if columns is None:
            columns = f.columns
        elif f.columns != columns:
            raise ValueError("frames must share a column layout")
        df = pd.DataFrame(f.values, columns=f.columns)
        df.insert(0, "walk", f.walk)
        df.insert(0, "participant", f.participant)
        df.insert(0, "t_s", f.seconds)
        parts.append(df)
    if not parts:
        raise ValueError("no frames to write")
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        pd.concat(parts, ignore_index=True).to_csv(fh, index=False, float_format="%.17g",
                                                   lineterminator="\n")


def frames_from_csv(path: str | Path) -> list[FeatureFrame]:
    df = pd.read_csv(path, dtype={"participant": str, "walk": str}, comment="#",
                     float_precision="round_trip")
    if list(df.columns[:3]) != ["t_s", "participant", "walk"]:
        raise ValueError(f"{path}: header must start with t_s,participant,walk")
    columns = list(df.columns[3:])
    out = []
    for (p, w), g in df.groupby(["participant", "walk"], sort=False):
        out.append(FeatureFrame(str(p), str(w), g["t_s"].to_numpy(), columns,
                                g[columns].to_numpy(dtype=float)))
    return out
