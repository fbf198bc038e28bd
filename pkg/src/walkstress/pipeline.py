"""Run configuration, provenance stamps and the glue between modules used by the CLI."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cardio import extract_cardio_features, hr_from_bvp
from .eda import extract_eda_features, lowpass_eda
from .eeg import extract_eeg_features
from .forest import ForestModel, GridSpec, format_mean_sd, gini_importances, grid_search
from .frames import FeatureFrame, frames_from_csv, frames_to_csv
from .fusion import EXPERIMENTS, ExperimentSpec, FeatureMatrix, FusionError, fuse, label_seconds, lopo_folds, make_folds
from .metrics import per_class_auroc, roc_points, weighted_auroc
from .session import CLASS_SETS, Session, baseline_normalize, load_session

logger = logging.getLogger(__name__)

CONFIG_VERSION = 1

DEFAULT_CONFIG: dict = {
    "version": CONFIG_VERSION,
    "seed": 0,
    "synth": {"kind": "outdoor8", "participants": 10, "walks": 2, "duration_scale": 1.0,
              "variant": "default", "participant_offsets": True},
    "features": {"scale_mode": "offline", "eda_threshold": 0.01, "irf": [1.0, 3.75],
                 "bvp_reducer": "mean", "minmax_scope": "walk"},
    "train": {"exp": "X", "cv": "kfold", "k": 5, "n_estimators": [150, 300, 600],
              "max_features": [0.5, 1.0, 2.0, "all"], "n_features": None},
    "density": {"mode": "geo", "biomarker": "tm", "bandwidth": None, "grid": None, "ref_len": 300},
    "report": {},
}


class ConfigError(ValueError):
    pass


def merge_config(base: dict, override: dict, path: str = "") -> dict:
    """Recursive merge; keys unknown to ``base`` are rejected."""
    out = copy.deepcopy(base)
    for key, val in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = merge_config(base[key], val, where)
        else:
            out[key] = val
    return out


def load_config(path: str | Path | None) -> dict:
    if path is None:
        return copy.deepcopy(DEFAULT_CONFIG)
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    if data.get("version", CONFIG_VERSION) != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {data.get('version')!r}")
    return merge_config(DEFAULT_CONFIG, data)


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Provenance:
    config_hash: str
    seed: int

    @property
    def comment(self) -> str:
        return f"walkstress config_hash={self.config_hash} seed={self.seed}"

    def stamp(self, record: dict) -> dict:
        return {"config_hash": self.config_hash, "seed": self.seed, **record}


def write_json(path: str | Path, record: dict) -> None:
    Path(path).write_text(json.dumps(record, indent=1, sort_keys=True) + "\n")


def write_rows(path: str | Path, header: Sequence[str], rows, prov: Provenance) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {prov.comment}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else repr(v) for v in row) + "\n")


# ------------------------------------------------------------------ features

def session_manifests(data_dir: str | Path) -> list[Path]:
    root = Path(data_dir)
    index = root / "benchmark.json"
    if index.exists():
        return [root / p for p in json.loads(index.read_text())["sessions"]]
    found = sorted(root.glob("*/manifest.json"))
    if not found and (root / "manifest.json").exists():
        found = [root / "manifest.json"]
    if not found:
        raise FileNotFoundError(f"no session manifests under {root}")
    return found


def load_sessions(data_dir: str | Path) -> list[Session]:
    return [load_session(m) for m in session_manifests(data_dir)]


def _span(arrays) -> tuple[float, float]:
    return float(min(a.min() for a in arrays)), float(max(a.max() for a in arrays))


def participant_bounds(sessions: Sequence[Session]) -> dict[str, dict]:
    """Min-max bounds pooled over each participant's walks, per channel."""
    by_pid: dict[str, list[Session]] = {}
    for s in sessions:
        by_pid.setdefault(s.participant_id, []).append(s)
    out = {}
    for pid, group in by_pid.items():
        centred = {}
        for s in group:
            means = s.resting_eeg_means or {}
            for ch in s.eeg:
                centred.setdefault(ch.label, []).append(baseline_normalize(ch, means.get(ch.label, "self")).values)
        hr = [(s.hr if s.hr is not None else hr_from_bvp(s.bvp)).values for s in group]
        out[pid] = {
            "eeg": {label: _span(v) for label, v in centred.items()},
            "eda": _span([lowpass_eda(s.eda).values for s in group]),
            "raw_eda": _span([s.eda.values for s in group]),
            "bvp": _span([s.bvp.values for s in group]),
            "hr": _span(hr),
        }
    return out


def extract_frames(session: Session, features: dict, bounds: dict | None = None
                   ) -> tuple[FeatureFrame, FeatureFrame, FeatureFrame]:
    """EEG, EDA and cardio frames for one session; ``bounds`` pools min-max scaling."""
    mode = features["scale_mode"]
    b = bounds or {}
    eeg = extract_eeg_features(session, scale_mode=mode, bounds=b.get("eeg"))
    eda = extract_eda_features(session, scale_mode=mode, bounds=b.get("eda"), raw_bounds=b.get("raw_eda"),
                               threshold=features["eda_threshold"], irf=tuple(features["irf"]))
    cardio = extract_cardio_features(session, scale_mode=mode, bvp_bounds=b.get("bvp"),
                                     hr_bounds=b.get("hr"), reducer=features["bvp_reducer"])
    return eeg, eda, cardio


FEATURE_FILES = ("eeg.csv", "eda.csv", "cardio.csv")


def write_features(sessions: Sequence[Session], out_dir: str | Path, features: dict,
                   prov: Provenance) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_modality: list[list[FeatureFrame]] = [[], [], []]
    label_rows = []
    routes = set()
    scope = features["minmax_scope"]
    if scope not in ("walk", "participant"):
        raise ConfigError(f"unknown minmax_scope {scope!r} (walk or participant)")
    pooled = participant_bounds(sessions) if scope == "participant" else {}
    for s in sessions:
        for bucket, frame in zip(per_modality, extract_frames(s, features, pooled.get(s.participant_id))):
            bucket.append(frame)
        secs, labels = label_seconds(s.schedule, s.duration_s)
        label_rows.extend((s.participant_id, s.walk_id, str(int(t)), str(c)) for t, c in zip(secs, labels))
        routes.add(s.route)
    if len(routes) != 1:
        raise FusionError(f"sessions mix routes {sorted(routes)}")
    for name, frames in zip(FEATURE_FILES, per_modality):
        frames_to_csv(frames, out / name, prov.comment)
    write_rows(out / "labels.csv", ["participant", "walk", "t_s", "label"], label_rows, prov)
    write_json(out / "features.json", prov.stamp({
        "route": routes.pop(), "sessions": [list(s.key) for s in sessions],
        "files": list(FEATURE_FILES) + ["labels.csv"], "features": features}))


def load_features(feat_dir: str | Path):
    """(frames, labels by session key, class set) from a features directory."""
    import pandas as pd

    d = Path(feat_dir)
    meta_path = d / "features.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing file: {meta_path}")
    meta = json.loads(meta_path.read_text())
    frames = []
    for name in FEATURE_FILES:
        frames.extend(frames_from_csv(d / name))
    df = pd.read_csv(d / "labels.csv", comment="#", dtype={"participant": str, "walk": str, "label": str})
    labels = {}
    for (p, w), g in df.groupby(["participant", "walk"], sort=True):
        labels[(str(p), str(w))] = (g["t_s"].to_numpy(dtype=np.int64), g["label"].to_numpy().astype(str))
    return frames, labels, CLASS_SETS[meta["route"]]


def build_matrix(feat_dir: str | Path, spec: ExperimentSpec) -> FeatureMatrix:
    frames, labels, class_set = load_features(feat_dir)
    present = set().union(*(set(lab.tolist()) for _, lab in labels.values()))
    return fuse(frames, spec, labels, class_set=tuple(c for c in class_set if c in present))


# ------------------------------------------------------------------ training

def resolve_experiment(train: dict) -> ExperimentSpec:
    exp = str(train["exp"])
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    spec = EXPERIMENTS[exp]
    want = train.get("n_features")
    if want is not None and int(want) != spec.n_features:
        raise ConfigError(f"N mismatch: experiment {exp} has N = {spec.n_features}, config requests {want}")
    return spec


def grid_from(train: dict) -> GridSpec:
    try:
        n_est = tuple(int(n) for n in train["n_estimators"])
        # numbers in a config are always multiples of sqrt(N), so 1 and 1.0 agree
        mf = tuple(m if isinstance(m, str) else float(m) for m in train["max_features"])
        if any(isinstance(m, bool) for m in train["max_features"]):
            raise ValueError("max_features must be numbers or 'all'")
        return GridSpec(n_est, mf)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from None


def folds_for(matrix: FeatureMatrix, train: dict, seed: int):
    cv = train["cv"]
    if cv == "lopo":
        return lopo_folds(matrix)
    if cv == "kfold":
        return make_folds(len(matrix), int(train["k"]), seed)
    raise ConfigError(f"unknown cv scheme {cv!r} (kfold or lopo)")


@dataclass
class TaskResult:
    """Grid search outcome for one target: a class (one-vs-rest) or 'all'."""
    target: str
    result: object  # GridResult
    labels: np.ndarray


def run_training(matrix: FeatureMatrix, spec: ExperimentSpec, train: dict, seed: int,
                 threads: int = 1) -> list[TaskResult]:
    grid = grid_from(train)
    folds = folds_for(matrix, train, seed)
    if spec.target == "multi":
        res = grid_search(matrix, grid, seed=seed, threads=threads, folds=folds)
        return [TaskResult("all", res, matrix.y)]
    out = []
    for cls in matrix.class_set:
        view = matrix.binary(cls)
        if len(set(view.y.tolist())) < 2:
            logger.info("class %s absent; skipped", cls)
            continue
        logger.info("one-vs-rest target %s", cls)
        out.append(TaskResult(cls, grid_search(view, grid, seed=seed, threads=threads, folds=folds), view.y))
    return out


def save_run(run_dir: str | Path, spec: ExperimentSpec, matrix: FeatureMatrix, tasks: list[TaskResult],
             train: dict, prov: Provenance) -> dict:
    d = Path(run_dir)
    d.mkdir(parents=True, exist_ok=True)
    metrics = {"experiment": spec.to_json(), "cv": train["cv"], "rows": len(matrix),
               "class_set": list(matrix.class_set), "targets": {}}
    oof_cols = []
    for task in tasks:
        res = task.result
        best = next(c for c in res.cells if c.n_estimators == res.best.n_estimators
                    and c.max_features == res.best.max_features)
        metrics["targets"][task.target] = {
            "best": {"n_estimators": best.n_estimators, "max_features": best.max_features,
                     "mean": best.mean, "sd": best.sd, "cell": format_mean_sd(best.mean, best.sd),
                     "fold_scores": best.fold_scores},
            "cells": [c.to_json() for c in res.cells],
        }
        model_path = d / f"model_{task.target}.json"
        record = res.model.to_json()
        record["provenance"] = prov.stamp({})
        write_json(model_path, record)
        oof_cols.append((task.target, res.oof))
    write_json(d / "metrics.json", prov.stamp(metrics))
    # out-of-fold scores for evaluate: one column per class (multi) or per target
    header = ["participant", "walk", "t_s", "label"]
    cols = []
    for target, oof in oof_cols:
        if target == "all":
            header += [f"p_{c}" for c in matrix.class_set]
            cols += [oof[:, j] for j in range(oof.shape[1])]
        else:
            header.append(f"p_{target}")
            cols.append(oof[:, 1])
    rows = ([p, w, str(int(t)), str(y), *[float(c[i]) for c in cols]]
            for i, (p, w, t, y) in enumerate(zip(matrix.participants, matrix.walks, matrix.seconds, matrix.y)))
    write_rows(d / "oof.csv", header, rows, prov)
    write_json(d / "run.json", prov.stamp({"experiment": spec.id, "train": train,
                                            "targets": [t.target for t in tasks]}))
    return metrics


def load_models(run_dir: str | Path) -> dict[str, ForestModel]:
    d = Path(run_dir)
    meta = json.loads((d / "run.json").read_text())
    return {t: ForestModel.load(d / f"model_{t}.json") for t in meta["targets"]}


def evaluate_scores(labels: np.ndarray, scores: dict[str, np.ndarray], class_set: Sequence[str]) -> dict:
    """Weighted AUROC, per-class AUROC and ROC points from per-class scores."""
    proba = np.column_stack([scores[c] for c in class_set])
    present = [c for c in class_set if (labels == c).any()]
    out = {"weighted_auroc": weighted_auroc(proba, labels, class_set),
           "per_class_auroc": per_class_auroc(proba, labels, class_set),
           "support": {c: int((labels == c).sum()) for c in present}, "roc": {}}
    for j, c in enumerate(class_set):
        if c in out["per_class_auroc"]:
            fpr, tpr, thr = roc_points(proba[:, j], labels == c)
            out["roc"][c] = (fpr, tpr, thr)
    return out


def importance_table(models: dict[str, ForestModel]) -> tuple[list[str], list[list]]:
    """Rows (rank, column, mean importance, per-target importances) sorted by the mean."""
    targets = sorted(models)
    cols = models[targets[0]].columns
    imp = np.column_stack([gini_importances(models[t]) for t in targets])
    mean = imp.mean(axis=1)
    order = sorted(range(len(cols)), key=lambda i: (-mean[i], i))
    header = ["rank", "column", "importance"] + ([f"importance_{t}" for t in targets] if len(targets) > 1 else [])
    rows = []
    for r, i in enumerate(order, start=1):
        extra = [float(v) for v in imp[i]] if len(targets) > 1 else []
        rows.append([str(r), cols[i], float(mean[i]), *extra])
    return header, rows
