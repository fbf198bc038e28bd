"""Random forest of CART trees with Gini importances, and grid-search model selection."""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _tree
from .fusion import FeatureMatrix, make_folds
from .metrics import weighted_auroc

logger = logging.getLogger(__name__)

MODEL_FORMAT = "walkstress-forest"
MODEL_VERSION = 1


class ForestError(ValueError):
    pass


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 300
    max_features: float | int | str = "sqrt"
    max_depth: int | None = None
    min_samples_split: int = 2

    def resolve_max_features(self, n_features: int) -> int:
        return resolve_max_features(self.max_features, n_features)


def resolve_max_features(rule, n_features: int) -> int:
    """Features drawn per split. A float is a multiple of sqrt(F); an int is a count."""
    if rule in ("all", None):
        k = n_features
    elif rule == "sqrt":
        k = math.sqrt(n_features)
    elif isinstance(rule, (float, np.floating)):
        k = float(rule) * math.sqrt(n_features)
    elif isinstance(rule, (int, np.integer)) and not isinstance(rule, bool):
        k = int(rule)
    else:
        raise ForestError(f"unknown max_features rule {rule!r}")
    return int(min(n_features, max(1, round(k))))


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_node: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def to_json(self) -> dict:
        return {"feature": self.feature.tolist(), "threshold": self.threshold.tolist(),
                "left": self.left.tolist(), "right": self.right.tolist(),
                "value": self.value.tolist(), "n_node": self.n_node.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "Tree":
        return cls(np.asarray(d["feature"], np.int64), np.asarray(d["threshold"], float),
                   np.asarray(d["left"], np.int64), np.asarray(d["right"], np.int64),
                   np.asarray(d["value"], float).reshape(len(d["feature"]), -1),
                   np.asarray(d["n_node"], np.int64))


@dataclass
class ForestModel:
    trees: list[Tree]
    params: ForestParams
    columns: list[str]
    class_set: tuple
    seed: int
    importances: np.ndarray = field(default=None)
    tree_importances: np.ndarray = field(default=None, repr=False)

    @property
    def n_estimators(self) -> int:
        return len(self.trees)

    @property
    def n_features(self) -> int:
        return len(self.columns)

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": asdict(self.params),
            "columns": list(self.columns),
            "class_set": [c if isinstance(c, str) else int(c) for c in self.class_set],
            "seed": self.seed,
            "importances": self.importances.tolist(),
            "trees": [t.to_json() for t in self.trees],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")) + "\n")

    @classmethod
    def from_json(cls, d: dict) -> "ForestModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ForestError("unsupported model file")
        trees = [Tree.from_json(t) for t in d["trees"]]
        model = cls(trees, ForestParams(**d["params"]), d["columns"], tuple(d["class_set"]), d["seed"])
        model.importances = np.asarray(d["importances"], float)
        return model

    @classmethod
    def load(cls, path: str | Path) -> "ForestModel":
        return cls.from_json(json.loads(Path(path).read_text()))


def _tree_seeds(seed: int, index: int) -> tuple[np.random.Generator, int]:
    ss = np.random.SeedSequence([seed, index])
    boot_ss, split_ss = ss.spawn(2)
    return np.random.default_rng(boot_ss), int(split_ss.generate_state(1, np.uint64)[0])


def _encode(y: np.ndarray, class_set: Sequence) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(class_set)}
    try:
        return np.array([lookup[v] for v in y.tolist()], dtype=np.int64)
    except KeyError as exc:
        raise ForestError(f"label {exc} not in class set") from None


def _grow(encoded, y_enc, n_classes, params: ForestParams, max_features: int, seed: int, index: int):
    rng, split_seed = _tree_seeds(seed, index)
    ranks, uniq = encoded
    n = ranks.shape[1]
    boot = rng.integers(0, n, n).astype(np.int64)
    depth = -1 if params.max_depth is None else int(params.max_depth)
    f, t, l, r, v, nn, imp = _tree.build_tree(ranks, uniq, y_enc, boot, n_classes, max_features,
                                               np.uint64(split_seed), depth, params.min_samples_split)
    return Tree(f, t, l, r, v, nn), imp / n


def _normalised_importances(per_tree: np.ndarray) -> np.ndarray:
    sums = per_tree.sum(axis=1, keepdims=True)
    scaled = np.divide(per_tree, sums, out=np.zeros_like(per_tree), where=sums > 0)
    mean = scaled.mean(axis=0)
    total = mean.sum()
    return mean / total if total > 0 else mean


def train_forest(matrix: FeatureMatrix, params: ForestParams = ForestParams(), seed: int = 0,
                 threads: int = 1, tree_offset: int = 0) -> ForestModel:
    """Bagged CART ensemble. Tree i draws its bootstrap and split features from a
    stream seeded by (seed, i), so results do not depend on ``threads``."""
    if len(matrix) < 2:
        raise ForestError("need at least 2 rows to train")
    present = sorted(set(matrix.y.tolist()))
    if len(present) < 2:
        raise ForestError("single-class training set")
    class_set = tuple(c for c in matrix.class_set if c in present) if matrix.class_set else tuple(present)
    y_enc = _encode(matrix.y, class_set)
    Xt = np.ascontiguousarray(matrix.X.T)
    if not np.all(np.isfinite(Xt)):
        raise ForestError("feature matrix contains non-finite values")
    k = params.resolve_max_features(matrix.n_features)
    encoded = _tree.rank_encode(Xt)
    indices = range(tree_offset, tree_offset + params.n_estimators)

    def work(i):
        return _grow(encoded, y_enc, len(class_set), params, k, seed, i)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(work, indices))
    else:
        results = [work(i) for i in indices]
    trees = [t for t, _ in results]
    per_tree = np.array([imp for _, imp in results])
    model = ForestModel(trees, params, list(matrix.columns), class_set, seed)
    model.tree_importances = per_tree
    model.importances = _normalised_importances(per_tree)
    return model


def _check_width(model: ForestModel, X: np.ndarray) -> np.ndarray:
    X = np.ascontiguousarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ForestError(f"width mismatch: model has {model.n_features} features, "
                          f"got {X.shape[-1] if X.ndim else 0}")
    return X


def tree_proba_sums(model: ForestModel, X: np.ndarray, checkpoints: Sequence[int] = ()) -> dict:
    """Running sums of per-tree leaf frequencies, snapshotted after each checkpoint tree count."""
    X = _check_width(model, X)
    acc = np.zeros((X.shape[0], len(model.class_set)))
    snaps = {}
    for i, t in enumerate(model.trees, start=1):
        _tree.accumulate_proba(t.feature, t.threshold, t.left, t.right, t.value, X, acc)
        if i in checkpoints:
            snaps[i] = acc / i
    snaps[len(model.trees)] = acc / len(model.trees)
    return snaps


def predict_proba(model: ForestModel, X: np.ndarray) -> np.ndarray:
    """Mean over trees of leaf class frequencies; columns follow ``model.class_set``."""
    return tree_proba_sums(model, X)[len(model.trees)]


def predict(model: ForestModel, X: np.ndarray) -> np.ndarray:
    proba = predict_proba(model, X)
    return np.asarray(model.class_set, dtype=object)[np.argmax(proba, axis=1)]


def gini_importances(model: ForestModel) -> np.ndarray:
    """Normalised mean decrease in Gini impurity per feature."""
    if model.tree_importances is not None:
        return _normalised_importances(model.tree_importances)
    per_tree = []
    for t in model.trees:
        imp = np.zeros(model.n_features)
        root = t.n_node[0]
        for node in np.flatnonzero(t.left >= 0):
            l, r = t.left[node], t.right[node]
            decrease = (_gini_n(t.value[node]) - _gini_n(t.value[l]) - _gini_n(t.value[r])) / root
            imp[t.feature[node]] += decrease
        per_tree.append(imp)
    return _normalised_importances(np.array(per_tree))


def _gini_n(counts: np.ndarray) -> float:
    n = counts.sum()
    return float(n - (counts ** 2).sum() / n) if n > 0 else 0.0


def align_proba(proba: np.ndarray, model_classes: Sequence, class_set: Sequence) -> np.ndarray:
    """Re-index probability columns onto ``class_set`` (zeros for unseen classes)."""
    out = np.zeros((proba.shape[0], len(class_set)))
    pos = {c: j for j, c in enumerate(class_set)}
    for i, c in enumerate(model_classes):
        out[:, pos[c]] = proba[:, i]
    return out


# ---------------------------------------------------------------- selection

@dataclass(frozen=True)
class GridSpec:
    n_estimators: tuple[int, ...] = (150, 300, 600)
    max_features: tuple = (0.5, 1.0, 2.0, "all")

    def __post_init__(self):
        if not self.n_estimators or not self.max_features:
            raise ForestError("grid must be non-empty")


@dataclass
class CellResult:
    n_estimators: int
    max_features: object
    max_features_resolved: int
    fold_scores: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_scores))

    @property
    def sd(self) -> float:
        return float(np.std(self.fold_scores))

    def to_json(self) -> dict:
        return {"n_estimators": self.n_estimators, "max_features": self.max_features,
                "max_features_resolved": self.max_features_resolved,
                "fold_scores": self.fold_scores, "mean": self.mean, "sd": self.sd,
                "cell": format_mean_sd(self.mean, self.sd)}


@dataclass
class GridResult:
    best: ForestParams
    model: ForestModel | None
    cells: list[CellResult]
    folds: list
    oof: np.ndarray | None = None  # out-of-fold probabilities of the best cell


def format_mean_sd(mean: float, sd: float) -> str:
    """AUROC as a percentage with its spread, e.g. ``84 (0.5)``."""
    return f"{mean * 100:.0f} ({sd * 100:.1f})"


def cross_validate(matrix: FeatureMatrix, params: ForestParams, folds, seed: int = 0,
                   threads: int = 1, checkpoints: Sequence[int] = ()) -> tuple[dict, np.ndarray]:
    """Per-fold weighted AUROC and out-of-fold probabilities (columns follow
    ``matrix.class_set``), both keyed by tree count: every checkpoint plus
    ``params.n_estimators``."""
    class_set = matrix.class_set
    sizes = sorted({*checkpoints, params.n_estimators})
    scores: dict[int, list[float]] = {n: [] for n in sizes}
    oof = {n: np.zeros((len(matrix), len(class_set))) for n in sizes}
    for train_idx, test_idx in folds:
        model = train_forest(matrix.subset(train_idx), params, seed, threads)
        test = matrix.subset(test_idx)
        snaps = tree_proba_sums(model, test.X, checkpoints)
        for n, proba in snaps.items():
            aligned = align_proba(proba, model.class_set, class_set)
            scores[n].append(weighted_auroc(aligned, test.y, class_set))
            oof[n][test_idx] = aligned
    return scores, oof


def _mf_key(rule, n_features):
    return (resolve_max_features(rule, n_features), 0 if rule == "all" else 1)


def grid_search(matrix: FeatureMatrix, grid: GridSpec = GridSpec(), k: int = 5, seed: int = 0,
                threads: int = 1, folds=None, refit: bool = True) -> GridResult:
    """Evaluate every grid cell on shared folds and refit the best on all rows.

    Forests for the smaller estimator counts are prefixes of the largest one
    (trees are seeded by index), so each max_features value is trained once
    per fold. Ties go to fewer estimators, then fewer features.
    """
    if folds is None:
        folds = make_folds(len(matrix), k, seed)
    n_max = max(grid.n_estimators)
    cells = []
    oofs = {}
    for rule in grid.max_features:
        params = ForestParams(n_max, rule)
        scores, oof = cross_validate(matrix, params, folds, seed, threads, grid.n_estimators)
        for n in sorted(grid.n_estimators):
            cells.append(CellResult(n, rule, params.resolve_max_features(matrix.n_features), scores[n]))
            oofs[len(cells) - 1] = oof[n]
    best_i = min(range(len(cells)), key=lambda i: (-cells[i].mean, cells[i].n_estimators,
                                                    cells[i].max_features_resolved))
    best = cells[best_i]
    best_params = ForestParams(best.n_estimators, best.max_features)
    model = train_forest(matrix, best_params, seed, threads) if refit else None
    return GridResult(best_params, model, cells, folds, oofs[best_i])
