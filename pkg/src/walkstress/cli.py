"""Command-line entry point: ``walkstress <subcommand> [flags]``.

Settings come from built-in defaults, then the JSON file given by
``--config``, then command-line flags (highest precedence). Every artifact
carries the hash of the resulting configuration and the seed. ``--threads``
only changes speed, so it is left out of the hash.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .density import DensityError, geo_density, render_png, temporal_density, write_geojson, write_warp
from .eda import DecompositionError
from .forest import ForestError, format_mean_sd, predict_proba
from .fusion import FusionError
from .pipeline import ConfigError, Provenance
from .session import SessionError
from .synth import canonical_benchmark

logger = logging.getLogger("walkstress")

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_INTERNAL = 64, 65, 66, 70


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _list_arg(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        try:
            out.append(int(tok))
        except ValueError:
            try:
                out.append(float(tok))
            except ValueError:
                out.append(tok)
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config with per-subcommand sections")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                        help="worker threads for forest training (default: number of cores)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    p = _Parser(prog="walkstress", description="Multimodal walk-environment classification pipeline.")
    sub = p.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic benchmark")
    s.add_argument("--kind", choices=["outdoor8", "indoor5"])
    s.add_argument("--participants", type=int)
    s.add_argument("--walks", type=int)
    s.add_argument("--duration-scale", type=float, help="multiply every segment length")
    s.add_argument("--variant", choices=["default", "tm_dominant"])
    s.add_argument("--no-offsets", action="store_true", help="disable inter-participant differences")
    s.add_argument("--out", required=True, help="output directory for session bundles")

    f = sub.add_parser("features", parents=[common], help="extract per-second feature frames")
    f.add_argument("--data", required=True, help="benchmark or session directory")
    f.add_argument("--scale-mode", choices=["offline", "streaming"])
    f.add_argument("--minmax-scope", choices=["walk", "participant"],
                   help="min-max bounds per walk (default) or pooled over a participant's walks")
    f.add_argument("--out", required=True)

    t = sub.add_parser("train", parents=[common], help="grid-search a forest for one experiment")
    t.add_argument("--features", required=True, help="directory written by 'features'")
    t.add_argument("--exp", help="experiment id I..X")
    t.add_argument("--cv", choices=["kfold", "lopo"])
    t.add_argument("--k", type=int, help="number of shuffled folds")
    t.add_argument("--n-estimators", type=_list_arg, help="comma list, e.g. 150,300,600")
    t.add_argument("--max-features", type=_list_arg, help="comma list of multiples of sqrt(N), ints or 'all'")
    t.add_argument("--n-features", type=int, help="expected column count (guard)")
    t.add_argument("--out", required=True, help="run directory")

    e = sub.add_parser("evaluate", parents=[common], help="weighted AUROC and ROC points")
    e.add_argument("--run", required=True)
    e.add_argument("--features", help="score the saved model(s) on these features instead of out-of-fold")
    e.add_argument("--out", help="output directory (default: the run directory)")

    i = sub.add_parser("importance", parents=[common], help="ranked Gini importance table")
    i.add_argument("--run", required=True)
    i.add_argument("--top", type=int, help="only print the top rows")
    i.add_argument("--out", help="CSV path (default: <run>/importance.csv)")

    d = sub.add_parser("density", parents=[common], help="biomarker-weighted density maps")
    d.add_argument("--data", required=True, help="session directory (GPS for geo mode)")
    d.add_argument("--features", required=True)
    d.add_argument("--mode", choices=["geo", "temporal"])
    d.add_argument("--biomarker", help="feature column used as weights")
    d.add_argument("--bandwidth", type=float, help="kernel SD (degrees for geo, seconds for temporal)")
    d.add_argument("--grid", type=int, help="grid points per axis")
    d.add_argument("--ref-len", type=int, help="reference length in seconds (temporal)")
    d.add_argument("--png", action="store_true", help="also render a PNG (needs matplotlib)")
    d.add_argument("--out", required=True)

    r = sub.add_parser("report", parents=[common], help="'mean (sd)' summary over runs")
    r.add_argument("--runs", nargs="+", required=True)
    r.add_argument("--out", required=True)
    return p


# ------------------------------------------------------------------ helpers

_FLAG_MAP = {
    "synth": {"kind": "kind", "participants": "participants", "walks": "walks",
              "duration_scale": "duration_scale", "variant": "variant"},
    "features": {"scale_mode": "scale_mode", "minmax_scope": "minmax_scope"},
    "train": {"exp": "exp", "cv": "cv", "k": "k", "n_estimators": "n_estimators",
              "max_features": "max_features", "n_features": "n_features"},
    "density": {"mode": "mode", "biomarker": "biomarker", "bandwidth": "bandwidth", "grid": "grid",
                "ref_len": "ref_len"},
}


def effective_config(args) -> dict:
    cfg = pl.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for key, attr in _FLAG_MAP.get(args.command, {}).items():
        val = getattr(args, attr, None)
        if val is not None:
            cfg[args.command][key] = val
    if args.command == "synth" and args.no_offsets:
        cfg["synth"]["participant_offsets"] = False
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool):
        raise ConfigError("seed must be an integer")
    return cfg


def _emit(record: dict) -> None:
    print(json.dumps(record, sort_keys=True))


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg, prov):
    sc = cfg["synth"]
    bench = canonical_benchmark(sc["kind"], int(sc["participants"]), int(sc["walks"]), cfg["seed"],
                                float(sc["duration_scale"]), sc["variant"], bool(sc["participant_offsets"]))
    manifests = bench.write(args.out)
    index = Path(args.out) / "benchmark.json"
    meta = json.loads(index.read_text())
    pl.write_json(index, prov.stamp(meta))
    _emit({"sessions": len(manifests), "seconds": int(sum(len(t.labels) for t in bench.truths)),
           "out": str(args.out)})


def cmd_features(args, cfg, prov):
    sessions = pl.load_sessions(args.data)
    pl.write_features(sessions, args.out, cfg["features"], prov)
    _emit({"sessions": len(sessions), "out": str(args.out)})


def cmd_train(args, cfg, prov):
    train = cfg["train"]
    spec = pl.resolve_experiment(train)
    matrix = pl.build_matrix(args.features, spec)
    tasks = pl.run_training(matrix, spec, train, cfg["seed"], args.threads)
    metrics = pl.save_run(args.out, spec, matrix, tasks, train, prov)
    summary = {t: v["best"]["cell"] for t, v in metrics["targets"].items()}
    _emit({"experiment": spec.id, "rows": len(matrix), "best": summary})


def _run_scores(args):
    """(labels, per-class scores, class set) from out-of-fold file or a fresh feature set."""
    import pandas as pd

    run = Path(args.run)
    meta = json.loads((run / "run.json").read_text())
    metrics = json.loads((run / "metrics.json").read_text())
    class_set = metrics["class_set"]
    if args.features is None:
        df = pd.read_csv(run / "oof.csv", comment="#", dtype={"label": str}, float_precision="round_trip")
        labels = df["label"].to_numpy().astype(str)
        scores = {c: df[f"p_{c}"].to_numpy(dtype=float) for c in class_set if f"p_{c}" in df}
        return labels, scores, [c for c in class_set if c in scores]
    spec = pl.resolve_experiment({"exp": meta["experiment"], "n_features": None})
    matrix = pl.build_matrix(args.features, spec)
    models = pl.load_models(run)
    scores = {}
    for target, model in models.items():
        proba = predict_proba(model, matrix.X)
        if target == "all":
            for j, c in enumerate(model.class_set):
                scores[c] = proba[:, j]
        else:
            scores[target] = proba[:, list(model.class_set).index(1)]
    return matrix.y, scores, [c for c in class_set if c in scores]


def cmd_evaluate(args, cfg, prov):
    labels, scores, classes = _run_scores(args)
    res = pl.evaluate_scores(labels, scores, classes)
    out = Path(args.out or args.run)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for c, (fpr, tpr, thr) in res["roc"].items():
        rows.extend([c, float(a), float(b), float(t)] for a, b, t in zip(fpr, tpr, thr))
    pl.write_rows(out / "roc.csv", ["class", "fpr", "tpr", "threshold"], rows, prov)
    record = {"weighted_auroc": res["weighted_auroc"], "per_class_auroc": res["per_class_auroc"],
              "support": res["support"], "source": "features" if args.features else "out_of_fold"}
    pl.write_json(out / "evaluation.json", prov.stamp(record))
    _emit({"weighted_auroc": round(res["weighted_auroc"], 6)})


def cmd_importance(args, cfg, prov):
    header, rows = pl.importance_table(pl.load_models(args.run))
    dest = Path(args.out) if args.out else Path(args.run) / "importance.csv"
    pl.write_rows(dest, header, rows, prov)
    for row in rows[: args.top or 10]:
        print(f"{row[0]:>4}  {row[1]:<24} {row[2]:.4f}")


def cmd_density(args, cfg, prov):
    dc = cfg["density"]
    frames, _, _ = pl.load_features(args.features)
    col = dc["biomarker"]
    series = {f.key: f for f in frames if col in f.columns}
    if not series:
        raise FusionError(f"biomarker column {col!r} not found in features")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if dc["mode"] == "geo":
        tracks = []
        for s in pl.load_sessions(args.data):
            f = series.get(s.key)
            if f is None or s.gps is None:
                continue
            v = f.column(col)
            ok = np.isfinite(v)
            tracks.append((s.gps, f.seconds[ok], v[ok]))
        grid = geo_density(tracks, col, dc["bandwidth"] or 0.0008, dc["grid"] or 500)
        write_geojson(grid, out / "density.geojson")
    elif dc["mode"] == "temporal":
        keys = sorted(series)
        walks = []
        for k in keys:
            v = series[k].column(col)
            walks.append(v[np.isfinite(v)])
        grid, warps = temporal_density(walks, col, int(dc["ref_len"]), dc["bandwidth"] or 5.59, dc["grid"] or 400)
        rows = [[k[0], k[1], str(int(i)), str(int(j))] for k, (_, path, _) in zip(keys, warps)
                for i, j in path.pairs.tolist()]
        pl.write_rows(out / "warp.csv", ["participant", "walk", "query_index", "reference_index"], rows, prov)
    else:
        raise ConfigError(f"unknown density mode {dc['mode']!r} (geo or temporal)")
    grid.to_csv(out / "density.csv")
    text = (out / "density.csv").read_text()
    (out / "density.csv").write_text(f"# {prov.comment}\n" + text)
    pl.write_json(out / "density.json", prov.stamp({
        "mode": dc["mode"], "biomarker": col, "bandwidth": grid.bandwidth,
        "shape": list(grid.values.shape), "argmax": list(grid.argmax_point())}))
    if args.png:
        render_png(grid, out / "density.png")
    _emit({"mode": dc["mode"], "biomarker": col, "argmax": list(grid.argmax_point())})


def cmd_report(args, cfg, prov):
    rows = []
    for run in args.runs:
        m = json.loads((Path(run) / "metrics.json").read_text())
        exp = m["experiment"]["id"]
        for target, v in m["targets"].items():
            b = v["best"]
            rows.append([exp, m["cv"], target, str(b["n_estimators"]), str(b["max_features"]),
                         format_mean_sd(b["mean"], b["sd"])])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    header = ["experiment", "cv", "target", "n_estimators", "max_features", "auroc"]
    pl.write_rows(out / "report.csv", header, rows, prov)
    targets = []
    for r in rows:
        if r[2] not in targets:
            targets.append(r[2])
    table = {}
    for r in rows:
        table.setdefault((r[0], r[1]), {})[r[2]] = r[5]
    lines = [f"<!-- {prov.comment} -->", "| Exp. | CV | " + " | ".join(targets) + " |",
             "|" + "---|" * (len(targets) + 2)]
    for (exp, cv), cells in table.items():
        lines.append(f"| {exp} | {cv} | " + " | ".join(cells.get(t, "") for t in targets) + " |")
    (out / "report.md").write_text("\n".join(lines) + "\n")
    print("\n".join(lines[1:]))


COMMANDS = {"synth": cmd_synth, "features": cmd_features, "train": cmd_train, "evaluate": cmd_evaluate,
            "importance": cmd_importance, "density": cmd_density, "report": cmd_report}


def _fail(code: int, kind: str, message: str) -> int:
    sys.stderr.write(json.dumps({"error": {"code": code, "type": kind, "message": message}}) + "\n")
    return code


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", str(exc))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        prov = Provenance(pl.config_hash(cfg), int(cfg["seed"]))
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        COMMANDS[args.command](args, cfg, prov)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc))
    except FusionError as exc:
        if str(exc).startswith("N mismatch"):
            return _fail(EXIT_CONFIG, "config", str(exc))
        return _fail(EXIT_DATA, "data", str(exc))
    except (SessionError, ForestError, DensityError, DecompositionError, FileNotFoundError,
            KeyError, ValueError) as exc:
        return _fail(EXIT_DATA, "data", f"{type(exc).__name__}: {exc}")
    except Exception as exc:  # noqa: BLE001
        logger.exception("internal error")
        return _fail(EXIT_INTERNAL, "internal", f"{type(exc).__name__}: {exc}")
    return 0


def main() -> None:
    sys.exit(run())
