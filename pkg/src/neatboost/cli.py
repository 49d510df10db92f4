"""Command-line pipeline orchestration.

Subcommands: extract, synth, evolve, train, evaluate, analyze, predict.
Every run resolves one root seed (flag > config file > NEATBOOST_SEED) and
derives all stage seeds from it, so identical config + seed reproduces
every artifact byte for byte. Exit codes: 0 ok, 1 usage error, 2 data
error, 3 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import analysis, fusion, gbdt, mlp
from .imaging import (ImageFormatError, SegmentationError, compute_features,
                      load_grayscale)
from .neat import (GBDT_RANGES, MLP_RANGES, NeatConfig, activate_genome,
                   decode_hyperparameters, evolve)
from .pipeline import (DataError, Dataset, LABEL_NAMES, LABEL_TO_INT,
                       N_CLASSES, compute_metrics, read_feature_csv, smote,
                       stratified_kfold, stratified_split, synthesize_dataset,
                       write_feature_csv)
from .seeding import derive_seed

log = logging.getLogger("neatboost")

MANIFEST_SCHEMA_VERSION = "1"
INPUT_VECTOR = (1.0, 1.0, 1.0, 1.0)


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int
    output_dir: str = "out"
    features_csv: str = ""
    train_fraction: float = 0.747
    val_fraction: float = 0.101
    test_fraction: float = 0.152
    cv_folds: int = 5
    smote_k: int = 5
    synth_n_per_class: int = 100
    synth_separation: float = 2.5
    mlp_epochs: int = 150
    mlp_batch_size: int = 32
    neat_population: int = 20
    neat_generations: int = 10
    neat_elitism: int = 2
    neat_stagnation: int = 15
    neat_threshold: float = 3.0
    jobs: int = 1

    @property
    def fractions(self):
        return (self.train_fraction, self.val_fraction, self.test_fraction)

    def config_hash(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_CONFIG_KEYS = {
    ("run", "seed"): "seed",
    ("run", "output_dir"): "output_dir",
    ("run", "jobs"): "jobs",
    ("data", "features_csv"): "features_csv",
    ("split", "train"): "train_fraction",
    ("split", "val"): "val_fraction",
    ("split", "test"): "test_fraction",
    ("cv", "folds"): "cv_folds",
    ("smote", "k_neighbors"): "smote_k",
    ("synth", "n_per_class"): "synth_n_per_class",
    ("synth", "separation"): "synth_separation",
    ("mlp", "epochs"): "mlp_epochs",
    ("mlp", "batch_size"): "mlp_batch_size",
    ("neat", "population_size"): "neat_population",
    ("neat", "generations"): "neat_generations",
    ("neat", "elitism"): "neat_elitism",
    ("neat", "stagnation_limit"): "neat_stagnation",
    ("neat", "compatibility_threshold"): "neat_threshold",
}


def _load_config_file(path) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise DataError(f"bad config file {path}: {exc}") from exc
    values = {}
    for (section, key), attr in _CONFIG_KEYS.items():
        if section in doc and key in doc[section]:
            values[attr] = doc[section][key]
    return values


def resolve_config(args) -> RunConfig:
    """Precedence: flags > config file > NEATBOOST_SEED (seed only)."""
    values = {}
    if getattr(args, "config", None):
        values.update(_load_config_file(args.config))
    for attr in ("seed", "output_dir", "features_csv", "jobs"):
        flag = getattr(args, attr, None)
        if flag is not None:
            values[attr] = flag
    for attr in ("synth_n_per_class", "synth_separation", "cv_folds",
                 "neat_population", "neat_generations", "mlp_epochs"):
        flag = getattr(args, attr, None)
        if flag is not None:
            values[attr] = flag
    if "seed" not in values:
        env = os.environ.get("NEATBOOST_SEED")
        if env is not None:
            try:
                values["seed"] = int(env)
            except ValueError:
                raise UsageError(f"NEATBOOST_SEED must be an integer, got {env!r}")
    if "seed" not in values:
        raise UsageError("no seed given (use --seed, a config file, or NEATBOOST_SEED)")
    return RunConfig(**values)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def _dev_test_split(ds: Dataset, cfg: RunConfig):
    tr, va, te = stratified_split(ds.y, cfg.fractions, derive_seed(cfg.seed, "split"))
    dev_idx = np.sort(np.concatenate([tr, va]))
    return ds.subset(dev_idx), ds.subset(te)


# ---------------------------------------------------------------------------
# cross-validated fitness objective (top-level class: must pickle for --jobs)


class CvObjective:
    """Mean weighted F1 over stratified folds, SMOTE applied per fold."""

    def __init__(self, family, X, y, folds, smote_k, mlp_epochs, mlp_batch_size):
        self.family = family
        self.X = X
        self.y = y
        self.folds = folds
        self.smote_k = smote_k
        self.mlp_epochs = mlp_epochs
        self.mlp_batch_size = mlp_batch_size

    def decode(self, genome) -> dict:
        ranges = GBDT_RANGES if self.family == "gbdt" else MLP_RANGES
        h = activate_genome(genome, INPUT_VECTOR)
        return decode_hyperparameters(h, ranges)

    def __call__(self, genome, eval_seed) -> float:
        params = self.decode(genome)
        scores = []
        for k, (tr, va) in enumerate(self.folds):
            Xb, yb = smote(self.X[tr], self.y[tr], self.smote_k,
                           seed=derive_seed(eval_seed, "smote", k))
            probs = _fit_predict(
                self.family, params, Xb, yb, self.X[va],
                seed=derive_seed(eval_seed, "fit", k),
                mlp_epochs=self.mlp_epochs, mlp_batch_size=self.mlp_batch_size)
            pred = np.argmax(probs, axis=1)
            scores.append(compute_metrics(self.y[va], pred, N_CLASSES).f1_weighted)
        return float(np.mean(scores))


def _fit_predict(family, params, X_tr, y_tr, X_te, seed, mlp_epochs, mlp_batch_size):
    if family == "gbdt":
        cfg = gbdt.GbdtConfig(**params, seed=seed)
        model = gbdt.fit(X_tr, y_tr, cfg)
        return gbdt.predict_proba(model, X_te)
    cfg = mlp.MlpConfig(**params, epochs=mlp_epochs,
                        batch_size=mlp_batch_size, seed=seed)
    model = mlp.train(X_tr, y_tr, cfg, n_classes=N_CLASSES)
    return mlp.predict_proba(model, X_te)


def _fit_final(family, params, X_tr, y_tr, seed, mlp_epochs, mlp_batch_size):
    if family == "gbdt":
        return gbdt.fit(X_tr, y_tr, gbdt.GbdtConfig(**params, seed=seed))
    cfg = mlp.MlpConfig(**params, epochs=mlp_epochs,
                        batch_size=mlp_batch_size, seed=seed)
    return mlp.train(X_tr, y_tr, cfg, n_classes=N_CLASSES)


def _predict_model(family, model, X):
    if family == "gbdt":
        return gbdt.predict_proba(model, X)
    return mlp.predict_proba(model, X)


# ---------------------------------------------------------------------------
# commands


def cmd_extract(args) -> int:
    cfg = resolve_config(args)
    image_dir = Path(args.images)
    if not image_dir.is_dir():
        raise DataError(f"not a directory: {image_dir}")
    paths = sorted(p for p in image_dir.iterdir()
                   if p.suffix.lower() in (".pgm", ".png"))
    if not paths:
        raise DataError(f"no PGM/PNG images in {image_dir}")
    labels = {}
    if args.labels:
        with open(args.labels) as fh:
            for ln, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                name, _, label = line.partition(",")
                label = label.strip().lower()
                if label and label not in LABEL_TO_INT:
                    raise DataError(f"{args.labels}:{ln}: unknown label {label!r}")
                labels[name.strip()] = LABEL_TO_INT.get(label, -1)
    rows, ids, ys = [], [], []
    failures = 0
    for path in paths:
        try:
            features = compute_features(load_grayscale(path))
        except (ImageFormatError, SegmentationError) as exc:
            log.warning("skipping image path=%s error=%s", path, exc)
            failures += 1
            continue
        rows.append(features)
        ids.append(str(path))
        ys.append(labels.get(path.name, -1))
    if not rows:
        raise DataError(f"all {failures} images failed to process")
    out_csv = args.out_csv or str(_out_dir(cfg) / "features.csv")
    write_feature_csv(out_csv, Dataset(np.array(rows), np.array(ys), ids),
                      id_header="path")
    log.info("extracted features rows=%d failures=%d out=%s",
             len(rows), failures, out_csv)
    return 0


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    ds = synthesize_dataset(cfg.synth_n_per_class, cfg.synth_separation,
                            seed=derive_seed(cfg.seed, "synth"))
    out_csv = args.out_csv or str(_out_dir(cfg) / "dataset.csv")
    write_feature_csv(out_csv, ds)
    log.info("synthesized dataset rows=%d separation=%s out=%s",
             ds.n, cfg.synth_separation, out_csv)
    return 0


def _load_features(cfg: RunConfig) -> Dataset:
    if not cfg.features_csv:
        raise UsageError("no features CSV given (use --features or the config file)")
    ds = read_feature_csv(cfg.features_csv)
    if not ds.labeled():
        raise DataError("features CSV must be fully labeled for this command")
    return ds


def cmd_evolve(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    ds = _load_features(cfg)
    dev, _ = _dev_test_split(ds, cfg)
    folds = stratified_kfold(dev.y, cfg.cv_folds, derive_seed(cfg.seed, "cv"))
    for family in ("gbdt", "mlp"):
        objective = CvObjective(family, dev.X, dev.y, folds, cfg.smote_k,
                                cfg.mlp_epochs, cfg.mlp_batch_size)
        ncfg = NeatConfig(
            population_size=cfg.neat_population,
            generations=cfg.neat_generations,
            input_vector=INPUT_VECTOR,
            compatibility_threshold=cfg.neat_threshold,
            elitism=cfg.neat_elitism,
            stagnation_limit=cfg.neat_stagnation,
            seed=derive_seed(cfg.seed, "neat", family),
        )
        ranges = GBDT_RANGES if family == "gbdt" else MLP_RANGES
        best, report = evolve(objective, ranges, ncfg, jobs=cfg.jobs)
        report.to_csv(out / f"evolution_{family}.csv")
        _write_json(out / f"best_{family}.json", {
            "schema_version": MANIFEST_SCHEMA_VERSION,
            "family": family,
            "fitness": best.fitness,
            "hyperparameters": objective.decode(best),
            "genome": {"nodes": len(best.nodes),
                       "connections": len(best.connections)},
            "config_hash": cfg.config_hash(),
        })
        log.info("evolved family=%s fitness=%.4f generations=%d",
                 family, best.fitness, cfg.neat_generations)
    return 0


def _load_hyperparams(path, family) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(
            f"missing evolved hyperparameters for {family}: {exc}") from exc
    if doc.get("family") != family:
        raise DataError(f"{path} holds family {doc.get('family')!r}, wanted {family!r}")
    return doc["hyperparameters"]


def _parse_weights(text: str) -> np.ndarray:
    try:
        w = np.array([float(v) for v in text.split(",")], dtype=np.float64)
    except ValueError:
        raise UsageError(f"bad --weights value {text!r}") from None
    if len(w) != 2 or np.any(w < 0) or w.sum() <= 0:
        raise UsageError("--weights needs two nonnegative numbers, not all zero")
    return w / w.sum()


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    ds = _load_features(cfg)
    dev, test = _dev_test_split(ds, cfg)
    folds = stratified_kfold(dev.y, cfg.cv_folds, derive_seed(cfg.seed, "cv"))

    hyper = {
        "gbdt": _load_hyperparams(args.gbdt_params or out / "best_gbdt.json", "gbdt"),
        "mlp": _load_hyperparams(args.mlp_params or out / "best_mlp.json", "mlp"),
    }

    oof = {}
    oof_metrics = {}
    for family in ("gbdt", "mlp"):
        probs = np.zeros((dev.n, N_CLASSES))
        for k, (tr, va) in enumerate(folds):
            Xb, yb = smote(dev.X[tr], dev.y[tr], cfg.smote_k,
                           seed=derive_seed(cfg.seed, "oof-smote", family, k))
            probs[va] = _fit_predict(
                family, hyper[family], Xb, yb, dev.X[va],
                seed=derive_seed(cfg.seed, "oof-fit", family, k),
                mlp_epochs=cfg.mlp_epochs, mlp_batch_size=cfg.mlp_batch_size)
        oof[family] = probs
        oof_metrics[family] = compute_metrics(
            dev.y, np.argmax(probs, axis=1), N_CLASSES)
        log.info("oof family=%s f1_weighted=%.4f", family,
                 oof_metrics[family].f1_weighted)

    matrices = [oof["gbdt"], oof["mlp"]]
    if args.weights:
        weights = _parse_weights(args.weights)
        weights_source = "manual"
    else:
        weights, _ = fusion.optimize_weights(matrices, dev.y)
        weights_source = "nelder_mead"
    _, fused_labels = fusion.fuse(matrices, weights)
    oof_metrics["ensemble"] = compute_metrics(dev.y, fused_labels, N_CLASSES)
    log.info("fusion weights=%s source=%s f1_weighted=%.4f",
             ",".join(f"{w:.4f}" for w in weights), weights_source,
             oof_metrics["ensemble"].f1_weighted)

    model_files = {}
    for family in ("gbdt", "mlp"):
        Xb, yb = smote(dev.X, dev.y, cfg.smote_k,
                       seed=derive_seed(cfg.seed, "final-smote", family))
        model = _fit_final(family, hyper[family], Xb, yb,
                           seed=derive_seed(cfg.seed, "final-fit", family),
                           mlp_epochs=cfg.mlp_epochs,
                           mlp_batch_size=cfg.mlp_batch_size)
        fname = f"{family}_model.json"
        (gbdt if family == "gbdt" else mlp).save(model, out / fname)
        model_files[family] = fname

    test_csv = None
    if test.n > 0:
        test_csv = "test.csv"
        write_feature_csv(out / test_csv, test)

    manifest = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "features_csv": str(cfg.features_csv),
        "hyperparameters": hyper,
        "weights": [float(w) for w in weights],
        "weights_source": weights_source,
        "oof_metrics": {k: m.to_dict() for k, m in oof_metrics.items()},
        "dev_rows": dev.n,
        "model_files": model_files,
        "test_csv": test_csv,
        "test_metrics": None,
    }
    _write_json(out / "manifest.json", manifest)
    log.info("trained ensemble manifest=%s dev_rows=%d test_rows=%d",
             out / "manifest.json", dev.n, test.n)
    return 0


def _load_manifest(path):
    try:
        with open(path) as fh:
            manifest = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read manifest: {exc}") from exc
    if manifest.get("schema_version") != MANIFEST_SCHEMA_VERSION:
        raise DataError("unrecognized manifest schema")
    base = Path(path).parent
    models = {
        "gbdt": gbdt.load(base / manifest["model_files"]["gbdt"]),
        "mlp": mlp.load(base / manifest["model_files"]["mlp"]),
    }
    return manifest, models, base


def _metric_row(name, split, m) -> str:
    return (f"{name:<14} {split:<5} acc={m['accuracy']:.4f} "
            f"prec_w={m['precision_weighted']:.4f} rec_w={m['recall_weighted']:.4f} "
            f"f1_w={m['f1_weighted']:.4f} f1_macro={m['f1_macro']:.4f}")


def cmd_evaluate(args) -> int:
    manifest, models, base = _load_manifest(args.manifest)
    test_path = args.test or (
        base / manifest["test_csv"] if manifest.get("test_csv") else None)
    if test_path is None:
        raise DataError("no test CSV: pass --test or train with a test fraction")
    test = read_feature_csv(test_path)
    if not test.labeled():
        raise DataError("test CSV must be labeled")

    probs = {f: _predict_model(f, models[f], test.X) for f in ("gbdt", "mlp")}
    weights = np.asarray(manifest["weights"], dtype=np.float64)
    fused, fused_labels = fusion.fuse([probs["gbdt"], probs["mlp"]], weights)

    test_metrics = {
        "gbdt": compute_metrics(
            test.y, np.argmax(probs["gbdt"], axis=1), N_CLASSES).to_dict(),
        "mlp": compute_metrics(
            test.y, np.argmax(probs["mlp"], axis=1), N_CLASSES).to_dict(),
        "ensemble": compute_metrics(test.y, fused_labels, N_CLASSES).to_dict(),
    }

    for name in ("gbdt", "mlp", "ensemble"):
        print(_metric_row(name, "oof", manifest["oof_metrics"][name]))
    for name in ("gbdt", "mlp", "ensemble"):
        print(_metric_row(name, "test", test_metrics[name]))

    ens = test_metrics["ensemble"]
    with open(base / "confusion_counts.csv", "w") as fh:
        fh.write("true\\pred," + ",".join(LABEL_NAMES) + "\n")
        for i, row in enumerate(ens["confusion"]):
            fh.write(LABEL_NAMES[i] + "," + ",".join(str(v) for v in row) + "\n")
    with open(base / "confusion_row_normalized.csv", "w") as fh:
        fh.write("true\\pred," + ",".join(LABEL_NAMES) + "\n")
        for i, row in enumerate(ens["confusion_row_normalized"]):
            fh.write(LABEL_NAMES[i] + ","
                     + ",".join(repr(float(v)) for v in row) + "\n")

    report = {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "config_hash": manifest["config_hash"],
        "test_csv": str(test_path),
        "test_rows": test.n,
        "weights": manifest["weights"],
        "metrics": test_metrics,
    }
    _write_json(base / "evaluation_report.json", report)
    manifest["test_metrics"] = test_metrics
    _write_json(Path(args.manifest), manifest)
    log.info("evaluated test_rows=%d ensemble_acc=%.4f report=%s",
             test.n, ens["accuracy"], base / "evaluation_report.json")
    return 0


def cmd_analyze(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    ds = _load_features(cfg)
    if len(np.unique(ds.y)) < 2:
        raise DataError("need at least 2 classes to analyze")

    ranked = analysis.rank_features(ds.X, ds.y)
    with open(out / "anova.csv", "w") as fh:
        fh.write("feature,F,df1,df2,p\n")
        for row in sorted(ranked, key=lambda r: r["index"]):
            fh.write(f"{row['name']},{row['F']!r},{row['df1']},"
                     f"{row['df2']},{row['p']!r}\n")
    with open(out / "feature_ranking.csv", "w") as fh:
        fh.write("rank,feature,F,p\n")
        for rank, row in enumerate(ranked, start=1):
            fh.write(f"{rank},{row['name']},{row['F']!r},{row['p']!r}\n")

    projection = analysis.lda_project(ds.X, ds.y, components=2)
    k = projection.coordinates.shape[1]
    with open(out / "lda_coordinates.csv", "w") as fh:
        fh.write("id,label," + ",".join(f"ld{i + 1}" for i in range(k)) + "\n")
        for i in range(ds.n):
            coords = ",".join(repr(float(v)) for v in projection.coordinates[i])
            fh.write(f"{ds.ids[i]},{LABEL_NAMES[ds.y[i]]},{coords}\n")
    _write_json(out / "lda.json", {
        "schema_version": MANIFEST_SCHEMA_VERSION,
        "explained_ratios": projection.explained_ratios.tolist(),
        "axes": projection.axes.tolist(),
    })
    top = ranked[0]
    log.info("analyzed rows=%d top_feature=%s F=%.2f ld1_ratio=%.3f",
             ds.n, top["name"], top["F"], projection.explained_ratios[0])
    return 0


def cmd_predict(args) -> int:
    manifest, models, _ = _load_manifest(args.manifest)
    ds = read_feature_csv(args.features, allow_unlabeled=True)
    probs = {f: _predict_model(f, models[f], ds.X) for f in ("gbdt", "mlp")}
    weights = np.asarray(manifest["weights"], dtype=np.float64)
    fused, labels = fusion.fuse([probs["gbdt"], probs["mlp"]], weights)
    out_csv = args.out_csv or "predictions.csv"
    with open(out_csv, "w") as fh:
        fh.write("id,predicted," + ",".join(f"prob_{n}" for n in LABEL_NAMES) + "\n")
        for i in range(ds.n):
            cells = ",".join(repr(float(v)) for v in fused[i])
            fh.write(f"{ds.ids[i]},{LABEL_NAMES[labels[i]]},{cells}\n")
    log.info("predicted rows=%d out=%s", ds.n, out_csv)
    return 0


# ---------------------------------------------------------------------------
# parser / entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="root seed (fallback: config file, NEATBOOST_SEED)")
    common.add_argument("--config", default=None, help="TOML config file")
    common.add_argument("--out", dest="output_dir", default=None,
                        help="output directory (default: out)")
    common.add_argument("--jobs", type=int, default=None,
                        help="max concurrent fitness evaluations")

    parser = _Parser(prog="neatboost", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", parents=[common],
                       help="extract descriptors from a directory of images")
    p.add_argument("--images", required=True)
    p.add_argument("--labels", default=None,
                   help="CSV of filename,label (normal|wb|sm)")
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("synth", parents=[common],
                       help="generate a synthetic labeled dataset")
    p.add_argument("--n-per-class", dest="synth_n_per_class", type=int, default=None)
    p.add_argument("--separation", dest="synth_separation", type=float, default=None)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("evolve", parents=[common],
                       help="evolve hyperparameters for both learner families")
    p.add_argument("--features", dest="features_csv", default=None)
    p.add_argument("--folds", dest="cv_folds", type=int, default=None)
    p.add_argument("--population", dest="neat_population", type=int, default=None)
    p.add_argument("--generations", dest="neat_generations", type=int, default=None)
    p.add_argument("--mlp-epochs", dest="mlp_epochs", type=int, default=None)
    p.set_defaults(func=cmd_evolve)

    p = sub.add_parser("train", parents=[common],
                       help="train both learners, fuse, write manifest")
    p.add_argument("--features", dest="features_csv", default=None)
    p.add_argument("--folds", dest="cv_folds", type=int, default=None)
    p.add_argument("--mlp-epochs", dest="mlp_epochs", type=int, default=None)
    p.add_argument("--gbdt-params", default=None,
                   help="JSON from evolve (default: <out>/best_gbdt.json)")
    p.add_argument("--mlp-params", default=None)
    p.add_argument("--weights", default=None,
                   help="manual fusion weights 'w1,w2' (skips the simplex search)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", parents=[common],
                       help="score the trained ensemble on a labeled test CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", parents=[common],
                       help="ANOVA table, feature ranking and LDA projection")
    p.add_argument("--features", dest="features_csv", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("predict", parents=[common],
                       help="fused predictions for a (possibly unlabeled) CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out-csv", default=None)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        log.error("usage error=%s", exc)
        return 1
    except (DataError, ImageFormatError, SegmentationError, OSError) as exc:
        log.error("data error=%s", exc)
        return 2
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.exception("internal error=%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
