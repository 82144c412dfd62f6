"""Command-line front end: synth, train, eval, calibrate, report.

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError, sigmoid_array
from .calibration import (CalibrationError, TemperatureModel, calibration_report, fit_cda_temperature,
                          fit_temperature, frequency_groups, reliability_csv)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, ExperimentConfig, load_config
from .corpus import (CorpusError, RawDocument, SubsampleError, load_docred, load_schema,
                     save_docred, save_schema, stats, subsample)
from .encoder import IngestionError, SchemaError, UnsupportedDocumentError, Vocabulary
from .metrics import PredictionSet, UndefinedF1Error, best_threshold, build_train_index, evaluate, write_predictions
from .model import DocREModel, Scores
from .synthetic import generate_synthetic
from .trainer import TrainingError, train

log = logging.getLogger("docre")

RUNTIME_ERRORS = (CorpusError, SubsampleError, IngestionError, SchemaError, UnsupportedDocumentError,
                  CheckpointError, CalibrationError, UndefinedF1Error, TrainingError, NonFiniteError,
                  OSError, KeyError)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def run_dirs(cfg: ExperimentConfig) -> list[tuple[int, Path]]:
    """One output directory per seed; a single seed writes to ``out`` itself."""
    out = Path(cfg.run.out)
    if len(cfg.run.seeds) == 1:
        return [(cfg.run.seeds[0], out)]
    return [(s, out / f"seed-{s}") for s in cfg.run.seeds]


def _require(path: str, what: str) -> str:
    if not path:
        raise ConfigError(f"no {what} file configured (set [data] {what} or pass --{what})")
    return path


# ---------------------------------------------------------------- synth


def cmd_synth(cfg: ExperimentConfig, args) -> int:
    n_dev, n_test = args.dev or 0, args.test or 0
    if n_dev < 0 or n_test < 0:
        raise ConfigError("--dev and --test must be >= 0")
    syn = replace(cfg.synthetic, seed=cfg.run.seeds[0], docs=cfg.synthetic.docs + n_dev + n_test)
    docs, schema = generate_synthetic(syn)
    n_train = cfg.synthetic.docs
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    splits = {"train": docs[:n_train], "dev": docs[n_train:n_train + n_dev],
              "test": docs[n_train + n_dev:]}
    save_docred(splits["train"], out / "train.json")
    for name in ("dev", "test"):
        if splits[name]:
            save_docred(splits[name], out / f"{name}.json")
    save_schema(schema, out / "schema.json")
    _write_json(out / "stats.json", {"config": replace(cfg.synthetic, seed=syn.seed).to_json(),
                                     **{k: stats(v, schema).to_json() for k, v in splits.items() if v}})
    _say(args, f"wrote {n_train} train / {n_dev} dev / {n_test} test documents to {out}")
    return 0


# ---------------------------------------------------------------- train


def build_vocab(train_docs: list[RawDocument], schema) -> Vocabulary:
    sentences = [s for d in train_docs for s in d.sents]
    sentences += [r.description.split() for r in schema.relations]
    return Vocabulary.build(sentences)


def train_one(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    schema = load_schema(_require(cfg.data.schema, "schema"))
    train_docs = load_docred(_require(cfg.data.train, "train"), schema)
    dev_docs = load_docred(_require(cfg.data.dev, "dev"), schema)
    sub = None
    if cfg.run.subsample:
        sub = subsample(train_docs, cfg.run.subsample, seed, cfg.run.subsample_tolerance)
        train_docs = sub.documents
    vocab = build_vocab(train_docs, schema)
    enc = replace(cfg.encoder, seed=seed)
    model = DocREModel(enc, cfg.head, vocab, schema, seed=seed)
    tcfg = replace(cfg.train, seed=seed)
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.jsonl"
    history_path.write_text("", encoding="utf-8")

    def on_epoch(record):
        with open(history_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record) + "\n")

    result = train(model, [model.prepare(d) for d in train_docs], [model.prepare(d) for d in dev_docs],
                   tcfg, on_epoch)
    st = stats(train_docs, schema)
    extra = {
        "train_titles": [d.title for d in train_docs],
        "train_counts": st.relation_counts,
        "train_na_pairs": st.na_pairs,
        "best_epoch": result.best_epoch,
        "best_dev_f1": result.best_dev_f1,
        "subsample": None if sub is None else {"n": len(sub.indices), "distance": sub.distance,
                                               "attempts": sub.attempts, "seed": sub.seed},
    }
    save_checkpoint(model, out / "checkpoint.bin", extra)
    vocab.save(out / "vocab.txt")
    echo = replace(cfg.run, seeds=[seed], out=str(out))
    (out / "config.echo").write_text(replace(cfg, run=echo, train=tcfg, encoder=enc).dumps(), encoding="utf-8")
    return {"seed": seed, "best_epoch": result.best_epoch, "best_dev_f1": result.best_dev_f1,
            "epochs_run": len(result.history), "stopped_early": result.stopped_early}


def _mean_std(values) -> dict:
    v = np.asarray(values, dtype=np.float64)
    return {"mean": float(v.mean()), "std": float(v.std(ddof=1)) if len(v) > 1 else 0.0,
            "values": [float(x) for x in v]}


def cmd_train(cfg: ExperimentConfig, args) -> int:
    runs = run_dirs(cfg)
    if cfg.run.jobs > 1 and len(runs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.run.jobs) as pool:
            results = list(pool.map(train_one, [cfg] * len(runs), [s for s, _ in runs], [d for _, d in runs]))
    else:
        results = [train_one(cfg, s, d) for s, d in runs]
    for r in results:
        _say(args, f"seed {r['seed']}: best dev F1 {r['best_dev_f1']:.4f} at epoch {r['best_epoch']}")
    if len(results) > 1:
        summary = {"runs": results, "best_dev_f1": _mean_std([r["best_dev_f1"] for r in results])}
        _write_json(Path(cfg.run.out) / "summary.json", summary)
        s = summary["best_dev_f1"]
        _say(args, f"best dev F1 {s['mean']:.4f} ± {s['std']:.4f} over {len(results)} seeds")
    return 0


# ---------------------------------------------------------------- eval / calibrate


def _split_path(cfg: ExperimentConfig, args) -> str:
    return args.split or _require(cfg.data.test, "test")


def _load_split(model: DocREModel, path: str):
    docs = load_docred(path, model.schema)
    return docs, model.score([model.prepare(d) for d in docs])


def _train_facts(cfg: ExperimentConfig, extra: dict, schema):
    """Training documents the checkpoint was fit on, for Ign F1."""
    if not cfg.data.train:
        log.warning("no training file configured; Ign F1 equals F1")
        return {}
    titles = set(extra.get("train_titles", []))
    docs = [d for d in load_docred(cfg.data.train, schema) if d.title in titles]
    return build_train_index(docs)


def eval_one(cfg: ExperimentConfig, args, out: Path) -> dict:
    model, extra = load_checkpoint(args.checkpoint or out / "checkpoint.bin")
    _, scores = _load_split(model, _split_path(cfg, args))
    preds = PredictionSet.from_scores(scores)
    if args.threshold is not None:
        theta, source = float(args.threshold), "flag"
    else:
        _, dev_scores = _load_split(model, _require(cfg.data.dev, "dev"))
        theta, _ = best_threshold(PredictionSet.from_scores(dev_scores))
        source = "dev"
    report = evaluate(preds, theta, _train_facts(cfg, extra, model.schema), extra.get("train_counts", {}))
    out.mkdir(parents=True, exist_ok=True)
    body = {"threshold_source": source, **report.to_json()}
    _write_json(out / "eval.json", body)
    write_predictions(preds, theta, out / "predictions.jsonl", strip_prob=args.strip_prob)
    return body


def cmd_eval(cfg: ExperimentConfig, args) -> int:
    results = [eval_one(cfg, args, d) for _, d in run_dirs(cfg)]
    for (seed, _), r in zip(run_dirs(cfg), results):
        _say(args, f"seed {seed}: F1 {r['f1']:.4f}  Ign F1 {r['ign_f1']:.4f}  Macro {r['macro']:.4f}  "
                   f"(threshold {r['threshold']:.4f} from {r['threshold_source']})")
    return 0


def fit_calibrator(method: str, dev: Scores, class_freqs: np.ndarray) -> TemperatureModel:
    if method == "none":
        return TemperatureModel("none")
    if method == "ts":
        return fit_temperature(dev.logits(), dev.gold())
    return fit_cda_temperature(dev.logits(), dev.gold(), class_freqs)


def class_frequencies(model: DocREModel, extra: dict) -> np.ndarray:
    counts = extra.get("train_counts", {})
    freqs = [counts.get(rid, 0) for rid in model.relation_ids]
    if model.head_cfg.na_class:
        freqs[-1] = extra.get("train_na_pairs", 0)
    return np.asarray(freqs, dtype=np.float64)


def calibrate_one(cfg: ExperimentConfig, args, out: Path) -> dict:
    model, extra = load_checkpoint(args.checkpoint or out / "checkpoint.bin")
    _, dev = _load_split(model, _require(cfg.data.dev, "dev"))
    _, test = _load_split(model, _split_path(cfg, args))
    cal = cfg.calibration
    tm = fit_calibrator(cal.method, dev, class_frequencies(model, extra))
    groups = frequency_groups(test.relation_ids, test.na_column, extra.get("train_counts", {}))
    reports = {}
    for name, temp in (("uncalibrated", None), ("calibrated", tm)):
        probs = sigmoid_array(test.logits()) if temp is None else temp.probabilities(test.logits())
        mask = None
        if cal.population == "predicted":
            dev_probs = sigmoid_array(dev.logits()) if temp is None else temp.probabilities(dev.logits())
            theta, _ = best_threshold(PredictionSet.from_scores(dev, dev_probs))
            mask = probs > theta
            if not mask.any():
                raise CalibrationError("no predicted positives on the evaluation split")
        reports[name] = calibration_report(probs, test.gold(), groups, cal.bins, temp, mask)
    out.mkdir(parents=True, exist_ok=True)
    body = {"method": cal.method, "bins": cal.bins, "population": cal.population,
            "groups": {k: [test.relation_ids[c] for c in v] for k, v in groups.items()},
            **{k: r.to_json() for k, r in reports.items()}}
    _write_json(out / "calibration.json", body)
    (out / "reliability.csv").write_text(reliability_csv(reports["calibrated"].groups), encoding="utf-8")
    return body


def cmd_calibrate(cfg: ExperimentConfig, args) -> int:
    for (seed, d) in run_dirs(cfg):
        r = calibrate_one(cfg, args, d)
        _say(args, f"seed {seed}: ECE {r['uncalibrated']['ece']:.6f} -> {r['calibrated']['ece']:.6f}  "
                   f"ACE {r['uncalibrated']['ace']:.6f} -> {r['calibrated']['ace']:.6f} ({r['method']})")
    return 0


# ---------------------------------------------------------------- report


REPORT_FIELDS = (("eval.json", "f1"), ("eval.json", "ign_f1"), ("eval.json", "macro"),
                 ("eval.json", "macro@100"), ("calibration.json", "uncalibrated.ece"),
                 ("calibration.json", "calibrated.ece"), ("calibration.json", "uncalibrated.ace"))


def _dig(obj, dotted: str):
    for part in dotted.split("."):
        if not isinstance(obj, dict) or part not in obj:
            return None
        obj = obj[part]
    return obj


def cmd_report(cfg: ExperimentConfig, args) -> int:
    rows = {}
    for seed, d in run_dirs(cfg):
        row = {}
        for fname, key in REPORT_FIELDS:
            path = d / fname
            if path.exists():
                row[key] = _dig(json.loads(path.read_text(encoding="utf-8")), key)
        if not row:
            raise FileNotFoundError(f"no eval.json or calibration.json under {d}")
        rows[seed] = row
    keys = [k for _, k in REPORT_FIELDS if any(r.get(k) is not None for r in rows.values())]
    summary = {}
    for k in keys:
        vals = [r[k] for r in rows.values() if r.get(k) is not None]
        summary[k] = _mean_std(vals)
    out = Path(cfg.run.out)
    _write_json(out / "report.json", {"runs": {str(s): r for s, r in rows.items()}, "summary": summary})
    width = max(len(k) for k in keys)
    for k in keys:
        s = summary[k]
        _say(args, f"{k:<{width}}  {s['mean']:.6f} ± {s['std']:.6f}  (n={len(s['values'])})")
    return 0


# ---------------------------------------------------------------- argument parsing


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file; flags override its values")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", help="seed or comma-separated seed list")
    common.add_argument("--jobs", type=int, help="parallel runs for multi-seed training")
    common.add_argument("--quiet", action="store_true", help="print nothing on success")
    data = argparse.ArgumentParser(add_help=False)
    for name in ("train", "dev", "test", "schema"):
        data.add_argument(f"--{name}", help=f"{name} file")

    p = argparse.ArgumentParser(prog="docre", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic long-tailed corpus")
    s.add_argument("--docs", type=int, help="training documents")
    s.add_argument("--relations", type=int)
    s.add_argument("--na", type=float, help="target NA pair ratio")
    s.add_argument("--zipf", type=float)
    s.add_argument("--vocab-size", type=int)
    s.add_argument("--entities", type=int, help="mean entities per document")
    s.add_argument("--dev", type=int, default=0, help="extra dev documents")
    s.add_argument("--test", type=int, default=0, help="extra test documents")

    t = sub.add_parser("train", parents=[common, data], help="train one model per seed")
    t.add_argument("--prism", choices=("on", "off"))
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--subsample", type=int, help="train on N documents drawn to match the label distribution")
    t.add_argument("--epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)

    e = sub.add_parser("eval", parents=[common, data], help="score a split with a checkpoint")
    e.add_argument("--checkpoint")
    e.add_argument("--split", help="split to evaluate (default: the test file)")
    e.add_argument("--threshold", type=float, help="fixed threshold instead of the dev-tuned one")
    e.add_argument("--strip-prob", action="store_true", help="omit probabilities from predictions.jsonl")

    c = sub.add_parser("calibrate", parents=[common, data], help="calibration errors and reliability tables")
    c.add_argument("--checkpoint")
    c.add_argument("--split", help="split to measure (default: the test file)")
    c.add_argument("--method", choices=("none", "ts", "cda-ts"))
    c.add_argument("--bins", type=int)
    c.add_argument("--population", choices=("all", "predicted"))

    sub.add_parser("report", parents=[common], help="summarize eval and calibration outputs")
    return p


def _overrides(args) -> dict:
    g = lambda name: getattr(args, name, None)  # noqa: E731
    o = {("run", "out"): g("out"), ("run", "seeds"): g("seed"), ("run", "jobs"): g("jobs")}
    for name in ("train", "dev", "test", "schema"):
        if args.command != "synth":
            o[("data", name)] = g(name)
    if args.command == "synth":
        o.update({("synthetic", "docs"): g("docs"), ("synthetic", "relations"): g("relations"),
                  ("synthetic", "na_ratio"): g("na"), ("synthetic", "zipf"): g("zipf"),
                  ("synthetic", "vocab_size"): g("vocab_size"), ("synthetic", "mean_entities"): g("entities")})
    o.update({("head", "prism"): g("prism"), ("head", "lam"): g("lam"), ("run", "subsample"): g("subsample"),
              ("train", "epochs"): g("epochs"), ("train", "lr"): g("lr"),
              ("train", "batch_size"): g("batch_size"), ("calibration", "method"): g("method"),
              ("calibration", "bins"): g("bins"), ("calibration", "population"): g("population")})
    return o


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "calibrate": cmd_calibrate,
            "report": cmd_report}


def main(argv=None) -> int:
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
