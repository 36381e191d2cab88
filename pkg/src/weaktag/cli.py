"""Command-line pipeline: ingest -> lf-apply -> lf-report -> train -> predict -> eval.

Every subcommand validates its inputs before writing anything, writes output
files atomically, and drops a manifest (inputs with content hashes, seed,
config echo, versions) next to its outputs. Exit codes: 0 success, 1
validation error, 2 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import features as ft
from .documents import (
    Corpus,
    CorpusFormatError,
    CorpusSplit,
    corpus_to_jsonl,
    read_corpus,
    split_corpus,
)
from .evaluation import format_report, score
from .labeling import (
    ContextParams,
    LabelMatrix,
    build_label_matrix,
    diagnostics,
    diagnostics_to_obj,
    format_lf_report,
)
from .rules import SuiteFormatError, parse_lf_suite, suite_to_json
from .synth import SynthesisError, SynthSpec, generate, run_sweep
from .training import (
    JointTokenTagger,
    TrainConfig,
    build_training_data,
    load_bundle,
    save_bundle,
)
from .utils import atomic_write_text, load_kv_config, sha256_file, write_json_atomic

_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_SYNTH_FIELDS = {f.name for f in dataclasses.fields(SynthSpec)}


def _say(args: argparse.Namespace, message: str) -> None:
    if not args.quiet:
        print(message)


def _write_manifest(
    path: Path, command: str, inputs: dict[str, str | Path], seed: int | None, config: dict
) -> None:
    manifest = {
        "command": command,
        "inputs": {
            name: {"path": str(p), "sha256": sha256_file(p)} for name, p in inputs.items()
        },
        "seed": seed,
        "config": config,
        "versions": {
            "weaktag": __version__,
            "numpy": np.__version__,
            "python": f"{sys.version_info.major}.{sys.version_info.minor}",
        },
    }
    write_json_atomic(path, manifest, indent=2)


def _context_params(args: argparse.Namespace) -> ContextParams:
    return ContextParams(window=args.window, radius=args.radius)


def _merged_config(args: argparse.Namespace, fields: set[str]) -> dict:
    """Defaults <- config file <- CLI flags; CLI flags win."""
    merged: dict = {}
    if getattr(args, "config", None):
        file_cfg = load_kv_config(args.config)
        unknown = set(file_cfg) - _TRAIN_FIELDS - _SYNTH_FIELDS
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        merged.update({k: v for k, v in file_cfg.items() if k in fields})
    for name in fields:
        value = getattr(args, name, None)
        if value is not None:
            merged[name] = value
    if getattr(args, "seed", None) is not None and "seed" in fields:
        merged["seed"] = args.seed
    return merged


def _train_config(args: argparse.Namespace) -> TrainConfig:
    cfg = _merged_config(args, _TRAIN_FIELDS)
    if getattr(args, "supervised_only", False):
        cfg.update({"w_gm": 0.0, "w_kl": 0.0, "w_qg": 0.0})
    return TrainConfig(**cfg)


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    atomic_write_text(args.out, corpus_to_jsonl(corpus))
    _write_manifest(
        Path(f"{args.out}.manifest.json"), "ingest", {"corpus": args.corpus}, None, {}
    )
    n_tokens = sum(len(d.tokens) for d in corpus.documents)
    _say(args, f"{len(corpus.documents)} docs, {n_tokens} tokens, {corpus.n_classes} classes")
    return 0


def cmd_lf_apply(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    lfs = parse_lf_suite(args.suite, corpus.classes)
    if not lfs:
        raise ValueError("no labeling functions in the suite")
    matrix = build_label_matrix(lfs, corpus, _context_params(args))
    write_json_atomic(args.out, matrix.to_obj())
    _write_manifest(
        Path(f"{args.out}.manifest.json"),
        "lf-apply",
        {"corpus": args.corpus, "suite": args.suite},
        None,
        {"window": args.window, "radius": args.radius},
    )
    _say(args, f"label matrix: {matrix.n_instances} instances x {matrix.n_lfs} LFs")
    return 0


def _gold_for_matrix(matrix: LabelMatrix, corpus: Corpus) -> np.ndarray:
    by_id = {doc.doc_id: doc for doc in corpus.documents}
    gold = np.zeros(matrix.n_instances, dtype=np.int64)
    for r, (doc_id, tok) in enumerate(matrix.instance_index):
        if doc_id not in by_id:
            raise ValueError(f"matrix references doc {doc_id!r} missing from the corpus")
        label = by_id[doc_id].tokens[tok].gold_label
        gold[r] = 0 if label is None else label
    return gold


def cmd_lf_report(args: argparse.Namespace) -> int:
    matrix = LabelMatrix.load(args.matrix)
    gold = None
    inputs: dict[str, str | Path] = {"matrix": args.matrix}
    if args.corpus:
        gold = _gold_for_matrix(matrix, read_corpus(args.corpus))
        inputs["corpus"] = args.corpus
    diag = diagnostics(matrix, gold)
    text = format_lf_report(matrix, diag)
    print(text, end="")
    if args.out:
        atomic_write_text(args.out, text)
        write_json_atomic(
            Path(args.out).with_suffix(".json"), diagnostics_to_obj(matrix, diag)
        )
        _write_manifest(Path(f"{args.out}.manifest.json"), "lf-report", inputs, None, {})
    return 0


def _resolve_split(args: argparse.Namespace, corpus: Corpus, seed: int) -> CorpusSplit:
    if args.split:
        return CorpusSplit.from_obj(json.loads(Path(args.split).read_text(encoding="utf-8")))
    return split_corpus(corpus, args.labeled_frac, args.val_frac, args.test_frac, seed)


def cmd_train(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    matrix = LabelMatrix.load(args.matrix)
    if matrix.class_names != corpus.classes:
        raise ValueError("matrix and corpus declare different class vocabularies")
    lfs = parse_lf_suite(args.suite, corpus.classes)
    if tuple(lf.lf_id for lf in lfs) != matrix.lf_ids:
        raise ValueError("suite LF ids do not match the matrix")
    cfg = _train_config(args)
    split = _resolve_split(args, corpus, cfg.seed)
    params = _context_params(args)
    data = build_training_data(corpus, matrix, split, params, cfg.hash_bits)
    tagger = JointTokenTagger(**dataclasses.asdict(cfg)).fit(data)
    model = tagger.to_model(lfs)

    out = Path(args.out_dir)
    save_bundle(model, out)
    write_json_atomic(out / "split.json", split.to_obj())
    _write_manifest(
        out / "manifest.json",
        "train",
        {"corpus": args.corpus, "matrix": args.matrix, "suite": args.suite},
        cfg.seed,
        {**dataclasses.asdict(cfg), "window": args.window, "radius": args.radius},
    )
    best = model.history[model.best_epoch]
    _say(
        args,
        f"trained {len(model.history)} epochs; best epoch {model.best_epoch} "
        f"val macro-F1 {best['val_f1']:.4f}",
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    model = load_bundle(args.bundle)
    if model.class_names != corpus.classes:
        raise ValueError("bundle and corpus declare different class vocabularies")
    params = _context_params(args)
    feats = ft.featurize_corpus(corpus, params, model.phi.hash_bits)
    if args.fuse:
        matrix = build_label_matrix(model.lfs, corpus, params)
        probs = model.fused_proba(feats, matrix.rows)
    else:
        probs = model.predict_proba(feats)
    labels = np.argmax(probs, axis=1) + 1
    entries = []
    for r, (d, t) in enumerate(corpus.instances):
        entries.append(
            {
                "doc_id": corpus.documents[d].doc_id,
                "token": t,
                "label": corpus.classes[int(labels[r]) - 1],
                "probs": [float(p) for p in probs[r]],
            }
        )
    write_json_atomic(args.out, {"classes": list(corpus.classes), "predictions": entries})
    _write_manifest(
        Path(f"{args.out}.manifest.json"),
        "predict",
        {"corpus": args.corpus},
        None,
        {"fuse": bool(args.fuse), "window": args.window, "radius": args.radius},
    )
    _say(args, f"predicted {len(entries)} tokens")
    return 0


def _load_labels(path: str | Path) -> tuple[tuple[str, ...], dict[tuple[str, int], str]]:
    """Read (doc_id, token) -> class name from a predictions file or a corpus."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
        if isinstance(obj, dict) and "predictions" in obj:
            classes = tuple(obj["classes"])
            return classes, {
                (e["doc_id"], int(e["token"])): e["label"] for e in obj["predictions"]
            }
    except json.JSONDecodeError:
        pass
    corpus = read_corpus(path)
    labels = {}
    for doc in corpus.documents:
        for t, tok in enumerate(doc.tokens):
            if tok.gold_label is not None:
                labels[(doc.doc_id, t)] = corpus.classes[tok.gold_label - 1]
    return corpus.classes, labels


def cmd_eval(args: argparse.Namespace) -> int:
    gold_classes, gold_map = _load_labels(args.gold)
    pred_classes, pred_map = _load_labels(args.pred)
    if gold_classes != pred_classes:
        raise ValueError("gold and prediction files declare different class vocabularies")
    masked = set(args.ignore_class or [])
    unknown = masked - set(gold_classes)
    if unknown:
        raise ValueError(f"--ignore-class names undeclared classes: {', '.join(sorted(unknown))}")
    keys = sorted(set(gold_map) & set(pred_map))
    keys = [k for k in keys if gold_map[k] not in masked and pred_map[k] not in masked]
    if not keys:
        raise ValueError("no scorable tokens shared by the gold and prediction files")
    kept = tuple(c for c in gold_classes if c not in masked)
    idx = {c: i + 1 for i, c in enumerate(kept)}
    gold = np.array([idx[gold_map[k]] for k in keys], dtype=np.int64)
    pred = np.array([idx[pred_map[k]] for k in keys], dtype=np.int64)
    report = score(gold, pred, kept)
    text = format_report(report)
    print(text, end="")
    if args.out:
        write_json_atomic(args.out, report.to_obj())
        atomic_write_text(Path(args.out).with_suffix(".txt"), text)
        _write_manifest(
            Path(f"{args.out}.manifest.json"),
            "eval",
            {"gold": args.gold, "pred": args.pred},
            None,
            {"ignore_class": sorted(masked)},
        )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    spec = SynthSpec(**_merged_config(args, _SYNTH_FIELDS))
    out = Path(args.out_dir)
    corpus, lfs = generate(spec, _context_params(args))
    atomic_write_text(out / "corpus.jsonl", corpus_to_jsonl(corpus))
    atomic_write_text(out / "lf_suite.json", suite_to_json(lfs, corpus.classes))
    write_json_atomic(out / "synth_spec.json", dataclasses.asdict(spec))
    _write_manifest(
        out / "manifest.json", "synth", {}, spec.seed,
        {**dataclasses.asdict(spec), "window": args.window, "radius": args.radius},
    )
    _say(args, f"wrote {out / 'corpus.jsonl'} and {out / 'lf_suite.json'}")
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    spec = SynthSpec(**_merged_config(args, _SYNTH_FIELDS))
    cfg = _train_config(args)
    labeled = [float(v) for v in args.labeled.split(",") if v]
    unlabeled = [float(v) for v in args.unlabeled.split(",") if v] if args.unlabeled else None
    seeds = [int(v) for v in args.seeds.split(",") if v]
    result = run_sweep(spec, labeled, unlabeled, seeds, cfg, _context_params(args))
    out = Path(args.out_dir)
    write_json_atomic(out / "sweep.json", result.to_obj())
    table = result.format_table()
    atomic_write_text(out / "sweep.txt", table)
    _write_manifest(
        out / "manifest.json", "sweep", {}, cfg.seed,
        {
            "synth": dataclasses.asdict(spec),
            "train": dataclasses.asdict(cfg),
            "labeled": labeled,
            "unlabeled": unlabeled,
            "seeds": seeds,
        },
    )
    print(table, end="")
    return 0


def cmd_run_all(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    lfs = parse_lf_suite(args.suite, corpus.classes)
    if not lfs:
        raise ValueError("no labeling functions in the suite")
    cfg = _train_config(args)
    params = _context_params(args)
    out = Path(args.out_dir)

    matrix = build_label_matrix(lfs, corpus, params)
    write_json_atomic(out / "matrix.json", matrix.to_obj())
    split = _resolve_split(args, corpus, cfg.seed)
    write_json_atomic(out / "split.json", split.to_obj())
    data = build_training_data(corpus, matrix, split, params, cfg.hash_bits)
    tagger = JointTokenTagger(**dataclasses.asdict(cfg)).fit(data)
    model = tagger.to_model(lfs)
    save_bundle(model, out / "model")

    test_rows = data.rows_test
    probs = model.predict_proba(data.features, test_rows)
    labels = np.argmax(probs, axis=1) + 1
    entries = []
    for i, r in enumerate(test_rows):
        d, t = corpus.instances[int(r)]
        entries.append(
            {
                "doc_id": corpus.documents[d].doc_id,
                "token": t,
                "label": corpus.classes[int(labels[i]) - 1],
                "probs": [float(p) for p in probs[i]],
            }
        )
    write_json_atomic(out / "predictions.json", {"classes": list(corpus.classes), "predictions": entries})

    gold_full = corpus.gold_labels()
    report = score(gold_full[test_rows], labels, corpus.classes)
    write_json_atomic(out / "report.json", report.to_obj())
    atomic_write_text(out / "report.txt", format_report(report))
    _write_manifest(
        out / "manifest.json",
        "run-all",
        {"corpus": args.corpus, "suite": args.suite},
        cfg.seed,
        {**dataclasses.asdict(cfg), "window": args.window, "radius": args.radius,
         "fractions": [args.labeled_frac, args.val_frac, args.test_frac]},
    )
    _say(args, f"test macro-F1 {report.macro_f1:.4f} over {report.n_instances} tokens")
    return 0


def _add_context_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", type=int, default=2, help="reading-order neighbors per side")
    p.add_argument("--radius", type=float, default=0.08, help="normalized spatial neighbor radius")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value config file (CLI flags win)")
    p.add_argument("--supervised-only", action="store_true",
                   help="drop the unsupervised terms (w_gm = w_kl = w_qg = 0)")
    for name, typ in (
        ("learning-rate", float), ("batch-size", int), ("max-epochs", int),
        ("warmup-fraction", float), ("patience", int), ("w-ce", float), ("w-gm", float),
        ("w-kl", float), ("w-qg", float), ("guide-clamp", float), ("hash-bits", int),
        ("l2", float),
    ):
        p.add_argument(f"--{name}", type=typ, default=None, dest=name.replace("-", "_"))


def _add_split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split", help="existing split manifest JSON")
    p.add_argument("--labeled-frac", type=float, default=0.1)
    p.add_argument("--val-frac", type=float, default=0.1)
    p.add_argument("--test-frac", type=float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="weaktag",
        description="Weak-supervision token tagging over OCR document layouts",
    )
    parser.add_argument("--version", action="version", version=f"weaktag {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def new(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
        p.add_argument("--seed", type=int, default=None)
        return p

    p = new("ingest", "validate and normalize a corpus file")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = new("lf-apply", "fire an LF suite over a corpus into a label matrix")
    p.add_argument("corpus")
    p.add_argument("suite")
    p.add_argument("--out", required=True)
    _add_context_flags(p)
    p.set_defaults(func=cmd_lf_apply)

    p = new("lf-report", "coverage/overlap/conflict diagnostics for a matrix")
    p.add_argument("matrix")
    p.add_argument("--corpus", help="corpus with gold labels for precision")
    p.add_argument("--out", help="also write the report to this path")
    p.set_defaults(func=cmd_lf_report)

    p = new("train", "jointly train the classifier and the aggregation model")
    p.add_argument("corpus")
    p.add_argument("matrix")
    p.add_argument("suite")
    p.add_argument("--out-dir", required=True)
    _add_split_flags(p)
    _add_train_flags(p)
    _add_context_flags(p)
    p.set_defaults(func=cmd_train)

    p = new("predict", "tag every token of a corpus with a trained bundle")
    p.add_argument("corpus")
    p.add_argument("bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--fuse", action="store_true",
                   help="average classifier and aggregation posteriors on fired tokens (extension)")
    _add_context_flags(p)
    p.set_defaults(func=cmd_predict)

    p = new("eval", "score predictions against gold labels")
    p.add_argument("gold", help="corpus file or predictions file carrying gold labels")
    p.add_argument("pred", help="predictions file")
    p.add_argument("--out", help="write report JSON (and .txt) to this path")
    p.add_argument("--ignore-class", action="append", help="mask a class by name (repeatable)")
    p.set_defaults(func=cmd_eval)

    p = new("synth", "generate a synthetic corpus and tuned LF suite")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--config", help="flat key=value synth spec")
    for name, typ in (
        ("n-documents", int), ("n-classes", int), ("n-lfs", int), ("noise-rate", float),
        ("tokens-min", int), ("tokens-max", int),
    ):
        p.add_argument(f"--{name}", type=typ, default=None, dest=name.replace("-", "_"))
    _add_context_flags(p)
    p.set_defaults(func=cmd_synth)

    p = new("sweep", "train baseline and joint modes over an (L, U, seed) grid")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--labeled", required=True, help="comma list of labeled fractions")
    p.add_argument("--unlabeled", help="comma list of unlabeled fractions (default: remainder)")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma list of seeds")
    for name, typ in (
        ("n-documents", int), ("n-classes", int), ("n-lfs", int), ("noise-rate", float),
        ("tokens-min", int), ("tokens-max", int),
    ):
        p.add_argument(f"--{name}", type=typ, default=None, dest=name.replace("-", "_"))
    _add_train_flags(p)
    _add_context_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = new("run-all", "one-shot pipeline: lf-apply, split, train, predict, eval")
    p.add_argument("corpus")
    p.add_argument("suite")
    p.add_argument("--out-dir", required=True)
    _add_split_flags(p)
    _add_train_flags(p)
    _add_context_flags(p)
    p.set_defaults(func=cmd_run_all)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CorpusFormatError, SuiteFormatError, SynthesisError, ValueError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
