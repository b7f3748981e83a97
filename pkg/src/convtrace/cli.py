"""Batch front-end: dataset generation, attacks, extraction, training,
evaluation and report rendering.

Exit codes: 0 success, 1 usage or configuration problem, 2 partial data
failure (some images could not be processed), 3 internal error.  The
CONVTRACE_LOG environment variable (debug/info/warning/error) selects log
verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import multiprocessing
import os
import sys
from pathlib import Path

import numpy as np

from . import attacks, classify, reports, synth
from .em import EmConfig, extract_ct, trace_length
from .errors import ConvTraceError, ParseError, ValidationError
from .features import FAILED_MARKER, FeatureRow, read_features_csv, write_features_csv
from .imageio import load_image, read_manifest

log = logging.getLogger("convtrace")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2
EXIT_INTERNAL = 3


def _load_synth_specs(path) -> list[synth.SynthSpec]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list) or not doc:
        raise ParseError(f"{path}: expected a spec object or non-empty list of them")
    specs = []
    for i, item in enumerate(doc):
        try:
            specs.append(synth.SynthSpec(
                seed=int(item["seed"]), width=int(item["width"]), height=int(item["height"]),
                kind=str(item["kind"]), count=int(item["count"]),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{path}: spec #{i} malformed ({exc})") from None
    return specs


def cmd_synth(args) -> int:
    specs = _load_synth_specs(args.spec)
    manifest = synth.gen_dataset(specs, args.out)
    print(Path(args.out) / "manifest.csv")
    log.info("wrote %d images to %s", len(manifest), args.out)
    return EXIT_OK


def _extract_one(task):
    """Worker: one manifest entry -> FeatureRow (expected failures caught)."""
    path, label, source, alpha = task
    try:
        trace = extract_ct(load_image(path), EmConfig(alpha=alpha))
        return FeatureRow(path, label, source, alpha,
                          "".join(trace.degenerate_channels), trace.features)
    except (OSError, ConvTraceError) as exc:
        log.warning("extraction failed for %s: %s", path, exc)
        return FeatureRow(path, label, source, alpha, FAILED_MARKER, None)


def cmd_extract(args) -> int:
    manifest = read_manifest(args.manifest)
    tasks = [(e.path, e.label, e.source, args.alpha) for e in manifest]
    if args.jobs > 1 and len(tasks) > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            rows = list(pool.imap(_extract_one, tasks, chunksize=1))
    else:
        rows = [_extract_one(t) for t in tasks]
    write_features_csv(rows, args.alpha, args.out)
    failures = [r.path for r in rows if r.failed]
    print(f"{args.out}: {len(rows)} rows, {len(failures)} failed")
    for path in failures:
        print(f"  failed: {path}")
    return EXIT_PARTIAL if failures else EXIT_OK


def cmd_attack(args) -> int:
    spec = attacks.parse_attack_token(args.attack, seed=args.seed)
    manifest = read_manifest(args.manifest)
    derived = attacks.apply_attack_corpus(manifest, spec, args.out)
    print(Path(args.out) / "manifest.csv")
    log.info("attacked %d images with %s", len(derived), spec.token())
    return EXIT_OK


def _classifier_from_token(token: str):
    if token.startswith("knn:"):
        try:
            return "knn", {"k": int(token.split(":", 1)[1])}
        except ValueError:
            raise ValidationError(f"malformed classifier token {token!r}") from None
    mapping = {"lda": "lda", "svm": "svm_linear", "rf": "random_forest"}
    if token in mapping:
        return mapping[token], {}
    raise ValidationError(f"unknown classifier token {token!r}")


def _records_from_rows(rows) -> list[classify.FeatureRecord]:
    records = []
    for i, row in enumerate(rows):
        if row.failed:
            continue
        records.append(classify.FeatureRecord(
            features=row.features, label=row.label, source=row.source, index=i,
        ))
    return records


def cmd_train(args) -> int:
    rows = read_features_csv(args.features)
    records = _records_from_rows(rows)
    if not records:
        raise ValidationError(f"{args.features}: no usable feature rows")
    kind, hyper = _classifier_from_token(args.classifier)
    model = classify.train(kind, records, hyper=hyper, seed=args.seed)
    classify.save_model(model, args.out)
    print(args.out)
    return EXIT_OK


def _accuracy(kind, hyper, records, mode, seed) -> float:
    if mode == "cv5":
        return classify.kfold_cv(kind, records, folds=5, seed=seed, hyper=hyper).mean_accuracy
    train_part, test_part = classify.stratified_split(records, 0.7, seed=seed)
    model = classify.train(kind, train_part, hyper=hyper, seed=seed)
    return classify.evaluate(model, test_part).accuracy


def cmd_eval(args) -> int:
    by_alpha: dict[int, list[classify.FeatureRecord]] = {}
    for csv_path in args.features:
        rows = read_features_csv(csv_path)
        if not rows:
            raise ValidationError(f"{csv_path}: empty feature file")
        alphas = {r.alpha for r in rows}
        if len(alphas) != 1:
            raise ValidationError(f"{csv_path}: mixed alpha values {sorted(alphas)}")
        alpha = alphas.pop()
        if alpha in by_alpha:
            raise ValidationError(f"duplicate feature files for alpha={alpha}")
        records = _records_from_rows(rows)
        dims = {len(r.features) for r in records}
        if dims and dims != {trace_length(alpha)}:
            raise ValidationError(f"{csv_path}: feature dimension mismatch for alpha={alpha}")
        by_alpha[alpha] = records
    classifiers = args.classifiers.split(",")
    for token in classifiers:
        _classifier_from_token(token)  # validate early
    kernels = [reports.kernel_label(a) for a in sorted(by_alpha)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def run_task(name: str, subsets: dict[int, list]):
        grid = {}
        for alpha in sorted(subsets):
            for token in classifiers:
                kind, hyper = _classifier_from_token(token)
                acc = _accuracy(kind, hyper, subsets[alpha], args.mode, args.seed)
                grid[(token, reports.kernel_label(alpha))] = acc
        base = out_dir / f"eval_{name}_{args.mode}"
        reports.write_grid_csv(grid, classifiers, kernels, f"{base}.csv")
        names, kls, cells = reports.read_grid_csv(f"{base}.csv")
        text = reports.render_grid_text(f"{name} ({args.mode})", names, kls, cells)
        Path(f"{base}.txt").write_text(text, encoding="utf-8")
        print(text)

    if args.task == "pooled":
        run_task("pooled", by_alpha)
    else:
        sources = sorted({r.source for recs in by_alpha.values() for r in recs if r.label != 0})
        if not sources:
            raise ValidationError("pairwise mode needs at least one non-real source")
        for src in sources:
            subsets = {
                a: [r for r in recs if r.label == 0 or r.source == src]
                for a, recs in by_alpha.items()
            }
            run_task(f"pairwise_{src}", subsets)
    return EXIT_OK


def cmd_report(args) -> int:
    chunks = []
    for path in args.inputs:
        names, kernels, rows = reports.read_grid_csv(path)
        chunks.append(reports.render_grid_text(Path(path).stem, names, kernels, rows))
    text = "\n".join(chunks)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="convtrace",
        description="Convolutional-trace extraction and classification pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus from a JSON spec")
    p.add_argument("--spec", required=True, help="JSON spec file (object or list)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract trace features for a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--alpha", type=int, default=1, choices=(1, 2, 3))
    p.add_argument("--out", required=True, help="output feature CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("attack", help="apply one perturbation to a whole corpus")
    p.add_argument("--manifest", required=True)
    p.add_argument("--attack", required=True,
                   help="random-square | blur:3|9|15 | rotate:45|90|180 | scale:+50|-50 | jpeg:50")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("train", help="train one classifier on a feature CSV")
    p.add_argument("--features", required=True)
    p.add_argument("--classifier", required=True, help="knn:K | lda | svm | rf")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output model file (JSON)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy grid over classifiers and kernel sizes")
    p.add_argument("--features", required=True, nargs="+",
                   help="one feature CSV per kernel size")
    p.add_argument("--classifiers", default=",".join(reports.CLASSIFIER_TOKENS))
    p.add_argument("--mode", choices=("split70", "cv5"), default="cv5")
    p.add_argument("--task", choices=("pooled", "pairwise"), default="pooled")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render accuracy grid CSVs as text tables")
    p.add_argument("--inputs", required=True, nargs="+")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def _configure_logging() -> None:
    level = os.environ.get("CONVTRACE_LOG", "warning").lower()
    levels = {"debug": logging.DEBUG, "info": logging.INFO,
              "warning": logging.WARNING, "error": logging.ERROR}
    logging.basicConfig(level=levels.get(level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (ConvTraceError, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # pragma: no cover - safety net
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
