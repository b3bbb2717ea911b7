"""``busmorph`` command line: synth, extract, train, eval.

Exit status: 0 success, 1 usage error, 2 data error, 3 internal error.
Fatal errors print a single ``busmorph: error: <Code>: <message>`` line on
stderr.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__
from .classifier import (
    TrainConfig,
    dumps_model,
    load_model,
    predict,
    read_feature_csv,
    train,
)
from .dataset import CLASS_NAMES, image_size, merge_masks, scan_dataset, split_labelled
from .errors import BusmorphError, UsageError
from .imgproc import DEFAULT_SIZE, DEFAULT_THRESHOLD, resize_nearest
from .metrics import confuse, confusion_image, report
from .morphometry import CSV_HEADER, DEFAULT_K, DEFAULT_SMOOTH_THRESHOLD, analyze, csv_row, curvature_overlay
from .synthkit import synth_corpus

log = logging.getLogger("busmorph")

DATASET_ENV = "BUSMORPH_DATASET"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(output: Path, args, started: float, extra: dict) -> Path:
    opts = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items() if k != "func"}
    manifest = {
        "command": args.command,
        "options": opts,
        "tool": "busmorph",
        "version": __version__,
        "wall_time_s": round(time.time() - started, 3),
        **extra,
    }
    path = Path(f"{output}.manifest.json")
    _atomic_write(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def _png_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    started = time.time()
    out = Path(args.out)
    try:
        _, labels = synth_corpus(out, args.per_class, args.seed)
    except OSError as exc:
        raise BusmorphError(f"IoError: {exc}") from exc
    print(f"wrote {len(labels)} samples to {out}")
    _write_manifest(out, args, started, {"seeds": {"corpus": args.seed}, "samples": len(labels)})
    return 0


# ---------------------------------------------------------------------------
# extract


def _extract_one(job):
    record, opts = job
    dims = image_size(record.image_path)
    mask = merge_masks(record.mask_paths, dims, opts["threshold"])
    if not opts["raw_resolution"]:
        mask = resize_nearest(mask, opts["size"], opts["size"])
    result = analyze(
        mask,
        k=opts["k"],
        smooth_threshold=opts["smooth_threshold"],
        connectivity=opts["connectivity"],
        roundness_diameter=opts["roundness_diameter"],
    )
    extras = None
    if opts["diagnostics"]:
        diag = result.diagnostics()
        diag["id"] = record.id
        png = _png_bytes(curvature_overlay(result)) if result.mask is not None else None
        extras = (json.dumps(diag, indent=1, sort_keys=True), png)
    return result.features, bool(record.mask_paths), extras


def cmd_extract(args) -> int:
    started = time.time()
    root = args.dataset_root or os.environ.get(DATASET_ENV)
    if not root:
        raise UsageError(f"no dataset root given and ${DATASET_ENV} is unset")
    index = scan_dataset(root)
    if not index.samples:
        raise BusmorphError(f"EmptyDataset: no samples under {root}")
    opts = {
        "size": args.size,
        "k": args.k,
        "smooth_threshold": args.smooth_threshold,
        "connectivity": args.connectivity,
        "threshold": args.threshold,
        "raw_resolution": args.raw_resolution,
        "roundness_diameter": args.roundness_diameter,
        "diagnostics": args.diagnostics_dir is not None,
    }
    jobs = [(rec, opts) for rec in index.samples]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_extract_one, jobs, chunksize=4))
    else:
        results = [_extract_one(j) for j in jobs]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    n_degenerate = 0
    for rec, (fv, has_mask, extras) in zip(index.samples, results):
        if not has_mask:
            log.warning("sample %s has no mask file; emitted as degenerate", rec.id)
        elif fv.degenerate:
            log.warning("sample %s is degenerate; features zeroed", rec.id)
        n_degenerate += fv.degenerate
        writer.writerow(csv_row(rec.id, rec.class_label.dirname, fv))
        if extras is not None:
            ddir = Path(args.diagnostics_dir)
            _atomic_write(ddir / f"{rec.id}.json", extras[0].encode())
            if extras[1] is not None:
                _atomic_write(ddir / f"{rec.id}.png", extras[1])
    out = Path(args.out)
    _atomic_write(out, buf.getvalue().encode())
    if args.index_json:
        _atomic_write(Path(args.index_json), (json.dumps(index.to_json(), indent=2) + "\n").encode())
    print(f"extracted {len(index.samples)} samples ({n_degenerate} degenerate) -> {out}")
    _write_manifest(
        out,
        args,
        started,
        {
            "dataset_root": str(root),
            "counts_per_class": {c.dirname: n for c, n in index.counts_per_class.items()},
            "scan_warnings": len(index.warnings),
            "degenerate": int(n_degenerate),
            "output_sha256": _sha256(out),
        },
    )
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    started = time.time()
    table = read_feature_csv(args.features)
    cfg = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.learning_rate,
        optimizer=args.optimizer,
        seed=args.seed,
    )
    split = split_labelled(table.ids, table.labels.tolist(), args.seed, args.fraction)
    model, rep = train(table, split, cfg)
    model.meta = {
        "features_sha256": _sha256(args.features),
        "split": {"seed": split.seed, "fraction": args.fraction, "train": split.train_ids, "validation": split.validation_ids},
        "config": vars(cfg),
        "excluded_degenerate": rep.excluded_degenerate,
        "final": {k: (None if v != v else v) for k, v in vars(rep.final).items()},
    }
    model_path = Path(args.model)
    _atomic_write(model_path, dumps_model(model).encode())
    lines = ["epoch,i,train_loss,train_acc,val_loss,val_acc"] + [e.log_line() for e in rep.epochs]
    log_path = Path(args.log) if args.log else Path(f"{model_path}.log.csv")
    _atomic_write(log_path, ("\n".join(lines) + "\n").encode())
    for line in lines[1:]:
        print(line)
    counts = model.parameter_count()
    print(
        f"trained on {rep.n_train} rows, validated on {rep.n_validation}, "
        f"{rep.excluded_degenerate} degenerate rows excluded; parameters {counts['total']}"
    )
    f = rep.final
    print(f"accuracy: {f.train_acc:.4f}, val_accuracy: {f.val_acc:.4f}, loss: {f.train_loss:.4f}")
    _write_manifest(
        model_path,
        args,
        started,
        {
            "seeds": {"split": split.seed, "train": cfg.seed},
            "model_sha256": _sha256(model_path),
            "accuracy": f.train_acc,
            "val_accuracy": None if f.val_acc != f.val_acc else f.val_acc,
            "loss": f.train_loss,
        },
    )
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    started = time.time()
    model = load_model(args.model)
    table = read_feature_csv(args.features)
    if args.subset != "all":
        split = model.meta.get("split")
        if not split:
            raise BusmorphError("SchemaMismatch: model carries no split for --subset")
        wanted = set(split["train" if args.subset == "train" else "validation"])
        keep = np.array([i in wanted for i in table.ids], dtype=bool)
        if not keep.any():
            raise BusmorphError("EmptyInput: no rows of the requested subset in the CSV")
        table.ids = [i for i, k in zip(table.ids, keep) if k]
        table.labels, table.x, table.degenerate = table.labels[keep], table.x[keep], table.degenerate[keep]
    pred = predict(model, table.x, table.degenerate)
    cm = confuse([CLASS_NAMES[i] for i in table.labels], [CLASS_NAMES[i] for i in pred])
    rep = report(cm)
    print(rep.to_text())
    print(f"rows scored {len(table)}, degenerate rows (predicted normal) {int(table.degenerate.sum())}")
    report_path = Path(args.report) if args.report else Path(f"{args.model}.report.json")
    _atomic_write(report_path, (rep.to_json() + "\n").encode())
    grid = Path(args.confusion_png) if args.confusion_png else report_path.with_suffix(".confusion.png")
    _atomic_write(grid, _png_bytes(confusion_image(cm)))
    _write_manifest(
        report_path,
        args,
        started,
        {
            "model_sha256": _sha256(args.model),
            "features_sha256": _sha256(args.features),
            "accuracy": rep.accuracy,
            "macro_f1": rep.macro_f1,
            "rows": len(table),
        },
    )
    return 0


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="busmorph", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"busmorph {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--config", help="key=value file applied after the command-line flags")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="write a synthetic BUSI-shaped corpus")
    s.add_argument("--per-class", type=int, default=30)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    e = sub.add_parser("extract", help="compute contour features for every sample")
    e.add_argument("dataset_root", nargs="?", help=f"dataset directory (default: ${DATASET_ENV})")
    e.add_argument("--out", required=True, help="feature CSV path")
    e.add_argument("--size", type=int, default=DEFAULT_SIZE, help="working mask size in pixels")
    e.add_argument("--raw-resolution", action="store_true", help="skip resizing")
    e.add_argument("--k", type=int, default=DEFAULT_K)
    e.add_argument("--smooth-threshold", type=float, default=DEFAULT_SMOOTH_THRESHOLD)
    e.add_argument("--connectivity", type=int, choices=(4, 8), default=8)
    e.add_argument("--threshold", type=int, default=DEFAULT_THRESHOLD)
    e.add_argument("--roundness-diameter", choices=("ellipse", "hull"), default="ellipse")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--diagnostics-dir")
    e.add_argument("--index-json")
    e.set_defaults(func=cmd_extract)

    t = sub.add_parser("train", help="train the classification head")
    t.add_argument("features")
    t.add_argument("--model", required=True)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--fraction", type=float, default=0.8)
    t.add_argument("--epochs", type=int, default=5)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--learning-rate", type=float, default=0.001)
    t.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    t.add_argument("--log", help="per-epoch CSV log (default: <model>.log.csv)")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("eval", help="score a model on a feature CSV")
    v.add_argument("model")
    v.add_argument("features")
    v.add_argument("--subset", choices=("all", "train", "validation"), default="all")
    v.add_argument("--report", help="JSON report path (default: <model>.report.json)")
    v.add_argument("--confusion-png")
    v.set_defaults(func=cmd_eval)
    return p


def _apply_config(parser, args) -> None:
    sub = parser._subparsers._group_actions[0].choices[args.command]
    actions = {a.dest: a for a in sub._actions}
    for lineno, raw in enumerate(Path(args.config).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{args.config}:{lineno}: expected key=value")
        key, val = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions or dest == "help":
            raise UsageError(f"{args.config}:{lineno}: unknown option {key!r} for {args.command}")
        act = actions[dest]
        if isinstance(act, argparse._StoreTrueAction):
            value = val.lower() in ("1", "true", "yes", "on")
        else:
            value = act.type(val) if act.type else val
            if act.choices is not None and value not in act.choices:
                raise UsageError(f"{args.config}:{lineno}: {key} must be one of {list(act.choices)}")
        setattr(args, dest, value)


def _validate(args) -> None:
    if args.command == "train":
        if args.epochs < 1:
            raise UsageError("--epochs must be >= 1")
        if args.batch_size < 1:
            raise UsageError("--batch-size must be >= 1")
        if not args.learning_rate > 0:
            raise UsageError("--learning-rate must be > 0")
        if not 0 < args.fraction < 1:
            raise UsageError("--fraction must lie in (0, 1)")
    elif args.command == "extract":
        if args.size < 1 or args.k < 1 or args.jobs < 1:
            raise UsageError("--size, --k and --jobs must be positive")
    elif args.command == "synth" and args.per_class < 2:
        raise UsageError("--per-class must be >= 2")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            _apply_config(parser, args)
        _validate(args)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        return args.func(args)
    except BusmorphError as exc:
        msg = str(exc)
        code = exc.code
        if code == "BusmorphError" and ": " in msg:
            code, msg = msg.split(": ", 1)
        print(f"busmorph: error: {code}: {msg}", file=sys.stderr)
        return exc.exit_code
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - last-resort reporting
        print(f"busmorph: error: Internal: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
