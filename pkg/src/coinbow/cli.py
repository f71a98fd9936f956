"""``coinbow`` command line: synth, extract, sweep, train, predict.

Exit status is 0 on success, 1 for runtime or data errors and 2 for usage
errors. With ``--json`` each command prints a single JSON line on stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

from .core import ValidationError, load_dataset, load_grayscale
from .dsift import DenseSiftParams, extract_dense_sift, save_dsift
from .experiment import ExperimentConfig, mean_over_features, sweep, write_means_csv, write_results_csv, write_svg
from .svm import SvmHyperParams
from .synth import generate_synthetic_dataset
from .tiling import TilingScheme

EXIT_OK, EXIT_ERROR, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not math.isfinite(v) or v < 0:
        raise argparse.ArgumentTypeError(f"expected a finite non-negative number, got {text}")
    return v


def _positive_float(text):
    v = _nonneg_float(text)
    if v == 0:
        raise argparse.ArgumentTypeError("expected a positive number")
    return v


def _int_list(text):
    return tuple(_positive_int(t) for t in text.split(",") if t.strip())


def _tiling(text):
    try:
        return TilingScheme.parse(text)
    except (ValidationError, ValueError, TypeError) as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _tiling_list(text):
    return tuple(_tiling(t) for t in text.split(",") if t.strip())


def _add_dsift_flags(p):
    p.add_argument("--step", type=_positive_int, default=8, help="grid spacing in pixels (default 8)")
    p.add_argument("--patch", type=_positive_int, default=16, help="patch side, a multiple of 4 (default 16)")
    p.add_argument("--max-side", type=_positive_int, default=256, help="shrink images so the longer side fits")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="coinbow", description="Spatially tiled bag-of-visual-words coin classification.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic coin dataset")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--per-class", type=_positive_int, default=20)
    p.add_argument("--rotation", type=_nonneg_float, default=0.0, help="max absolute rotation in radians")
    p.add_argument("--noise", type=_nonneg_float, default=0.1, help="noise level in [0, 1]")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("extract", help="cache dense SIFT descriptors as .dsift files")
    p.add_argument("--data", required=True, type=Path, help="dataset folder or manifest CSV")
    p.add_argument("--out", required=True, type=Path)
    _add_dsift_flags(p)

    p = sub.add_parser("sweep", help="run the vocabulary x feature-budget x tiling sweep")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="results CSV")
    p.add_argument("--config", type=Path, help="JSON experiment configuration")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--tilings", type=_tiling_list)
    p.add_argument("--vocab", type=_int_list, help="comma-separated vocabulary sizes")
    p.add_argument("--features", type=_int_list, help="comma-separated feature budgets")
    p.add_argument("--means", type=Path, help="also write the mean-over-budgets CSV")
    p.add_argument("--plot", type=Path, help="also write an SVG chart of the means")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")

    p = sub.add_parser("train", help="fit a model bundle on a whole dataset")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="output .bundle.json")
    p.add_argument("--vocab", type=_positive_int, default=50)
    p.add_argument("--features", type=_positive_int, default=1000)
    p.add_argument("--tiling", type=_tiling, default=TilingScheme.circular(3))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--C", type=_positive_float, help="fix C instead of cross-validating")
    p.add_argument("--gamma", type=_positive_float, help="fix gamma instead of cross-validating")
    p.add_argument("--folds", type=_positive_int, default=5)
    _add_dsift_flags(p)

    p = sub.add_parser("predict", help="classify images with a model bundle")
    p.add_argument("--model", required=True, type=Path)
    p.add_argument("images", nargs="+", type=Path)

    for action in sub.choices.values():
        action.add_argument("--json", action="store_true", help="print a one-line JSON summary")
    return parser


def _emit(args, summary: dict, text: str) -> None:
    print(json.dumps(summary, sort_keys=True) if args.json else text)


def _dsift_params(args) -> DenseSiftParams:
    return DenseSiftParams(step=args.step, patch=args.patch)


def cmd_synth(args) -> int:
    if args.noise > 1:
        raise ValidationError("--noise must lie in [0, 1]")
    m = generate_synthetic_dataset(args.out, args.per_class, args.rotation, args.noise, args.seed)
    counts = m.counts()
    _emit(
        args,
        {"command": "synth", "out": str(args.out), "images": len(m), "counts": counts},
        f"wrote {len(m)} images to {args.out}: " + ", ".join(f"{k}={v}" for k, v in counts.items()),
    )
    return EXIT_OK


def cmd_extract(args) -> int:
    params = _dsift_params(args)
    manifest = load_dataset(args.data)
    root = args.data if args.data.is_dir() else args.data.parent
    written, errors = 0, []
    for path in manifest.paths:
        try:
            rel = Path(os.path.relpath(path, root))
            if rel.parts and rel.parts[0] == "..":
                rel = Path(Path(path).name)
            img = load_grayscale(path, args.max_side)
            save_dsift(extract_dense_sift(img, params), args.out / rel.with_suffix(".dsift"))
            written += 1
        except (OSError, ValidationError) as exc:
            errors.append({"path": path, "error": str(exc)})
            print(f"error: {path}: {exc}", file=sys.stderr)
    _emit(
        args,
        {"command": "extract", "out": str(args.out), "written": written, "errors": errors},
        f"wrote {written} descriptor files to {args.out}" + (f"; {len(errors)} failed" if errors else ""),
    )
    return EXIT_ERROR if errors else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.tilings:
        overrides["tilings"] = args.tilings
    if args.vocab:
        overrides["vocab_sizes"] = args.vocab
    if args.features:
        overrides["feature_budgets"] = args.features
    if args.no_timing:
        overrides["record_timing"] = False
    cfg = replace(cfg, **overrides)
    manifest = load_dataset(args.data)
    table = sweep(manifest, cfg)
    write_results_csv(table, args.out)
    means = mean_over_features(table)
    if args.means:
        write_means_csv(means, args.means)
    if args.plot:
        write_svg(means, args.plot)
    lines = [f"wrote {len(table)} rows to {args.out}"]
    lines += [f"  {t:12s} M={v:<4d} mean accuracy {a:.3f}" for t, v, a in means]
    _emit(
        args,
        {
            "command": "sweep",
            "out": str(args.out),
            "rows": len(table),
            "means": [{"tiling": t, "vocab_size": v, "mean_accuracy": a} for t, v, a in means],
        },
        "\n".join(lines),
    )
    return EXIT_OK


def cmd_train(args) -> int:
    from .bundle import save_bundle, train_bundle

    if (args.C is None) != (args.gamma is None):
        raise ValidationError("give both --C and --gamma, or neither")
    hp = SvmHyperParams(args.C, args.gamma) if args.C is not None else None
    manifest = load_dataset(args.data)
    bundle = train_bundle(
        manifest,
        args.vocab,
        args.features,
        args.tiling,
        dsift=_dsift_params(args),
        max_side=args.max_side,
        master_seed=args.seed,
        hyperparams=hp,
        n_folds=args.folds,
    )
    save_bundle(bundle, args.out)
    chosen = bundle.svm.hyperparams
    _emit(
        args,
        {
            "command": "train",
            "out": str(args.out),
            "images": len(manifest),
            "labels": list(bundle.svm.labels),
            "C": chosen.C,
            "gamma": chosen.gamma,
        },
        f"trained on {len(manifest)} images (C={chosen.C:g}, gamma={chosen.gamma:g}); saved {args.out}",
    )
    return EXIT_OK


def cmd_predict(args) -> int:
    from .bundle import load_bundle

    bundle = load_bundle(args.model)
    results = []
    for path in args.images:
        label, values = bundle.predict_path(path)
        results.append({"path": str(path), "label": label, "decision_values": values})
    if args.json:
        doc = {"command": "predict", "results": results}
        if len(results) == 1:
            doc.update(results[0])
        print(json.dumps(doc, sort_keys=True))
    else:
        for r in results:
            scores = " ".join(f"{k}={v:+.4f}" for k, v in r["decision_values"].items())
            print(f"{r['path']}\t{r['label']}\t{scores}")
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "extract": cmd_extract,
    "sweep": cmd_sweep,
    "train": cmd_train,
    "predict": cmd_predict,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ValidationError, OSError) as exc:
        if args.json:
            print(json.dumps({"command": args.command, "error": str(exc)}))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
