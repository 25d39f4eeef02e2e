"""``pcvit`` command line: preprocess, train, evaluate, predict, import-weights.

Exit codes: 0 success, 2 user or configuration error, 3 environment / I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np
from threadpoolctl import threadpool_limits

from pcvit import checkpoint
from pcvit._backend import BACKEND, env_threads
from pcvit.config import KNOWN_KEYS, load_run_config
from pcvit.dataset import (
    CLASS_NAMES,
    MANIFEST_NAME,
    SplitSpec,
    class_dirs_from_root,
    list_images,
    load_dataset,
    split,
    write_manifest,
)
from pcvit.errors import ContainerError, ContractError, DimensionError, FormatError
from pcvit.metrics import full_report
from pcvit.pretrained import convert, default_name_map, read_source
from pcvit.pseudocolor import IMAGE_SIZE, preprocess
from pcvit.tensor import no_grad
from pcvit.trainer import predict_proba, train
from pcvit.vit import forward, init_params, load_params, save_params

logger = logging.getLogger("pcvit")

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 2, 3


class UsageError(Exception):
    pass


def _parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"--set expects KEY=VALUE, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# -- preprocess -----------------------------------------------------------------


def cmd_preprocess(args) -> int:
    dirs = class_dirs_from_root(args.input_dir)
    files = [(p, label) for label, d in enumerate(dirs) for p in list_images(d)]
    if not files:
        raise UsageError(f"{args.input_dir}: no PNG/JPEG images found")
    os.makedirs(args.output_dir, exist_ok=True)
    rows, failures = [], 0
    for path, label in files:
        try:
            img = preprocess(path, args.size)
        except (FormatError, OSError) as exc:
            failures += 1
            logger.warning("skipping %s: %s", path, exc)
            continue
        rel = os.path.join(str(label), os.path.basename(path) + ".pcvt")
        os.makedirs(os.path.join(args.output_dir, str(label)), exist_ok=True)
        checkpoint.save(os.path.join(args.output_dir, rel), {"image": img}, {"source": os.path.basename(path)})
        rows.append((rel, label))
    if not rows:
        raise UsageError("no image could be decoded")
    write_manifest(os.path.join(args.output_dir, MANIFEST_NAME), rows)
    logger.info("preprocessed %d images (%d skipped) into %s", len(rows), failures, args.output_dir)
    return EXIT_OK


# -- train / evaluate --------------------------------------------------------------


def _split_metadata(spec: SplitSpec) -> dict[str, str]:
    return {
        "split_seed": str(spec.seed),
        "train_fraction": repr(spec.train_fraction),
        "split_shuffle": str(spec.shuffle),
        "split_stratified": str(spec.stratified),
    }


def _split_from_metadata(meta: dict[str, str]) -> SplitSpec:
    try:
        return SplitSpec(
            train_fraction=float(meta["train_fraction"]),
            seed=int(meta["split_seed"]),
            shuffle=meta.get("split_shuffle", "True") == "True",
            stratified=meta.get("split_stratified", "False") == "True",
        )
    except KeyError:
        raise UsageError("checkpoint carries no split information; use --split all") from None


def _write_report(report, report_path, roc_path, confusion_path) -> None:
    report.to_json(report_path)
    report.write_roc_csv(roc_path)
    if confusion_path:
        report.write_confusion_csv(confusion_path, list(CLASS_NAMES))


def cmd_train(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    run = load_run_config(args.config, overrides)
    if args.print_config:
        print("\n".join(run.as_lines()))
        return EXIT_OK
    if not args.data_dir or not args.out:
        raise UsageError("train requires --data-dir and --out")

    os.makedirs(args.out, exist_ok=True)
    ckpt = os.path.join(args.out, "best_model.pcvt")
    tcfg = dataclasses.replace(run.training, checkpoint_path=ckpt)
    ds = load_dataset(args.data_dir, run.model.image_size)
    train_set, test_set = split(ds, run.split)
    logger.info("split: %d train / %d test (backend: %s)", len(train_set), len(test_set), BACKEND)
    params = init_params(run.model, run.seed)
    result = train(
        params, train_set, test_set, tcfg,
        history_path=os.path.join(args.out, "history.csv"),
        checkpoint_metadata=_split_metadata(run.split),
    )
    report = full_report(predict_proba(result.params, test_set, tcfg.batch_size), test_set.labels)
    _write_report(
        report,
        os.path.join(args.out, "report.json"),
        os.path.join(args.out, "roc.csv"),
        os.path.join(args.out, "confusion.csv"),
    )
    print(f"best epoch {result.best_epoch}: test accuracy {report.accuracy:.4f}, macro AUC {report.macro_auc}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    params = load_params(args.model)
    config = params.config
    ds = load_dataset(args.data_dir, config.image_size)
    if args.split != "all":
        _, meta = checkpoint.load(args.model)
        train_set, test_set = split(ds, _split_from_metadata(meta))
        ds = test_set if args.split == "test" else train_set
    report = full_report(predict_proba(params, ds, args.batch_size), ds.labels)
    _write_report(report, args.report, args.roc_csv, args.confusion_csv)
    print(f"accuracy {report.accuracy:.4f}, macro precision {report.macro_precision:.4f}, "
          f"macro recall {report.macro_recall:.4f}, macro AUC {report.macro_auc}")
    return EXIT_OK


# -- predict / import ---------------------------------------------------------------


def cmd_predict(args) -> int:
    params = load_params(args.model)
    img = preprocess(args.image, params.config.image_size)
    with no_grad():
        probs = forward(img[None], params).data[0].astype(np.float64)
    label = int(np.argmax(probs))
    print(f"label: {label}")
    print(f"class: {CLASS_NAMES[label] if label < len(CLASS_NAMES) else label}")
    print("probabilities: " + " ".join(f"{p:.6f}" for p in probs))
    return EXIT_OK


def cmd_import_weights(args) -> int:
    overrides = _parse_overrides(args.set)
    run = load_run_config(args.config, overrides)
    name_map = default_name_map()
    if args.name_map:
        with open(args.name_map) as fh:
            name_map = json.load(fh)
    source = read_source(args.source)
    params = convert(source, run.model, name_map, replace_head=args.replace_head, seed=run.seed)
    save_params(args.out, params, {"imported_from": os.path.basename(args.source)})
    print(f"imported {len(params)} tensors ({params.num_parameters()} values) into {args.out}")
    return EXIT_OK


# -- entry point ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcvit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="pseudo-color a 4-class image tree into cached tensors")
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--size", type=int, default=IMAGE_SIZE)
    p.set_defaults(func=cmd_preprocess)

    config_help = f"override a config key; known keys: {', '.join(sorted(KNOWN_KEYS))}"
    p = sub.add_parser("train", help="split, train with early stopping, report on the test split")
    p.add_argument("--data-dir", help="raw 4-class image tree or a preprocess output directory")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory for checkpoint, history and report")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help=config_help)
    p.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics report for a checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--roc-csv", required=True)
    p.add_argument("--confusion-csv")
    p.add_argument("--split", choices=("all", "test", "train"), default="all",
                   help="evaluate on the whole dataset or re-create the training split")
    p.add_argument("--batch-size", type=int, default=32)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("predict", help="classify one image")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("import-weights", help="convert a pretrained ViT checkpoint")
    p.add_argument("--source", required=True, help=".safetensors or .pcvt with original tensor names")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value config file describing the target model")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help=config_help)
    p.add_argument("--name-map", help="JSON name map (defaults to the packaged ViT-Base map)")
    p.add_argument("--replace-head", action="store_true",
                   help="initialise a fresh classification head when the source head does not fit")
    p.set_defaults(func=cmd_import_weights)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        with threadpool_limits(limits=env_threads()):
            return args.func(args)
    except (UsageError, ContractError, DimensionError, FormatError, ContainerError) as exc:
        print(f"pcvit {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"pcvit {args.command}: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
