"""Command-line entry point: preprocess, train, eval, predict, visualize,
ablate.

Exit codes: 0 success, 1 usage error, 2 data error, 3 training failure.
Every command that writes files drops a resolved_config.json snapshot next
to its outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from . import evaluate as eval_mod
from . import train as train_mod
from .data import (
    DataError,
    DatasetBundle,
    REST14_DEV_COUNTS,
    RESTLARGE_DEV_COUNTS,
    attach_parses,
    build_graph,
    build_hard_test,
    dataset_stats,
    default_category_map,
    load_semeval,
    load_semeval_opinions,
    read_category_map,
    read_examples,
    split_train_dev,
    stats_table,
    write_examples,
)
from .model import CheckpointError, load_checkpoint, save_checkpoint
from .train import TrainConfig, TrainingDivergedError, multi_run, train_one_run, write_history
from .treebank import MalformedTreeError, collapse_preterminals, graph_validate, parse_bracketed

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_TRAIN = 3


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage problems; the contract here is 1
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _write_json(path, payload):
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=2) + "\n",
                          encoding="utf-8")


def _snapshot_config(out_dir: Path, command: str, payload: dict):
    _write_json(out_dir / "resolved_config.json", {"command": command, **payload})


def _load_train_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as err:
            raise DataError(f"cannot read config {args.config}: {err}") from err
    overrides = {
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
        "embed_dim": args.embed_dim,
        "num_heads": args.num_heads,
        "acd_weight": args.acd_weight,
        "interactive_weight": args.interactive_weight,
        "acsa_weight": args.acsa_weight,
        "l2_coeff": args.l2_coeff,
        "patience": args.patience,
        "runs": args.runs,
        "max_epochs": args.max_epochs,
        "seed": args.seed,
        "variant": args.variant,
        "dataset": args.dataset,
        "keep_preterminals": args.keep_preterminals or None,
        "min_count": args.min_count,
        "glove_path": args.glove,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.keep_preterminals:
        values["keep_preterminals"] = True
    return TrainConfig.from_dict(values)


def _add_train_flags(parser):
    parser.add_argument("--config", help="JSON file of TrainConfig keys; flags override it")
    parser.add_argument("--dataset", default=None)
    parser.add_argument("--variant", choices=("full", "no_iloss", "no_tree"), default=None)
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--runs", type=int, default=None)
    parser.add_argument("--learning-rate", type=float, default=None)
    parser.add_argument("--batch-size", type=int, default=None)
    parser.add_argument("--embed-dim", type=int, default=None)
    parser.add_argument("--num-heads", type=int, default=None)
    parser.add_argument("--acd-weight", type=float, default=None)
    parser.add_argument("--interactive-weight", type=float, default=None)
    parser.add_argument("--acsa-weight", type=float, default=None)
    parser.add_argument("--l2-coeff", type=float, default=None)
    parser.add_argument("--patience", type=int, default=None)
    parser.add_argument("--max-epochs", type=int, default=None)
    parser.add_argument("--min-count", type=int, default=None)
    parser.add_argument("--glove", default=None, help="path to 300-d text vectors")
    parser.add_argument("--keep-preterminals", action="store_true",
                        help="keep single-word preterminals as internal graph nodes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aspectgraph",
                     description="Aspect-category sentiment analysis over constituency parse trees")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("preprocess", help="clean raw markup, split, attach parses")
    p.add_argument("--dataset", required=True, choices=("rest14", "mams", "restlarge"))
    p.add_argument("--train-xml", action="append", required=True,
                   help="raw training markup (repeatable for restlarge)")
    p.add_argument("--test-xml", action="append", required=True)
    p.add_argument("--dev-xml", help="official dev markup (mams)")
    p.add_argument("--category-map", help="key=value renaming for opinion-style markup")
    p.add_argument("--trees-train", help="bracketed trees, one per cleaned train sentence")
    p.add_argument("--trees-dev")
    p.add_argument("--trees-test")
    p.add_argument("--dev-seed", type=int, default=1)
    p.add_argument("--keep-preterminals", action="store_true")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train one model or a multi-run average")
    _add_train_flags(p)
    p.add_argument("--data-dir", required=True, help="directory of preprocessed JSONL splits")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("eval", help="accuracy of a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data-jsonl", required=True, help="one preprocessed JSONL split")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--joint", action="store_true",
                   help="demo mode: require detection at 0.5 before scoring sentiment")
    p.add_argument("--out-dir")

    p = sub.add_parser("predict", help="categories and polarities for one sentence")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--parse", required=True, help="bracketed constituency tree of the sentence")
    p.add_argument("--text")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--keep-preterminals", action="store_true")
    p.add_argument("--out", help="write the prediction JSON here instead of stdout only")

    p = sub.add_parser("visualize", help="attention dump (JSON + optional heatmap)")
    p.add_argument("--checkpoint", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--parse", help="bracketed tree of an ad-hoc sentence")
    group.add_argument("--id", help="example id inside --data-jsonl")
    p.add_argument("--data-jsonl")
    p.add_argument("--heatmap", action="store_true")
    p.add_argument("--keep-preterminals", action="store_true")
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("ablate", help="train full/no_iloss/no_tree and tabulate")
    _add_train_flags(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    return parser


# ------------------------------------------------------------- preprocess

def _load_raw(path, category_map) -> list:
    """Schema sniffing: 2014-style aspectCategories vs opinion-style markup."""
    import xml.etree.ElementTree as ET

    try:
        root = ET.parse(str(path)).getroot()
    except ET.ParseError as err:
        line, col = err.position
        raise data_mod.SchemaError(f"{path}: malformed markup at line {line}, column {col}") from err
    if root.find(".//aspectCategory") is not None:
        return load_semeval(path)
    if root.find(".//Opinion") is not None:
        return load_semeval_opinions(path, category_map)
    raise data_mod.SchemaError(f"{path}: neither aspectCategory nor Opinion elements found")


def _prefix_ids(examples, prefix):
    return [dataclasses.replace(e, id=f"{prefix}:{e.id}") for e in examples]


def cmd_preprocess(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    category_map = (read_category_map(args.category_map) if args.category_map
                    else default_category_map())

    if args.dataset == "mams":
        if not args.dev_xml:
            raise DataError("mams ships an official dev split; pass --dev-xml")
        train = load_semeval(args.train_xml[0], schema="mams")
        dev = load_semeval(args.dev_xml, schema="mams")
        test = load_semeval(args.test_xml[0], schema="mams")
    else:
        trains, tests = [], []
        for k, path in enumerate(args.train_xml):
            loaded = _load_raw(path, category_map)
            trains.extend(_prefix_ids(loaded, f"train{k}") if len(args.train_xml) > 1 else loaded)
        for k, path in enumerate(args.test_xml):
            loaded = _load_raw(path, category_map)
            tests.extend(_prefix_ids(loaded, f"test{k}") if len(args.test_xml) > 1 else loaded)
        dev_counts = REST14_DEV_COUNTS if args.dataset == "rest14" else RESTLARGE_DEV_COUNTS
        train, dev = split_train_dev(trains, seed=args.dev_seed, dev_counts=dev_counts)
        test = tests

    trees = {"train": args.trees_train, "dev": args.trees_dev, "test": args.trees_test}
    splits = {"train": train, "dev": dev, "test": test}
    violations = 0
    for name, split in splits.items():
        if trees[name]:
            splits[name] = attach_parses(split, trees[name])
            for example in splits[name]:
                tree = parse_bracketed(example.parse)
                if not args.keep_preterminals:
                    tree = collapse_preterminals(tree)
                graph = build_graph(example, args.keep_preterminals)
                problems = graph_validate(graph, tree)
                violations += len(problems)
                for problem in problems:
                    logger.warning("%s: %s", example.id, problem)

    hard = build_hard_test(splits["test"])
    for name, split in splits.items():
        write_examples(out_dir / f"{name}.jsonl", split)
        with open(out_dir / f"{name}.sentences.txt", "w", encoding="utf-8") as fh:
            for example in split:
                fh.write(example.text.replace("\n", " ") + "\n")
    write_examples(out_dir / "test_hard.jsonl", hard)

    bundle = DatasetBundle.from_splits(splits["train"], splits["dev"], splits["test"])
    stats = dataset_stats(bundle, hard_test=hard)
    _write_json(out_dir / "stats.json", stats)
    table = stats_table(stats)
    (out_dir / "stats.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    if violations:
        print(f"graph validation reported {violations} violations (see log)")
    _snapshot_config(out_dir, "preprocess", {
        "dataset": args.dataset,
        "train_xml": args.train_xml,
        "test_xml": args.test_xml,
        "dev_xml": args.dev_xml,
        "dev_seed": args.dev_seed,
        "trees": trees,
        "keep_preterminals": args.keep_preterminals,
        "category_map": args.category_map,
    })
    return EXIT_OK


# ------------------------------------------------------------------ train

def _read_bundle(data_dir) -> DatasetBundle:
    d = Path(data_dir)
    if not (d / "train.jsonl").exists():
        raise DataError(f"{d}: no train.jsonl (run preprocess first)")

    def maybe(name):
        path = d / name
        return read_examples(path) if path.exists() else []

    return DatasetBundle.from_splits(
        read_examples(d / "train.jsonl"), maybe("dev.jsonl"), maybe("test.jsonl")
    )


def _save_result(out_dir: Path, result, config: TrainConfig, categories):
    save_checkpoint(
        out_dir / "checkpoint.npz", result.params, result.model_config,
        result.vocab.tokens, categories, data_mod.POLARITIES, config.variant,
        extra={"best_epoch": result.best_epoch,
               "best_dev_accuracy": result.best_dev_accuracy,
               "keep_preterminals": config.keep_preterminals,
               "dataset": config.dataset},
    )
    write_history(out_dir / "history.jsonl", result.history)


def cmd_train(args) -> int:
    config = _load_train_config(args)
    bundle = _read_bundle(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _snapshot_config(out_dir, "train", {"data_dir": args.data_dir, **config.to_dict()})

    if config.runs == 1:
        result = train_one_run(config, bundle)
        _save_result(out_dir, result, config, bundle.categories)
        test_acc = (eval_mod.dataset_accuracy(
            result.params, result.model_config, bundle.test, vocab=result.vocab,
            categories=bundle.categories, batch_size=config.batch_size,
            variant=config.variant, keep_preterminals=config.keep_preterminals,
        ) if bundle.test else None)
        metrics = {
            "best_dev_accuracy": result.best_dev_accuracy,
            "best_epoch": result.best_epoch,
            "stopped_epoch": result.stopped_epoch,
            "test_accuracy": test_acc,
        }
    else:
        def on_run(r, result):
            run_dir = out_dir / f"run{r}"
            run_dir.mkdir(exist_ok=True)
            _save_result(run_dir, result, config, bundle.categories)

        metrics = multi_run(config, bundle, on_run=on_run)

    _write_json(out_dir / "metrics.json", metrics)
    print(json.dumps(metrics, indent=2))
    return EXIT_OK


# ------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    examples = read_examples(args.data_jsonl)
    if not examples:
        raise DataError(f"{args.data_jsonl}: no examples")
    vocab = data_mod.Vocab(tokens=list(checkpoint["vocab"]),
                           index={t: i for i, t in enumerate(checkpoint["vocab"])})
    keep = bool(checkpoint["extra"].get("keep_preterminals", False))
    batches = data_mod.batchify(examples, args.batch_size, seed=None, vocab=vocab,
                                categories=checkpoint["categories"],
                                polarities=checkpoint["polarities"],
                                keep_preterminals=keep)
    predicted, gold, mentioned, diag, _ = eval_mod.predict_on_batches(
        checkpoint["params"], checkpoint["config"], batches, checkpoint["variant"]
    )
    gold_acd = mentioned.astype(float)
    metrics = {
        "pairs": int(mentioned.sum()),
        "accuracy": eval_mod.accuracy(predicted, gold, mentioned),
        "acd": eval_mod.acd_metrics(diag, gold_acd),
    }
    if args.joint:
        joint_mask = mentioned & (diag >= 0.5)
        correct = int(((predicted == gold) & joint_mask).sum())
        metrics["joint_accuracy"] = correct / int(mentioned.sum())
    print(json.dumps(metrics, indent=2))
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_json(out_dir / "metrics.json", metrics)
        _snapshot_config(out_dir, "eval", {
            "checkpoint": args.checkpoint, "data_jsonl": args.data_jsonl,
            "batch_size": args.batch_size, "joint": args.joint,
        })
    return EXIT_OK


# ----------------------------------------------------------------- predict

def cmd_predict(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    result = eval_mod.predict_example(checkpoint, args.parse, text=args.text,
                                      threshold=args.threshold,
                                      keep_preterminals=args.keep_preterminals)
    payload = {"detected": result["detected"], "tokens": result["tokens"]}
    print(json.dumps(payload, ensure_ascii=False, indent=2))
    if args.out:
        _write_json(args.out, result)
        _write_json(Path(args.out).with_suffix(".config.json"), {
            "command": "predict", "checkpoint": args.checkpoint,
            "parse": args.parse, "threshold": args.threshold,
            "keep_preterminals": args.keep_preterminals,
        })
    return EXIT_OK


# --------------------------------------------------------------- visualize

def cmd_visualize(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.parse:
        example_id = "query"
        result = eval_mod.predict_example(checkpoint, args.parse, threshold=0.0,
                                          keep_preterminals=args.keep_preterminals)
        record = result["attention"]
    else:
        if not args.data_jsonl:
            raise DataError("--id needs --data-jsonl")
        examples = [e for e in read_examples(args.data_jsonl) if e.id == args.id]
        if not examples:
            raise DataError(f"example {args.id!r} not found in {args.data_jsonl}")
        example = examples[0]
        if not example.parse:
            raise DataError(f"example {args.id!r} has no parse attached")
        vocab = data_mod.Vocab(tokens=list(checkpoint["vocab"]),
                               index={t: i for i, t in enumerate(checkpoint["vocab"])})
        batches = data_mod.batchify([example], 1, seed=None, vocab=vocab,
                                    categories=checkpoint["categories"],
                                    polarities=checkpoint["polarities"],
                                    keep_preterminals=args.keep_preterminals)
        from .model import forward

        out, _ = forward(batches[0], checkpoint["params"], checkpoint["config"],
                         checkpoint["variant"])
        graph = batches[0].graphs[0] if checkpoint["variant"] != "no_tree" else None
        record = eval_mod.attention_record(example, out, 0, checkpoint["categories"],
                                           checkpoint["polarities"], graph)
        example_id = example.id
    json_path = out_dir / f"attention_{example_id}.json"
    json_path.write_text(json.dumps(record, ensure_ascii=False, indent=2) + "\n",
                         encoding="utf-8")
    if args.heatmap:
        eval_mod._write_heatmap(record, checkpoint["categories"],
                                out_dir / f"attention_{example_id}.png")
    _snapshot_config(out_dir, "visualize", {
        "checkpoint": args.checkpoint, "parse": args.parse, "id": args.id,
        "heatmap": args.heatmap, "keep_preterminals": args.keep_preterminals,
    })
    print(str(json_path))
    return EXIT_OK


# ------------------------------------------------------------------ ablate

def cmd_ablate(args) -> int:
    config = _load_train_config(args)
    bundle = _read_bundle(args.data_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _snapshot_config(out_dir, "ablate", {"data_dir": args.data_dir, **config.to_dict()})
    rows = eval_mod.run_ablation_suite(bundle, config, dataset_name=config.dataset)
    eval_mod.write_comparison(rows, csv_path=out_dir / "comparison.csv",
                              json_path=out_dir / "comparison.json")
    for row in rows:
        print(f"{row['variant']:<10} mean {row['mean_test_accuracy']:.4f} "
              f"std {row['std_test_accuracy']:.4f} ({row['completed']}/{row['runs']} runs)")
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "visualize": cmd_visualize,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except (DataError, MalformedTreeError, CheckpointError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergedError as err:
        print(f"training failed: {err}", file=sys.stderr)
        return EXIT_TRAIN
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
