"""Accuracy and detection metrics, attention-weight export, and the
ablation comparison harness."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

import numpy as np

from .data import (
    Batch,
    DataError,
    DatasetBundle,
    Example,
    POLARITIES,
    Vocab,
    batchify,
    build_graph,
)
from .model import ModelConfig, ModelOutput, forward
from .treebank import ConstituencyGraph, parse_bracketed

logger = logging.getLogger(__name__)

ATTENTION_DUMP_VERSION = 1

__all__ = [
    "accuracy",
    "acd_metrics",
    "predict_on_batches",
    "dataset_accuracy",
    "attention_record",
    "dump_attention",
    "predict_example",
    "run_ablation_suite",
    "write_comparison",
]


def accuracy(predicted, gold, mentioned_mask) -> float:
    """Fraction of (sentence, mentioned category) pairs whose predicted
    polarity matches the gold one.  Gold categories are given, so the
    denominator is the number of gold pairs."""
    predicted = np.asarray(predicted)
    gold = np.asarray(gold)
    mask = np.asarray(mentioned_mask, dtype=bool)
    total = int(mask.sum())
    if total == 0:
        raise ValueError("empty gold set")
    correct = int(((predicted == gold) & mask).sum())
    return correct / total


def acd_metrics(diag_probs, gold_acd, threshold: float = 0.5) -> dict:
    """Micro precision/recall/F1 of category detection at a threshold,
    read from the diagonal probabilities.  When nothing is predicted
    positive, precision is reported as 0 with a flag."""
    probs = np.asarray(diag_probs, dtype=np.float64)
    gold = np.asarray(gold_acd) > 0.5
    pred = probs >= threshold
    tp = int((pred & gold).sum())
    fp = int((pred & ~gold).sum())
    fn = int((~pred & gold).sum())
    no_positives = (tp + fp) == 0
    precision = 0.0 if no_positives else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "true_positives": tp,
        "false_positives": fp,
        "false_negatives": fn,
        "no_predicted_positives": no_positives,
    }


def predict_on_batches(params: dict, model_config: ModelConfig, batches,
                       variant: str = "full"):
    """Forward over evaluation batches (original order preserved).

    Returns (predicted, gold, mentioned, acd_diag, outputs): per-pair
    polarity argmaxes (ties break to the lowest class index), the gold
    arrays, diagonal detection probabilities, and the raw per-batch
    outputs for inspection.
    """
    preds, golds, mentions, diags, outputs = [], [], [], [], []
    for batch in batches:
        out, _ = forward(batch, params, model_config, variant)
        preds.append(np.argmax(out.y_acsa, axis=-1))
        golds.append(batch.gold_acsa)
        mentions.append(batch.mentioned_mask)
        diags.append(np.diagonal(out.y_acd, axis1=-2, axis2=-1))
        outputs.append(out)
    return (
        np.concatenate(preds, axis=0),
        np.concatenate(golds, axis=0),
        np.concatenate(mentions, axis=0),
        np.concatenate(diags, axis=0),
        outputs,
    )


def dataset_accuracy(params: dict, model_config: ModelConfig, examples,
                     *, vocab: Vocab, categories, batch_size: int = 32,
                     variant: str = "full", keep_preterminals: bool = False,
                     graphs=None) -> float:
    """Sentiment accuracy over a whole split, gold categories given."""
    batches = batchify(list(examples), batch_size, seed=None, vocab=vocab,
                       categories=categories, keep_preterminals=keep_preterminals,
                       graphs=graphs)
    predicted, gold, mentioned, _, _ = predict_on_batches(
        params, model_config, batches, variant
    )
    return accuracy(predicted, gold, mentioned)


def attention_record(example: Example, output: ModelOutput, index: int,
                     categories, polarities=POLARITIES,
                     graph: ConstituencyGraph | None = None) -> dict:
    """Assemble one sentence's attention dump.

    With a graph, nodes carry constituent tags and token spans and the
    per-head graph-attention rows are included; without one (no_tree), the
    nodes are the tokens themselves.
    """
    node_mask = output.node_mask[index]
    num_nodes = int(node_mask.sum())
    nodes = []
    if graph is not None:
        if num_nodes != graph.num_nodes:
            raise DataError(
                f"example {example.id}: output has {num_nodes} nodes, graph has {graph.num_nodes}"
            )
        for i in range(graph.num_nodes):
            start, end = graph.spans[i]
            nodes.append({
                "index": i,
                "tag": graph.labels[i],
                "span": [start, end],
                "text": " ".join(graph.tokens[start:end]),
            })
    else:
        for i, token in enumerate(example.tokens):
            nodes.append({"index": i, "tag": "", "span": [i, i + 1], "text": token})

    beta = {cat: [float(v) for v in output.beta[index, j, :num_nodes]]
            for j, cat in enumerate(categories)}

    gat_attention = {}
    if graph is not None and output.alpha_acd is not None:
        for task, alpha in (("acd", output.alpha_acd), ("acsa", output.alpha_acsa)):
            rows = []
            for i, sources in enumerate(graph.neighbors):
                source_list = list(sources)
                heads = [[float(alpha[index, l, i, j]) for j in source_list]
                         for l in range(alpha.shape[1])]
                rows.append({"node": i, "sources": source_list, "heads": heads})
            gat_attention[task] = rows

    diag = np.diagonal(output.y_acd[index])
    predicted = {}
    for j, cat in enumerate(categories):
        polarity = polarities[int(np.argmax(output.y_acsa[index, j]))]
        predicted[cat] = {
            "detected": bool(diag[j] >= 0.5),
            "detection_probability": float(diag[j]),
            "polarity": polarity,
        }
    return {
        "version": ATTENTION_DUMP_VERSION,
        "id": example.id,
        "tokens": list(example.tokens),
        "nodes": nodes,
        "beta": beta,
        "gat_attention": gat_attention,
        "predicted": predicted,
        "gold": dict(example.labels),
    }


def dump_attention(example: Example, output: ModelOutput, index: int,
                   categories, out_path, graph: ConstituencyGraph | None = None,
                   polarities=POLARITIES, heatmap_path=None) -> dict:
    """Write one sentence's attention dump as JSON, optionally with a
    static heatmap image of the per-category node weights."""
    record = attention_record(example, output, index, categories, polarities, graph)
    out_path = Path(out_path)
    out_path.write_text(json.dumps(record, ensure_ascii=False, indent=2) + "\n",
                        encoding="utf-8")
    if heatmap_path is not None:
        _write_heatmap(record, categories, heatmap_path)
    return record


def _write_heatmap(record: dict, categories, path):
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matrix = np.array([record["beta"][cat] for cat in categories])
    labels = [f"{n['tag']} {n['text']}".strip() for n in record["nodes"]]
    fig, ax = plt.subplots(
        figsize=(max(6.0, 0.45 * len(labels)), max(2.5, 0.5 * len(categories) + 1.5))
    )
    im = ax.imshow(matrix, aspect="auto", cmap="viridis", vmin=0.0)
    ax.set_yticks(range(len(categories)), labels=list(categories))
    ax.set_xticks(range(len(labels)), labels=labels, rotation=60, ha="right", fontsize=7)
    fig.colorbar(im, ax=ax, label="attention weight")
    ax.set_title(f"node attention for {record['id']}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def predict_example(checkpoint: dict, parse: str, text: str | None = None,
                    threshold: float = 0.5, keep_preterminals: bool = False) -> dict:
    """Detect categories and predict their polarities for one parsed
    sentence, using a loaded checkpoint bundle."""
    tree = parse_bracketed(parse)
    tokens = tree.tokens()
    example = Example(id="query", text=text or " ".join(tokens),
                      tokens=tokens, parse=parse, labels={})
    vocab = Vocab(tokens=list(checkpoint["vocab"]),
                  index={t: i for i, t in enumerate(checkpoint["vocab"])})
    categories = checkpoint["categories"]
    polarities = checkpoint["polarities"]
    batches = batchify([example], 1, seed=None, vocab=vocab, categories=categories,
                       polarities=polarities, keep_preterminals=keep_preterminals)
    out, _ = forward(batches[0], checkpoint["params"], checkpoint["config"],
                     checkpoint["variant"])
    graph = batches[0].graphs[0] if checkpoint["variant"] != "no_tree" else None
    record = attention_record(example, out, 0, categories, polarities, graph)
    detected = [
        {
            "category": cat,
            "probability": info["detection_probability"],
            "polarity": info["polarity"],
        }
        for cat, info in record["predicted"].items()
        if info["detection_probability"] >= threshold
    ]
    return {
        "tokens": tokens,
        "detected": detected,
        "attention": record,
    }


def run_ablation_suite(bundle: DatasetBundle, base_config, dataset_name: str = "",
                       variants=("full", "no_iloss", "no_tree")) -> list[dict]:
    """Train every variant with the multi-run protocol and tabulate the
    mean test accuracies."""
    from dataclasses import replace

    from .train import multi_run

    rows = []
    for variant in variants:
        config = replace(base_config, variant=variant)
        summary = multi_run(config, bundle)
        rows.append({
            "dataset": dataset_name or base_config.dataset,
            "variant": variant,
            "runs": config.runs,
            "completed": summary["completed"],
            "mean_test_accuracy": summary["mean_test_accuracy"],
            "std_test_accuracy": summary["std_test_accuracy"],
            "partial": summary["partial"],
            "per_run": summary["runs"],
        })
        logger.info("variant %s: mean test accuracy %.4f (%d/%d runs)",
                    variant, summary["mean_test_accuracy"], summary["completed"],
                    config.runs)
    return rows


def write_comparison(rows: list[dict], csv_path=None, json_path=None):
    """Comparison table as CSV (flat columns) and JSON (full records)."""
    if csv_path is not None:
        columns = ["dataset", "variant", "runs", "completed",
                   "mean_test_accuracy", "std_test_accuracy", "partial"]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
            writer.writeheader()
            writer.writerows(rows)
    if json_path is not None:
        Path(json_path).write_text(json.dumps(rows, ensure_ascii=False, indent=2) + "\n",
                                   encoding="utf-8")
