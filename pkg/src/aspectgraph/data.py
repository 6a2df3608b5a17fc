"""Dataset ingestion, cleanup, vocabulary, embeddings, and batching.

Handles the SemEval-2014 restaurant markup and the MAMS variant of it,
plus a best-effort reader for the 2015/16 opinion markup used when merging
the large restaurant corpus.  Cleanup drops conflict-polarity labels at
(sentence, category) granularity and then drops sentences left with no
labels.  Hard test sets keep only sentences carrying at least two
categories with non-identical polarities.
"""

from __future__ import annotations

import json
import logging
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .treebank import (
    ConstituencyGraph,
    MalformedTreeError,
    collapse_preterminals,
    parse_bracketed,
    tree_to_graph,
)

logger = logging.getLogger(__name__)

POLARITIES = ("positive", "negative", "neutral")
CONFLICT = "conflict"

__all__ = [
    "POLARITIES",
    "DataError",
    "SchemaError",
    "EmbeddingFormatError",
    "Example",
    "DatasetBundle",
    "Vocab",
    "Batch",
    "load_semeval",
    "load_semeval_opinions",
    "read_category_map",
    "default_category_map",
    "build_hard_test",
    "attach_parses",
    "build_vocab",
    "load_pretrained_embeddings",
    "batchify",
    "split_train_dev",
    "polarity_counts",
    "dataset_stats",
    "stats_table",
    "write_examples",
    "read_examples",
    "make_toy_corpus",
    "REST14_DEV_COUNTS",
    "RESTLARGE_DEV_COUNTS",
]


class DataError(Exception):
    """Dataset-level problem: misaligned files, missing parses, bad labels."""


class SchemaError(DataError):
    """Markup does not match the expected schema."""


class EmbeddingFormatError(DataError):
    """Pretrained-vector file does not match the expected text format."""


@dataclass
class Example:
    """One sentence with its gold aspect-category labels.

    ``labels`` maps category name to polarity; insertion order is the
    document order of the annotations.  ``parse`` is the bracketed tree
    string (None until parses are attached), and ``tokens`` are the leaves
    of that parse.
    """

    id: str
    text: str
    tokens: list[str] = field(default_factory=list)
    parse: str | None = None
    labels: dict[str, str] = field(default_factory=dict)


@dataclass
class DatasetBundle:
    train: list[Example]
    dev: list[Example]
    test: list[Example]
    categories: tuple[str, ...]
    polarities: tuple[str, ...] = POLARITIES

    @classmethod
    def from_splits(cls, train, dev, test, categories=None) -> "DatasetBundle":
        """Assemble a bundle, deriving the category list when not given.

        The derived list is the sorted union over all splits, so indices are
        deterministic for a given corpus.
        """
        splits = (train, dev, test)
        if categories is None:
            categories = tuple(sorted({c for s in splits for e in s for c in e.labels}))
        bundle = cls(train=list(train), dev=list(dev), test=list(test),
                     categories=tuple(categories))
        bundle.validate()
        return bundle

    def validate(self):
        known = set(self.categories)
        for name, split in (("train", self.train), ("dev", self.dev), ("test", self.test)):
            for e in split:
                for cat, pol in e.labels.items():
                    if cat not in known:
                        raise DataError(f"{name} example {e.id}: unknown category {cat!r}")
                    if pol not in self.polarities:
                        raise DataError(f"{name} example {e.id}: unknown polarity {pol!r}")


def _aggregate_labels(pairs, counts) -> dict[str, str]:
    """Collapse repeated category annotations within one sentence.

    Positive and negative on the same category make it a conflict (dropped).
    A neutral paired with a signed polarity keeps the signed one.  Explicit
    conflict labels are dropped before this step.
    """
    by_cat: dict[str, set[str]] = {}
    order: list[str] = []
    for cat, pol in pairs:
        if cat not in by_cat:
            order.append(cat)
        by_cat.setdefault(cat, set()).add(pol)
    labels = {}
    for cat in order:
        pols = by_cat[cat]
        if "positive" in pols and "negative" in pols:
            counts["conflict_pairs"] += 1
            continue
        signed = pols - {"neutral"}
        labels[cat] = signed.pop() if signed else "neutral"
    return labels


def load_semeval(path, schema: str = "semeval2014") -> list[Example]:
    """Load sentences from SemEval-2014-style markup (``schema='semeval2014'``)
    or its MAMS variant (``schema='mams'``); the two share the
    sentence/text/aspectCategories layout.

    (sentence, category) pairs labeled conflict are dropped; sentences left
    with zero labels are dropped; both counts are logged.
    """
    if schema not in ("semeval2014", "mams"):
        raise ValueError(f"unknown schema {schema!r}")
    path = Path(path)
    try:
        root = ET.parse(str(path)).getroot()
    except ET.ParseError as err:
        line, col = err.position
        raise SchemaError(f"{path.name}: malformed markup at line {line}, column {col}") from err

    counts = Counter()
    examples: list[Example] = []
    for i, sent in enumerate(root.iter("sentence")):
        sid = sent.get("id") or str(i)
        text = sent.findtext("text")
        if text is None:
            raise SchemaError(f"{path.name}: sentence {sid} has no <text> element")
        pairs = []
        cats = sent.find("aspectCategories")
        for ac in cats.iter("aspectCategory") if cats is not None else ():
            category = ac.get("category")
            polarity = (ac.get("polarity") or "").lower()
            if category is None or not polarity:
                raise SchemaError(f"{path.name}: sentence {sid} has an incomplete aspectCategory")
            if polarity == CONFLICT:
                counts["conflict_pairs"] += 1
                continue
            if polarity not in POLARITIES:
                raise SchemaError(f"{path.name}: sentence {sid} has unknown polarity {polarity!r}")
            pairs.append((category, polarity))
        labels = _aggregate_labels(pairs, counts)
        if not labels:
            counts["dropped_sentences"] += 1
            continue
        examples.append(Example(id=sid, text=text, labels=labels))
    logger.info(
        "%s: loaded %d sentences, dropped %d conflict pairs and %d empty sentences",
        path.name, len(examples), counts["conflict_pairs"], counts["dropped_sentences"],
    )
    return examples


def load_semeval_opinions(path, category_map: dict[str, str]) -> list[Example]:
    """Best-effort reader for the 2015/16 opinion markup
    (Review/sentences/sentence with Opinion category="ENTITY#ATTRIBUTE").

    Categories are renamed through ``category_map``; unmapped categories are
    skipped and counted.  Used only for building the merged large restaurant
    corpus, whose numbers are not authoritative.
    """
    path = Path(path)
    try:
        root = ET.parse(str(path)).getroot()
    except ET.ParseError as err:
        line, col = err.position
        raise SchemaError(f"{path.name}: malformed markup at line {line}, column {col}") from err

    counts = Counter()
    examples: list[Example] = []
    for i, sent in enumerate(root.iter("sentence")):
        sid = sent.get("id") or str(i)
        text = sent.findtext("text")
        if text is None:
            raise SchemaError(f"{path.name}: sentence {sid} has no <text> element")
        pairs = []
        ops = sent.find("Opinions")
        for op in ops.iter("Opinion") if ops is not None else ():
            raw = op.get("category")
            polarity = (op.get("polarity") or "").lower()
            if raw is None or not polarity:
                raise SchemaError(f"{path.name}: sentence {sid} has an incomplete Opinion")
            if polarity == CONFLICT:
                counts["conflict_pairs"] += 1
                continue
            if polarity not in POLARITIES:
                raise SchemaError(f"{path.name}: sentence {sid} has unknown polarity {polarity!r}")
            if raw not in category_map:
                counts["unmapped"] += 1
                continue
            pairs.append((category_map[raw], polarity))
        labels = _aggregate_labels(pairs, counts)
        if not labels:
            counts["dropped_sentences"] += 1
            continue
        examples.append(Example(id=sid, text=text, labels=labels))
    logger.info(
        "%s: loaded %d sentences (%d conflict pairs, %d unmapped categories, %d empty sentences dropped)",
        path.name, len(examples), counts["conflict_pairs"], counts["unmapped"],
        counts["dropped_sentences"],
    )
    return examples


def _parse_category_map(text: str, source: str) -> dict[str, str]:
    # keys contain '#' (ENTITY#ATTRIBUTE), so only whole lines can be comments
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{source}: line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        mapping[key.strip()] = value.strip()
    return mapping


def read_category_map(path) -> dict[str, str]:
    """Read a key=value category-renaming file (lines starting with # are
    comments)."""
    return _parse_category_map(Path(path).read_text(encoding="utf-8"), str(path))


def default_category_map() -> dict[str, str]:
    """The shipped ENTITY#ATTRIBUTE -> five-category renaming table."""
    from importlib import resources

    with resources.files(__package__).joinpath("restlarge_categories.cfg").open("rb") as fh:
        text = fh.read().decode("utf-8")
    return _parse_category_map(text, "restlarge_categories.cfg")


def build_hard_test(test_examples: list[Example]) -> list[Example]:
    """Keep exactly the sentences whose categories carry at least two
    distinct polarities (implies >= 2 categories).  Strict filter; idempotent."""
    return [e for e in test_examples
            if len(e.labels) >= 2 and len(set(e.labels.values())) >= 2]


def attach_parses(examples: list[Example], trees) -> list[Example]:
    """Pair each example with the bracketed tree on the matching line.

    ``trees`` is a path to a one-tree-per-line UTF-8 file, or a list of
    strings.  Counts must match exactly; every line must parse.  Tokens are
    taken from the tree leaves so leaf/token alignment is guaranteed.
    """
    if isinstance(trees, (str, Path)):
        tree_path = Path(trees)
        if not tree_path.exists():
            raise DataError(
                f"trees file not found: {tree_path} "
                "(expected a UTF-8 text file with one bracketed tree per line)"
            )
        lines = tree_path.read_text(encoding="utf-8").splitlines()
        lines = [ln for ln in lines if ln.strip()]
    else:
        lines = list(trees)
    if len(lines) != len(examples):
        raise DataError(
            f"tree/example count mismatch: {len(lines)} trees for {len(examples)} examples"
        )
    enriched = []
    for k, (example, line) in enumerate(zip(examples, lines), 1):
        try:
            tree = parse_bracketed(line)
        except MalformedTreeError as err:
            raise DataError(f"tree line {k}: {err}") from err
        enriched.append(replace(example, parse=line.strip(), tokens=tree.tokens()))
    return enriched


@dataclass
class Vocab:
    """Token <-> id mapping with reserved PAD (0) and UNK (1) slots."""

    tokens: list[str]
    index: dict[str, int]

    PAD = "<pad>"
    UNK = "<unk>"
    pad_id = 0
    unk_id = 1

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id(self, token: str) -> int:
        return self.index.get(token, self.unk_id)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)


def build_vocab(examples: list[Example], min_count: int = 1) -> Vocab:
    """Vocabulary over the training split only: ids are assigned by
    descending frequency, ties broken lexicographically, after PAD and UNK."""
    counter = Counter()
    for e in examples:
        counter.update(e.tokens)
    kept = sorted(
        (t for t, c in counter.items() if c >= min_count),
        key=lambda t: (-counter[t], t),
    )
    tokens = [Vocab.PAD, Vocab.UNK] + kept
    return Vocab(tokens=tokens, index={t: i for i, t in enumerate(tokens)})


def load_pretrained_embeddings(vocab: Vocab, path, dim: int = 300, seed: int = 0):
    """Fill an embedding matrix from a text file of ``token v1 .. v_dim`` lines.

    Covered rows are copied exactly; uncovered rows (and UNK) are drawn
    uniformly from [-0.25, 0.25] with the given seed; the PAD row is zero.
    Returns (matrix, coverage, report) where coverage counts real tokens
    only (PAD and UNK excluded).
    """
    wanted = {t: i for i, t in enumerate(vocab.tokens) if i >= 2}
    rng = np.random.default_rng(seed)
    matrix = rng.uniform(-0.25, 0.25, size=(vocab.size, dim))
    matrix[vocab.pad_id] = 0.0
    covered = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < dim + 1:
                raise EmbeddingFormatError(
                    f"{path}: line {lineno}: expected a token plus {dim} values, got {len(parts)} fields"
                )
            token = " ".join(parts[: len(parts) - dim])
            if token not in wanted:
                continue
            try:
                vec = np.array([float(v) for v in parts[len(parts) - dim:]])
            except ValueError as err:
                raise EmbeddingFormatError(f"{path}: line {lineno}: non-numeric value") from err
            matrix[wanted[token]] = vec
            covered.add(token)
    total = len(wanted)
    coverage = len(covered) / total if total else 0.0
    missing = sorted(set(wanted) - covered)
    report = {
        "covered": len(covered),
        "total": total,
        "coverage": coverage,
        "missing_sample": missing[:20],
    }
    logger.info("embeddings: %d/%d tokens covered (%.1f%%)", len(covered), total, 100 * coverage)
    return matrix, coverage, report


@dataclass
class Batch:
    """Padded arrays for one batch of sentences.

    Node indices 0..n_b-1 coincide with token positions; node_mask marks
    exactly the n+m real nodes of each sentence.  gold_acsa holds polarity
    indices where mentioned_mask is True and -1 elsewhere.
    """

    token_ids: np.ndarray        # (B, T) int64
    token_mask: np.ndarray       # (B, T) bool
    adjacency: np.ndarray        # (B, V, V) bool; row i lists sources j
    node_mask: np.ndarray        # (B, V) bool
    gold_acd: np.ndarray         # (B, N) float64 in {0, 1}
    gold_acsa: np.ndarray        # (B, N) int64, -1 where absent
    mentioned_mask: np.ndarray   # (B, N) bool
    graphs: list[ConstituencyGraph]
    examples: list[Example]
    categories: tuple[str, ...]

    @property
    def size(self) -> int:
        return self.token_ids.shape[0]


def build_graph(example: Example, keep_preterminals: bool = False) -> ConstituencyGraph:
    if not example.parse:
        raise DataError(f"example {example.id} is missing a parse")
    tree = parse_bracketed(example.parse)
    if not keep_preterminals:
        tree = collapse_preterminals(tree)
    return tree_to_graph(tree)


def batchify(
    examples: list[Example],
    batch_size: int,
    seed: int | None = None,
    *,
    vocab: Vocab,
    categories: tuple[str, ...],
    polarities: tuple[str, ...] = POLARITIES,
    keep_preterminals: bool = False,
    graphs: dict[str, ConstituencyGraph] | None = None,
) -> list[Batch]:
    """Cut examples into padded batches.

    With ``seed`` given the example order is shuffled reproducibly;
    otherwise the original order is kept (evaluation).  ``graphs`` may carry
    prebuilt graphs keyed by example id to avoid reparsing every epoch.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(examples))
    if seed is not None:
        np.random.default_rng(seed).shuffle(order)
    cat_index = {c: j for j, c in enumerate(categories)}
    pol_index = {p: k for k, p in enumerate(polarities)}

    batches = []
    for start in range(0, len(examples), batch_size):
        chunk = [examples[i] for i in order[start:start + batch_size]]
        chunk_graphs = []
        for e in chunk:
            if graphs is not None and e.id in graphs:
                chunk_graphs.append(graphs[e.id])
            else:
                chunk_graphs.append(build_graph(e, keep_preterminals))
        B = len(chunk)
        T = max(len(e.tokens) for e in chunk)
        V = max(g.num_nodes for g in chunk_graphs)
        N = len(categories)

        token_ids = np.zeros((B, T), dtype=np.int64)
        token_mask = np.zeros((B, T), dtype=bool)
        adjacency = np.zeros((B, V, V), dtype=bool)
        node_mask = np.zeros((B, V), dtype=bool)
        gold_acd = np.zeros((B, N), dtype=np.float64)
        gold_acsa = np.full((B, N), -1, dtype=np.int64)
        mentioned = np.zeros((B, N), dtype=bool)

        for b, (e, g) in enumerate(zip(chunk, chunk_graphs)):
            ids = vocab.encode(e.tokens)
            token_ids[b, : len(ids)] = ids
            token_mask[b, : len(ids)] = True
            node_mask[b, : g.num_nodes] = True
            for i, srcs in enumerate(g.neighbors):
                adjacency[b, i, list(srcs)] = True
            for cat, pol in e.labels.items():
                if cat not in cat_index:
                    raise DataError(f"example {e.id}: category {cat!r} not in bundle categories")
                if pol not in pol_index:
                    raise DataError(f"example {e.id}: unknown polarity {pol!r}")
                j = cat_index[cat]
                gold_acd[b, j] = 1.0
                gold_acsa[b, j] = pol_index[pol]
                mentioned[b, j] = True

        batches.append(Batch(
            token_ids=token_ids,
            token_mask=token_mask,
            adjacency=adjacency,
            node_mask=node_mask,
            gold_acd=gold_acd,
            gold_acsa=gold_acsa,
            mentioned_mask=mentioned,
            graphs=chunk_graphs,
            examples=chunk,
            categories=tuple(categories),
        ))
    return batches


# Table-style per-polarity dev targets for corpora that ship without an
# official dev split (label-instance counts, not sentence counts).
REST14_DEV_COUNTS = {"positive": 324, "negative": 106, "neutral": 70}
RESTLARGE_DEV_COUNTS = {"positive": 646, "negative": 242, "neutral": 110}


def polarity_counts(examples: list[Example]) -> dict[str, int]:
    """Label-instance counts per polarity (one sentence can contribute several)."""
    counts = {p: 0 for p in POLARITIES}
    for e in examples:
        for pol in e.labels.values():
            counts[pol] += 1
    return counts


def split_train_dev(
    examples: list[Example],
    seed: int,
    dev_counts: dict[str, int] | None = None,
    dev_fraction: float = 0.1,
):
    """Seeded split of a training corpus into (train, dev).

    With ``dev_counts`` the split greedily fills the requested per-polarity
    label-instance counts (best effort: a warning is logged when the targets
    cannot be met exactly).  Without it, a plain seeded split of roughly
    ``dev_fraction`` of the sentences is made.  Output order follows the
    input corpus order.
    """
    rng = np.random.default_rng(seed)
    order = np.arange(len(examples))
    rng.shuffle(order)

    dev_idx: set[int] = set()
    if dev_counts is not None:
        remaining = {p: int(dev_counts.get(p, 0)) for p in POLARITIES}
        for i in order:
            if all(v == 0 for v in remaining.values()):
                break
            contrib = polarity_counts([examples[i]])
            if all(contrib[p] <= remaining[p] for p in POLARITIES):
                dev_idx.add(int(i))
                for p in POLARITIES:
                    remaining[p] -= contrib[p]
        if any(v > 0 for v in remaining.values()):
            logger.warning("dev split undershoots targets by %s", remaining)
    else:
        take = int(round(len(examples) * dev_fraction))
        dev_idx = {int(i) for i in order[:take]}

    train = [e for i, e in enumerate(examples) if i not in dev_idx]
    dev = [e for i, e in enumerate(examples) if i in dev_idx]
    return train, dev


def dataset_stats(bundle: DatasetBundle, hard_test: list[Example] | None = None) -> dict:
    stats = {
        "train": polarity_counts(bundle.train),
        "dev": polarity_counts(bundle.dev),
        "test": polarity_counts(bundle.test),
    }
    if hard_test is not None:
        stats["test_hard"] = polarity_counts(hard_test)
    return stats


def stats_table(stats: dict) -> str:
    """Plain-text per-split, per-polarity label counts."""
    splits = list(stats)
    lines = ["polarity  " + "".join(f"{s:>12}" for s in splits)]
    for p in POLARITIES:
        lines.append(f"{p:<10}" + "".join(f"{stats[s][p]:>12}" for s in splits))
    totals = [sum(stats[s].values()) for s in splits]
    lines.append("total     " + "".join(f"{t:>12}" for t in totals))
    return "\n".join(lines)


def example_to_record(e: Example) -> dict:
    return {
        "id": e.id,
        "text": e.text,
        "tokens": list(e.tokens),
        "parse": e.parse,
        "labels": [{"category": c, "polarity": p} for c, p in e.labels.items()],
    }


def record_to_example(record: dict) -> Example:
    return Example(
        id=record["id"],
        text=record["text"],
        tokens=list(record["tokens"]),
        parse=record["parse"],
        labels={item["category"]: item["polarity"] for item in record["labels"]},
    )


def write_examples(path, examples: list[Example]):
    """One canonical JSON object per line; rereading and rewriting is
    byte-identical."""
    with open(path, "w", encoding="utf-8") as fh:
        for e in examples:
            fh.write(json.dumps(example_to_record(e), ensure_ascii=False))
            fh.write("\n")


def read_examples(path) -> list[Example]:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                examples.append(record_to_example(json.loads(line)))
            except (json.JSONDecodeError, KeyError) as err:
                raise DataError(f"{path}: line {lineno}: bad record ({err})") from err
    return examples


def make_toy_corpus():
    """Eight hand-parsed sentences over three categories and all three
    polarities; a sane model overfits them to 100% sentiment accuracy.

    Returns (examples, categories).
    """
    rows = [
        ("t1", "the food was great",
         "(S (NP (DT the) (NN food)) (VP (VBD was) (ADJP (JJ great))))",
         {"food": "positive"}),
        ("t2", "the food was awful",
         "(S (NP (DT the) (NN food)) (VP (VBD was) (ADJP (JJ awful))))",
         {"food": "negative"}),
        ("t3", "the service was okay",
         "(S (NP (DT the) (NN service)) (VP (VBD was) (ADJP (JJ okay))))",
         {"service": "neutral"}),
        ("t4", "the service was great",
         "(S (NP (DT the) (NN service)) (VP (VBD was) (ADJP (JJ great))))",
         {"service": "positive"}),
        ("t5", "the price was awful",
         "(S (NP (DT the) (NN price)) (VP (VBD was) (ADJP (JJ awful))))",
         {"price": "negative"}),
        ("t6", "the price was okay",
         "(S (NP (DT the) (NN price)) (VP (VBD was) (ADJP (JJ okay))))",
         {"price": "neutral"}),
        ("t7", "great food awful service",
         "(S (NP (JJ great) (NN food)) (NP (JJ awful) (NN service)))",
         {"food": "positive", "service": "negative"}),
        ("t8", "okay price great service",
         "(S (NP (JJ okay) (NN price)) (NP (JJ great) (NN service)))",
         {"price": "neutral", "service": "positive"}),
    ]
    examples = []
    for sid, text, parse, labels in rows:
        tree = parse_bracketed(parse)
        examples.append(Example(id=sid, text=text, tokens=tree.tokens(),
                                parse=parse, labels=labels))
    return examples, ("food", "price", "service")
