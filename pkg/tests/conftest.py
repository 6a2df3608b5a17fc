import os
from pathlib import Path

import numpy as np
import pytest

import aspectgraph as ag

# Real corpora are licensed and not shipped; data-dependent tests look for
# them under $ABSA_DATA_DIR (see README for the expected file names) and
# skip politely when absent.
DATA_DIR = os.environ.get("ABSA_DATA_DIR", "")

REST14_TRAIN = Path(DATA_DIR) / "rest14" / "Restaurants_Train.xml"
REST14_TEST = Path(DATA_DIR) / "rest14" / "Restaurants_Test_Gold.xml"
MAMS_TRAIN = Path(DATA_DIR) / "mams_acsa" / "train.xml"
MAMS_DEV = Path(DATA_DIR) / "mams_acsa" / "val.xml"
MAMS_TEST = Path(DATA_DIR) / "mams_acsa" / "test.xml"
GLOVE_PATH = Path(os.environ.get("GLOVE_PATH", Path(DATA_DIR) / "glove.840B.300d.txt"))


def require(*paths):
    missing = [str(p) for p in paths if not Path(p).exists()]
    if missing:
        pytest.skip(f"requires external data: {', '.join(missing)}")


@pytest.fixture(scope="session")
def toy_corpus():
    examples, categories = ag.make_toy_corpus()
    return examples, categories


@pytest.fixture(scope="session")
def toy_setup(toy_corpus):
    """Vocab, batches, and a tiny model config over the toy corpus."""
    examples, categories = toy_corpus
    vocab = ag.build_vocab(examples)
    config = ag.ModelConfig(vocab_size=vocab.size, num_categories=len(categories),
                            embed_dim=8, num_heads=2)
    batches = ag.batchify(examples, 4, seed=None, vocab=vocab, categories=categories)
    return {"examples": examples, "categories": categories, "vocab": vocab,
            "config": config, "batches": batches}


def random_batch(rng, vocab_size=12, num_categories=3, max_tokens=6):
    """A synthetic one-to-three sentence batch with random small trees."""
    from oracles import random_tree

    from aspectgraph.data import Example, batchify
    from aspectgraph.treebank import serialize_tree

    n_examples = int(rng.integers(1, 4))
    examples = []
    categories = tuple(f"cat{i}" for i in range(num_categories))
    for idx in range(n_examples):
        tree = random_tree(rng, max_leaves=max_tokens, max_depth=3)
        tokens = tree.tokens()
        n_labels = int(rng.integers(1, num_categories + 1))
        chosen = rng.choice(num_categories, size=n_labels, replace=False)
        labels = {categories[int(c)]: ag.POLARITIES[int(rng.integers(0, 3))]
                  for c in chosen}
        examples.append(Example(id=f"r{idx}", text=" ".join(tokens),
                                tokens=tokens, parse=serialize_tree(tree),
                                labels=labels))
    # a shared tiny vocabulary; some tokens fall to UNK on purpose
    all_tokens = sorted({t for e in examples for t in e.tokens})
    vocab_tokens = ["<pad>", "<unk>"] + all_tokens[: max(1, vocab_size - 2)]
    vocab = ag.Vocab(tokens=vocab_tokens, index={t: i for i, t in enumerate(vocab_tokens)})
    batch = batchify(examples, len(examples), seed=None, vocab=vocab,
                     categories=categories)[0]
    return batch, vocab, categories
