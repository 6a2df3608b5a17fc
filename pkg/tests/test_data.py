import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import aspectgraph as ag
from aspectgraph.data import (
    DataError,
    EmbeddingFormatError,
    Example,
    SchemaError,
    attach_parses,
    batchify,
    build_hard_test,
    build_vocab,
    default_category_map,
    load_pretrained_embeddings,
    load_semeval,
    load_semeval_opinions,
    polarity_counts,
    read_category_map,
    read_examples,
    split_train_dev,
    write_examples,
)

SEM14_XML = """<?xml version="1.0" encoding="UTF-8"?>
<sentences>
  <sentence id="100">
    <text>great food but the service was dreadful</text>
    <aspectCategories>
      <aspectCategory category="food" polarity="positive"/>
      <aspectCategory category="service" polarity="negative"/>
    </aspectCategories>
  </sentence>
  <sentence id="101">
    <text>decent prices</text>
    <aspectCategories>
      <aspectCategory category="price" polarity="neutral"/>
    </aspectCategories>
  </sentence>
  <sentence id="102">
    <text>the food was hit or miss</text>
    <aspectCategories>
      <aspectCategory category="food" polarity="conflict"/>
    </aspectCategories>
  </sentence>
  <sentence id="103">
    <text>lovely patio, shame about the waiters</text>
    <aspectCategories>
      <aspectCategory category="ambience" polarity="positive"/>
      <aspectCategory category="service" polarity="conflict"/>
    </aspectCategories>
  </sentence>
  <sentence id="104">
    <text>good food good mood</text>
    <aspectCategories>
      <aspectCategory category="food" polarity="positive"/>
      <aspectCategory category="ambience" polarity="positive"/>
    </aspectCategories>
  </sentence>
</sentences>
"""

OPINION_XML = """<?xml version="1.0" encoding="UTF-8"?>
<Reviews>
  <Review rid="1">
    <sentences>
      <sentence id="1:0">
        <text>the fish was fresh</text>
        <Opinions>
          <Opinion target="fish" category="FOOD#QUALITY" polarity="positive"/>
        </Opinions>
      </sentence>
      <sentence id="1:1">
        <text>pricey but lovely room</text>
        <Opinions>
          <Opinion target="NULL" category="RESTAURANT#PRICES" polarity="negative"/>
          <Opinion target="room" category="AMBIENCE#GENERAL" polarity="positive"/>
          <Opinion target="NULL" category="SOMETHING#WEIRD" polarity="positive"/>
        </Opinions>
      </sentence>
      <sentence id="1:2">
        <text>the burger was great, the burger was awful</text>
        <Opinions>
          <Opinion target="burger" category="FOOD#QUALITY" polarity="positive"/>
          <Opinion target="burger" category="FOOD#QUALITY" polarity="negative"/>
        </Opinions>
      </sentence>
    </sentences>
  </Review>
</Reviews>
"""


@pytest.fixture
def sem14_path(tmp_path):
    path = tmp_path / "train.xml"
    path.write_text(SEM14_XML, encoding="utf-8")
    return path


class TestLoadSemeval:
    def test_conflict_pairs_dropped(self, sem14_path):
        examples = load_semeval(sem14_path)
        ids = [e.id for e in examples]
        # 102's only category is conflict: sentence dropped entirely
        assert ids == ["100", "101", "103", "104"]
        by_id = {e.id: e for e in examples}
        # 103 keeps ambience but loses the conflicted service pair
        assert by_id["103"].labels == {"ambience": "positive"}

    def test_counts(self, sem14_path):
        examples = load_semeval(sem14_path)
        assert polarity_counts(examples) == {"positive": 4, "negative": 1, "neutral": 1}

    def test_unknown_polarity_is_schema_error(self, tmp_path):
        bad = SEM14_XML.replace('polarity="neutral"', 'polarity="mixed"')
        path = tmp_path / "bad.xml"
        path.write_text(bad, encoding="utf-8")
        with pytest.raises(SchemaError):
            load_semeval(path)

    def test_malformed_markup_reports_line(self, tmp_path):
        path = tmp_path / "broken.xml"
        path.write_text("<sentences><sentence></sentences>", encoding="utf-8")
        with pytest.raises(SchemaError) as excinfo:
            load_semeval(path)
        assert "line" in str(excinfo.value)

    def test_mams_schema_value(self, sem14_path):
        assert len(load_semeval(sem14_path, schema="mams")) == 4
        with pytest.raises(ValueError):
            load_semeval(sem14_path, schema="semeval2020")


class TestOpinionSchema:
    def test_mapping_and_aggregation(self, tmp_path):
        path = tmp_path / "res15.xml"
        path.write_text(OPINION_XML, encoding="utf-8")
        examples = load_semeval_opinions(path, default_category_map())
        by_id = {e.id: e for e in examples}
        assert by_id["1:0"].labels == {"food": "positive"}
        # unmapped category skipped, the rest renamed
        assert by_id["1:1"].labels == {"price": "negative", "ambience": "positive"}
        # positive+negative on the same category becomes a conflict: dropped
        assert "1:2" not in by_id

    def test_category_map_file(self, tmp_path):
        path = tmp_path / "map.cfg"
        path.write_text("A#B=food\n# comment\nC#D = service\n", encoding="utf-8")
        assert read_category_map(path) == {"A#B": "food", "C#D": "service"}
        bad = tmp_path / "bad.cfg"
        bad.write_text("no equals sign\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_category_map(bad)


class TestHardTest:
    def test_mixed_polarities_kept(self):
        kept = Example(id="a", text="", labels={"food": "positive", "service": "negative"})
        assert build_hard_test([kept]) == [kept]

    def test_single_category_dropped(self):
        e = Example(id="a", text="", labels={"food": "positive"})
        assert build_hard_test([e]) == []

    def test_same_polarity_dropped(self):
        e = Example(id="a", text="", labels={"food": "positive", "service": "positive"})
        assert build_hard_test([e]) == []

    def test_idempotent_strict_filter(self, sem14_path):
        examples = load_semeval(sem14_path)
        hard = build_hard_test(examples)
        assert build_hard_test(hard) == hard
        assert all(e in examples for e in hard)
        assert [e.id for e in hard] == ["100"]


class TestAttachParses:
    def test_round_trip(self, tmp_path):
        examples = [Example(id="1", text="a b"), Example(id="2", text="c")]
        trees = tmp_path / "trees.txt"
        trees.write_text("(S (NP a b))\n(S c)\n", encoding="utf-8")
        enriched = attach_parses(examples, trees)
        assert len(enriched) == 2
        assert enriched[0].tokens == ["a", "b"]
        assert enriched[1].parse == "(S c)"

    def test_count_mismatch(self):
        examples = [Example(id=str(i), text="x") for i in range(3)]
        with pytest.raises(DataError):
            attach_parses(examples, ["(S a)", "(S b)"])

    def test_unparsable_line(self):
        examples = [Example(id="1", text="x")]
        with pytest.raises(DataError) as excinfo:
            attach_parses(examples, ["(S (NP a"])
        assert "line 1" in str(excinfo.value)

    def test_tokens_equal_tree_leaves(self):
        examples = [Example(id="1", text="the food")]
        enriched = attach_parses(examples, ["(NP (DT the) (NN food))"])
        assert enriched[0].tokens == ["the", "food"]


class TestVocab:
    def test_reserved_ids_and_ordering(self):
        examples = [Example(id="1", text="", tokens=["a", "a", "b"])]
        vocab = build_vocab(examples)
        assert vocab.tokens == ["<pad>", "<unk>", "a", "b"]
        assert vocab.id("a") == 2 and vocab.id("b") == 3

    def test_unseen_token_maps_to_unk(self):
        vocab = build_vocab([Example(id="1", text="", tokens=["a"])])
        assert vocab.id("zzz") == vocab.unk_id

    def test_deterministic_rebuild(self):
        rng = np.random.default_rng(3)
        tokens = [f"t{i}" for i in rng.integers(0, 50, size=400)]
        examples = [Example(id="1", text="", tokens=tokens)]
        assert build_vocab(examples).tokens == build_vocab(examples).tokens

    def test_min_count(self):
        examples = [Example(id="1", text="", tokens=["a", "a", "b"])]
        vocab = build_vocab(examples, min_count=2)
        assert "b" not in vocab.index
        assert vocab.id("b") == vocab.unk_id


class TestEmbeddings:
    def test_covered_rows_copied_exactly(self, tmp_path):
        vocab = build_vocab([Example(id="1", text="", tokens=["a", "b", "c", "d"])])
        path = tmp_path / "vec.txt"
        dim = 4
        path.write_text(
            "a 1.0 2.0 3.0 4.0\nb -1.5 0.25 0 7\nzz 9 9 9 9\n", encoding="utf-8"
        )
        matrix, coverage, report = load_pretrained_embeddings(vocab, path, dim=dim, seed=0)
        assert np.array_equal(matrix[vocab.id("a")], [1.0, 2.0, 3.0, 4.0])
        assert np.array_equal(matrix[vocab.id("b")], [-1.5, 0.25, 0.0, 7.0])
        assert coverage == 0.5 and report["covered"] == 2 and report["total"] == 4
        assert np.array_equal(matrix[vocab.pad_id], np.zeros(dim))
        uncovered = matrix[vocab.id("c")]
        assert np.all(np.abs(uncovered) <= 0.25)

    def test_dimension_mismatch(self, tmp_path):
        vocab = build_vocab([Example(id="1", text="", tokens=["a"])])
        path = tmp_path / "vec.txt"
        path.write_text("a 1.0 2.0\n", encoding="utf-8")
        with pytest.raises(EmbeddingFormatError):
            load_pretrained_embeddings(vocab, path, dim=4)

    def test_uncovered_rows_seeded(self, tmp_path):
        vocab = build_vocab([Example(id="1", text="", tokens=["a", "b"])])
        path = tmp_path / "vec.txt"
        path.write_text("a 1 1 1 1\n", encoding="utf-8")
        m1, _, _ = load_pretrained_embeddings(vocab, path, dim=4, seed=11)
        m2, _, _ = load_pretrained_embeddings(vocab, path, dim=4, seed=11)
        assert np.array_equal(m1, m2)


class TestBatchify:
    def _examples(self, count):
        examples, categories = ag.make_toy_corpus()
        out = []
        for i in range(count):
            src = examples[i % len(examples)]
            out.append(Example(id=f"{src.id}-{i}", text=src.text, tokens=src.tokens,
                               parse=src.parse, labels=src.labels))
        return out, categories

    def test_batch_sizes(self):
        examples, categories = self._examples(70)
        vocab = build_vocab(examples)
        batches = batchify(examples, 32, seed=1, vocab=vocab, categories=categories)
        assert [b.size for b in batches] == [32, 32, 6]

    def test_same_seed_same_composition(self):
        examples, categories = self._examples(20)
        vocab = build_vocab(examples)
        first = batchify(examples, 8, seed=42, vocab=vocab, categories=categories)
        second = batchify(examples, 8, seed=42, vocab=vocab, categories=categories)
        for a, b in zip(first, second):
            assert [e.id for e in a.examples] == [e.id for e in b.examples]
            assert np.array_equal(a.token_ids, b.token_ids)

    def test_no_seed_keeps_order(self):
        examples, categories = self._examples(10)
        vocab = build_vocab(examples)
        batches = batchify(examples, 4, seed=None, vocab=vocab, categories=categories)
        flat = [e.id for b in batches for e in b.examples]
        assert flat == [e.id for e in examples]

    def test_node_mask_matches_graph_sizes(self):
        examples, categories = ag.make_toy_corpus()
        vocab = build_vocab(examples)
        batches = batchify(examples, 3, seed=None, vocab=vocab, categories=categories)
        for batch in batches:
            for b, graph in enumerate(batch.graphs):
                assert batch.node_mask[b].sum() == graph.num_nodes
                # leaves coincide with token positions
                assert batch.token_mask[b].sum() == graph.n

    def test_gold_arrays(self):
        examples, categories = ag.make_toy_corpus()
        vocab = build_vocab(examples)
        batch = batchify(examples[:1], 1, seed=None, vocab=vocab, categories=categories)[0]
        j = categories.index("food")
        assert batch.gold_acd[0, j] == 1.0
        assert batch.mentioned_mask[0, j]
        assert batch.gold_acsa[0, j] == ag.POLARITIES.index("positive")
        absent = [i for i in range(len(categories)) if i != j]
        assert np.all(batch.gold_acsa[0, absent] == -1)

    def test_missing_parse_rejected(self):
        examples = [Example(id="1", text="a", labels={"food": "positive"})]
        vocab = build_vocab(examples)
        with pytest.raises(DataError):
            batchify(examples, 1, seed=None, vocab=vocab, categories=("food",))


class TestSplitTrainDev:
    def _corpus(self, rng, count=300):
        out = []
        for i in range(count):
            labels = {"food": ag.POLARITIES[int(rng.integers(0, 3))]}
            if rng.random() < 0.3:
                labels["service"] = ag.POLARITIES[int(rng.integers(0, 3))]
            out.append(Example(id=str(i), text=f"s{i}", labels=labels))
        return out

    def test_counts_hit_exactly_when_feasible(self):
        corpus = self._corpus(np.random.default_rng(0))
        targets = {"positive": 20, "negative": 15, "neutral": 10}
        train, dev = split_train_dev(corpus, seed=5, dev_counts=targets)
        assert polarity_counts(dev) == targets
        assert len(train) + len(dev) == len(corpus)

    def test_deterministic(self):
        corpus = self._corpus(np.random.default_rng(0))
        targets = {"positive": 12, "negative": 8, "neutral": 6}
        a = split_train_dev(corpus, seed=9, dev_counts=targets)
        b = split_train_dev(corpus, seed=9, dev_counts=targets)
        assert [e.id for e in a[1]] == [e.id for e in b[1]]

    def test_fraction_split(self):
        corpus = self._corpus(np.random.default_rng(1), count=100)
        train, dev = split_train_dev(corpus, seed=2, dev_fraction=0.2)
        assert len(dev) == 20 and len(train) == 80


class TestJsonlRoundTrip:
    def test_byte_exact(self, tmp_path):
        examples, _ = ag.make_toy_corpus()
        path1 = tmp_path / "a.jsonl"
        path2 = tmp_path / "b.jsonl"
        write_examples(path1, examples)
        reread = read_examples(path1)
        write_examples(path2, reread)
        assert path1.read_bytes() == path2.read_bytes()
        assert reread == examples

    def test_unicode_preserved(self, tmp_path):
        e = Example(id="u", text="café naïve", tokens=["café", "naïve"],
                    parse="(S (NP café naïve))", labels={"food": "neutral"})
        path = tmp_path / "u.jsonl"
        write_examples(path, [e])
        assert "café" in path.read_text(encoding="utf-8")
        assert read_examples(path) == [e]

    def test_bad_record_reports_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"id": "1"}\n', encoding="utf-8")
        with pytest.raises(DataError) as excinfo:
            read_examples(path)
        assert "line 1" in str(excinfo.value)


label_texts = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=20
)


@settings(max_examples=100, deadline=None)
@given(
    text=label_texts,
    cats=st.lists(st.sampled_from(["food", "service", "price", "ambience"]),
                  min_size=1, max_size=4, unique=True),
    pols=st.lists(st.sampled_from(ag.POLARITIES), min_size=4, max_size=4),
)
def test_property_jsonl_round_trip(tmp_path_factory, text, cats, pols):
    tmp = tmp_path_factory.mktemp("jsonl")
    labels = {c: p for c, p in zip(cats, pols)}
    e = Example(id="x", text=text, tokens=["a"], parse="(S a)", labels=labels)
    path1, path2 = tmp / "a.jsonl", tmp / "b.jsonl"
    write_examples(path1, [e])
    again = read_examples(path1)
    write_examples(path2, again)
    assert again == [e]
    assert path1.read_bytes() == path2.read_bytes()


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_property_hard_test_strict_subset(seed):
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(int(rng.integers(1, 20))):
        n_labels = int(rng.integers(1, 4))
        cats = rng.choice(["food", "service", "price"], size=n_labels, replace=False)
        labels = {str(c): ag.POLARITIES[int(rng.integers(0, 3))] for c in cats}
        corpus.append(Example(id=str(i), text="", labels=labels))
    hard = build_hard_test(corpus)
    assert all(e in corpus for e in hard)
    assert build_hard_test(hard) == hard
    for e in hard:
        assert len(e.labels) >= 2 and len(set(e.labels.values())) >= 2
