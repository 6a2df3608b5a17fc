import json

import numpy as np
import pytest

import aspectgraph as ag
from aspectgraph.data import DatasetBundle, Example
from aspectgraph.evaluate import (
    accuracy,
    acd_metrics,
    attention_record,
    dataset_accuracy,
    dump_attention,
    predict_example,
    run_ablation_suite,
    write_comparison,
)
from aspectgraph.model import ModelConfig, forward, init_params, load_checkpoint, save_checkpoint
from aspectgraph.train import TrainConfig


class TestAccuracy:
    def test_all_correct(self):
        pred = np.array([[0, 1], [2, 0]])
        gold = np.array([[0, 1], [2, -1]])
        mask = np.array([[True, True], [True, False]])
        assert accuracy(pred, gold, mask) == 1.0

    def test_three_of_four(self):
        pred = np.array([[0, 1], [2, 0]])
        gold = np.array([[0, 1], [1, 0]])
        mask = np.ones((2, 2), dtype=bool)
        assert accuracy(pred, gold, mask) == 0.75

    def test_pairs_outside_mask_ignored(self):
        pred = np.array([[0, 9]])
        gold = np.array([[0, 1]])
        mask = np.array([[True, False]])
        assert accuracy(pred, gold, mask) == 1.0

    def test_empty_gold_set_rejected(self):
        with pytest.raises(ValueError):
            accuracy(np.zeros((1, 2)), np.zeros((1, 2)), np.zeros((1, 2), dtype=bool))

    def test_permutation_invariant_and_bounded(self):
        rng = np.random.default_rng(0)
        pred = rng.integers(0, 3, size=(10, 4))
        gold = rng.integers(0, 3, size=(10, 4))
        mask = rng.random((10, 4)) < 0.6
        mask[0, 0] = True
        base = accuracy(pred, gold, mask)
        perm = rng.permutation(10)
        assert accuracy(pred[perm], gold[perm], mask[perm]) == base
        assert 0.0 <= base <= 1.0


class TestAcdMetrics:
    def test_perfect_diagonal(self):
        probs = np.array([[0.9, 0.1], [0.2, 0.8]])
        gold = np.array([[1.0, 0.0], [0.0, 1.0]])
        m = acd_metrics(probs, gold)
        assert m["precision"] == m["recall"] == m["f1"] == 1.0
        assert not m["no_predicted_positives"]

    def test_no_positives_flagged(self):
        probs = np.full((2, 3), 0.49)
        gold = np.ones((2, 3))
        m = acd_metrics(probs, gold)
        assert m["precision"] == 0.0 and m["f1"] == 0.0
        assert m["no_predicted_positives"]

    def test_hand_counted_confusion(self):
        # 6 pairs: tp=2, fp=1, fn=1, tn=2
        probs = np.array([[0.9, 0.6, 0.1], [0.2, 0.7, 0.3]])
        gold = np.array([[1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])
        m = acd_metrics(probs, gold)
        assert (m["true_positives"], m["false_positives"], m["false_negatives"]) == (2, 1, 1)
        assert m["precision"] == pytest.approx(2 / 3)
        assert m["recall"] == pytest.approx(2 / 3)
        assert m["f1"] == pytest.approx(2 / 3)


@pytest.fixture
def toy_model(toy_setup):
    config = toy_setup["config"]
    params = init_params(config, np.random.default_rng(11), "full")
    return params, config


class TestAttentionDump:
    def test_record_contents(self, toy_setup, toy_model):
        params, config = toy_model
        batch = toy_setup["batches"][0]
        out, _ = forward(batch, params, config)
        record = attention_record(batch.examples[0], out, 0,
                                  toy_setup["categories"], graph=batch.graphs[0])
        graph = batch.graphs[0]
        assert len(record["nodes"]) == graph.num_nodes
        assert record["tokens"] == batch.examples[0].tokens
        for weights in record["beta"].values():
            assert abs(sum(weights) - 1.0) <= 1e-6
        for task_rows in record["gat_attention"].values():
            for row in task_rows:
                assert abs(sum(sum(h) for h in row["heads"]) / len(row["heads"]) - 1.0) <= 1e-6
        for node in record["nodes"]:
            start, end = node["span"]
            assert 0 <= start < end <= len(record["tokens"])
        assert set(record["gold"]) <= set(toy_setup["categories"])

    def test_dump_writes_json_and_heatmap(self, toy_setup, toy_model, tmp_path):
        params, config = toy_model
        batch = toy_setup["batches"][0]
        out, _ = forward(batch, params, config)
        json_path = tmp_path / "dump.json"
        png_path = tmp_path / "dump.png"
        record = dump_attention(batch.examples[0], out, 0, toy_setup["categories"],
                                json_path, graph=batch.graphs[0], heatmap_path=png_path)
        loaded = json.loads(json_path.read_text(encoding="utf-8"))
        assert loaded == record
        assert loaded["version"] == 1
        assert png_path.exists() and png_path.stat().st_size > 0

    def test_deterministic(self, toy_setup, toy_model, tmp_path):
        params, config = toy_model
        batch = toy_setup["batches"][0]
        out, _ = forward(batch, params, config)
        a = attention_record(batch.examples[1], out, 1, toy_setup["categories"],
                             graph=batch.graphs[1])
        b = attention_record(batch.examples[1], out, 1, toy_setup["categories"],
                             graph=batch.graphs[1])
        assert a == b

    def test_node_count_mismatch_rejected(self, toy_setup, toy_model):
        params, config = toy_model
        batch = toy_setup["batches"][0]
        out, _ = forward(batch, params, config)
        other = ag.tree_to_graph(ag.parse_bracketed("(S (NP a b) (VP c))"))
        assert other.num_nodes != batch.graphs[0].num_nodes
        with pytest.raises(ag.DataError):
            attention_record(batch.examples[0], out, 0, toy_setup["categories"],
                             graph=other)


class TestPredictExample:
    def _checkpoint(self, toy_setup, tmp_path, variant="full"):
        config = toy_setup["config"]
        params = init_params(config, np.random.default_rng(4), variant)
        path = tmp_path / "ckpt.npz"
        save_checkpoint(path, params, config, toy_setup["vocab"].tokens,
                        toy_setup["categories"], ag.POLARITIES, variant)
        return load_checkpoint(path)

    def test_polarities_in_codomain(self, toy_setup, tmp_path):
        checkpoint = self._checkpoint(toy_setup, tmp_path)
        result = predict_example(checkpoint, "(S (NP (DT the) (NN food)) (VP (VBD was)))",
                                 threshold=0.0)
        assert result["tokens"] == ["the", "food", "was"]
        for item in result["detected"]:
            assert item["polarity"] in ag.POLARITIES

    def test_deterministic(self, toy_setup, tmp_path):
        checkpoint = self._checkpoint(toy_setup, tmp_path)
        parse = "(S (NP (JJ great) (NN food)))"
        assert predict_example(checkpoint, parse) == predict_example(checkpoint, parse)

    def test_no_tree_checkpoint(self, toy_setup, tmp_path):
        checkpoint = self._checkpoint(toy_setup, tmp_path, variant="no_tree")
        result = predict_example(checkpoint, "(S (NP (JJ great) (NN food)))",
                                 threshold=0.0)
        record = result["attention"]
        # nodes are the tokens themselves; no graph-attention rows
        assert [n["text"] for n in record["nodes"]] == ["great", "food"]
        assert record["gat_attention"] == {}


class TestAblationSuite:
    def test_three_variant_rows(self, toy_corpus, tmp_path):
        examples, categories = toy_corpus
        bundle = DatasetBundle.from_splits(examples, examples[:4], examples[4:], categories)
        config = TrainConfig(learning_rate=0.01, batch_size=8, embed_dim=8,
                             num_heads=2, max_epochs=2, patience=2, runs=1, seed=1)
        rows = run_ablation_suite(bundle, config, dataset_name="toy")
        assert [row["variant"] for row in rows] == ["full", "no_iloss", "no_tree"]
        for row in rows:
            assert 0.0 <= row["mean_test_accuracy"] <= 1.0
        csv_path = tmp_path / "cmp.csv"
        json_path = tmp_path / "cmp.json"
        write_comparison(rows, csv_path, json_path)
        text = csv_path.read_text(encoding="utf-8")
        assert text.splitlines()[0].startswith("dataset,variant")
        assert len(text.splitlines()) == 4
        assert len(json.loads(json_path.read_text(encoding="utf-8"))) == 3
