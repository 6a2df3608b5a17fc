"""Where does each aspect category look?  Attention export on a trained
toy model.

Overfits the toy corpus, then dumps the per-category node attention for
the two-category sentence "great food awful service" as JSON plus a
heatmap PNG next to this script.  The dump carries every node's span and
tag, the per-category weights, and the per-head graph-attention rows.

A note on reading it: with eight sentences and random embeddings the
model is free to solve the task through complementary node choices, so
the categories separate (near-orthogonal weights) but need not sit on
the human-obvious constituent; the clean localisation effect belongs to
full-scale training with pretrained vectors.  Run with:

    python3 demos/05_attention_dump.py
"""

from pathlib import Path

import numpy as np

import aspectgraph as ag
from aspectgraph.data import DatasetBundle
from aspectgraph.evaluate import dump_attention
from aspectgraph.train import TrainConfig, train_one_run


def main():
    examples, categories = ag.make_toy_corpus()
    bundle = DatasetBundle.from_splits(examples, [], [], categories)
    config = TrainConfig(learning_rate=0.01, batch_size=8, embed_dim=32,
                         num_heads=4, max_epochs=150, patience=150, seed=2)
    print("overfitting the toy corpus (150 epochs)...")
    result = train_one_run(config, bundle)
    print(f"final train accuracy: {result.best_dev_accuracy:.3f}")

    target = [e for e in examples if e.id == "t7"][0]
    batch = ag.batchify([target], 1, seed=None, vocab=result.vocab,
                        categories=categories)[0]
    out, _ = ag.forward(batch, result.params, result.model_config)

    out_dir = Path(__file__).parent / "out"
    out_dir.mkdir(exist_ok=True)
    record = dump_attention(target, out, 0, categories,
                            out_dir / "attention_t7.json",
                            graph=batch.graphs[0],
                            heatmap_path=out_dir / "attention_t7.png")
    print(f"\nsentence: {target.text!r}  gold: {target.labels}")
    print(f"wrote {out_dir / 'attention_t7.json'} and {out_dir / 'attention_t7.png'}")

    for cat in categories:
        weights = np.array(record["beta"][cat])
        top = np.argsort(weights)[::-1][:3]
        print(f"\ntop nodes for {cat!r}:")
        for i in top:
            node = record["nodes"][int(i)]
            print(f"  {weights[i]:.3f}  [{node['tag']:<4}] {node['text']!r}")
        info = record["predicted"][cat]
        print(f"  detected={info['detected']} (p={info['detection_probability']:.3f}), "
              f"polarity: {info['polarity']}")

    food = np.array(record["beta"]["food"])
    service = np.array(record["beta"]["service"])
    cosine = float(food @ service / (np.linalg.norm(food) * np.linalg.norm(service)))
    print(f"\ncosine between the two mentioned categories' weight vectors: "
          f"{cosine:.3f} (the interactive loss pushes these apart)")


if __name__ == "__main__":
    main()
