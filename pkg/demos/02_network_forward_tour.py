"""A guided forward pass through the network.

Shows each stage on a tiny batch: embeddings, LSTM states, the two
graph-attention stacks over the constituency graph, per-category node
attention, and the two prediction heads, with the invariants each stage
guarantees.  Run with:

    python3 demos/02_network_forward_tour.py
"""

import numpy as np

import aspectgraph as ag
from aspectgraph.model import acd_loss, acsa_loss, interactive_loss, total_loss


def main():
    examples, categories = ag.make_toy_corpus()
    vocab = ag.build_vocab(examples)
    print(f"toy corpus: {len(examples)} sentences, categories {categories}")
    print(f"vocabulary ({vocab.size} entries): {vocab.tokens}")

    batch = ag.batchify(examples, 4, seed=None, vocab=vocab, categories=categories)[0]
    B, T = batch.token_ids.shape
    V = batch.adjacency.shape[1]
    print(f"\nbatch: {B} sentences, {T} token slots, {V} node slots")
    print("node_mask row sums equal each sentence's n+m:",
          batch.node_mask.sum(1).tolist())

    config = ag.ModelConfig(vocab_size=vocab.size, num_categories=len(categories),
                            embed_dim=12, num_heads=3)
    params = ag.init_params(config, np.random.default_rng(0))
    out, _ = ag.forward(batch, params, config)

    print(f"\ndetection table y_acd: {out.y_acd.shape}  (sentence, source cat, target cat)")
    print("  all entries in (0,1):", bool(np.all((out.y_acd > 0) & (out.y_acd < 1))))
    print(f"sentiment table y_acsa: {out.y_acsa.shape}")
    print("  row sums:", np.round(out.y_acsa.sum(-1)[0], 12).tolist())
    print(f"node attention beta: {out.beta.shape}")
    print("  row sums:", np.round(out.beta.sum(-1)[0], 12).tolist())
    print("  masked nodes get exactly zero:",
          bool(np.all(out.beta[0][:, ~batch.node_mask[0]] == 0.0)))
    print(f"graph attention alpha: {out.alpha_acd.shape}  (sentence, head, dst, src)")
    root = int(batch.token_mask[0].sum())  # first internal node
    print(f"  head-0 coefficients of sentence 0's root over its leaves:",
          np.round(out.alpha_acd[0, 0, root, :root], 4).tolist())

    l_acd = acd_loss(out.y_acd, batch.gold_acd)
    l_int = interactive_loss(out.y_acd)
    l_acsa = acsa_loss(out.y_acsa, batch.gold_acsa, batch.mentioned_mask)
    print("\nloss components at random initialisation:")
    print(f"  detection        {l_acd:.4f}")
    print(f"  interactive      {l_int:.4f}   (penalises off-diagonal detection)")
    print(f"  sentiment        {l_acsa:.4f}")
    weights = ag.LossWeights()
    print(f"  combined         {total_loss(l_acd, l_int, l_acsa, params, weights):.4f}"
          f"   (unit weights, L2 1e-5)")

    # with three categories and ~uniform probabilities the analytic values
    # are 3*ln2 for detection-at-0.5 and ln3 for a uniform sentiment row
    print("\nsanity anchors: 3*ln2 =", round(3 * np.log(2), 4),
          " ln3 =", round(np.log(3), 4))


if __name__ == "__main__":
    main()
