"""Checking the hand-written backward pass with finite differences.

Every layer's backward pass in this package is derived and coded by hand,
so the one test that really matters is: does the analytic gradient of the
full objective match a central finite-difference estimate?  This demo runs
that check on a small model and prints the per-group worst relative error.
Run with:

    python3 demos/03_gradient_check.py
"""

import numpy as np

import aspectgraph as ag
from aspectgraph.model import acd_loss, acsa_loss, interactive_loss, total_loss

STEP = 1e-5
SAMPLES_PER_GROUP = 30


def main():
    examples, categories = ag.make_toy_corpus()
    vocab = ag.build_vocab(examples)
    batch = ag.batchify(examples[:2], 2, seed=None, vocab=vocab, categories=categories)[0]
    config = ag.ModelConfig(vocab_size=vocab.size, num_categories=len(categories),
                            embed_dim=8, num_heads=2)
    params = ag.init_params(config, np.random.default_rng(1))
    weights = ag.LossWeights()

    def loss_value(p):
        out, _ = ag.forward(batch, p, config)
        return total_loss(
            acd_loss(out.y_acd, batch.gold_acd),
            interactive_loss(out.y_acd),
            acsa_loss(out.y_acsa, batch.gold_acsa, batch.mentioned_mask),
            p, weights,
        )

    _, _, grads, _ = ag.objective(batch, params, config, weights)
    rng = np.random.default_rng(0)
    print(f"{'parameter group':<14} {'shape':<12} {'max rel err':>12}")
    overall = 0.0
    for name, value in params.items():
        flat = value.reshape(-1)
        g = grads[name].reshape(-1)
        idxs = (np.arange(flat.size) if flat.size <= SAMPLES_PER_GROUP
                else rng.choice(flat.size, SAMPLES_PER_GROUP, replace=False))
        worst = 0.0
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + STEP
            up = loss_value(params)
            flat[i] = orig - STEP
            down = loss_value(params)
            flat[i] = orig
            fd = (up - down) / (2 * STEP)
            rel = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-5)
            worst = max(worst, rel)
        overall = max(overall, worst)
        print(f"{name:<14} {str(value.shape):<12} {worst:>12.2e}")
    print(f"\noverall worst relative error: {overall:.2e} "
          f"(anything near 1e-5 is finite-difference noise; a backward bug "
          f"shows up around 1e-1)")


if __name__ == "__main__":
    main()
