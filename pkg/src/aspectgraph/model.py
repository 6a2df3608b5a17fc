"""The network: embeddings, LSTM encoder, two graph-attention stacks over
the constituency graph, per-category attention, detection and sentiment
heads, and the training objective.

The detection side scores, for every category j, how well the attention
pooled from j's weight vector predicts every category i; its diagonal is
the detection loss, its off-diagonal entries feed the interactive loss
that punishes category representations able to predict other categories.
The sentiment head reuses the same per-category weights over the second
graph-attention stack's states.

Variants: ``full`` is the whole network; ``no_iloss`` is the same network
trained with the interactive-loss weight at zero; ``no_tree`` drops both
graph-attention stacks and attends directly over the LSTM states.
"""

from __future__ import annotations

import functools
import hashlib
import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import layers
from .data import Batch
from .layers import (
    aspect_attention_backward,
    aspect_attention_forward,
    embedding_backward,
    embedding_forward,
    gat_backward,
    gat_coefficients,
    gat_forward,
    lstm_backward,
    lstm_forward,
    masked_softmax,
    sigmoid,
    softmax_backward,
    weighted_pool_backward,
    weighted_pool_forward,
)

logger = logging.getLogger(__name__)

_einsum = functools.partial(np.einsum, optimize=True)

VARIANTS = ("full", "no_iloss", "no_tree")
PROB_CLAMP = 1e-12  # probabilities are clipped to [clamp, 1-clamp] before logs
CHECKPOINT_VERSION = 1

__all__ = [
    "VARIANTS",
    "ModelConfig",
    "ModelOutput",
    "LossWeights",
    "CheckpointError",
    "init_params",
    "forward",
    "backward",
    "objective",
    "embed",
    "encode",
    "gat_coefficients",
    "gat_layer",
    "aspect_attention",
    "acd_predict",
    "acsa_predict",
    "acd_loss",
    "interactive_loss",
    "acsa_loss",
    "l2_norm",
    "total_loss",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    num_categories: int
    embed_dim: int = 300
    num_heads: int = 4
    num_polarities: int = 3

    def __post_init__(self):
        if self.embed_dim % self.num_heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} is not divisible by num_heads {self.num_heads}"
            )
        if self.num_categories < 1 or self.num_polarities < 2:
            raise ValueError("need at least one category and two polarity labels")


@dataclass
class ModelOutput:
    """Per-batch predictions and attention maps.

    y_acd[b, j, i] is the probability that category i is mentioned, read
    from category j's pooled representation; y_acsa[b, j] is the sentiment
    distribution for category j; beta[b, j] the attention over nodes; the
    alpha arrays hold per-head graph-attention coefficients (None for the
    no_tree variant).
    """

    y_acd: np.ndarray
    y_acsa: np.ndarray
    beta: np.ndarray
    alpha_acd: np.ndarray | None
    alpha_acsa: np.ndarray | None
    node_mask: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    acd: float = 1.0
    interactive: float = 1.0
    acsa: float = 1.0
    l2: float = 1e-5

    def __post_init__(self):
        if min(self.acd, self.interactive, self.acsa, self.l2) < 0:
            raise ValueError("loss weights must be nonnegative")


def _xavier(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(
    config: ModelConfig,
    rng: np.random.Generator,
    variant: str = "full",
    embedding: np.ndarray | None = None,
) -> dict[str, np.ndarray]:
    """Fresh parameter dictionary.

    ``embedding`` may carry a pretrained matrix (copied); otherwise rows are
    uniform in [-0.25, 0.25].  The padding row is zero either way and stays
    zero during training because nothing ever reaches it.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    d, L = config.embed_dim, config.num_heads
    k = d // L
    N, M = config.num_categories, config.num_polarities

    if embedding is not None:
        if embedding.shape != (config.vocab_size, d):
            raise ValueError(
                f"embedding shape {embedding.shape} does not match ({config.vocab_size}, {d})"
            )
        emb = np.array(embedding, dtype=np.float64)
    else:
        emb = rng.uniform(-0.25, 0.25, size=(config.vocab_size, d))
    emb[0] = 0.0

    s = 1.0 / np.sqrt(d)
    params = {
        "embedding": emb,
        "lstm_W": rng.uniform(-s, s, size=(4 * d, d)),
        "lstm_U": rng.uniform(-s, s, size=(4 * d, d)),
        "lstm_b": np.zeros(4 * d),
        "attn_W": _xavier(rng, (N, d, d), d, d),
        "attn_b": np.zeros((N, d)),
        "attn_u": _xavier(rng, (N, d), d, 1),
        "acd_W": _xavier(rng, (N, d), d, 1),
        "acd_b": np.zeros(N),
        "acsa_W1": _xavier(rng, (d, d), d, d),
        "acsa_W2": _xavier(rng, (M, d), d, M),
        "acsa_b1": np.zeros((N, d)),
        "acsa_b2": np.zeros((N, M)),
    }
    if variant != "no_tree":
        for task in ("acd", "acsa"):
            params[f"gat_{task}_W"] = _xavier(rng, (L, k, d), d, k)
            params[f"gat_{task}_a"] = _xavier(rng, (L, 2 * k), 2 * k, 1)
    return params


def forward(batch: Batch, params: dict, config: ModelConfig, variant: str = "full"):
    """Run the network on one batch; returns (ModelOutput, cache).

    Deterministic given (batch, params); no state is mutated.
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    token_mask = batch.token_mask
    B, T = batch.token_ids.shape
    d = config.embed_dim

    E, emb_cache = embedding_forward(batch.token_ids, params["embedding"])
    H, lstm_cache = lstm_forward(E, params["lstm_W"], params["lstm_U"], params["lstm_b"])
    H_masked = H * token_mask[..., None]

    if variant == "no_tree":
        node_mask = token_mask
        X_acd = X_acsa = H_masked
        alpha_acd = alpha_acsa = None
        gat_caches = None
    else:
        V = batch.adjacency.shape[1]
        if V < T:
            raise ValueError("node axis shorter than token axis")
        node_mask = batch.node_mask
        X0 = np.zeros((B, V, d))
        X0[:, :T] = H_masked  # internal and padded node rows stay zero
        X_acd, alpha_acd, cache_acd = gat_forward(
            X0, batch.adjacency, params["gat_acd_W"], params["gat_acd_a"]
        )
        X_acsa, alpha_acsa, cache_acsa = gat_forward(
            X0, batch.adjacency, params["gat_acsa_W"], params["gat_acsa_a"]
        )
        gat_caches = (cache_acd, cache_acsa)

    beta, attn_cache = aspect_attention_forward(
        X_acd, node_mask, params["attn_W"], params["attn_b"], params["attn_u"]
    )
    r_acd, pool_acd_cache = weighted_pool_forward(beta, X_acd)
    r_acsa, pool_acsa_cache = weighted_pool_forward(beta, X_acsa)

    acd_logits = r_acd @ params["acd_W"].T + params["acd_b"]
    y_acd = sigmoid(acd_logits)

    acsa_pre = r_acsa @ params["acsa_W1"].T + params["acsa_b1"][None]
    acsa_hidden = np.maximum(acsa_pre, 0.0)
    acsa_logits = acsa_hidden @ params["acsa_W2"].T + params["acsa_b2"][None]
    y_acsa = masked_softmax(acsa_logits, np.ones_like(acsa_logits, dtype=bool))

    output = ModelOutput(
        y_acd=y_acd,
        y_acsa=y_acsa,
        beta=beta,
        alpha_acd=alpha_acd,
        alpha_acsa=alpha_acsa,
        node_mask=node_mask,
    )
    cache = {
        "variant": variant,
        "token_mask": token_mask,
        "emb": emb_cache,
        "lstm": lstm_cache,
        "gat": gat_caches,
        "attn": attn_cache,
        "pool_acd": pool_acd_cache,
        "pool_acsa": pool_acsa_cache,
        "X_acd": X_acd,
        "X_acsa": X_acsa,
        "r_acd": r_acd,
        "r_acsa": r_acsa,
        "acsa_pre": acsa_pre,
        "acsa_hidden": acsa_hidden,
        "T": T,
    }
    return output, cache


def backward(d_y_acd, d_y_acsa, output: ModelOutput, cache: dict, params: dict):
    """Parameter gradients given gradients w.r.t. the output probabilities."""
    grads = {name: np.zeros_like(value) for name, value in params.items()}

    # heads: probability-space gradients to logit-space
    d_acd_logits = d_y_acd * output.y_acd * (1.0 - output.y_acd)
    d_acsa_logits = softmax_backward(output.y_acsa, d_y_acsa)

    r_acd, r_acsa = cache["r_acd"], cache["r_acsa"]
    grads["acd_W"] = _einsum("bni,bnd->id", d_acd_logits, r_acd)
    grads["acd_b"] = d_acd_logits.sum(axis=(0, 1))
    d_r_acd = d_acd_logits @ params["acd_W"]

    hidden = cache["acsa_hidden"]
    grads["acsa_W2"] = _einsum("bnm,bnd->md", d_acsa_logits, hidden)
    grads["acsa_b2"] = d_acsa_logits.sum(axis=0)
    d_hidden = d_acsa_logits @ params["acsa_W2"]
    d_pre = d_hidden * (cache["acsa_pre"] > 0)
    grads["acsa_W1"] = _einsum("bnd,bne->de", d_pre, r_acsa)
    grads["acsa_b1"] = d_pre.sum(axis=0)
    d_r_acsa = d_pre @ params["acsa_W1"]

    d_beta_acd, d_X_acd = weighted_pool_backward(d_r_acd, cache["pool_acd"])
    d_beta_acsa, d_X_acsa = weighted_pool_backward(d_r_acsa, cache["pool_acsa"])
    d_beta = d_beta_acd + d_beta_acsa

    d_X_attn, grads["attn_W"], grads["attn_b"], grads["attn_u"] = aspect_attention_backward(
        d_beta, cache["attn"]
    )
    d_X_acd = d_X_acd + d_X_attn

    if cache["variant"] == "no_tree":
        d_H = (d_X_acd + d_X_acsa) * cache["token_mask"][..., None]
    else:
        cache_acd, cache_acsa = cache["gat"]
        d_X0_a, grads["gat_acd_W"], grads["gat_acd_a"] = gat_backward(d_X_acd, cache_acd)
        d_X0_b, grads["gat_acsa_W"], grads["gat_acsa_a"] = gat_backward(d_X_acsa, cache_acsa)
        d_X0 = d_X0_a + d_X0_b
        d_H = d_X0[:, : cache["T"]] * cache["token_mask"][..., None]

    d_E, grads["lstm_W"], grads["lstm_U"], grads["lstm_b"] = lstm_backward(d_H, cache["lstm"])
    grads["embedding"] = embedding_backward(d_E, cache["emb"])
    return grads


# ------------------------------------------------------------------- losses

def _clip(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _inside(p):
    # derivative of the clip: zero once a probability has been clamped
    return (p >= PROB_CLAMP) & (p <= 1.0 - PROB_CLAMP)


def _batch_scale(arr, core_dims):
    lead = arr.shape[: arr.ndim - core_dims]
    return int(np.prod(lead)) if lead else 1


def acd_loss(y_acd, gold_acd) -> float:
    """Binary cross-entropy over the diagonal of the detection table:
    category j's own probability read from its own representation.

    Accepts (N, N) with gold (N,), or batched (B, N, N); batches average
    the per-sentence losses.
    """
    y_acd = np.asarray(y_acd, dtype=np.float64)
    gold = np.asarray(gold_acd, dtype=np.float64)
    diag = np.diagonal(y_acd, axis1=-2, axis2=-1)
    p = _clip(diag)
    per = -(gold * np.log(p) + (1.0 - gold) * np.log(1.0 - p)).sum(axis=-1)
    return float(np.mean(per))


def acd_loss_grad(y_acd, gold_acd):
    y_acd = np.asarray(y_acd, dtype=np.float64)
    gold = np.asarray(gold_acd, dtype=np.float64)
    N = y_acd.shape[-1]
    scale = _batch_scale(y_acd, 2)
    diag = np.diagonal(y_acd, axis1=-2, axis2=-1)
    p = _clip(diag)
    d_diag = -(gold / p - (1.0 - gold) / (1.0 - p)) * _inside(diag) / scale
    d = np.zeros_like(y_acd)
    idx = np.arange(N)
    d[..., idx, idx] = d_diag
    return d


def interactive_loss(y_acd) -> float:
    """Mean off-diagonal penalty: how much category j's representation
    predicts every other category i.  Defined as zero when there is a
    single category (empty sum)."""
    y_acd = np.asarray(y_acd, dtype=np.float64)
    N = y_acd.shape[-1]
    if N < 2:
        return 0.0
    off = ~np.eye(N, dtype=bool)
    per = -(np.log(1.0 - _clip(y_acd)) * off).sum(axis=(-2, -1)) / (N - 1)
    return float(np.mean(per))


def interactive_loss_grad(y_acd):
    y_acd = np.asarray(y_acd, dtype=np.float64)
    N = y_acd.shape[-1]
    d = np.zeros_like(y_acd)
    if N < 2:
        return d
    scale = _batch_scale(y_acd, 2)
    off = ~np.eye(N, dtype=bool)
    p = _clip(y_acd)
    d += off * _inside(y_acd) / (1.0 - p) / (N - 1) / scale
    return d


def acsa_loss(y_acsa, gold_acsa, mentioned_mask) -> float:
    """Negative log-likelihood of the gold polarity, summed over the
    mentioned categories of each sentence; batches average the sums.
    Sentences with no mentioned category contribute zero (logged)."""
    y_acsa = np.asarray(y_acsa, dtype=np.float64)
    gold = np.asarray(gold_acsa)
    mask = np.asarray(mentioned_mask, dtype=bool)
    if not mask.any():
        logger.warning("sentiment loss over an empty mentioned set; returning 0")
        return 0.0
    safe_gold = np.where(mask, gold, 0)
    p = np.take_along_axis(y_acsa, safe_gold[..., None], axis=-1)[..., 0]
    per = -(np.log(_clip(p)) * mask).sum(axis=-1)
    return float(np.mean(per))


def acsa_loss_grad(y_acsa, gold_acsa, mentioned_mask):
    y_acsa = np.asarray(y_acsa, dtype=np.float64)
    gold = np.asarray(gold_acsa)
    mask = np.asarray(mentioned_mask, dtype=bool)
    d = np.zeros_like(y_acsa)
    if not mask.any():
        return d
    scale = _batch_scale(y_acsa, 2)
    safe_gold = np.where(mask, gold, 0)
    p = np.take_along_axis(y_acsa, safe_gold[..., None], axis=-1)[..., 0]
    dp = -(mask / _clip(p)) * _inside(p) / scale
    np.put_along_axis(d, safe_gold[..., None], dp[..., None], axis=-1)
    d *= mask[..., None]
    return d


def l2_norm(params: dict) -> float:
    # overflow to inf is fine here: it is how divergence gets detected
    with np.errstate(over="ignore"):
        return float(sum((v ** 2).sum() for v in params.values()))


def total_loss(l_acd: float, l_interactive: float, l_acsa: float,
               params: dict, weights: LossWeights) -> float:
    """Weighted sum of the three task losses plus L2 over all parameters."""
    return (
        weights.acd * l_acd
        + weights.interactive * l_interactive
        + weights.acsa * l_acsa
        + weights.l2 * l2_norm(params)
    )


def objective(batch: Batch, params: dict, config: ModelConfig,
              weights: LossWeights = LossWeights(), variant: str = "full"):
    """One training step's loss and gradients.

    Returns (total, parts, grads, output) where parts holds the unweighted
    loss components.
    """
    output, cache = forward(batch, params, config, variant)
    l_acd = acd_loss(output.y_acd, batch.gold_acd)
    l_int = interactive_loss(output.y_acd)
    l_acsa = acsa_loss(output.y_acsa, batch.gold_acsa, batch.mentioned_mask)

    d_y_acd = weights.acd * acd_loss_grad(output.y_acd, batch.gold_acd)
    if weights.interactive != 0.0:
        d_y_acd = d_y_acd + weights.interactive * interactive_loss_grad(output.y_acd)
    d_y_acsa = weights.acsa * acsa_loss_grad(output.y_acsa, batch.gold_acsa,
                                             batch.mentioned_mask)

    grads = backward(d_y_acd, d_y_acsa, output, cache, params)
    for name, value in params.items():
        grads[name] += 2.0 * weights.l2 * value

    total = total_loss(l_acd, l_int, l_acsa, params, weights)
    parts = {"acd": l_acd, "interactive": l_int, "acsa": l_acsa,
             "l2": l2_norm(params)}
    return total, parts, grads, output


# ----------------------------------------------- single-sentence operations

def embed(token_ids, params) -> np.ndarray:
    """Embedding rows for a 1-D id sequence: (T,) -> (T, d)."""
    ids = np.asarray(token_ids)
    matrix = params["embedding"]
    if ids.size and (ids.min() < 0 or ids.max() >= matrix.shape[0]):
        raise IndexError("token id outside the vocabulary")
    return matrix[ids]


def encode(E, params) -> np.ndarray:
    """LSTM states for one sentence: (T, d) -> (T, d); T must be >= 1."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1:
        raise ValueError("expected a nonempty (T, d) embedding matrix")
    H, _ = lstm_forward(E[None], params["lstm_W"], params["lstm_U"], params["lstm_b"])
    return H[0]


def gat_layer(H, graph, W, a) -> np.ndarray:
    """Graph-attention states for one sentence: H is (n, d) leaf states
    aligned with the graph's leaves; returns (n+m, d)."""
    H = np.asarray(H, dtype=np.float64)
    if H.shape[0] != graph.n:
        raise ValueError(f"expected {graph.n} leaf states, got {H.shape[0]}")
    V = graph.num_nodes
    X = np.zeros((1, V, H.shape[1]))
    X[0, : graph.n] = H
    adjacency = graph.adjacency()[None]
    out, _, _ = gat_forward(X, adjacency, W, a)
    return out[0]


def aspect_attention(H_g, j, params, node_mask=None) -> np.ndarray:
    """Attention weights of category j over one sentence's nodes."""
    H_g = np.asarray(H_g, dtype=np.float64)
    V = H_g.shape[0]
    if node_mask is None:
        node_mask = np.ones(V, dtype=bool)
    beta, _ = aspect_attention_forward(
        H_g[None], np.asarray(node_mask, dtype=bool)[None],
        params["attn_W"], params["attn_b"], params["attn_u"]
    )
    return beta[0, j]


def acd_predict(H_g_acd, beta_j, params):
    """Pooled representation and detection probabilities for one category:
    returns (r_j, y_row) with y_row[i] the probability of category i."""
    r = np.asarray(beta_j) @ np.asarray(H_g_acd)
    logits = params["acd_W"] @ r + params["acd_b"]
    return r, sigmoid(logits)


def acsa_predict(H_g_acsa, beta_j, j, params) -> np.ndarray:
    """Sentiment distribution for category j from the shared weights."""
    r = np.asarray(beta_j) @ np.asarray(H_g_acsa)
    hidden = np.maximum(params["acsa_W1"] @ r + params["acsa_b1"][j], 0.0)
    logits = params["acsa_W2"] @ hidden + params["acsa_b2"][j]
    logits = logits - logits.max()
    e = np.exp(logits)
    return e / e.sum()


# --------------------------------------------------------------- checkpoint

class CheckpointError(Exception):
    """Unreadable, corrupted, or incompatible checkpoint."""


def _fingerprint(meta: dict, params: dict) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(meta, sort_keys=True).encode("utf-8"))
    for name in sorted(params):
        h.update(name.encode("utf-8"))
        h.update(np.ascontiguousarray(params[name]).tobytes())
    return h.hexdigest()


def save_checkpoint(path, params: dict, config: ModelConfig, vocab_tokens,
                    categories, polarities, variant: str, extra: dict | None = None):
    """Single-file container: parameter arrays plus a JSON metadata block
    (config, vocabulary, label sets, variant, version, content hash)."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": asdict(config),
        "vocab": list(vocab_tokens),
        "categories": list(categories),
        "polarities": list(polarities),
        "variant": variant,
        "extra": extra or {},
    }
    meta["fingerprint"] = _fingerprint(meta, params)
    arrays = {f"param_{k}": v for k, v in params.items()}
    np.savez(path, meta_json=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> dict:
    """Load and verify a checkpoint; refuses on version or hash mismatch.

    Returns a dict with params, config, vocab, categories, polarities,
    variant, and extra.
    """
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta_json"]))
            params = {k[len("param_"):]: z[k] for k in z.files if k.startswith("param_")}
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as err:
        raise CheckpointError(f"cannot read checkpoint {path}: {err}") from err
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')!r}")
    expected = meta.pop("fingerprint", None)
    actual = _fingerprint(meta, params)
    if expected != actual:
        raise CheckpointError("checkpoint fingerprint mismatch (corrupt or tampered file)")
    return {
        "params": params,
        "config": ModelConfig(**meta["config"]),
        "vocab": meta["vocab"],
        "categories": tuple(meta["categories"]),
        "polarities": tuple(meta["polarities"]),
        "variant": meta["variant"],
        "extra": meta["extra"],
    }
