"""Forward and backward passes for every layer, written by hand on numpy.

Each ``*_forward`` returns its outputs plus an opaque cache; the matching
``*_backward`` consumes the cache and upstream gradients and returns input
and parameter gradients.  Everything runs in float64 so the analytic
gradients can be checked against central finite differences tightly.
"""

from __future__ import annotations

import functools

import numpy as np

# plain np.einsum skips BLAS for these contraction patterns and is 10-50x
# slower at production dimensions; optimize=True may reorder the reductions
# but stays deterministic run to run
_einsum = functools.partial(np.einsum, optimize=True)

LEAKY_SLOPE = 0.2  # negative-side slope of the attention score nonlinearity


def sigmoid(x):
    """Numerically stable logistic function (via the tanh identity)."""
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def softmax_backward(p, dp, axis=-1):
    """Gradient through a (possibly masked) softmax: rows where p is all
    zero stay all zero."""
    s = (p * dp).sum(axis=axis, keepdims=True)
    return p * (dp - s)


def masked_softmax(scores, mask, axis=-1):
    """Softmax over ``axis`` restricted to ``mask``; masked entries are
    exactly zero, and rows with no valid entry come out all zero."""
    neg = np.where(mask, scores, -np.inf)
    mx = neg.max(axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(mask, np.exp(neg - mx), 0.0)
    denom = e.sum(axis=axis, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


# ---------------------------------------------------------------- embedding

def embedding_forward(token_ids, matrix):
    return matrix[token_ids], (token_ids, matrix.shape)


def embedding_backward(d_out, cache):
    token_ids, shape = cache
    d_matrix = np.zeros(shape)
    np.add.at(d_matrix, token_ids.reshape(-1), d_out.reshape(-1, shape[1]))
    return d_matrix


# --------------------------------------------------------------------- LSTM

def lstm_forward(E, W, U, b):
    """Single-layer unidirectional LSTM.

    E is (B, T, d); W and U are (4d, d) with gate order input, forget,
    candidate, output; hidden size equals the input size d.
    """
    B, T, d = E.shape
    if T < 1:
        raise ValueError("cannot encode an empty sequence")
    H = np.zeros((B, T, d))
    h = np.zeros((B, d))
    c = np.zeros((B, d))
    pre_x = E @ W.T + b
    steps = []
    for t in range(T):
        z = pre_x[:, t] + h @ U.T
        i = sigmoid(z[:, :d])
        f = sigmoid(z[:, d:2 * d])
        g = np.tanh(z[:, 2 * d:3 * d])
        o = sigmoid(z[:, 3 * d:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        steps.append((h, c, i, f, g, o, tc))
        h = o * tc
        c = c_new
        H[:, t] = h
    return H, (E, W, U, steps, d)


def lstm_backward(dH, cache):
    E, W, U, steps, d = cache
    B, T, _ = E.shape
    dz_all = np.empty((T, B, 4 * d))
    dh_next = np.zeros((B, d))
    dc_next = np.zeros((B, d))
    for t in reversed(range(T)):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        dh = dH[:, t] + dh_next
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc ** 2)
        dz = dz_all[t]
        dz[:, :d] = dc * g * i * (1.0 - i)
        dz[:, d:2 * d] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * d:3 * d] = dc * i * (1.0 - g ** 2)
        dz[:, 3 * d:] = do * o * (1.0 - o)
        dc_next = dc * f
        dh_next = dz @ U
    # the time-independent products collapse into three large GEMMs
    dz_flat = dz_all.transpose(1, 0, 2).reshape(B * T, 4 * d)
    dE = (dz_flat @ W).reshape(B, T, d)
    dW = dz_flat.T @ E.reshape(B * T, d)
    h_prev_all = np.stack([steps[t][0] for t in range(T)], axis=1)
    dU = dz_flat.T @ h_prev_all.reshape(B * T, d)
    db = dz_flat.sum(axis=0)
    return dE, dW, dU, db


# ---------------------------------------------------------------------- GAT

def gat_forward(X, adjacency, W, a, slope=LEAKY_SLOPE):
    """One multi-head graph-attention layer over a leaf-sourced graph.

    X is (B, V, d) node states (internal-node rows must already be zero),
    adjacency is (B, V, V) boolean with row i marking the sources of node i,
    W is (L, d/L, d) per-head projections and a is (L, 2d/L) score vectors.
    Per head: scores are LeakyReLU(a . [Wh_i || Wh_j]), normalised over the
    sources of i; the aggregated state passes through a sigmoid; head
    outputs are concatenated, giving (B, V, d).
    """
    B, V, d = X.shape
    L, k, _ = W.shape
    # one GEMM for all heads: rows of W_flat are (head, out-dim) pairs
    W_flat = W.reshape(L * k, d)
    Z = (X.reshape(B * V, d) @ W_flat.T).reshape(B, V, L, k).transpose(0, 2, 1, 3)
    a_dst, a_src = a[:, :k], a[:, k:]
    s_dst = _einsum("blvk,lk->blv", Z, a_dst)
    s_src = _einsum("blvk,lk->blv", Z, a_src)
    raw = s_dst[:, :, :, None] + s_src[:, :, None, :]
    act = np.where(raw > 0, raw, slope * raw)
    alpha = masked_softmax(act, adjacency[:, None, :, :])
    agg = np.matmul(alpha, Z)
    heads = sigmoid(agg)
    out = heads.transpose(0, 2, 1, 3).reshape(B, V, L * k)
    cache = (X, W, a, Z, raw, alpha, heads, slope)
    return out, alpha, cache


def gat_backward(d_out, cache):
    X, W, a, Z, raw, alpha, heads, slope = cache
    B, V, d = X.shape
    L, k, _ = W.shape
    d_heads = d_out.reshape(B, V, L, k).transpose(0, 2, 1, 3)
    d_agg = d_heads * heads * (1.0 - heads)
    d_alpha = np.matmul(d_agg, Z.swapaxes(-1, -2))
    dZ = np.matmul(alpha.swapaxes(-1, -2), d_agg)
    d_act = softmax_backward(alpha, d_alpha)
    d_raw = d_act * np.where(raw > 0, 1.0, slope)
    ds_dst = d_raw.sum(axis=3)
    ds_src = d_raw.sum(axis=2)
    dZ = dZ + ds_dst[..., None] * a[:, :k][None, :, None, :]
    dZ += ds_src[..., None] * a[:, k:][None, :, None, :]
    da = np.concatenate([
        _einsum("blv,blvk->lk", ds_dst, Z),
        _einsum("blv,blvk->lk", ds_src, Z),
    ], axis=1)
    W_flat = W.reshape(L * k, d)
    dZ_flat = dZ.transpose(0, 2, 1, 3).reshape(B * V, L * k)
    dX = (dZ_flat @ W_flat).reshape(B, V, d)
    dW = (dZ_flat.T @ X.reshape(B * V, d)).reshape(L, k, d)
    return dX, dW, da


def gat_coefficients(h_i, neighbor_states, W_l, a_l, slope=LEAKY_SLOPE):
    """Attention coefficients of one node over its (nonempty) source set,
    for a single head.  For internal nodes pass h_i as the zero vector."""
    neighbor_states = np.asarray(neighbor_states, dtype=np.float64)
    if neighbor_states.ndim != 2 or neighbor_states.shape[0] == 0:
        raise ValueError("neighbor set must be a nonempty (count, d) array")
    k = W_l.shape[0]
    z_i = W_l @ np.asarray(h_i, dtype=np.float64)
    z_j = neighbor_states @ W_l.T
    raw = a_l[:k] @ z_i + z_j @ a_l[k:]
    act = np.where(raw > 0, raw, slope * raw)
    act = act - act.max()
    e = np.exp(act)
    return e / e.sum()


# --------------------------------------------------- per-category attention

def aspect_attention_forward(X, node_mask, W, bias, u):
    """Attention weights over nodes for every category at once.

    X is (B, V, d); W (N, d, d), bias (N, d), u (N, d).  Each node's score
    is u_j . tanh(W_j h + b_j); weights are softmax-normalised over the
    unmasked nodes, with masked nodes at exactly zero.
    """
    if not node_mask.any(axis=1).all():
        raise ValueError("a sentence has all nodes masked")
    B, V, e = X.shape
    N, d, _ = W.shape
    # internal layout is (B, V, N, d) so the two big GEMMs need no copies
    W_flat = W.reshape(N * d, e)
    pre = (X.reshape(B * V, e) @ W_flat.T).reshape(B, V, N, d)
    pre += bias[None, None, :, :]
    m = np.tanh(pre)
    scores = (m * u[None, None, :, :]).sum(-1)
    beta = masked_softmax(scores.transpose(0, 2, 1), node_mask[:, None, :])
    cache = (X, W, u, m, beta)
    return beta, cache


def aspect_attention_backward(d_beta, cache):
    X, W, u, m, beta = cache
    B, V, e = X.shape
    N, d, _ = W.shape
    d_scores = softmax_backward(beta, d_beta).transpose(0, 2, 1)[..., None]  # (B,V,N,1)
    du = (d_scores * m).sum(axis=(0, 1))
    d_pre = 1.0 - m * m
    d_pre *= u[None, None, :, :]
    d_pre *= d_scores
    d_bias = d_pre.sum(axis=(0, 1))
    W_flat = W.reshape(N * d, e)
    d_pre_flat = d_pre.reshape(B * V, N * d)
    dW = (d_pre_flat.T @ X.reshape(B * V, e)).reshape(N, d, e)
    dX = (d_pre_flat @ W_flat).reshape(B, V, e)
    return dX, dW, d_bias, du


# ------------------------------------------------------------------ pooling

def weighted_pool_forward(beta, X):
    """Per-category convex combination of node states: (B,N,V) x (B,V,d)."""
    return np.matmul(beta, X), (beta, X)


def weighted_pool_backward(d_r, cache):
    beta, X = cache
    d_beta = np.matmul(d_r, X.swapaxes(1, 2))
    dX = np.matmul(beta.swapaxes(1, 2), d_r)
    return d_beta, dX
