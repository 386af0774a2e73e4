"""Building blocks: embeddings, sinusoidal encoding, graph attention, and
transformer encoder/decoder layers.

Parameters are plain ``dict[str, Tensor]`` views; each block reads the keys it
needs under a prefix.
"""
from __future__ import annotations

import functools

import numpy as np

from ..errors import ConfigError, NumericError, PreconditionError, ShapeError
from ..numerics import (
    Tensor, as_tensor, concat, dropout, layer_norm, leaky_relu, matmul, relu, reshape,
    softmax, swap_last, transpose,
)


@functools.lru_cache(maxsize=32)
def _pe_table(steps, d_model):
    pos = np.arange(steps, dtype=np.float64)[:, None]
    idx = np.arange(d_model)
    # odd columns use exponent (2i+1)/d, not the symmetric 2i/d
    angle = pos / np.power(10000.0, idx / d_model)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    table.setflags(write=False)
    return table


def positional_encoding(steps, d_model):
    """``PE[pos, 2i] = sin(pos / 10000**(2i/d))``, ``PE[pos, 2i+1] = cos(pos / 10000**((2i+1)/d))``."""
    if d_model % 2:
        raise ConfigError(f"positional encoding needs an even model width, got {d_model}")
    return _pe_table(int(steps), int(d_model)).copy()


def embed_positions(track, w_x):
    """Project ``(..., T, 2)`` coordinates to ``(..., T, D)`` through ``w_x`` (2 x D)."""
    data = track.data if isinstance(track, Tensor) else np.asarray(track, dtype=np.float64)
    if data.shape[-1] != 2 or data.ndim < 2 or data.shape[-2] < 1:
        raise ShapeError(f"expected (..., T>=1, 2) positions, got {data.shape}")
    if not np.isfinite(data).all():
        raise NumericError("non-finite position")
    return matmul(as_tensor(track), w_x)


def timestamp(e, pe):
    e = as_tensor(e)
    if e.shape[-2:] != np.shape(pe)[-2:]:
        raise ShapeError(f"embedding {e.shape} and positional encoding {np.shape(pe)} differ")
    return e + pe


def gat_layer(nodes, adjacency, w, a, slope=0.2, return_alpha=False):
    """One graph-attention layer over ``n`` nodes.

    ``w`` is ``F x F`` and acts on column features, so rows are transformed as
    ``h @ w.T``.  Attention logits are ``LeakyReLU(a . [W h_i || W h_j])``,
    normalised over each node's neighbourhood; the aggregated messages are the
    transformed features pushed through ``w`` once more before the ReLU.
    """
    nodes = as_tensor(nodes)
    adj = np.asarray(adjacency, dtype=bool)
    n = nodes.shape[0]
    if adj.shape != (n, n):
        raise ShapeError(f"adjacency {adj.shape} does not match {n} nodes")
    if n < 1 or not adj.any(axis=1).all():
        raise PreconditionError("degenerate graph: a node has an empty neighbourhood")
    f_out = w.shape[0]
    if w.shape[1] != f_out:
        raise ShapeError(f"GAT weight must be square because it is applied twice, got {w.shape}")
    wt = swap_last(w)
    hp = matmul(nodes, wt)
    a_col = reshape(a, (2 * f_out, 1))
    src = matmul(hp, a_col[:f_out])
    dst = reshape(matmul(hp, a_col[f_out:]), (1, n))
    alpha = softmax(leaky_relu(src + dst, slope), axis=-1, mask=adj)
    out = relu(matmul(alpha, matmul(hp, wt)))
    return (out, alpha) if return_alpha else out


def _split_heads(x, n_heads):
    *lead, t, d = x.shape
    x = reshape(x, (*lead, t, n_heads, d // n_heads))
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    return transpose(x, axes)


def _merge_heads(x):
    nd = x.ndim
    axes = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)
    x = transpose(x, axes)
    *lead, t, h, dh = x.shape
    return reshape(x, (*lead, t, h * dh))


def multi_head_attention(q_in, k_in, v_in, params, prefix, n_heads, mask=None,
                         return_weights=False):
    """Scaled dot-product attention over ``n_heads`` heads.

    Inputs are ``(..., T, D)``; leading axes broadcast, so a single ``(1, M, D)``
    memory can serve a batch of queries.  ``mask`` is boolean and broadcastable
    to ``(..., heads, Tq, Tk)``; False blocks a key.
    """
    w_q, w_k = params[prefix + "w_q"], params[prefix + "w_k"]
    w_v, w_o = params[prefix + "w_v"], params[prefix + "w_o"]
    d_k = w_q.shape[1]
    if d_k % n_heads:
        raise ConfigError(f"key width {d_k} is not divisible by {n_heads} heads")
    q = _split_heads(matmul(q_in, w_q), n_heads)
    k = _split_heads(matmul(k_in, w_k), n_heads)
    v = _split_heads(matmul(v_in, w_v), n_heads)
    scores = matmul(q, swap_last(k)) * (1.0 / np.sqrt(d_k // n_heads))
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            np.broadcast_shapes(mask.shape, scores.shape)
        except ValueError:
            raise ShapeError(f"mask {mask.shape} does not fit scores {scores.shape}") from None
    weights = softmax(scores, axis=-1, mask=mask)
    out = matmul(_merge_heads(matmul(weights, v)), w_o)
    return (out, weights) if return_weights else out


def causal_mask(t):
    return np.tril(np.ones((t, t), dtype=bool))


def feed_forward(x, params, prefix):
    h = relu(matmul(x, params[prefix + "w1"]) + params[prefix + "b1"])
    return matmul(h, params[prefix + "w2"]) + params[prefix + "b2"]


def _norm(x, params, prefix):
    return layer_norm(x, params[prefix + "gain"], params[prefix + "bias"])


def encoder_layer(x, params, prefix, n_heads, p_drop=0.0, training=False, rng=None):
    """Post-norm layer: self-attention then FFN, each with residual and norm."""
    att = multi_head_attention(x, x, x, params, prefix + "attn.", n_heads)
    x = _norm(x + dropout(att, p_drop, training, rng), params, prefix + "ln1.")
    ff = feed_forward(x, params, prefix + "ffn.")
    return _norm(x + dropout(ff, p_drop, training, rng), params, prefix + "ln2.")


def encoder_forward(x, params, prefix, n_layers, n_heads, p_drop=0.0, training=False, rng=None):
    """Encode each agent's sequence independently; ``x`` is ``(agents, T, D)``."""
    if n_layers < 1:
        raise ConfigError("encoder needs at least one layer")
    for layer in range(n_layers):
        x = encoder_layer(x, params, f"{prefix}{layer}.", n_heads, p_drop, training, rng)
    return x


def decoder_layer(x, memory, params, prefix, n_heads, memory_mask=None, p_drop=0.0,
                  training=False, rng=None):
    t = x.shape[-2]
    att = multi_head_attention(x, x, x, params, prefix + "self_attn.", n_heads,
                               mask=causal_mask(t))
    x = _norm(x + dropout(att, p_drop, training, rng), params, prefix + "ln1.")
    cross = multi_head_attention(x, memory, memory, params, prefix + "cross_attn.", n_heads,
                                 mask=memory_mask)
    x = _norm(x + dropout(cross, p_drop, training, rng), params, prefix + "ln2.")
    ff = feed_forward(x, params, prefix + "ffn.")
    return _norm(x + dropout(ff, p_drop, training, rng), params, prefix + "ln3.")


def decoder_forward(x, memory, params, prefix, n_layers, n_heads, memory_mask=None,
                    p_drop=0.0, training=False, rng=None):
    """Causally masked decoding of ``x`` (``(agents, t, D)``) against ``memory``.

    ``memory`` is ``(1, M, D)``: every agent's encoded rows flattened over
    agent and time.  ``memory_mask`` (``(agents, 1, 1, M)``) limits each query
    agent to the rows of its own scene window.
    """
    if x.shape[-2] < 1:
        raise PreconditionError("decoder needs at least one target position")
    for layer in range(n_layers):
        x = decoder_layer(x, memory, params, f"{prefix}{layer}.", n_heads, memory_mask,
                          p_drop, training, rng)
    return x


def fuse_memory(worker_fused, obstacle_enc=None):
    """Stack worker rows then obstacle rows along the agent axis."""
    if obstacle_enc is None or obstacle_enc.shape[0] == 0:
        return worker_fused
    return concat([worker_fused, obstacle_enc], axis=0)
