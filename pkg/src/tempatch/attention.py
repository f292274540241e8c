"""Global encoder: causal multi-head self-attention over slot sequences.

Each node attends only over its own M-slot token sequence. The mask
allows slot i to see occupied slots j <= i (same-patch attention is
allowed); queries at unoccupied slots produce outputs that downstream
code ignores. Two pre-norm transformer layers by default.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .seqpack import PackedSequences
from .tensor import Tensor


def causal_mask(m_count: int, occupancy_row: np.ndarray) -> np.ndarray:
    """(M, M) mask: entry [i, j] allows attention from slot i to slot j."""
    occ = np.asarray(occupancy_row, dtype=bool)
    tri = np.tril(np.ones((m_count, m_count), dtype=bool))
    return tri & occ[None, :]


def init_transformer_params(rng, d_h: int, heads: int = 2, n_layers: int = 2,
                            d_k: int | None = None, ffn_mult: int = 2) -> dict:
    d_k = d_h if d_k is None else d_k
    if d_k % heads != 0:
        raise ConfigError(f"key width {d_k} not divisible by {heads} heads")
    layers = []
    for _ in range(n_layers):
        layers.append({
            "wq": T.parameter(rng, (d_h, d_k)),
            "wk": T.parameter(rng, (d_h, d_k)),
            "wv": T.parameter(rng, (d_h, d_k)),
            "wo": T.parameter(rng, (d_k, d_h)),
            "bo": T.zeros_param((d_h,)),
            "ln1_g": T.ones_param((d_h,)), "ln1_b": T.zeros_param((d_h,)),
            "ln2_g": T.ones_param((d_h,)), "ln2_b": T.zeros_param((d_h,)),
            "ffn_w1": T.parameter(rng, (d_h, ffn_mult * d_h)),
            "ffn_b1": T.zeros_param((ffn_mult * d_h,)),
            "ffn_w2": T.parameter(rng, (ffn_mult * d_h, d_h)),
            "ffn_b2": T.zeros_param((d_h,)),
        })
    return {"heads": heads, "d_k": d_k, "layers": layers}


def _mha(x: Tensor, occ: np.ndarray, p: dict, heads: int, d_k: int) -> Tensor:
    n, m_count, d_h = x.shape
    dk_h = d_k // heads
    scale = 1.0 / np.sqrt(dk_h)

    def split_heads(t):
        # (N, M, d_k) -> (N, heads, M, dk_h)
        return T.transpose(T.reshape(t, (n, m_count, heads, dk_h)), (0, 2, 1, 3))

    q = split_heads(T.matmul(x, p["wq"]))
    k = split_heads(T.matmul(x, p["wk"]))
    v = split_heads(T.matmul(x, p["wv"]))
    scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), scale)

    tri = np.tril(np.ones((m_count, m_count), dtype=bool))
    mask = tri[None, None, :, :] & occ[:, None, None, :]
    attn = T.masked_softmax(scores, mask, axis=-1)
    out = T.matmul(attn, v)                                   # (N, h, M, dk_h)
    out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (n, m_count, d_k))
    return T.matmul(out, p["wo"]) + p["bo"]


def attend(packed: PackedSequences, params: dict) -> PackedSequences:
    """Run the transformer layer stack over every node's slot sequence."""
    x = packed.tokens
    if x.ndim != 3:
        raise ShapeError(f"expected (N, M, D) tokens, got shape {x.shape}")
    heads, d_k = params["heads"], params["d_k"]
    for p in params["layers"]:
        normed = T.layer_norm(x, p["ln1_g"], p["ln1_b"])
        x = x + _mha(normed, packed.occupancy, p, heads, d_k)
        normed = T.layer_norm(x, p["ln2_g"], p["ln2_b"])
        ffn = T.matmul(T.relu(T.matmul(normed, p["ffn_w1"]) + p["ffn_b1"]),
                       p["ffn_w2"]) + p["ffn_b2"]
        x = x + ffn
    return PackedSequences(tokens=x, occupancy=packed.occupancy,
                           positions=packed.positions)
