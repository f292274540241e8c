"""Per-patch attentive message passing: node states -> node tokens.

Messages flow both ways along each sampled undirected edge and carry
[source state || edge features || elapsed-time encoding]. Attention
weights are a per-destination softmax; each layer finishes with residual
plus layer norm, so isolated nodes pass through unharmed.

Sampled edges are canonically ordered (sorted unique window indices)
before aggregation, which makes the output invariant to the storage
order of a node's sampled neighbors.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .stream import PatchView, SampledNeighborhood
from .tensor import Tensor


def encode_time(dt, dim: int) -> np.ndarray:
    """Fixed sinusoidal encoding of elapsed time.

    Interleaved [sin(w_i dt), cos(w_i dt)] with a geometric frequency
    series w_i = 10000^(-2i/dim); parameter-free and deterministic.
    encode_time(0) = [0, 1, 0, 1, ...].
    """
    if dim % 2 != 0:
        raise ConfigError(f"time encoding dim must be even, got {dim}")
    dt = np.atleast_1d(np.asarray(dt, dtype=np.float64))
    freqs = np.power(10000.0, -2.0 * np.arange(dim // 2) / dim)
    ang = dt[:, None] * freqs[None, :]
    out = np.empty((len(dt), dim), dtype=T.get_default_dtype())
    out[:, 0::2] = np.sin(ang)
    out[:, 1::2] = np.cos(ang)
    return out


def init_mpnn_layer(rng: np.random.Generator, d_h: int, d_msg: int) -> dict:
    """Parameters of one attention layer; message input width is d_msg."""
    return {
        "wq": T.parameter(rng, (d_h, d_h)),
        "wk": T.parameter(rng, (d_msg, d_h)),
        "wv": T.parameter(rng, (d_msg, d_h)),
        "wo": T.parameter(rng, (d_h, d_h)),
        "bo": T.zeros_param((d_h,)),
        "ln_g": T.ones_param((d_h,)),
        "ln_b": T.zeros_param((d_h,)),
    }


def tokenize(patch: PatchView, neigh: SampledNeighborhood, node_states: Tensor,
             layers: list[dict], time_dim: int = 8) -> Tensor:
    """Run the layer stack over the sampled within-patch edges.

    ``node_states`` holds one row per window-local node; the returned
    tensor has the same shape, with rows of nodes outside the patch only
    touched by the residual/normalization path.
    """
    n = node_states.shape[0]
    d_h = node_states.shape[1]
    eids = neigh.edge_union()
    w = patch.window
    src, dst = w.src[eids], w.dst[eids]

    ef = w.edge_feats[eids]
    dt = patch.t_ref - w.t[eids]
    tenc = encode_time(dt, time_dim) if len(eids) else np.zeros((0, time_dim), T.get_default_dtype())

    # undirected: every sampled edge sends a message in both directions
    msrc = np.concatenate([src, dst])
    mdst = np.concatenate([dst, src])
    side = np.vstack([np.hstack([ef, tenc])] * 2) if len(eids) else \
        np.zeros((0, ef.shape[1] + time_dim), T.get_default_dtype())
    side_t = Tensor(side)

    h = node_states
    scale = 1.0 / np.sqrt(d_h)
    for p in layers:
        m_in = T.concat([T.gather_rows(h, msrc), side_t], axis=1)
        k = T.matmul(m_in, p["wk"])
        v = T.matmul(m_in, p["wv"])
        q = T.matmul(T.gather_rows(h, mdst), p["wq"])
        scores = T.reduce_sum(T.mul(q, k), axis=1) * scale
        alpha = T.segment_softmax(scores, mdst, n)
        agg = T.segment_sum(T.mul(v, T.reshape(alpha, (-1, 1))), mdst, n)
        h = T.layer_norm(h + T.matmul(agg, p["wo"]) + p["bo"], p["ln_g"], p["ln_b"])
    return h
