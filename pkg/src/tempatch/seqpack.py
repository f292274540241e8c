"""Packing node tokens into padded per-node sequences and back.

Each node owns an M-slot sequence, one slot per patch. Occupied slots
hold the patch token, empty slots hold a learned mask embedding. The
positional encoder adds a per-slot code; the readout pools occupied
slots into the final node embedding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .stream import PatchSet
from .tensor import Tensor
from .tokenizer import encode_time

PE_KINDS = ("sinecosine", "time2vec", "identity", "linear")
PE_INPUTS = ("patch_index", "edge_index", "edge_time")
READOUT_MODES = ("max", "mean", "last")

# additive mask for max-pooling; large but far from the f32 overflow edge
_NEG_LARGE = 1e30


@dataclass
class PackedSequences:
    tokens: Tensor            # (N, M, Dh)
    occupancy: np.ndarray     # (N, M) bool
    positions: np.ndarray     # (N, M) float position values


@dataclass
class PositionalEncoderParams:
    kind: str = "sinecosine"
    input: str = "patch_index"
    weights: dict = field(default_factory=dict)   # linear / time2vec only

    def __post_init__(self):
        if self.kind not in PE_KINDS:
            raise ConfigError(f"unknown positional encoding kind {self.kind!r}")
        if self.input not in PE_INPUTS:
            raise ConfigError(f"unknown positional encoding input {self.input!r}")


def init_pe_params(rng, kind: str, pe_input: str, d_h: int) -> PositionalEncoderParams:
    weights = {}
    if kind in ("linear", "time2vec"):
        weights = {"w": T.parameter(rng, (d_h,), fan_in=1),
                   "b": T.zeros_param((d_h,))}
    return PositionalEncoderParams(kind=kind, input=pe_input, weights=weights)


def _slot_positions(patches: PatchSet, pe_input: str) -> np.ndarray:
    """Per-slot position values: patch index, or the node's most recent
    edge index / edge time within the patch. Empty slots get 0."""
    w = patches.window
    n, m_count = w.num_nodes, patches.M
    pos = np.zeros((n, m_count), dtype=np.float64)
    if pe_input == "patch_index":
        pos[:] = np.arange(m_count)[None, :]
        return pos
    for m in range(m_count):
        p = patches.patch(m)
        val = w.gidx[p.lo:p.hi].astype(np.float64) if pe_input == "edge_index" \
            else p.t.astype(np.float64)
        col = np.full(n, -np.inf)
        ends = np.concatenate([p.src, p.dst])
        np.maximum.at(col, ends, np.concatenate([val, val]))
        pos[:, m] = np.where(np.isfinite(col), col, 0.0)
    return pos


def pack(per_patch: list, patches: PatchSet, mask_embedding: Tensor,
         pe_input: str = "patch_index") -> PackedSequences:
    """Arrange per-patch node states into the (N, M, Dh) token tensor.

    ``per_patch`` holds one (N, Dh) state tensor per patch (window-local
    node ids); only rows of nodes occupying the patch are read.
    """
    if len(per_patch) != patches.M:
        raise ShapeError(f"expected {patches.M} patch states, got {len(per_patch)}")
    n = patches.window.num_nodes
    m_count = patches.M
    d_h = mask_embedding.shape[0]
    for h in per_patch:
        if h.shape[1] != d_h:
            raise ShapeError(f"token width {h.shape[1]} != mask width {d_h}")

    rows, flat_idx = [], []
    for m, h in enumerate(per_patch):
        nodes = patches.patch_nodes(m)
        if len(nodes) == 0:
            continue
        rows.append(T.gather_rows(h, nodes))
        flat_idx.append(nodes * m_count + m)
    base = T.broadcast_rows(mask_embedding, n * m_count)
    if rows:
        flat = T.overwrite_rows(base, np.concatenate(flat_idx), T.concat(rows, axis=0))
    else:
        flat = base
    tokens = T.reshape(flat, (n, m_count, d_h))
    return PackedSequences(tokens=tokens, occupancy=patches.occupancy(),
                           positions=_slot_positions(patches, pe_input))


def unpack(packed: PackedSequences, patches: PatchSet) -> list:
    """Scatter occupied slots back into per-patch (N, Dh) state tensors;
    mask slots are discarded (unoccupied rows come back as zeros)."""
    n, m_count, d_h = packed.tokens.shape
    if m_count != patches.M or n != patches.window.num_nodes:
        raise ShapeError(f"packed shape {packed.tokens.shape} does not match patches")
    flat = T.reshape(packed.tokens, (n * m_count, d_h))
    out = []
    for m in range(m_count):
        nodes = patches.patch_nodes(m)
        if len(nodes) == 0:
            out.append(Tensor(np.zeros((n, d_h), dtype=T.get_default_dtype())))
            continue
        out.append(T.scatter_rows(T.gather_rows(flat, nodes * m_count + m), nodes, n))
    return out


def _encoding_of(positions: np.ndarray, params: PositionalEncoderParams,
                 d_h: int) -> Tensor:
    """Map a flat position array (K,) to a (K, d_h) encoding tensor."""
    kind = params.kind
    if kind == "sinecosine":
        return Tensor(encode_time(positions, d_h))
    if kind == "identity":
        return Tensor(np.repeat(positions[:, None], d_h, axis=1)
                      .astype(T.get_default_dtype()))
    p = Tensor(positions[:, None].astype(T.get_default_dtype()))
    w, b = params.weights["w"], params.weights["b"]
    if kind == "linear":
        return T.mul(p, w) + b
    # time2vec: one linear component, the rest sinusoidal, learned freqs
    ang = T.mul(p, w) + b
    sin_part = T.sin(ang)
    keep_lin = np.zeros(d_h, dtype=ang.dtype)
    keep_lin[0] = 1.0
    keep_sin = 1.0 - keep_lin
    return T.mul(ang, Tensor(keep_lin)) + T.mul(sin_part, Tensor(keep_sin))


def encode_positions(packed: PackedSequences,
                     params: PositionalEncoderParams) -> PackedSequences:
    """Add the positional code to occupied slots; mask slots unchanged."""
    n, m_count, d_h = packed.tokens.shape
    enc = _encoding_of(packed.positions.reshape(-1), params, d_h)
    occ = packed.occupancy.reshape(-1, 1).astype(packed.tokens.dtype)
    delta = T.reshape(T.mul(enc, Tensor(occ)), (n, m_count, d_h))
    return PackedSequences(tokens=packed.tokens + delta,
                           occupancy=packed.occupancy,
                           positions=packed.positions)


def readout(packed: PackedSequences, mode: str = "last") -> Tensor:
    """Pool each node's occupied slots into one embedding.

    ``last`` takes the token at the highest occupied patch index; nodes
    occupying no patch yield the zero vector under every mode.
    """
    mode = mode.lower()
    if mode not in READOUT_MODES:
        raise ConfigError(f"unknown readout mode {mode!r}")
    n, m_count, d_h = packed.tokens.shape
    occ = packed.occupancy
    occf = occ.astype(packed.tokens.dtype)
    any_occ = occ.any(axis=1)
    anyf = any_occ.astype(packed.tokens.dtype)[:, None]

    if mode == "mean":
        counts = np.maximum(occf.sum(axis=1, keepdims=True), 1.0)
        summed = T.reduce_sum(T.mul(packed.tokens, Tensor(occf[:, :, None])), axis=1)
        return T.mul(summed, Tensor(1.0 / counts))
    if mode == "max":
        hole = Tensor(((1.0 - occf) * -_NEG_LARGE)[:, :, None])
        pooled = T.reduce_max(packed.tokens + hole, axis=1)
        return T.mul(pooled, Tensor(anyf))
    # last
    last_slot = np.where(any_occ, (m_count - 1) -
                         np.argmax(occ[:, ::-1], axis=1), 0).astype(np.int64)
    flat = T.reshape(packed.tokens, (n * m_count, d_h))
    picked = T.gather_rows(flat, np.arange(n, dtype=np.int64) * m_count + last_slot)
    return T.mul(picked, Tensor(anyf))
