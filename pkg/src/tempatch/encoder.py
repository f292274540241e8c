"""Alternating local/global encoder: L rounds of per-patch tokenization,
packing, positional encoding and causal attention, ending in a readout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .attention import attend, init_transformer_params
from .errors import ConfigError
from .seqpack import (PE_INPUTS, PE_KINDS, READOUT_MODES, encode_positions,
                      init_pe_params, pack, readout, unpack)
from .stream import PatchSet, WindowedGraph, sample_neighborhood
from .tensor import Tensor
from .tokenizer import init_mpnn_layer, tokenize


@dataclass
class EncoderConfig:
    d_h: int = 64
    d_v: int = 0               # node feature width seen by the input projection
    d_e: int = 0               # edge feature width
    blocks: int = 3            # L
    mpnn_layers: int = 3
    trans_layers: int = 2
    heads: int = 2
    time_dim: int = 8
    fanouts: tuple = (64, 1, 1)
    ns_mode: str = "uniform"
    pe_kind: str = "sinecosine"
    pe_input: str = "patch_index"
    readout: str = "last"
    use_global: bool = True
    use_pe: bool = True

    def validate(self):
        if self.blocks < 1:
            raise ConfigError(f"need >=1 blocks, got {self.blocks}")
        if self.pe_kind not in PE_KINDS:
            raise ConfigError(f"unknown pe_kind {self.pe_kind!r}")
        if self.pe_input not in PE_INPUTS:
            raise ConfigError(f"unknown pe_input {self.pe_input!r}")
        if self.readout not in READOUT_MODES:
            raise ConfigError(f"unknown readout {self.readout!r}")
        if self.ns_mode not in ("uniform", "last"):
            raise ConfigError(f"unknown ns_mode {self.ns_mode!r}")
        if self.time_dim % 2:
            raise ConfigError(f"time_dim must be even, got {self.time_dim}")
        return self


@dataclass
class EncoderParams:
    config: EncoderConfig
    input_proj: dict
    mask_token: Tensor
    tokenizers: list            # blocks x mpnn_layers of layer dicts
    transformers: list          # blocks transformer param dicts
    pe: object                  # PositionalEncoderParams, shared across blocks

    def named(self) -> dict:
        """Flat name -> Tensor map for the optimizer and checkpoints."""
        out = {"input_proj.w": self.input_proj["w"],
               "input_proj.b": self.input_proj["b"],
               "mask_token": self.mask_token}
        for l, layers in enumerate(self.tokenizers):
            for i, layer in enumerate(layers):
                for k, v in layer.items():
                    out[f"tok{l}.{i}.{k}"] = v
        for l, tp in enumerate(self.transformers):
            for j, layer in enumerate(tp["layers"]):
                for k, v in layer.items():
                    out[f"attn{l}.{j}.{k}"] = v
        for k, v in self.pe.weights.items():
            out[f"pe.{k}"] = v
        return out


def init_encoder_params(rng: np.random.Generator, config: EncoderConfig) -> EncoderParams:
    config.validate()
    d_h = config.d_h
    d_msg = d_h + config.d_e + config.time_dim
    return EncoderParams(
        config=config,
        input_proj={"w": T.parameter(rng, (max(config.d_v, 1), d_h)),
                    "b": T.zeros_param((d_h,))},
        mask_token=T.parameter(rng, (d_h,), fan_in=d_h),
        tokenizers=[[init_mpnn_layer(rng, d_h, d_msg)
                     for _ in range(config.mpnn_layers)]
                    for _ in range(config.blocks)],
        transformers=[init_transformer_params(rng, d_h, heads=config.heads,
                                              n_layers=config.trans_layers)
                      for _ in range(config.blocks)],
        pe=init_pe_params(rng, config.pe_kind, config.pe_input, d_h),
    )


def _patch_seed(seed: int, patch_index: int) -> int:
    return int(np.random.SeedSequence([seed, patch_index]).generate_state(1)[0])


def encode(window: WindowedGraph, patches: PatchSet, params: EncoderParams,
           seed: int, anchors: np.ndarray | None = None) -> Tensor:
    """Produce one embedding per window node (window-local row order).

    ``anchors`` roots the neighbor sampling (global-target mode); when
    omitted every window node is an anchor.
    """
    cfg = params.config
    w = window
    n = w.num_nodes
    if anchors is None or len(anchors) == 0:
        anchors = np.arange(n, dtype=np.int64)

    feats = w.parent.node_feats[w.nodes]
    if feats.shape[1] == 0:
        feats = np.zeros((n, 1), dtype=T.get_default_dtype())
    h0 = T.matmul(Tensor(feats), params.input_proj["w"]) + params.input_proj["b"]

    neighborhoods = [
        sample_neighborhood(patches.patch(m), anchors, cfg.fanouts,
                            mode=cfg.ns_mode, seed=_patch_seed(seed, m))
        for m in range(patches.M)
    ]

    states = [h0] * patches.M
    for l in range(cfg.blocks):
        per_patch = [
            tokenize(patches.patch(m), neighborhoods[m], states[m],
                     params.tokenizers[l], time_dim=cfg.time_dim)
            for m in range(patches.M)
        ]
        if not cfg.use_global:
            if l < cfg.blocks - 1:
                states = per_patch
                continue
            packed = pack(per_patch, patches, params.mask_token, cfg.pe_input)
            return readout(packed, cfg.readout)

        packed = pack(per_patch, patches, params.mask_token, cfg.pe_input)
        if cfg.use_pe:
            packed = encode_positions(packed, params.pe)
        packed = attend(packed, params.transformers[l])
        if l < cfg.blocks - 1:
            states = unpack(packed, patches)
        else:
            return readout(packed, cfg.readout)
