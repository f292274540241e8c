"""Training loop, batching over the edge stream, checkpoints, model
selection and evaluation."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import (EventGraph, chronological_split, dataset_hash,
                   inductive_split, load_edge_stream, sample_negatives)
from .encoder import EncoderConfig, EncoderParams, encode, init_encoder_params
from .errors import ConfigError, DataError, NumericError
from .stream import patchify, window_from_indices
from .tasks import (average_precision, bce_loss, ce_loss, dnc_logits,
                    flp_score, init_link_decoder, init_node_decoder, mrr,
                    roc_auc)
from .tensor import Tensor


@dataclass
class RunConfig:
    """Full experiment description; persisted alongside every checkpoint."""

    dataset: str
    task: str = "flp"                  # flp | dnc
    split: str = "transductive"        # transductive | inductive
    window: int = 65536
    patches: int = 8
    blocks: int = 3
    d_h: int = 64
    fanouts: tuple = (64, 1, 1)
    ns_mode: str = "uniform"
    pe_kind: str = "sinecosine"
    pe_input: str = "patch_index"
    readout: str = "last"
    batch_size: int = 200
    lr: float = 3e-4
    epochs: int = 100
    seed: int = 0
    precision: str = "f32"             # f32 | f64
    use_global: bool = True
    use_pe: bool = True
    mpnn_layers: int = 3
    trans_layers: int = 2
    heads: int = 2
    time_dim: int = 8
    node_features: str = "one_hot"     # one_hot | none
    eval_negatives: int = 1
    inductive_frac: float = 0.1
    bipartite_negatives: bool = False
    flp_checkpoint: str | None = None  # dnc: encoder pretrained on flp

    REQUIRED = ("dataset",)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        for key in raw:
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
        for key in cls.REQUIRED:
            if key not in raw:
                raise ConfigError(f"missing config key {key!r}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def validate(self) -> "RunConfig":
        if self.task not in ("flp", "dnc"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.split not in ("transductive", "inductive"):
            raise ConfigError(f"unknown split {self.split!r}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"unknown precision {self.precision!r}")
        if self.node_features not in ("one_hot", "none"):
            raise ConfigError(f"unknown node_features {self.node_features!r}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >=1")
        if self.eval_negatives < 1:
            raise ConfigError("eval_negatives must be >=1")
        self.fanouts = tuple(int(f) for f in self.fanouts)
        self.encoder_config(d_v=1, d_e=0).validate()
        return self

    def encoder_config(self, d_v: int, d_e: int) -> EncoderConfig:
        return EncoderConfig(
            d_h=self.d_h, d_v=d_v, d_e=d_e, blocks=self.blocks,
            mpnn_layers=self.mpnn_layers, trans_layers=self.trans_layers,
            heads=self.heads, time_dim=self.time_dim, fanouts=self.fanouts,
            ns_mode=self.ns_mode, pe_kind=self.pe_kind, pe_input=self.pe_input,
            readout=self.readout, use_global=self.use_global, use_pe=self.use_pe,
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["fanouts"] = list(self.fanouts)
        return d

    # fields that a checkpoint must agree on to be loadable
    COMPAT = ("d_h", "blocks", "mpnn_layers", "trans_layers", "heads",
              "time_dim", "pe_kind", "node_features")


@dataclass
class Model:
    encoder: EncoderParams
    link_decoder: dict
    node_decoder: dict | None = None

    def named(self) -> dict:
        out = dict(self.encoder.named())
        for k, v in self.link_decoder.items():
            out[f"dec.{k}"] = v
        if self.node_decoder is not None:
            for k, v in self.node_decoder.items():
                out[f"dnc.{k}"] = v
        return out


class Adam:
    """Adaptive-moment optimizer over a named parameter map."""

    def __init__(self, params: dict, lr: float = 3e-4, betas=(0.9, 0.999),
                 eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self):
        self.t += 1
        for name in sorted(self.params):
            p = self.params[name]
            g = p.grad
            if g is None:
                continue
            m = self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# ---------------------------------------------------------------------------
# graph preparation and model construction


def prepare_graph(path, config: RunConfig) -> EventGraph:
    g = load_edge_stream(path, has_labels=True)
    if config.node_features == "one_hot" and g.node_feats.shape[1] == 0:
        g.node_feats = np.eye(g.num_nodes, dtype=np.float32)
    return g


def build_model(g: EventGraph, config: RunConfig, n_classes: int | None = None) -> Model:
    T.set_default_dtype(np.float64 if config.precision == "f64" else np.float32)
    rng = np.random.default_rng(config.seed)
    d_v = max(g.node_feats.shape[1], 1)
    enc = init_encoder_params(rng, config.encoder_config(d_v=d_v, d_e=g.edge_dim))
    model = Model(encoder=enc, link_decoder=init_link_decoder(rng, config.d_h))
    if n_classes is not None:
        model.node_decoder = init_node_decoder(rng, config.d_h, n_classes)
    return model


def _derived_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# batch scoring


def _lookup(emb: Tensor, window, global_nodes) -> Tensor:
    """Embedding rows for global node ids; absent nodes get zero rows."""
    pos, present = window.to_local(global_nodes)
    rows = T.gather_rows(emb, pos)
    return T.mul(rows, Tensor(present.astype(emb.dtype)[:, None]))


def _window_before(visible_idx: np.ndarray, first_global: int, w_size: int) -> np.ndarray:
    cut = np.searchsorted(visible_idx, first_global)
    return visible_idx[max(0, cut - w_size):cut]


def score_flp_batch(g: EventGraph, config: RunConfig, model: Model,
                    visible_idx: np.ndarray, batch_idx: np.ndarray,
                    neg_dst: np.ndarray, seed: int):
    """Score a batch of positives and negatives from the preceding window.

    Returns (probs, labels) or None when the history is still too short
    to form the configured number of patches.
    """
    window_gidx = _window_before(visible_idx, int(batch_idx[0]), config.window)
    if len(window_gidx) < config.patches:
        return None
    w = window_from_indices(g, window_gidx)
    patches = patchify(w, config.patches)

    src, dst = g.src[batch_idx], g.dst[batch_idx]
    all_nodes = np.concatenate([src, dst, neg_dst.reshape(-1)])
    local, present = w.to_local(all_nodes)
    anchors = np.unique(local[present])
    if len(anchors) == 0:
        anchors = None
    emb = encode(w, patches, model.encoder, seed, anchors)

    h_src = _lookup(emb, w, src)
    h_dst = _lookup(emb, w, dst)
    k = neg_dst.shape[1]
    h_src_rep = _lookup(emb, w, np.repeat(src, k))
    h_neg = _lookup(emb, w, neg_dst.reshape(-1))

    p_pos = flp_score(h_src, h_dst, model.link_decoder)
    p_neg = flp_score(h_src_rep, h_neg, model.link_decoder)
    probs = T.concat([p_pos, p_neg], axis=0)
    labels = np.concatenate([np.ones(len(src)), np.zeros(len(src) * k)])
    return probs, labels


def _batches(idx: np.ndarray, batch_size: int):
    for lo in range(0, len(idx), batch_size):
        yield idx[lo:lo + batch_size]


def _neg_pool(g: EventGraph, config: RunConfig):
    if not config.bipartite_negatives:
        return None
    return np.unique(g.dst)


def evaluate_flp(g: EventGraph, config: RunConfig, model: Model,
                 phase_idx: np.ndarray, visible_idx: np.ndarray,
                 eval_seed: int, k: int | None = None) -> dict:
    """Deterministic AP/AUC (and MRR for k>1) over one split."""
    k = config.eval_negatives if k is None else k
    all_probs, all_labels = [], []
    mrr_pos, mrr_neg = [], []
    with T.no_grad():
        for b, batch in enumerate(_batches(phase_idx, config.batch_size)):
            pairs = np.stack([g.src[batch], g.dst[batch]], axis=1)
            negs = sample_negatives(pairs, g, k, _derived_seed(eval_seed, b),
                                    bipartite_dst=_neg_pool(g, config))
            out = score_flp_batch(g, config, model, visible_idx, batch, negs,
                                  seed=_derived_seed(eval_seed, 1, b))
            if out is None:
                continue
            probs, labels = out
            p = probs.numpy()
            all_probs.append(p)
            all_labels.append(labels)
            npos = len(batch)
            mrr_pos.append(p[:npos])
            mrr_neg.append(p[npos:].reshape(npos, k))
    if not all_probs:
        raise DataError("no evaluable batches: history shorter than the patch count")
    scores = np.concatenate(all_probs)
    labels = np.concatenate(all_labels)
    metrics = {"ap": average_precision(scores, labels),
               "auc": roc_auc(scores, labels)}
    if k > 1:
        metrics["mrr"] = mrr(np.concatenate(mrr_pos), np.vstack(mrr_neg))
    return metrics


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model, config: RunConfig, ds_hash: str,
                    extra: dict | None = None) -> None:
    arrays = {k: p.data for k, p in model.named().items()}
    meta = {"config": config.to_dict(), "dataset_hash": ds_hash}
    meta.update(extra or {})
    T.save_tensors(path, arrays, meta)


def load_checkpoint(path, g: EventGraph, config: RunConfig | None = None):
    """Rebuild a model from a checkpoint; returns (model, stored_config, meta)."""
    arrays, meta = T.load_tensors(path)
    stored = RunConfig.from_dict(meta["config"])
    if config is not None:
        for key in RunConfig.COMPAT:
            if getattr(config, key) != getattr(stored, key):
                raise ConfigError(
                    f"checkpoint/config mismatch on {key!r}: "
                    f"{getattr(stored, key)!r} vs {getattr(config, key)!r}")
    n_classes = None
    if any(k.startswith("dnc.") for k in arrays):
        n_classes = arrays["dnc.w2"].shape[1]
    model = build_model(g, stored, n_classes=n_classes)
    named = model.named()
    if set(named) != set(arrays):
        raise ConfigError("checkpoint parameter names do not match the model")
    for k, p in named.items():
        if tuple(p.data.shape) != tuple(arrays[k].shape):
            raise ConfigError(f"checkpoint shape mismatch for {k!r}")
        p.data = arrays[k].astype(p.data.dtype, copy=True)
    return model, stored, meta


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    checkpoint: str
    history: list = field(default_factory=list)   # metric CSV rows
    best: dict = field(default_factory=dict)


def _grad_norms(params: dict) -> dict:
    return {k: float(np.linalg.norm(p.grad)) for k, p in params.items()
            if p.grad is not None}


def _split_of(g: EventGraph, config: RunConfig):
    if config.split == "inductive":
        return inductive_split(g, config.inductive_frac, seed=config.seed)
    return chronological_split(g)


def train(config: RunConfig, workdir=".") -> TrainResult:
    """Train per the config; writes checkpoint.bin, metrics.csv and
    manifest.json under ``workdir``."""
    os.makedirs(workdir, exist_ok=True)
    g = prepare_graph(config.dataset, config)
    ds_hash = dataset_hash(config.dataset)
    split = _split_of(g, config)

    if config.task == "dnc":
        return _train_dnc(g, config, split, ds_hash, workdir)

    model = build_model(g, config)
    params = model.named()
    opt = Adam(params, lr=config.lr)
    ckpt_path = os.path.join(workdir, "checkpoint.bin")
    visible_train = split.train_idx
    history, best = [], {"ap": -1.0, "epoch": -1}

    for epoch in range(config.epochs):
        for b, batch in enumerate(_batches(split.train_idx, config.batch_size)):
            pairs = np.stack([g.src[batch], g.dst[batch]], axis=1)
            negs = sample_negatives(pairs, g, 1,
                                    _derived_seed(config.seed, 2, epoch, b),
                                    bipartite_dst=_neg_pool(g, config))
            out = score_flp_batch(g, config, model, visible_train, batch, negs,
                                  seed=_derived_seed(config.seed, 3, epoch, b))
            if out is None:
                continue
            probs, labels = out
            loss = bce_loss(labels, probs)
            opt.zero_grad()
            T.backward(loss)
            if not np.isfinite(loss.item()):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {b}; "
                    f"grad norms: {_grad_norms(params)}")
            opt.step()

        val = evaluate_flp(g, config, model, split.val_idx,
                           np.arange(g.num_edges, dtype=np.int64),
                           eval_seed=_derived_seed(config.seed, 4))
        for metric, value in val.items():
            history.append((epoch, "val", "flp", metric, value, config.seed))
        if val["ap"] > best["ap"]:
            best = {"ap": val["ap"], "epoch": epoch, **val}
            save_checkpoint(ckpt_path, model, config, ds_hash,
                            extra={"val_ap": val["ap"], "epoch": epoch})

    _write_artifacts(workdir, config, ds_hash, history)
    return TrainResult(checkpoint=ckpt_path, history=history, best=best)


def _train_dnc(g: EventGraph, config: RunConfig, split, ds_hash, workdir):
    if not g.has_labels():
        raise DataError("task dnc requires a dataset with labels")
    if not config.flp_checkpoint:
        raise ConfigError("missing config key 'flp_checkpoint' (dnc trains on a "
                          "frozen encoder pretrained on flp)")
    labeled = np.flatnonzero(g.labels >= 0)
    n_classes = int(g.labels[labeled].max()) + 1
    base_model, _, _ = load_checkpoint(config.flp_checkpoint, g, config)
    rng = np.random.default_rng(config.seed)
    model = Model(encoder=base_model.encoder, link_decoder=base_model.link_decoder,
                  node_decoder=init_node_decoder(rng, config.d_h, n_classes))
    head = {f"dnc.{k}": v for k, v in model.node_decoder.items()}
    opt = Adam(head, lr=config.lr)

    train_lab = labeled[labeled < split.boundaries[0]]
    val_lab = labeled[(labeled >= split.boundaries[0]) & (labeled < split.boundaries[1])]
    visible = np.arange(g.num_edges, dtype=np.int64)
    ckpt_path = os.path.join(workdir, "checkpoint.bin")
    history, best = [], {"score": -1.0, "epoch": -1}

    for epoch in range(config.epochs):
        for b, batch in enumerate(_batches(train_lab, config.batch_size)):
            out = _dnc_batch(g, config, model, visible, batch,
                             seed=_derived_seed(config.seed, 3, epoch, b))
            if out is None:
                continue
            logits, labels = out
            loss = ce_loss(labels, logits)
            opt.zero_grad()
            T.backward(loss)
            if not np.isfinite(loss.item()):
                raise NumericError(f"non-finite loss at epoch {epoch} batch {b}; "
                                   f"grad norms: {_grad_norms(head)}")
            opt.step()

        metric, value = _eval_dnc(g, config, model, visible, val_lab, n_classes)
        history.append((epoch, "val", "dnc", metric, value, config.seed))
        if value > best["score"]:
            best = {"score": value, "metric": metric, "epoch": epoch}
            save_checkpoint(ckpt_path, model, config, ds_hash,
                            extra={"val_" + metric: value, "epoch": epoch})

    _write_artifacts(workdir, config, ds_hash, history)
    return TrainResult(checkpoint=ckpt_path, history=history, best=best)


def _dnc_batch(g, config, model, visible_idx, batch_idx, seed):
    """Logits for source nodes of labeled interactions, from the window
    strictly preceding each interaction (no label leakage)."""
    window_gidx = _window_before(visible_idx, int(batch_idx[0]), config.window)
    if len(window_gidx) < config.patches:
        return None
    w = window_from_indices(g, window_gidx)
    patches = patchify(w, config.patches)
    src = g.src[batch_idx]
    local, present = w.to_local(src)
    anchors = np.unique(local[present])
    emb = encode(w, patches, model.encoder, seed, anchors if len(anchors) else None)
    h_src = _lookup(emb, w, src)
    return dnc_logits(h_src, model.node_decoder), g.labels[batch_idx]


def _eval_dnc(g, config, model, visible_idx, phase_idx, n_classes):
    logits_all, labels_all = [], []
    with T.no_grad():
        for b, batch in enumerate(_batches(phase_idx, config.batch_size)):
            out = _dnc_batch(g, config, model, visible_idx, batch,
                             seed=_derived_seed(config.seed, 5, b))
            if out is None:
                continue
            logits, labels = out
            logits_all.append(logits.numpy())
            labels_all.append(labels)
    if not logits_all:
        raise DataError("no evaluable dnc batches")
    logits = np.vstack(logits_all)
    labels = np.concatenate(labels_all)
    if n_classes == 2:
        z = logits - logits.max(axis=1, keepdims=True)
        p1 = np.exp(z[:, 1]) / np.exp(z).sum(axis=1)
        return "auc", roc_auc(p1, labels)
    return "acc", float((logits.argmax(axis=1) == labels).mean())


def evaluate(checkpoint_path, split_name: str, config: RunConfig,
             eval_seed: int | None = None) -> dict:
    """Metrics of a stored model on the validation or test split."""
    if split_name not in ("val", "test"):
        raise ConfigError(f"split must be val or test, got {split_name!r}")
    g = prepare_graph(config.dataset, config)
    model, stored, meta = load_checkpoint(checkpoint_path, g, config)
    if meta.get("dataset_hash") != dataset_hash(config.dataset):
        raise ConfigError("checkpoint was trained on a different dataset file")
    split = _split_of(g, stored)
    phase = split.val_idx if split_name == "val" else split.test_idx
    visible = np.arange(g.num_edges, dtype=np.int64)
    seed = _derived_seed(stored.seed, 4) if eval_seed is None \
        else _derived_seed(eval_seed, 4)
    if stored.task == "dnc" or model.node_decoder is not None:
        labeled = phase[g.labels[phase] >= 0]
        n_classes = model.node_decoder["w2"].shape[1]
        metric, value = _eval_dnc(g, stored, model, visible, labeled, n_classes)
        return {metric: value}
    return evaluate_flp(g, stored, model, phase, visible, eval_seed=seed)


# ---------------------------------------------------------------------------
# artifacts


def write_metrics_csv(path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,split,task,metric,value,seed\n")
        for epoch, split, task, metric, value, seed in rows:
            fh.write(f"{epoch},{split},{task},{metric},{value:.12g},{seed}\n")


def _write_artifacts(workdir, config: RunConfig, ds_hash: str, history) -> None:
    write_metrics_csv(os.path.join(workdir, "metrics.csv"), history)
    manifest = {"config": config.to_dict(), "dataset_hash": ds_hash}
    with open(os.path.join(workdir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
