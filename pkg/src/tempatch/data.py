"""Continuous-time dynamic graph store: ingestion, splits, negatives.

The event stream is a time-ordered undirected multigraph. Edges live in
flat numpy arrays indexed by their position in the sorted stream
(``global_idx``). CSV schema: ``src,dst,timestamp,label,f1,...,fD`` with
a required header row; label is ``-1`` when absent.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError, SchemaError


@dataclass(frozen=True)
class Edge:
    """One interaction of the stream, in compacted node ids."""

    src: int
    dst: int
    t: float
    feat: np.ndarray
    global_idx: int


@dataclass
class EventGraph:
    """Immutable-after-load CTDG with edges sorted by (t, file order)."""

    num_nodes: int
    src: np.ndarray          # (E,) int64, compacted ids
    dst: np.ndarray          # (E,) int64
    t: np.ndarray            # (E,) float64, non-decreasing
    edge_feats: np.ndarray   # (E, De) float32; De may be 0
    labels: np.ndarray       # (E,) int64; -1 where absent
    node_feats: np.ndarray   # (N, Dv) float32; zeros when absent
    orig_ids: np.ndarray = field(default=None)  # compacted id -> original id

    @property
    def num_edges(self) -> int:
        return len(self.src)

    @property
    def edge_dim(self) -> int:
        return self.edge_feats.shape[1]

    def edge(self, i: int) -> Edge:
        return Edge(int(self.src[i]), int(self.dst[i]), float(self.t[i]),
                    self.edge_feats[i], i)

    def has_labels(self) -> bool:
        return bool(np.any(self.labels >= 0))


@dataclass
class SplitSpec:
    """Chronological (transductive) or masked-node (inductive) split.

    ``train_idx``/``val_idx``/``test_idx`` are sorted global edge indices;
    for the transductive mode they are contiguous ranges given by
    ``boundaries``.
    """

    mode: str                      # "transductive" | "inductive"
    boundaries: tuple[int, int]
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    masked_nodes: frozenset = frozenset()
    seed: int | None = None


def load_edge_stream(path, has_labels: bool = True) -> EventGraph:
    """Parse a CSV event stream into an :class:`EventGraph`.

    Rows are stably sorted by timestamp (file order breaks ties), node ids
    compacted to 0..N-1 and the edge feature arity taken from the first
    data row.
    """
    srcs, dsts, ts, labels, feats = [], [], [], [], []
    n_feat = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty dataset file")
        if len(header) < 4 or header[0].strip().lower() != "src":
            raise SchemaError(f"{path}:1: expected header 'src,dst,timestamp,label,...'")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if n_feat is None:
                if len(row) < 4:
                    raise SchemaError(f"{path}:{lineno}: expected >=4 columns, got {len(row)}")
                n_feat = len(row) - 4
            elif len(row) - 4 != n_feat:
                raise SchemaError(
                    f"{path}:{lineno}: inconsistent feature arity "
                    f"(expected {n_feat}, got {len(row) - 4})")
            try:
                srcs.append(int(row[0]))
                dsts.append(int(row[1]))
                ts.append(float(row[2]))
                labels.append(int(float(row[3])))
                feats.append([float(x) for x in row[4:]])
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: malformed row ({exc})")
    if not srcs:
        raise DataError(f"{path}: no edges in dataset")

    src = np.asarray(srcs, dtype=np.int64)
    dst = np.asarray(dsts, dtype=np.int64)
    t = np.asarray(ts, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64) if has_labels else np.full(len(srcs), -1, np.int64)
    ef = np.asarray(feats, dtype=np.float32).reshape(len(srcs), n_feat)

    order = np.argsort(t, kind="stable")
    src, dst, t, lab, ef = src[order], dst[order], t[order], lab[order], ef[order]

    orig = np.unique(np.concatenate([src, dst]))
    remap = {int(o): i for i, o in enumerate(orig)}
    src = np.asarray([remap[int(s)] for s in src], dtype=np.int64)
    dst = np.asarray([remap[int(d)] for d in dst], dtype=np.int64)
    n = len(orig)

    return EventGraph(
        num_nodes=n, src=src, dst=dst, t=t, edge_feats=ef, labels=lab,
        node_feats=np.zeros((n, 0), dtype=np.float32), orig_ids=orig,
    )


def dataset_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def chronological_split(g: EventGraph, ratios=(0.7, 0.15, 0.15)) -> SplitSpec:
    """70/15/15 (by default) chronological split by edge count."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    e = g.num_edges
    if e < 3:
        raise DataError(f"need at least 3 edges to split, got {e}")
    train_end = int(ratios[0] * e)
    val_end = train_end + int(ratios[1] * e)
    idx = np.arange(e, dtype=np.int64)
    return SplitSpec(
        mode="transductive", boundaries=(train_end, val_end),
        train_idx=idx[:train_end], val_idx=idx[train_end:val_end],
        test_idx=idx[val_end:],
    )


def inductive_split(g: EventGraph, frac: float = 0.1, seed: int = 0) -> SplitSpec:
    """Mask a random node subset out of training; test keeps only edges
    touching at least one masked node."""
    if not 0.0 < frac < 1.0:
        raise ConfigError(f"inductive frac must be in (0,1), got {frac}")
    if g.num_nodes < 10:
        raise DataError(f"inductive split needs >=10 nodes, got {g.num_nodes}")
    base = chronological_split(g)
    rng = np.random.default_rng(seed)
    k = int(frac * g.num_nodes)
    masked = rng.choice(g.num_nodes, size=k, replace=False)
    masked_set = frozenset(int(m) for m in masked)
    is_masked = np.zeros(g.num_nodes, dtype=bool)
    is_masked[masked] = True

    touches = is_masked[g.src] | is_masked[g.dst]
    train_idx = base.train_idx[~touches[base.train_idx]]
    test_idx = base.test_idx[touches[base.test_idx]]
    return SplitSpec(
        mode="inductive", boundaries=base.boundaries,
        train_idx=train_idx, val_idx=base.val_idx, test_idx=test_idx,
        masked_nodes=masked_set, seed=seed,
    )


def sample_negatives(batch_src_dst, g: EventGraph, k: int, seed: int,
                     bipartite_dst: np.ndarray | None = None) -> np.ndarray:
    """Per positive edge, draw k uniform destination ids != the true one.

    ``batch_src_dst`` is an (B, 2) array of (src, dst) pairs. Returns a
    (B, k) int64 array, deterministic in the seed. With ``bipartite_dst``
    set, candidates come from that id array instead of all nodes.
    """
    if k < 1:
        raise ConfigError(f"negative count must be >=1, got {k}")
    pool = np.arange(g.num_nodes, dtype=np.int64) if bipartite_dst is None \
        else np.asarray(bipartite_dst, dtype=np.int64)
    if len(pool) < 2:
        raise DataError("need at least 2 candidate nodes for negative sampling")
    pairs = np.asarray(batch_src_dst, dtype=np.int64).reshape(-1, 2)
    rng = np.random.default_rng(seed)
    out = np.empty((len(pairs), k), dtype=np.int64)
    for i, (_, dst) in enumerate(pairs):
        for j in range(k):
            while True:
                cand = pool[rng.integers(len(pool))]
                if cand != dst:
                    out[i, j] = cand
                    break
    return out
