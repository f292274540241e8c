"""Windowing, temporal patch generation and neighbor sampling.

A window is a contiguous slice of the event stream; a patch set is its
balanced partition into M time-contiguous segments. Neighbor sampling
operates strictly inside one patch, so message passing never crosses
patch boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EventGraph
from .errors import ConfigError, DataError


@dataclass
class WindowedGraph:
    """Edge slice of the parent stream with compacted local node ids."""

    parent: EventGraph
    gidx: np.ndarray          # (Ew,) global edge indices, sorted
    src: np.ndarray           # (Ew,) window-local node ids
    dst: np.ndarray
    t: np.ndarray
    edge_feats: np.ndarray
    nodes: np.ndarray         # local id -> global id, sorted

    @property
    def num_edges(self) -> int:
        return len(self.gidx)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def edge_range(self) -> tuple[int, int]:
        if self.num_edges == 0:
            return (0, 0)
        return (int(self.gidx[0]), int(self.gidx[-1]) + 1)

    def to_local(self, global_nodes) -> tuple[np.ndarray, np.ndarray]:
        """Map global node ids to local ids; second array flags presence."""
        global_nodes = np.asarray(global_nodes, dtype=np.int64)
        if len(self.nodes) == 0:
            return (np.zeros_like(global_nodes),
                    np.zeros(global_nodes.shape, dtype=bool))
        pos = np.searchsorted(self.nodes, global_nodes)
        pos = np.clip(pos, 0, len(self.nodes) - 1)
        present = self.nodes[pos] == global_nodes
        return pos, present


@dataclass
class PatchView:
    """One patch: edges [lo, hi) of a window, node ids stay window-local."""

    window: WindowedGraph
    index: int
    lo: int
    hi: int

    @property
    def num_edges(self) -> int:
        return self.hi - self.lo

    @property
    def edge_ids(self) -> np.ndarray:
        return np.arange(self.lo, self.hi, dtype=np.int64)

    @property
    def src(self) -> np.ndarray:
        return self.window.src[self.lo:self.hi]

    @property
    def dst(self) -> np.ndarray:
        return self.window.dst[self.lo:self.hi]

    @property
    def t(self) -> np.ndarray:
        return self.window.t[self.lo:self.hi]

    @property
    def t_ref(self) -> float:
        """Reference time for elapsed-time encodings: the patch max."""
        return float(self.t[-1]) if self.hi > self.lo else 0.0

    def occupied_nodes(self) -> np.ndarray:
        return np.unique(np.concatenate([self.src, self.dst]))


@dataclass
class PatchSet:
    """Balanced contiguous partition of a window into M patches."""

    window: WindowedGraph
    M: int
    bounds: np.ndarray        # (M+1,) edge offsets into the window

    def __post_init__(self):
        occ = [PatchView(self.window, m, int(self.bounds[m]), int(self.bounds[m + 1]))
               .occupied_nodes() for m in range(self.M)]
        self._patch_nodes = occ
        self._occurrence: dict[int, list[int]] = {}
        for m, nodes in enumerate(occ):
            for n in nodes:
                self._occurrence.setdefault(int(n), []).append(m)

    def patch(self, m: int) -> PatchView:
        return PatchView(self.window, m, int(self.bounds[m]), int(self.bounds[m + 1]))

    def patches(self):
        return [self.patch(m) for m in range(self.M)]

    def patch_nodes(self, m: int) -> np.ndarray:
        """Sorted window-local ids of nodes with >=1 edge in patch m."""
        return self._patch_nodes[m]

    def occurrence(self, node: int) -> list[int]:
        """Patch indices in which a window-local node appears."""
        return self._occurrence.get(int(node), [])

    def occupancy(self) -> np.ndarray:
        """(num_nodes, M) binary matrix of node-patch occupancy."""
        occ = np.zeros((self.window.num_nodes, self.M), dtype=bool)
        for m, nodes in enumerate(self._patch_nodes):
            occ[nodes, m] = True
        return occ


@dataclass
class SampledNeighborhood:
    """Per-hop window-edge indices sampled around the anchors."""

    anchors: np.ndarray
    fanouts: tuple
    hop_edges: list           # one int64 array of window edge ids per hop

    def edge_union(self) -> np.ndarray:
        """Sorted unique sampled edges; canonical order for aggregation."""
        if not self.hop_edges:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(self.hop_edges))


def _window_from_global_indices(g: EventGraph, gidx: np.ndarray) -> WindowedGraph:
    gidx = np.asarray(gidx, dtype=np.int64)
    src_g, dst_g = g.src[gidx], g.dst[gidx]
    nodes = np.unique(np.concatenate([src_g, dst_g])) if len(gidx) else np.empty(0, np.int64)
    src = np.searchsorted(nodes, src_g)
    dst = np.searchsorted(nodes, dst_g)
    return WindowedGraph(parent=g, gidx=gidx, src=src, dst=dst,
                         t=g.t[gidx], edge_feats=g.edge_feats[gidx], nodes=nodes)


def extract_window(g: EventGraph, end_idx: int, W: int) -> WindowedGraph:
    """The up-to-W edges immediately preceding ``end_idx`` (exclusive)."""
    if not 0 < end_idx <= g.num_edges:
        raise DataError(f"end_idx {end_idx} out of range (0, {g.num_edges}]")
    if W < 1:
        raise ConfigError(f"window size must be >=1, got {W}")
    lo = max(0, end_idx - W)
    return _window_from_global_indices(g, np.arange(lo, end_idx, dtype=np.int64))


def window_from_indices(g: EventGraph, gidx) -> WindowedGraph:
    """Window over an explicit sorted list of global edge indices.

    Used for inductive training where masked-node edges are dropped from
    the visible stream.
    """
    return _window_from_global_indices(g, np.asarray(gidx, dtype=np.int64))


def patchify(w: WindowedGraph, M: int) -> PatchSet:
    """Split a window into M contiguous patches of size E//M, the first
    E mod M patches taking one extra edge."""
    if M < 1:
        raise ConfigError(f"patch count must be >=1, got {M}")
    e = w.num_edges
    if e < M:
        raise ConfigError(f"window has {e} edges, cannot form {M} patches")
    base, rem = divmod(e, M)
    sizes = np.full(M, base, dtype=np.int64)
    sizes[:rem] += 1
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return PatchSet(window=w, M=M, bounds=bounds)


def sample_neighborhood(patch, anchors, fanouts, mode: str = "uniform",
                        seed: int = 0) -> SampledNeighborhood:
    """Sample up to 3 hops of within-patch incident edges around anchors.

    ``uniform`` draws without replacement among each node's incident
    patch edges; ``last`` takes the most recent ones. Isolated anchors
    contribute nothing. Deterministic given the seed.
    """
    anchors = np.unique(np.asarray(anchors, dtype=np.int64))
    if len(anchors) == 0:
        raise ConfigError("anchors must be non-empty")
    fanouts = tuple(int(f) for f in fanouts)
    if any(f < 1 for f in fanouts):
        raise ConfigError(f"fanouts must be positive, got {fanouts}")
    if mode not in ("uniform", "last"):
        raise ConfigError(f"unknown sampling mode {mode!r}")

    if isinstance(patch, WindowedGraph):
        patch = PatchView(patch, 0, 0, patch.num_edges)

    # per-node incident edge lists (window-absolute ids, ascending = time order)
    ends = np.concatenate([patch.src, patch.dst])
    eids = np.concatenate([patch.edge_ids, patch.edge_ids])
    order = np.argsort(ends, kind="stable")
    ends_s, eids_s = ends[order], eids[order]
    uniq, starts = np.unique(ends_s, return_index=True)
    starts = np.append(starts, len(ends_s))

    def incident(node: int) -> np.ndarray:
        i = np.searchsorted(uniq, node)
        if i == len(uniq) or uniq[i] != node:
            return np.empty(0, dtype=np.int64)
        return np.sort(eids_s[starts[i]:starts[i + 1]])

    rng = np.random.default_rng(seed)
    visited = set(int(a) for a in anchors)
    frontier = anchors
    hop_edges = []
    for f in fanouts:
        chosen = []
        for node in frontier:              # frontier kept sorted for determinism
            edges = incident(int(node))
            if len(edges) == 0:
                continue
            if len(edges) <= f:
                sel = edges
            elif mode == "last":
                sel = edges[-f:]
            else:
                sel = rng.choice(edges, size=f, replace=False)
            chosen.append(sel)
        hop = np.unique(np.concatenate(chosen)) if chosen else np.empty(0, np.int64)
        hop_edges.append(hop)
        rel = hop - patch.lo
        touched = np.unique(np.concatenate([patch.src[rel], patch.dst[rel]])) \
            if len(hop) else np.empty(0, np.int64)
        frontier = np.asarray(sorted(int(n) for n in touched if int(n) not in visited),
                              dtype=np.int64)
        visited.update(int(n) for n in frontier)
        if len(frontier) == 0:
            break
    while len(hop_edges) < len(fanouts):
        hop_edges.append(np.empty(0, dtype=np.int64))
    return SampledNeighborhood(anchors=anchors, fanouts=fanouts, hop_edges=hop_edges)
