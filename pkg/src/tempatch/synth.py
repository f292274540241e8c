"""Synthetic event-stream generators.

``periodic``: users interact with a fixed partner on a repeating
schedule; almost every edge is a repeat, so the stream is highly
predictable from short history.

``longrange``: trigger/resolution episodes. A user first touches one of
C signal nodes, then (after ``gap`` intervening edges, with a hub touch
in between) interacts with the partner determined by that signal. The
predictive information for a resolution edge therefore sits several
patches in the past, which only a model with global (cross-patch)
context can exploit.
"""

from __future__ import annotations

import csv
import heapq

import numpy as np

from .errors import ConfigError


def generate_periodic(num_nodes: int = 20, num_edges: int = 2000,
                      seed: int = 0) -> list[tuple]:
    """Bipartite repeating schedule; returns (src, dst, t, label) rows."""
    if num_nodes < 4:
        raise ConfigError(f"periodic needs >=4 nodes, got {num_nodes}")
    rng = np.random.default_rng(seed)
    users = num_nodes // 2
    items = num_nodes - users
    partner = {u: users + (u % items) for u in range(users)}
    rows = []
    t = 0.0
    while len(rows) < num_edges:
        for u in rng.permutation(users):
            if len(rows) >= num_edges:
                break
            t += 1.0
            rows.append((int(u), partner[int(u)], t, -1))
    return rows


def generate_longrange(num_nodes: int = 64, num_edges: int = 2000,
                       seed: int = 0, num_signals: int = 12,
                       gap: int | None = None) -> list[tuple]:
    """Episodic stream whose resolution edges depend on a signal ``gap``
    edges in the past; returns (src, dst, t, label) rows."""
    c = num_signals
    users = num_nodes - 2 * c - 1
    if users < 2:
        raise ConfigError(
            f"longrange needs > {2 * c + 2} nodes for {c} signals, got {num_nodes}")
    if gap is None:
        gap = 3 * users   # keeps the stream saturated with episodes
    rng = np.random.default_rng(seed)
    signal = [users + j for j in range(c)]
    partner = [users + c + j for j in range(c)]
    hub = num_nodes - 1

    rows = []
    pending: set[int] = set()
    heap: list[tuple] = []   # (due_step, tiebreak, kind, user, signal_idx)
    tiebreak = 0
    s = 0
    while len(rows) < num_edges:
        if heap and heap[0][0] <= s:
            _, _, kind, u, j = heapq.heappop(heap)
            if kind == "hub":
                rows.append((u, hub, float(s), -1))
            else:
                rows.append((u, partner[j], float(s), -1))
                pending.discard(u)
        else:
            free = sorted(set(range(users)) - pending)
            if free:
                u = int(free[rng.integers(len(free))])
                j = int(rng.integers(c))
                rows.append((u, signal[j], float(s), -1))
                pending.add(u)
                jit = int(rng.integers(-gap // 10, gap // 10 + 1))
                heapq.heappush(heap, (s + gap // 2, tiebreak, "hub", u, j))
                heapq.heappush(heap, (s + gap + jit, tiebreak + 1, "res", u, j))
                tiebreak += 2
            else:
                # every user pending: neutral hub-signal chatter
                rows.append((hub, signal[int(rng.integers(c))], float(s), -1))
        s += 1
    return rows


def repeat_ratio(rows: list[tuple]) -> float:
    """Fraction of edges whose undirected (src, dst) pair occurred before."""
    seen = set()
    repeats = 0
    for src, dst, _, _ in rows:
        key = (min(src, dst), max(src, dst))
        if key in seen:
            repeats += 1
        seen.add(key)
    return repeats / max(len(rows), 1)


def write_csv(rows: list[tuple], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["src", "dst", "timestamp", "label"])
        for src, dst, t, label in rows:
            writer.writerow([src, dst, f"{t:.1f}", label])


def generate(pattern: str, num_nodes: int, num_edges: int, seed: int) -> list[tuple]:
    if pattern == "periodic":
        return generate_periodic(num_nodes, num_edges, seed)
    if pattern == "longrange":
        return generate_longrange(num_nodes, num_edges, seed)
    raise ConfigError(f"unknown synthetic pattern {pattern!r}")
