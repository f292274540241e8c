import numpy as np
import pytest

from tempatch import tensor as T
from tempatch.data import EventGraph

# one line per release criterion, filled in by tests/test_acceptance.py
# and echoed after the run (fd-level capture would swallow plain prints)
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def f64():
    """Run the test in float64 (finite-difference precision)."""
    prev = T.get_default_dtype()
    T.set_default_dtype(np.float64)
    yield
    T.set_default_dtype(prev)


@pytest.fixture(autouse=True)
def _restore_dtype():
    prev = T.get_default_dtype()
    yield
    T.set_default_dtype(prev)


def make_graph(src, dst, t=None, num_nodes=None, edge_feats=None,
               labels=None, node_feats=None) -> EventGraph:
    """EventGraph straight from arrays, bypassing the CSV loader."""
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    e = len(src)
    t = np.arange(e, dtype=np.float64) if t is None else np.asarray(t, np.float64)
    n = int(max(src.max(initial=0), dst.max(initial=0)) + 1) if num_nodes is None \
        else num_nodes
    if edge_feats is None:
        edge_feats = np.zeros((e, 0), dtype=np.float32)
    if labels is None:
        labels = np.full(e, -1, dtype=np.int64)
    if node_feats is None:
        node_feats = np.zeros((n, 0), dtype=np.float32)
    return EventGraph(num_nodes=n, src=src, dst=dst, t=t,
                      edge_feats=np.asarray(edge_feats, np.float32),
                      labels=np.asarray(labels, np.int64),
                      node_feats=np.asarray(node_feats, np.float32),
                      orig_ids=np.arange(n))


def random_graph(rng, n=12, e=40, d_e=0, d_v=0) -> EventGraph:
    src = rng.integers(0, n, size=e)
    dst = (src + 1 + rng.integers(0, n - 1, size=e)) % n
    t = np.sort(rng.uniform(0, 100, size=e))
    ef = rng.standard_normal((e, d_e)).astype(np.float32)
    nf = rng.standard_normal((n, d_v)).astype(np.float32)
    return make_graph(src, dst, t, num_nodes=n, edge_feats=ef, node_feats=nf)


def rel_err(analytic: float, numeric: float, floor: float = 1e-8) -> float:
    denom = max(abs(analytic), abs(numeric), floor)
    return abs(analytic - numeric) / denom


def finite_diff_check(params: dict, loss_fn, h: float = 1e-5,
                      rtol: float = 1e-5, max_entries: int | None = None,
                      rng=None, floor: float = 1e-8) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn`` must rebuild the forward pass from current parameter
    values on every call. Returns the worst relative error seen.
    ``floor`` bounds the relative-error denominator from below; central
    differences in f64 carry about eps*|loss|/h of absolute noise, so
    callers with near-zero gradient entries should raise it to the
    noise scale.
    """
    loss = loss_fn()
    T.backward(loss)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        if p.grad is None:
            continue
        g = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        idxs = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idxs = (rng or np.random.default_rng(0)).choice(
                flat.size, size=max_entries, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + h
            with T.no_grad():
                lp = loss_fn().item()
            flat[i] = orig - h
            with T.no_grad():
                lm = loss_fn().item()
            flat[i] = orig
            numeric = (lp - lm) / (2 * h)
            err = rel_err(float(g[i]), numeric, floor=floor)
            worst = max(worst, err)
            assert err < rtol, f"{name}[{i}]: analytic {g[i]} vs fd {numeric}"
    for p in params.values():
        p.grad = None
    return worst
