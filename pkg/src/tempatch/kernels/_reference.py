"""Pure-numpy kernels: the fallback backend.

All accumulations run in input order so results are bit-identical to the
compiled backend and reproducible across runs.
"""

import numpy as np

BACKEND = "python"


def scatter_add_rows(out, idx, rows):
    """out[idx[i]] += rows[i], accumulated in increasing i. Mutates ``out``."""
    np.add.at(out, idx, rows)
    return out


def segment_sum(values, seg, num_segments):
    """Sum rows of ``values`` into ``num_segments`` buckets given by ``seg``."""
    if values.ndim == 1:
        out = np.zeros(num_segments, dtype=values.dtype)
    else:
        out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    np.add.at(out, seg, values)
    return out


def segment_max(values, seg, num_segments):
    """Per-segment max of a 1-D array; empty segments give -inf."""
    out = np.full(num_segments, -np.inf, dtype=values.dtype)
    np.maximum.at(out, seg, values)
    return out
