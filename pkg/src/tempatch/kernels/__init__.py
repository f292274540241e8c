"""Kernel backend selection.

The compiled extension is used when importable; the numpy fallback
otherwise. ``TEMPATCH_KERNELS=python|cython`` forces a backend. Both
backends accumulate in the same order and are bit-identical.
"""

import os

from . import _reference

_forced = os.environ.get("TEMPATCH_KERNELS", "").strip().lower()

if _forced == "python":
    _impl = _reference
else:
    try:
        from . import _speedups as _impl
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "TEMPATCH_KERNELS=cython but the compiled extension is not "
                "built; run `pip install -e . --no-build-isolation`"
            )
        _impl = _reference

BACKEND = _impl.BACKEND

scatter_add_rows = _impl.scatter_add_rows
segment_sum = _impl.segment_sum
segment_max = _impl.segment_max


def segment_softmax(scores, seg, num_segments):
    """Numerically stable softmax of ``scores`` within each segment.

    Elementwise math stays in numpy so both backends agree bit-for-bit;
    only the reductions go through the selected backend.
    """
    import numpy as np

    m = segment_max(scores, seg, num_segments)
    shifted = np.exp(scores - m[seg])
    denom = segment_sum(shifted, seg, num_segments)
    return shifted / denom[seg]
