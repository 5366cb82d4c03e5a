"""Counter-based random streams.

All randomness in the package flows through Philox generators keyed by
``(seed, stream_index)``.  A stream is fully determined by its key, so any
consumer can open stream ``i`` without generating streams ``0..i-1`` first.
This is what makes environment access random-access and Monte Carlo runs
reproducible under any worker scheduling.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def substream(seed: int, index: int) -> np.random.Generator:
    """Open the ``index``-th independent stream under ``seed``.

    Two calls with the same ``(seed, index)`` return generators producing
    bitwise-identical output.
    """
    if index < 0:
        raise ValueError(f"stream index must be >= 0, got {index}")
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))
