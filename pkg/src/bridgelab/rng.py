"""Counter-based Gaussian noise keyed by (seed, step, sample index).

Each sampling step owns a Philox stream keyed by ``(seed, step)``; row ``i``
of that stream is the noise for dataset sample ``i``. A trajectory therefore
does not depend on how samples are grouped into batches.
"""

from __future__ import annotations

import numpy as np

_MASK64 = (1 << 64) - 1


def step_generator(seed: int, step: int) -> np.random.Generator:
    key = np.array([int(seed) & _MASK64, int(step) & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def batch_normal(seed: int, step: int, indices, shape) -> np.ndarray:
    """Standard normals of ``shape`` for each sample index (rows of the step stream)."""
    indices = np.asarray(indices, dtype=np.int64)
    shape = tuple(shape)
    if indices.size == 0:
        return np.zeros((0,) + shape)
    if indices.min() < 0:
        raise ValueError("sample indices must be non-negative")
    rows = step_generator(seed, step).standard_normal((int(indices.max()) + 1,) + shape)
    return rows[indices]
