"""Non-learned temporal baselines: global pooling and fixed pyramid filters."""
from __future__ import annotations

import math

import numpy as np

from .filterbank import FeatureSequence, FilterParams

POOL_MODES = ("max", "sum", "mean")


def global_pool(x, mode: str) -> np.ndarray:
    """Pool a T x D sequence over time into a D-vector."""
    data = x.data if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] == 0:
        raise ValueError("global_pool needs a non-empty T x D sequence")
    if mode == "max":
        return data.max(axis=0)
    if mode == "sum":
        return data.sum(axis=0)
    if mode == "mean":
        return data.mean(axis=0)
    raise ValueError(f"unknown pooling mode {mode!r}; expected one of {POOL_MODES}")


def global_pool_backward(x, mode: str, upstream: np.ndarray) -> np.ndarray:
    """Input gradient of ``upstream . global_pool(x, mode)``.

    Max pooling routes each dimension's gradient to its first argmax frame.
    """
    data = x.data if isinstance(x, FeatureSequence) else np.asarray(x, dtype=np.float64)
    T, D = data.shape
    if mode == "sum":
        return np.broadcast_to(upstream, (T, D)).copy()
    if mode == "mean":
        return np.broadcast_to(upstream / T, (T, D)).copy()
    if mode == "max":
        dx = np.zeros((T, D))
        dx[data.argmax(axis=0), np.arange(D)] = upstream
        return dx
    raise ValueError(f"unknown pooling mode {mode!r}; expected one of {POOL_MODES}")


def pyramid_params(level: int, N: int = 1) -> list[FilterParams]:
    """Fixed temporal-pyramid filters: the whole sequence, halves, quarters, ...

    Depth ``l`` contributes ``2**l`` filters, one per segment, each centred
    on its segment with taps spanning it. Widths are stored relative to T
    (``relative_width=True``): sigma = delta / 2 for N >= 2 and
    T / (4 * 2**l) for N == 1.
    """
    if level < 1:
        raise ValueError(f"pyramid level must be >= 1, got {level}")
    if N < 1:
        raise ValueError(f"tap count must be >= 1, got {N}")
    filters = []
    for depth in range(level):
        segments = 2 ** depth
        delta_tilde = 1.0 / segments
        if N >= 2:
            sigma_rel = delta_tilde / (N - 1) / 2.0
        else:
            sigma_rel = 1.0 / (4.0 * segments)
        for j in range(segments):
            centre = (j + 0.5) / segments
            filters.append(
                FilterParams(
                    g_tilde=2.0 * centre - 1.0,
                    log_delta_tilde=math.log(delta_tilde),
                    log_sigma_sq=2.0 * math.log(sigma_rel),
                    relative_width=True,
                )
            )
    return filters
