"""Temporal attention filters: a bank of N Gaussian taps placed relative to T.

A filter is three unconstrained numbers ``(g_tilde, log_delta_tilde,
log_sigma_sq)``. For a sequence of length T they resolve to

    g     = 0.5 * T * (g_tilde + 1)
    delta = T / (N - 1) * exp(log_delta_tilde)      (0 when N == 1)
    mu_i  = g + (i - 0.5 * N + 0.5) * delta

and tap ``i`` weights frame ``t`` by ``exp(-(t - mu_i)^2 / (2 sigma^2))``,
normalized per row. Row sums below ``EPS`` are clamped to ``EPS``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels
from .kernels import EPS

__all__ = [
    "EPS",
    "FilterParams",
    "FilterBank",
    "FeatureSequence",
    "ReadGradients",
    "materialize",
    "read",
    "read_backward",
    "params_array",
    "absolute_params",
    "forward_filters",
    "backward_filters",
]


@dataclass(frozen=True)
class FilterParams:
    """Learnable triple for one filter.

    When ``relative_width`` is set, ``log_sigma_sq`` is the log of
    ``sigma^2 / T^2`` so the width scales with the sequence (used by the
    fixed pyramid filters).
    """

    g_tilde: float
    log_delta_tilde: float
    log_sigma_sq: float
    relative_width: bool = False

    def __post_init__(self):
        for name in ("g_tilde", "log_delta_tilde", "log_sigma_sq"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValueError(f"FilterParams.{name} must be finite, got {value!r}")

    @property
    def delta_tilde(self) -> float:
        return math.exp(self.log_delta_tilde)

    def sigma_sq(self, T: int) -> float:
        s = math.exp(self.log_sigma_sq)
        return s * T * T if self.relative_width else s

    def absolute_log_sigma_sq(self, T: int) -> float:
        if self.relative_width:
            return self.log_sigma_sq + 2.0 * math.log(T)
        return self.log_sigma_sq

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.g_tilde, self.log_delta_tilde, self.log_sigma_sq)


@dataclass(frozen=True)
class FilterBank:
    """Materialized N x T weights of one filter on one sequence length."""

    weights: np.ndarray
    mu: np.ndarray
    rowsum: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.weights.shape[0]

    @property
    def T(self) -> int:
        return self.weights.shape[1]

    @property
    def degenerate(self) -> bool:
        """True if some row's normalizer hit the ``EPS`` clamp."""
        return bool(np.any(self.rowsum < EPS))


@dataclass(frozen=True)
class FeatureSequence:
    """A T x D feature sequence with its class label."""

    data: np.ndarray
    label: int = 0
    id: str = ""

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise ValueError(f"feature sequence must be 2-D (T x D), got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"feature sequence needs T >= 1 and D >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature sequence contains non-finite values")
        data = np.ascontiguousarray(data)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def D(self) -> int:
        return self.data.shape[1]


class ReadGradients(NamedTuple):
    g_tilde: float
    log_delta_tilde: float
    log_sigma_sq: float
    x: np.ndarray


def _check_sizes(T, N):
    if int(T) != T or T < 1:
        raise ValueError(f"sequence length T must be a positive integer, got {T!r}")
    if int(N) != N or N < 1:
        raise ValueError(f"tap count N must be a positive integer, got {N!r}")


def _as_data(x) -> np.ndarray:
    if isinstance(x, FeatureSequence):
        return x.data
    return np.ascontiguousarray(x, dtype=np.float64)


def params_array(filters) -> np.ndarray:
    """Stack FilterParams into an (M, 3) array (log sigma^2 as stored)."""
    return np.array([f.as_tuple() for f in filters], dtype=np.float64).reshape(-1, 3)


def absolute_params(params: np.ndarray, T: int, relative_width=False) -> np.ndarray:
    """Return a C-contiguous copy of ``params`` with log sigma^2 in frame^2 units."""
    out = np.array(params, dtype=np.float64, order="C").reshape(-1, 3)
    if np.any(relative_width):
        mask = np.broadcast_to(np.asarray(relative_width, dtype=bool), out.shape[:1])
        out[mask, 2] += 2.0 * math.log(T)
    return out


def materialize(params: FilterParams, T: int, N: int) -> FilterBank:
    _check_sizes(T, N)
    p = absolute_params(params_array([params]), T, params.relative_width)
    weights, mu, rowsum = kernels.bank_weights(p, int(T), int(N))
    return FilterBank(weights=weights[0], mu=mu[0], rowsum=rowsum[0])


def read(bank: FilterBank, x) -> np.ndarray:
    """Apply the bank to a T x D sequence, giving N x D."""
    data = _as_data(x)
    if data.ndim != 2 or data.shape[0] != bank.T:
        raise ValueError(f"bank has T={bank.T} but input has shape {data.shape}")
    return bank.weights @ data


def read_backward(bank: FilterBank, params: FilterParams, x, upstream) -> ReadGradients:
    """Gradients of ``sum(upstream * read(bank, x))`` w.r.t. params and x."""
    data = _as_data(x)
    upstream = np.ascontiguousarray(upstream, dtype=np.float64)
    if data.shape[0] != bank.T:
        raise ValueError(f"bank has T={bank.T} but input has shape {data.shape}")
    if upstream.shape != (bank.N, data.shape[1]):
        raise ValueError(f"upstream must have shape {(bank.N, data.shape[1])}, got {upstream.shape}")
    p = absolute_params(params_array([params]), bank.T, params.relative_width)
    dparams, dx = kernels.bank_backward(
        p,
        np.ascontiguousarray(bank.weights[None]),
        np.ascontiguousarray(bank.mu[None]),
        np.ascontiguousarray(bank.rowsum[None]),
        data,
        upstream[None],
    )
    return ReadGradients(float(dparams[0, 0]), float(dparams[0, 1]), float(dparams[0, 2]), dx)


def forward_filters(params: np.ndarray, N: int, data: np.ndarray):
    """Fused forward over M filters given absolute (M, 3) params.

    Returns ``(weights, mu, rowsum, out)``; ``out`` is (M, N, D).
    """
    return kernels.bank_forward(params, data.shape[0], N, data)


def backward_filters(params, weights, mu, rowsum, data, upstream):
    """Fused backward matching :func:`forward_filters`; returns ``(dparams, dx)``."""
    return kernels.bank_backward(params, weights, mu, rowsum, data,
                                 np.ascontiguousarray(upstream, dtype=np.float64))
