"""Pure numpy filter-bank kernels.

Same contract as the compiled ``_kernels`` module. ``params`` is an (M, 3)
float64 array of ``(g_tilde, log_delta_tilde, log_sigma_sq)`` rows where
``log_sigma_sq`` is already absolute (frame^2 units).
"""
import numpy as np

EPS = 1e-8


def _offsets(N):
    return np.arange(N, dtype=np.float64) - 0.5 * N + 0.5


def _placement(params, T, N):
    g = 0.5 * T * (params[:, 0] + 1.0)
    if N > 1:
        delta = (T / (N - 1)) * np.exp(params[:, 1])
    else:
        delta = np.zeros(params.shape[0])
    mu = g[:, None] + _offsets(N)[None, :] * delta[:, None]
    return delta, mu


def bank_weights(params, T, N):
    """Return ``(weights (M,N,T), mu (M,N), rowsum (M,N))``."""
    params = np.asarray(params, dtype=np.float64)
    _, mu = _placement(params, T, N)
    var = np.exp(params[:, 2])
    diff = np.arange(T, dtype=np.float64)[None, None, :] - mu[:, :, None]
    e = np.exp(-diff * diff / (2.0 * var[:, None, None]))
    rowsum = e.sum(axis=-1)
    weights = e / np.maximum(rowsum, EPS)[:, :, None]
    return weights, mu, rowsum


def bank_forward(params, T, N, x):
    """Materialize all M filters and read ``x`` (T, D) through them.

    Returns ``(weights, mu, rowsum, out)`` with ``out`` of shape (M, N, D).
    """
    weights, mu, rowsum = bank_weights(params, T, N)
    out = np.matmul(weights, x)
    return weights, mu, rowsum, out


def bank_backward(params, weights, mu, rowsum, x, upstream):
    """Gradients of ``sum(upstream * out)``.

    Returns ``(dparams (M,3), dx (T,D))``.
    """
    params = np.asarray(params, dtype=np.float64)
    M, N, T = weights.shape
    var = np.exp(params[:, 2])
    delta, _ = _placement(params, T, N)

    G = np.matmul(upstream, x.T)  # dL/dweights, (M, N, T)
    clamped = rowsum < EPS
    Z = np.maximum(rowsum, EPS)
    inner = (G * weights).sum(axis=-1)
    dE = np.where(clamped[:, :, None], G / EPS, (G - inner[:, :, None]) / Z[:, :, None])
    e = weights * Z[:, :, None]
    diff = np.arange(T, dtype=np.float64)[None, None, :] - mu[:, :, None]
    dEe = dE * e
    dmu = (dEe * diff).sum(axis=-1) / var[:, None]
    dlogvar = (dEe * diff * diff).sum(axis=(1, 2)) / (2.0 * var)

    dparams = np.empty((M, 3))
    dparams[:, 0] = 0.5 * T * dmu.sum(axis=1)
    dparams[:, 1] = (dmu * _offsets(N)[None, :]).sum(axis=1) * delta
    dparams[:, 2] = dlogvar
    dx = np.einsum("mnt,mnd->td", weights, upstream)
    return dparams, dx
