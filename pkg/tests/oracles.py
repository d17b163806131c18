"""Independent reference computations used by the test-suite."""
import math

import numpy as np


def double_loop_read(weights, x):
    N, T = weights.shape
    D = x.shape[1]
    out = np.zeros((N, D))
    for i in range(N):
        for d in range(D):
            acc = 0.0
            for t in range(T):
                acc += weights[i, t] * x[t, d]
            out[i, d] = acc
    return out


def scalar_filter_weights(g_tilde, log_delta_tilde, log_sigma_sq, T, N, eps=1e-8):
    """Evaluate one filter's weights with plain ``math`` arithmetic."""
    g = 0.5 * T * (g_tilde + 1.0)
    delta = T / (N - 1) * math.exp(log_delta_tilde) if N > 1 else 0.0
    var = math.exp(log_sigma_sq)
    mu = [g + (i - 0.5 * N + 0.5) * delta for i in range(N)]
    rows = []
    for i in range(N):
        e = [math.exp(-((t - mu[i]) ** 2) / (2.0 * var)) for t in range(T)]
        z = max(sum(e), eps)
        rows.append([v / z for v in e])
    return np.array(rows), np.array(mu)


def matched_filter_predict(data, motifs, positions):
    """Classify by correlating each class motif with the window planted at its position.

    Scans the planted window and its neighbours (+-1 frame) to absorb
    placement rounding.
    """
    T = data.shape[0]
    C, L, _ = motifs.shape
    scores = []
    for c in range(C):
        start0 = int(math.floor(positions[c] * T - (L - 1) / 2.0 + 0.5))
        best = -np.inf
        for start in range(start0 - 1, start0 + 2):
            s = min(max(start, 0), T - L)
            best = max(best, float(np.sum(data[s:s + L] * motifs[c])))
        scores.append(best - 0.5 * float(np.sum(motifs[c] ** 2)))
    return int(np.argmax(scores))
