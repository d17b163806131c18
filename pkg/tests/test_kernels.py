import math

import numpy as np
import pytest

from tafilter import _kernels_py, kernels

try:
    from tafilter import _kernels as compiled
except ImportError:  # pragma: no cover - extension not built
    compiled = None

needs_ext = pytest.mark.skipif(compiled is None, reason="compiled extension not built")


def random_case(rng, M=3, N=4, T=20, D=5, spread=True):
    if spread:
        logs = 2 * math.log(T / 2) + rng.uniform(-3, 1, M)
    else:
        logs = rng.uniform(-1, 1, M)
    params = np.column_stack([rng.uniform(-1.5, 1.5, M), rng.uniform(-2, 1, M), logs])
    return np.ascontiguousarray(params), rng.normal(size=(T, D)), rng.normal(size=(M, N, D))


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")
    if compiled is not None:
        assert kernels.BACKEND == "cython" or kernels.os.environ.get("TAFILTER_PURE_PYTHON")


@needs_ext
@pytest.mark.parametrize("seed", range(20))
@pytest.mark.parametrize("spread", [True, False])
def test_compiled_matches_fallback(seed, spread):
    rng = np.random.default_rng(seed)
    M, N, T, D = (int(v) for v in rng.integers(1, 7, 4))
    T += 5
    params, x, up = random_case(rng, M, N, T, D, spread)
    a = compiled.bank_forward(params, T, N, x)
    b = _kernels_py.bank_forward(params, T, N, x)
    for u, v in zip(a, b):
        np.testing.assert_allclose(u, v, rtol=1e-12, atol=1e-13)
    ga = compiled.bank_backward(params, *a[:3], x, up)
    gb = _kernels_py.bank_backward(params, *b[:3], x, up)
    for u, v in zip(ga, gb):
        np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-12)


@needs_ext
def test_compiled_handles_clamped_rows():
    params = np.array([[30.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    x = np.random.default_rng(0).normal(size=(10, 2))
    up = np.ones((2, 3, 2))
    a = compiled.bank_forward(params, 10, 3, x)
    b = _kernels_py.bank_forward(params, 10, 3, x)
    assert np.all(a[2][0] < kernels.EPS)
    for u, v in zip(compiled.bank_backward(params, *a[:3], x, up),
                    _kernels_py.bank_backward(params, *b[:3], x, up)):
        np.testing.assert_allclose(u, v, rtol=1e-9, atol=1e-300)


def test_fallback_single_tap_has_zero_stride():
    params = np.array([[0.2, 5.0, 1.0]])
    _, mu, _ = _kernels_py.bank_weights(params, 10, 1)
    assert mu[0, 0] == pytest.approx(6.0)
