import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import double_loop_read, scalar_filter_weights
from tafilter.filterbank import (
    FeatureSequence,
    FilterParams,
    materialize,
    read,
    read_backward,
)


def central_diff(f, x0, h=1e-5):
    return (f(x0 + h) - f(x0 - h)) / (2 * h)


def friendly_params(rng, T):
    return FilterParams(
        float(rng.uniform(-0.6, 0.6)),
        float(rng.uniform(-1.0, 0.3)),
        float(2 * math.log(T / 2) + rng.uniform(-1.0, 0.5)),
    )


class TestMaterialize:
    def test_single_tap_sits_at_centre(self):
        bank = materialize(FilterParams(0.0, 0.0, 0.0), T=10, N=1)
        assert bank.mu.tolist() == [5.0]
        assert bank.weights.shape == (1, 10)
        assert int(np.argmax(bank.weights[0])) == 5
        assert abs(bank.weights.sum() - 1.0) <= 1e-12

    def test_three_taps_span_sequence(self):
        bank = materialize(FilterParams(0.0, 0.0, 0.0), T=7, N=3)
        np.testing.assert_allclose(bank.mu, [0.0, 3.5, 7.0], rtol=0, atol=1e-12)

    def test_hand_evaluated_rows(self):
        bank = materialize(FilterParams(0.5, math.log(0.5), 0.0), T=4, N=2)
        np.testing.assert_allclose(bank.mu, [2.0, 4.0], rtol=0, atol=1e-12)
        row0 = np.array([math.exp(-2), math.exp(-0.5), 1.0, math.exp(-0.5)])
        row1 = np.array([math.exp(-8), math.exp(-4.5), math.exp(-2), math.exp(-0.5)])
        np.testing.assert_allclose(bank.weights[0], row0 / row0.sum(), rtol=0, atol=1e-15)
        np.testing.assert_allclose(bank.weights[1], row1 / row1.sum(), rtol=0, atol=1e-15)

    def test_matches_scalar_oracle(self, rng):
        for _ in range(50):
            T = int(rng.integers(1, 40))
            N = int(rng.integers(1, 6))
            p = FilterParams(rng.uniform(-1.5, 1.5), rng.uniform(-2, 1), rng.uniform(-2, 6))
            ref_w, ref_mu = scalar_filter_weights(*p.as_tuple(), T, N)
            bank = materialize(p, T, N)
            np.testing.assert_allclose(bank.mu, ref_mu, rtol=0, atol=1e-12)
            np.testing.assert_allclose(bank.weights, ref_w, rtol=1e-12, atol=1e-300)

    @pytest.mark.parametrize("T,N", [(0, 1), (5, 0), (-1, 3)])
    def test_rejects_empty_sizes(self, T, N):
        with pytest.raises(ValueError):
            materialize(FilterParams(0.0, 0.0, 0.0), T, N)

    @pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
    def test_rejects_non_finite(self, bad):
        with pytest.raises(ValueError):
            FilterParams(bad, 0.0, 0.0)
        with pytest.raises(ValueError):
            FilterParams(0.0, 0.0, bad)

    def test_far_placement_is_clamped(self):
        bank = materialize(FilterParams(40.0, 0.0, 0.0), T=10, N=2)
        assert bank.degenerate
        assert np.all(np.isfinite(bank.weights))
        assert bank.weights.sum() < 1.0

    def test_relative_width_scales_with_length(self):
        p = FilterParams(0.0, 0.0, math.log(0.01), relative_width=True)
        assert p.sigma_sq(20) == pytest.approx(4.0)
        a = materialize(p, 20, 1).weights[0]
        b = materialize(FilterParams(0.0, 0.0, math.log(4.0)), 20, 1).weights[0]
        np.testing.assert_allclose(a, b, rtol=1e-12)


@settings(max_examples=150, deadline=None)
@given(
    T=st.integers(1, 60),
    N=st.integers(1, 7),
    g=st.floats(-1.0, 1.0),
    ld=st.floats(-3.0, 1.0),
    ls=st.floats(-1.0, 7.0),
)
def test_rows_normalized_and_nonnegative(T, N, g, ld, ls):
    bank = materialize(FilterParams(g, ld, ls), T, N)
    assert np.all(bank.weights >= 0)
    if not bank.degenerate:
        assert np.max(np.abs(bank.weights.sum(axis=1) - 1.0)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(
    T=st.integers(2, 40),
    N=st.integers(1, 5),
    ld=st.floats(-2.0, 0.5),
    ls=st.floats(-1.0, 5.0),
    g1=st.floats(-1.2, 1.2),
    g2=st.floats(-1.2, 1.2),
)
def test_argmax_monotone_in_centre(T, N, ld, ls, g1, g2):
    lo, hi = sorted((g1, g2))
    a = materialize(FilterParams(lo, ld, ls), T, N).weights
    b = materialize(FilterParams(hi, ld, ls), T, N).weights
    # np.argmax returns the lowest index among ties
    assert np.all(np.argmax(a, axis=1) <= np.argmax(b, axis=1))


def test_uniform_limit(rng):
    for T in (1, 2, 7, 30, 100):
        for N in (1, 3):
            p = FilterParams(float(rng.uniform(-0.5, 0.5)), 0.0, math.log(1e6 * T * T))
            w = materialize(p, T, N).weights
            assert np.max(np.abs(w - 1.0 / T)) <= 1e-6


class TestRead:
    def test_constant_input_fixpoint(self, rng):
        for _ in range(20):
            T, D, N = int(rng.integers(1, 30)), int(rng.integers(1, 5)), int(rng.integers(1, 5))
            c = float(rng.normal())
            bank = materialize(friendly_params(rng, T), T, N)
            out = read(bank, np.full((T, D), c))
            assert np.max(np.abs(out - c)) <= 1e-12

    def test_one_hot_selects_column(self):
        bank = materialize(FilterParams(0.1, -0.3, 1.0), 9, 3)
        x = np.zeros((9, 2))
        x[4] = 1.0
        out = read(bank, x)
        np.testing.assert_array_equal(out[:, 0], bank.weights[:, 4])
        np.testing.assert_array_equal(out[:, 1], bank.weights[:, 4])

    def test_matches_double_loop(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(13, 4))
        bank = materialize(FilterParams(0.2, -0.4, 1.5), 13, 3)
        assert np.max(np.abs(read(bank, x) - double_loop_read(bank.weights, x))) <= 1e-12

    def test_linear_in_input(self, rng):
        bank = materialize(friendly_params(rng, 17), 17, 4)
        x, y = rng.normal(size=(2, 17, 3))
        a, b = rng.normal(size=2)
        lhs = read(bank, a * x + b * y)
        rhs = a * read(bank, x) + b * read(bank, y)
        assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_accepts_feature_sequence_and_checks_length(self):
        bank = materialize(FilterParams(0, 0, 0), 5, 2)
        seq = FeatureSequence(np.ones((5, 3)), label=2, id="a")
        np.testing.assert_allclose(read(bank, seq), np.ones((2, 3)))
        with pytest.raises(ValueError):
            read(bank, np.ones((6, 3)))


class TestReadBackward:
    def test_zero_upstream(self, rng):
        p = friendly_params(rng, 11)
        bank = materialize(p, 11, 4)
        g = read_backward(bank, p, rng.normal(size=(11, 3)), np.zeros((4, 3)))
        assert g.g_tilde == g.log_delta_tilde == g.log_sigma_sq == 0.0
        assert not np.any(g.x)

    def test_constant_input_has_no_placement_gradient(self, rng):
        p = friendly_params(rng, 11)
        bank = materialize(p, 11, 4)
        g = read_backward(bank, p, np.full((11, 3), 2.5), rng.normal(size=(4, 3)))
        for v in (g.g_tilde, g.log_delta_tilde, g.log_sigma_sq):
            assert abs(v) <= 1e-12

    def test_input_gradient_is_transposed_weights(self, rng):
        p = friendly_params(rng, 11)
        bank = materialize(p, 11, 4)
        up = rng.normal(size=(4, 3))
        g = read_backward(bank, p, rng.normal(size=(11, 3)), up)
        np.testing.assert_allclose(g.x, bank.weights.T @ up, rtol=0, atol=1e-13)

    def test_shape_checks(self):
        p = FilterParams(0, 0, 0)
        bank = materialize(p, 5, 2)
        with pytest.raises(ValueError):
            read_backward(bank, p, np.ones((5, 3)), np.ones((3, 3)))

    @pytest.mark.parametrize("seed", range(100))
    def test_matches_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        T, D, N = (11, 3, 4) if seed == 0 else (int(rng.integers(2, 30)), int(rng.integers(1, 5)),
                                                 int(rng.integers(1, 6)))
        p = friendly_params(rng, T)
        x = rng.normal(size=(T, D))
        up = rng.normal(size=(N, D))
        g = read_backward(materialize(p, T, N), p, x, up)

        def loss(q):
            return float(np.sum(up * read(materialize(q, T, N), x)))

        fields = ("g_tilde", "log_delta_tilde", "log_sigma_sq")
        for k, name in enumerate(fields):
            def f(v, k=k):
                vals = list(p.as_tuple())
                vals[k] = v
                return loss(FilterParams(*vals))

            num = central_diff(f, p.as_tuple()[k])
            ana = getattr(g, name)
            assert abs(ana - num) / max(abs(ana), abs(num), 1e-8) <= 1e-4, name
