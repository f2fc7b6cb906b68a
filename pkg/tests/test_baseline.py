import numpy as np
import pytest

from shiftsnn.baseline import (
    PSNParams,
    lif_weight_init,
    psn_charge,
    psn_forward,
    sliding_psn_forward,
)
from shiftsnn.tensor import Layout, TemporalTensor


def tt(seq):
    return TemporalTensor(np.asarray(seq, dtype=np.float64)[:, None, None],
                          Layout.TIME_FIRST)


def test_psn_identity_weights():
    p = PSNParams(W_full=np.eye(3), V_th=np.zeros(3))
    s = psn_forward(tt([1.0, -2.0, 0.0]), p)
    np.testing.assert_array_equal(s.data.ravel(), [1.0, 0.0, 1.0])


def test_psn_cumulative_sum():
    p = PSNParams(W_full=np.tril(np.ones((3, 3))), V_th=np.array([0.5, 1.5, 2.5]))
    h = psn_charge(tt([1.0, 1.0, 1.0]), p)
    np.testing.assert_array_equal(h.data.ravel(), [1.0, 2.0, 3.0])
    s = psn_forward(tt([1.0, 1.0, 1.0]), p)
    np.testing.assert_array_equal(s.data.ravel(), [1.0, 1.0, 1.0])


def test_psn_zero_input():
    p = PSNParams(W_full=np.ones((3, 3)), V_th=np.array([-1.0, 0.0, 1.0]))
    s = psn_forward(tt([0.0, 0.0, 0.0]), p)
    np.testing.assert_array_equal(s.data.ravel(), [1.0, 1.0, 0.0])


def test_psn_length_mismatch():
    p = PSNParams.init(4)
    with pytest.raises(ValueError):
        psn_forward(tt([1.0, 2.0]), p)


def test_lif_weight_init_rows():
    w = lif_weight_init(3, 2.0)
    np.testing.assert_allclose(w, [[0.5, 0, 0], [0.25, 0.5, 0], [0.125, 0.25, 0.5]],
                               rtol=1e-15)
    w8 = lif_weight_init(8, 4.0)
    np.testing.assert_allclose(np.diag(w8), 0.25)           # diagonal is 1/tau
    assert not np.triu(w8, k=1).any()                        # strictly causal
    with pytest.raises(ValueError):
        lif_weight_init(3, 1.0)


def test_lif_weights_replicate_iterative_recurrence():
    rng = np.random.default_rng(0)
    T, tau = 12, 3.0
    x = rng.standard_normal((T, 2, 4))
    p = PSNParams(W_full=lif_weight_init(T, tau), V_th=np.ones(T))
    h = psn_charge(TemporalTensor(x, Layout.TIME_FIRST), p).data
    v = np.zeros((2, 4))
    for t in range(T):
        v = (1 - 1 / tau) * v + (1 / tau) * x[t]
        np.testing.assert_allclose(h[t], v, rtol=1e-12)


def test_sliding_matches_channel_wise_shared_config():
    from shiftsnn.neuron import NeuronConfig, NeuronParams, WeightSharing, charge

    rng = np.random.default_rng(1)
    for _ in range(10):
        k = int(rng.integers(1, 5))
        w = rng.standard_normal(k)
        x = TemporalTensor(rng.standard_normal((7, 3, 2)), Layout.TIME_FIRST)
        cfg = NeuronConfig(channels=2, order=k, dilation=1,
                           weight_sharing=WeightSharing.SHARED)
        h = charge(x, NeuronParams(w[None, :]), cfg)
        s = (h.data - 0.3 >= 0).astype(np.float64)
        np.testing.assert_array_equal(sliding_psn_forward(x, w, 0.3).data, s)


def test_sliding_k1_identity_on_binary():
    rng = np.random.default_rng(2)
    x = TemporalTensor(rng.integers(0, 2, size=(6, 2, 3)).astype(np.float64),
                       Layout.TIME_FIRST)
    s = sliding_psn_forward(x, np.array([1.0]), v_th=0.5)
    np.testing.assert_array_equal(s.data, x.data)


def test_sliding_last_psn_row_reproduces_final_state():
    # a PSN whose last row holds the window taps gives the same H[T-1]
    rng = np.random.default_rng(3)
    T = 5
    w = rng.standard_normal(T)
    x = tt(rng.standard_normal(T))
    w_full = np.zeros((T, T))
    w_full[T - 1] = w
    h_psn = psn_charge(x, PSNParams(W_full=w_full, V_th=np.ones(T))).data[T - 1]
    from shiftsnn.engines import conv_forward_direct

    h_win = conv_forward_direct(x, w[None, :], d=1).data[T - 1]
    np.testing.assert_allclose(h_psn, h_win, rtol=1e-12)


def test_full_psn_is_not_causal_with_upper_triangle():
    rng = np.random.default_rng(4)
    T = 6
    w_full = rng.standard_normal((T, T))  # dense: future inputs leak backward
    p = PSNParams(W_full=w_full, V_th=np.ones(T))
    x = rng.standard_normal((T, 1, 1))
    base = psn_charge(TemporalTensor(x.copy(), Layout.TIME_FIRST), p).data
    xp = x.copy()
    xp[T - 1] += 1.0
    bumped = psn_charge(TemporalTensor(xp, Layout.TIME_FIRST), p).data
    assert not np.array_equal(bumped[0], base[0])


def test_psn_params_validation():
    with pytest.raises(ValueError):
        PSNParams(W_full=np.ones((2, 3)), V_th=np.ones(2))
    with pytest.raises(ValueError):
        PSNParams(W_full=np.ones((2, 2)), V_th=np.ones(3))
