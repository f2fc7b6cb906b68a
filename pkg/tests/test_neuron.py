import numpy as np
import pytest

from shiftsnn.engines import EngineKind, OpCounters
from shiftsnn.neuron import (
    FusedParams,
    NeuronConfig,
    NeuronParams,
    ThresholdParams,
    WeightSharing,
    charge,
    fire,
    fuse_bn,
    init_weights,
    lif_taps,
    receptive_field,
    sawtooth_schedule,
)
from shiftsnn.quant import quantize_pow2
from shiftsnn.tensor import Layout, TemporalTensor

EPS = 1e-5


def tt(seq):
    return TemporalTensor(np.asarray(seq, dtype=np.float64)[:, None, None],
                          Layout.TIME_FIRST)


def unit_thr(c=1, gamma=1.0, beta=0.0, mean=0.0):
    # variance 1 - eps makes the normalization denominator exactly 1
    return ThresholdParams(gamma=np.full(c, gamma), beta=np.full(c, beta),
                           running_mean=np.full(c, mean),
                           running_var=np.full(c, 1.0 - EPS), eps=EPS)


def test_sawtooth_schedule():
    assert sawtooth_schedule(6) == [1, 2, 3, 1, 2, 3]
    assert sawtooth_schedule(1) == [1]
    assert sawtooth_schedule(4) == [1, 2, 3, 1]
    with pytest.raises(ValueError):
        sawtooth_schedule(0)


def test_receptive_field():
    assert receptive_field([2, 2, 2], [1, 1, 1]) == 4
    assert receptive_field([2, 2, 2], [1, 2, 3]) == 7
    assert receptive_field([1], [1]) == 1
    with pytest.raises(ValueError):
        receptive_field([2], [1, 1])


def test_charge_examples():
    cfg = NeuronConfig(channels=1, order=2, dilation=1)
    h = charge(tt([1, 0, 1]), NeuronParams(np.array([[0.5, 1.0]])), cfg)
    np.testing.assert_array_equal(h.data.ravel(), [1.0, 0.5, 1.0])

    cfg_k1 = NeuronConfig(channels=1, order=1)
    x = tt([3.0, -1.0, 2.0])
    h1 = charge(x, NeuronParams(np.array([[1.0]])), cfg_k1)
    np.testing.assert_array_equal(h1.data, x.data)

    cfg_d2 = NeuronConfig(channels=1, order=2, dilation=2)
    h2 = charge(tt([1, 2, 3, 4]), NeuronParams(np.array([[1.0, 1.0]])), cfg_d2)
    np.testing.assert_array_equal(h2.data.ravel(), [1, 2, 4, 6])


def test_charge_engine_independence():
    rng = np.random.default_rng(0)
    cfg = NeuronConfig(channels=3, order=3, dilation=2)
    x = TemporalTensor(rng.standard_normal((9, 2, 3)), Layout.TIME_FIRST)
    p = NeuronParams(rng.standard_normal((3, 3)))
    ref = charge(x, p, cfg, engine=EngineKind.DIRECT)
    for engine in (EngineKind.MATMUL, EngineKind.BLOCKED):
        h = charge(x, p, cfg, engine=engine)
        np.testing.assert_allclose(h.data, ref.data, rtol=1e-12, atol=1e-14)
    sw = quantize_pow2(p.W)
    h_shift = charge(x, sw, cfg, engine=EngineKind.SHIFT)
    h_deq = charge(x, NeuronParams(sw.values()), cfg, engine=EngineKind.DIRECT)
    np.testing.assert_array_equal(h_shift.data, h_deq.data)


def test_charge_rejects_channel_mismatch_and_bad_engine():
    cfg = NeuronConfig(channels=2, order=1)
    with pytest.raises(ValueError):
        charge(tt([1.0]), NeuronParams(np.ones((2, 1))), cfg)
    x = TemporalTensor(np.ones((2, 1, 2)), Layout.TIME_FIRST)
    with pytest.raises(ValueError):
        charge(x, NeuronParams(np.ones((2, 1))), cfg, engine="bogus")


def test_fire_sign_thresholding():
    s = fire(tt([-1.0, 0.0, 2.0]), unit_thr(), training=False)
    np.testing.assert_array_equal(s.data.ravel(), [0.0, 1.0, 1.0])  # step(0) = 1


def test_fire_negative_beta_shifts_threshold():
    s = fire(tt([0.5]), unit_thr(beta=-1.0), training=False)
    np.testing.assert_array_equal(s.data.ravel(), [0.0])


def test_fire_all_below_threshold():
    s = fire(tt([-1e30, -1e30]), unit_thr(), training=False)
    assert not s.data.any()


def test_fire_outputs_are_binary():
    rng = np.random.default_rng(1)
    h = TemporalTensor(rng.standard_normal((6, 3, 4)), Layout.TIME_FIRST)
    thr = ThresholdParams.init(4)
    for training in (False, True):
        s = fire(h, thr, training=training)
        assert set(np.unique(s.data)) <= {0.0, 1.0}


def test_fire_training_updates_running_stats():
    rng = np.random.default_rng(2)
    h = TemporalTensor(rng.standard_normal((8, 4, 2)) * 3 + 1, Layout.TIME_FIRST)
    thr = ThresholdParams.init(2)
    fire(h, thr, training=True)
    mean = h.data.mean(axis=(0, 1))
    var_unbiased = h.data.var(axis=(0, 1), ddof=1)
    np.testing.assert_allclose(thr.running_mean, 0.9 * 0.0 + 0.1 * mean, rtol=1e-12)
    np.testing.assert_allclose(thr.running_var, 0.9 * 1.0 + 0.1 * var_unbiased, rtol=1e-12)


def test_fire_counts_one_add_per_element():
    c = OpCounters()
    fire(tt([1.0, -1.0, 0.5, 2.0]), unit_thr(), training=False, counters=c)
    assert c.adds == 4 and c.muls == 0


def test_fuse_bn_identity():
    p = NeuronParams(np.array([[0.25, -1.5]]))
    f = fuse_bn(p, unit_thr())
    np.testing.assert_allclose(f.W_f, p.W, rtol=1e-12)
    np.testing.assert_allclose(f.b_f, [0.0], atol=1e-12)


def test_fuse_bn_substitution():
    thr = ThresholdParams(gamma=[2.0], beta=[0.0], running_mean=[1.0],
                          running_var=[3.0], eps=1.0)
    f = fuse_bn(NeuronParams(np.array([[1.0, 1.0]])), thr)
    np.testing.assert_array_equal(f.W_f, [[1.0, 1.0]])
    np.testing.assert_array_equal(f.b_f, [-1.0])


def test_fused_and_normalized_paths_spike_identically():
    rng = np.random.default_rng(3)
    for _ in range(20):
        C, k, d, T, N = 3, 2, 2, 10, 2
        cfg = NeuronConfig(channels=C, order=k, dilation=d)
        p = NeuronParams(rng.standard_normal((C, k)))
        thr = ThresholdParams(gamma=rng.standard_normal(C) + 2.0,
                              beta=rng.standard_normal(C),
                              running_mean=rng.standard_normal(C),
                              running_var=rng.uniform(0.5, 2.0, C))
        x = TemporalTensor(rng.standard_normal((T, N, C)), Layout.TIME_FIRST)
        s1 = fire(charge(x, p, cfg), thr, training=False)
        fused = fuse_bn(p, thr)
        h_f = charge(x, fused, cfg)
        s2 = (h_f.data >= 0).astype(np.float64)
        np.testing.assert_allclose(s1.data, s2, rtol=0, atol=0)


def test_charge_causality():
    rng = np.random.default_rng(4)
    cfg = NeuronConfig(channels=2, order=3, dilation=2)
    p = NeuronParams(rng.standard_normal((2, 3)))
    x = rng.standard_normal((10, 1, 2))
    base = charge(TemporalTensor(x.copy(), Layout.TIME_FIRST), p, cfg).data
    for t_pert in range(10):
        xp = x.copy()
        xp[t_pert] += 5.0
        h = charge(TemporalTensor(xp, Layout.TIME_FIRST), p, cfg).data
        assert np.array_equal(h[:t_pert], base[:t_pert])


def test_charge_channel_independence():
    rng = np.random.default_rng(5)
    cfg = NeuronConfig(channels=3, order=2, dilation=1)
    p = NeuronParams(rng.standard_normal((3, 2)))
    x = rng.standard_normal((6, 2, 3))
    base = charge(TemporalTensor(x.copy(), Layout.TIME_FIRST), p, cfg).data
    xp = x.copy()
    xp[:, :, 1] += 10.0
    h = charge(TemporalTensor(xp, Layout.TIME_FIRST), p, cfg).data
    assert np.array_equal(h[:, :, 0], base[:, :, 0])
    assert np.array_equal(h[:, :, 2], base[:, :, 2])


def test_stacked_receptive_field_bound():
    # three stacked charges, k=2, sawtooth dilations: rf = 7, so wiggling
    # x[t-7] must not move the output at t while x[t-6] can
    rng = np.random.default_rng(6)
    orders, dil = [2, 2, 2], [1, 2, 3]
    params = [NeuronParams(rng.standard_normal((1, 2))) for _ in range(3)]

    def stack(xarr):
        h = TemporalTensor(xarr, Layout.TIME_FIRST)
        for p, d in zip(params, dil):
            cfg = NeuronConfig(channels=1, order=2, dilation=d)
            h = charge(h, p, cfg)
        return h.data

    rf = receptive_field(orders, dil)
    assert rf == 7
    T, t_out = 12, 11
    x = rng.standard_normal((T, 1, 1))
    base = stack(x.copy())
    outside = x.copy()
    outside[t_out - rf] += 100.0
    assert stack(outside)[t_out] == base[t_out]
    inside = x.copy()
    inside[t_out - rf + 1] += 100.0
    assert stack(inside)[t_out] != base[t_out]


def test_shared_weights_reproduce_sliding_form_bitwise():
    from shiftsnn.baseline import sliding_psn_forward

    rng = np.random.default_rng(7)
    w = rng.standard_normal(3)
    cfg = NeuronConfig(channels=4, order=3, dilation=1,
                       weight_sharing=WeightSharing.SHARED)
    x = TemporalTensor(rng.standard_normal((8, 2, 4)), Layout.TIME_FIRST)
    h = charge(x, NeuronParams(w[None, :]), cfg)
    s_neuron = (h.data - 1.0 >= 0).astype(np.float64)
    s_sliding = sliding_psn_forward(x, w, v_th=1.0)
    np.testing.assert_array_equal(s_neuron, s_sliding.data)


def test_lif_taps():
    np.testing.assert_allclose(lif_taps(2, 2.0), [0.25, 0.5], rtol=1e-15)
    np.testing.assert_allclose(lif_taps(3, 2.0), [0.125, 0.25, 0.5], rtol=1e-15)
    with pytest.raises(ValueError):
        lif_taps(2, 1.0)


def test_init_weights_shapes():
    cfg = NeuronConfig(channels=5, order=3)
    assert init_weights(cfg).W.shape == (5, 3)
    shared = NeuronConfig(channels=5, order=3, weight_sharing=WeightSharing.SHARED)
    assert init_weights(shared).W.shape == (1, 3)
    u = init_weights(cfg, kind="uniform", rng=np.random.default_rng(0)).W
    assert np.all(np.abs(u) <= 3 ** -0.5)


def test_config_validation():
    with pytest.raises(ValueError):
        NeuronConfig(channels=0, order=1)
    with pytest.raises(ValueError):
        NeuronConfig(channels=1, order=0)
    with pytest.raises(ValueError):
        NeuronConfig(channels=1, order=1, dilation=0)
    with pytest.raises(ValueError):
        ThresholdParams(gamma=[1.0], beta=[0.0], running_mean=[0.0],
                        running_var=[-1.0])
    with pytest.raises(ValueError):
        FusedParams(W_f=np.ones((2, 2)), b_f=np.ones(3))
