import numpy as np
import pytest

from shiftsnn.engines import OpCounters
from shiftsnn.network import (
    LinearLayer,
    Mode,
    ReadoutLayer,
    ShiftLayer,
    SpikingLayer,
    SpikingNet,
)
from shiftsnn.neuron import NeuronConfig
from shiftsnn.quant import ShiftWeights
from shiftsnn.surrogate import SurrogateConfig, SurrogateKind, spike_backward, spike_primitive
from shiftsnn.tensor import Layout, TemporalTensor
from shiftsnn.train import batch_to_tensor, build_task_net


def test_surrogate_values():
    arctan = SurrogateConfig(SurrogateKind.ARCTAN, alpha=2.0)
    assert spike_backward(0.0, arctan) == pytest.approx(1.0)     # alpha/2 at 0
    assert spike_backward(1e6, arctan) == pytest.approx(0.0, abs=1e-10)
    rational = SurrogateConfig(SurrogateKind.RATIONAL, alpha=10.0)
    assert spike_backward(0.0, rational) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SurrogateConfig(alpha=0.0)


def test_surrogate_primitive_derivative_matches():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(100)
    h = 1e-6
    for cfg in (SurrogateConfig(SurrogateKind.ARCTAN, 2.0),
                SurrogateConfig(SurrogateKind.RATIONAL, 10.0)):
        num = (spike_primitive(x + h, cfg) - spike_primitive(x - h, cfg)) / (2 * h)
        np.testing.assert_allclose(num, spike_backward(x, cfg), rtol=1e-6, atol=1e-8)


def test_train_mode_emits_binary_spikes():
    net = build_task_net(channels=6, num_layers=2, order=2, dilations=[1, 2],
                         quantized=True, seed=0)
    x = batch_to_tensor(np.random.default_rng(1).integers(0, 2, (8, 10)).astype(float))
    h = net.ingest(x)
    for layer in net.layers:
        h = layer.forward(h, Mode.TRAIN)
        if isinstance(layer, SpikingLayer):
            assert set(np.unique(h.data)) <= {0.0, 1.0}


def test_smooth_mode_is_pure():
    net = build_task_net(channels=4, num_layers=1, order=2, dilations=[1],
                         quantized=False, seed=0)
    x = batch_to_tensor(np.random.default_rng(2).integers(0, 2, (4, 8)).astype(float))
    y = np.array([0, 1, 0, 1])
    stats_before = [l.thr.running_mean.copy() for l in net.spiking_layers()]
    l1 = net.loss(x, y, mode=Mode.SMOOTH)[0]
    l2 = net.loss(x, y, mode=Mode.SMOOTH)[0]
    assert l1 == l2
    for layer, mean in zip(net.spiking_layers(), stats_before):
        np.testing.assert_array_equal(layer.thr.running_mean, mean)


def test_eval_mode_quantized_counts_no_muls():
    net = build_task_net(channels=5, num_layers=2, order=2, dilations=[1, 2],
                         quantized=True, seed=3)
    x = batch_to_tensor(np.random.default_rng(3).integers(0, 2, (6, 12)).astype(float))
    counters = [OpCounters() for _ in net.layers]
    net.predict(x, counters=counters)
    for layer, c in zip(net.layers, counters):
        if isinstance(layer, SpikingLayer):
            assert c.muls == 0
            assert c.shifts > 0


def test_linear_layer_layout_agreement():
    rng = np.random.default_rng(4)
    layer = LinearLayer(3, 5, rng=rng)
    x = rng.standard_normal((4, 2, 3))
    y_tf = layer.forward(TemporalTensor(x, Layout.TIME_FIRST), Mode.TRAIN)
    x_tl = np.moveaxis(x, 0, -1)
    y_tl = layer.forward(TemporalTensor(np.ascontiguousarray(x_tl), Layout.TIME_LAST),
                         Mode.TRAIN)
    np.testing.assert_allclose(y_tf.data, y_tl.to_time_first_array(), rtol=1e-12)


def test_readout_layout_agreement_and_recency():
    rng = np.random.default_rng(5)
    layer = ReadoutLayer(3, 2, rng=rng)
    x = rng.standard_normal((6, 2, 3))
    lo_tf = layer.forward(TemporalTensor(x, Layout.TIME_FIRST), Mode.TRAIN)
    x_tl = np.ascontiguousarray(np.moveaxis(x, 0, -1))
    lo_tl = layer.forward(TemporalTensor(x_tl, Layout.TIME_LAST), Mode.TRAIN)
    np.testing.assert_allclose(lo_tf, lo_tl, rtol=1e-12)
    # a bump on the final step moves the logits more than the same bump early
    late, early = x.copy(), x.copy()
    late[-1] += 1.0
    early[0] += 1.0
    d_late = np.abs(layer.forward(TemporalTensor(late, Layout.TIME_FIRST), Mode.TRAIN) - lo_tf).sum()
    d_early = np.abs(layer.forward(TemporalTensor(early, Layout.TIME_FIRST), Mode.TRAIN) - lo_tf).sum()
    assert d_late > d_early


def test_spiking_layer_shared_weight_grad_shape():
    from shiftsnn.neuron import WeightSharing

    cfg = NeuronConfig(channels=4, order=2, dilation=1,
                       weight_sharing=WeightSharing.SHARED)
    layer = SpikingLayer(cfg, rng=np.random.default_rng(6))
    assert layer.W.value.shape == (1, 2)
    x = TemporalTensor(np.random.default_rng(7).standard_normal((5, 2, 4)),
                       Layout.TIME_FIRST)
    y = layer.forward(x, Mode.TRAIN)
    layer.backward(TemporalTensor(np.ones_like(y.data), x.layout))
    assert layer.W.grad.shape == (1, 2)
    assert np.any(layer.W.grad != 0)


def test_shift_layer_is_inference_only():
    sw = ShiftWeights(sign=np.array([[1, -1]]), exponent=np.array([[0, -1]]))
    layer = ShiftLayer(sw, np.array([0.5], dtype=np.float32), dilation=1)
    x = TemporalTensor(np.ones((3, 1, 1), dtype=np.float32), Layout.TIME_FIRST)
    s = layer.forward(x, Mode.EVAL)
    assert set(np.unique(s.data)) <= {0.0, 1.0}
    with pytest.raises(ValueError):
        layer.forward(x, Mode.TRAIN)
    with pytest.raises(ValueError):
        layer.backward(s)


def test_network_requires_layers():
    with pytest.raises(ValueError):
        SpikingNet([])
