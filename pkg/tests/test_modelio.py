import numpy as np
import pytest

from shiftsnn.modelio import (
    ModelFormatError,
    load_model,
    load_tensor,
    save_model,
    save_tensor,
)
from shiftsnn.network import Mode, ShiftLayer
from shiftsnn.tensor import Layout, TemporalTensor
from shiftsnn.train import batch_to_tensor, build_task_net


def make_net(seed=0, quantized=True):
    return build_task_net(channels=5, num_layers=2, order=2, dilations=[1, 3],
                          quantized=quantized, seed=seed)


def test_float_model_round_trip(tmp_path):
    net = make_net()
    p1 = tmp_path / "m.ssnn"
    p2 = tmp_path / "m2.ssnn"
    save_model(net, str(p1), quantize=False)
    loaded, meta = load_model(str(p1))
    assert meta == {"version": 1, "quantized": False}
    save_model(loaded, str(p2), quantize=False)
    assert p1.read_bytes() == p2.read_bytes()
    for a, b in zip(net.layers, loaded.layers):
        assert type(a) is type(b)
    for a, b in zip(net.spiking_layers(), loaded.spiking_layers()):
        np.testing.assert_array_equal(a.W.value.astype(np.float32),
                                      b.W.value.astype(np.float32))
        assert a.cfg.quantized == b.cfg.quantized
        assert a.cfg.dilation == b.cfg.dilation


def test_quantized_model_round_trip_and_payload(tmp_path):
    net = make_net()
    p1 = tmp_path / "q.ssnn"
    p2 = tmp_path / "q2.ssnn"
    save_model(net, str(p1), quantize=True)
    loaded, meta = load_model(str(p1))
    assert meta["quantized"] is True
    assert all(isinstance(l, ShiftLayer) for l in loaded.layers
               if not hasattr(l, "W"))
    save_model(loaded, str(p2))
    assert p1.read_bytes() == p2.read_bytes()


def test_loaded_model_outputs_match_exporter(tmp_path):
    net = make_net(seed=3)
    x = batch_to_tensor(np.random.default_rng(3).integers(0, 2, (16, 10)).astype(float))
    p = tmp_path / "q.ssnn"
    save_model(net, str(p), quantize=True)
    loaded, _ = load_model(str(p))
    a = net.forward(x, Mode.EVAL)
    b = loaded.forward(x, Mode.EVAL)
    np.testing.assert_array_equal(a, b)


def test_shared_weight_model_round_trip(tmp_path):
    from shiftsnn.neuron import WeightSharing

    net = build_task_net(channels=4, num_layers=1, order=3, dilations=[1],
                         quantized=False, weight_sharing=WeightSharing.SHARED, seed=1)
    p = tmp_path / "s.ssnn"
    save_model(net, str(p))
    loaded, _ = load_model(str(p))
    layer = loaded.spiking_layers()[0]
    assert layer.W.value.shape == (1, 3)


def test_model_error_cases(tmp_path):
    p = tmp_path / "bad.ssnn"
    p.write_bytes(b"NOTME" + b"\x00" * 16)
    with pytest.raises(ModelFormatError, match="magic"):
        load_model(str(p))
    net = make_net()
    good = tmp_path / "good.ssnn"
    save_model(net, str(good))
    blob = good.read_bytes()
    (tmp_path / "trunc.ssnn").write_bytes(blob[:-4])
    with pytest.raises(ModelFormatError, match="truncated"):
        load_model(str(tmp_path / "trunc.ssnn"))
    (tmp_path / "trail.ssnn").write_bytes(blob + b"xx")
    with pytest.raises(ModelFormatError, match="trailing"):
        load_model(str(tmp_path / "trail.ssnn"))


@pytest.mark.parametrize("dtype,layout", [
    (np.float64, Layout.TIME_FIRST),
    (np.float32, Layout.TIME_LAST),
    (np.int32, Layout.TIME_FIRST),
])
def test_tensor_file_round_trip(tmp_path, dtype, layout):
    rng = np.random.default_rng(0)
    data = (rng.standard_normal((4, 2, 3)) * 10).astype(dtype)
    x = TemporalTensor(data, layout)
    p = tmp_path / "x.tensor"
    save_tensor(str(p), x)
    y = load_tensor(str(p))
    assert y.layout is layout
    assert y.data.dtype == dtype
    np.testing.assert_array_equal(y.data, x.data)
    head = p.read_bytes()[:80].decode("ascii", errors="replace")
    assert "shiftsnn-tensor v1" in head and "shape=4,2,3" in head


def test_tensor_file_errors(tmp_path):
    p = tmp_path / "junk"
    p.write_bytes(b"garbage")
    with pytest.raises(ModelFormatError):
        load_tensor(str(p))
    q = tmp_path / "short"
    q.write_bytes(b"shiftsnn-tensor v1\ndtype=f64\nlayout=time_first\nshape=2,2,2\ndata\n" + b"\x00" * 8)
    with pytest.raises(ModelFormatError, match="payload"):
        load_tensor(str(q))
