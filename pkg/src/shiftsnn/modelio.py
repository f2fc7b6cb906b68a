"""Binary model files and header-plus-raw activation tensor files.

Model format (all integers little-endian, fixed width):

    magic "SSNN1" | version u16 | quantized u8 | layer_count u32
    per layer: tag u8 | flags u8 | C u32 | k u32 | d u32 | payload

    tag 1 linear   payload: W f32[C*k], b f32[C]          (C=out, k=in)
    tag 2 spiking  payload: W f32[C*k], gamma/beta/mean/var f32[C] each,
                            eps f32, momentum f32
    tag 3 fused    payload: sign i8[C*k], exponent i8[C*k], b_f f32[C]
    tag 4 readout  payload: W f32[C*k], b f32[C], tau f32  (C=classes, k=in)

    flags bit0: layer trains quantized (tag 2); bit1: shared weight row.

A quantized model carries no float weights except each layer's fused bias.
Activation tensors use a diffable text header (shape, layout, dtype)
followed by raw little-endian data.

Saving is deterministic: save -> load -> save reproduces identical bytes.
"""

from __future__ import annotations

import struct

import numpy as np

from .neuron import NeuronConfig, WeightSharing
from .network import LinearLayer, ReadoutLayer, ShiftLayer, SpikingLayer, SpikingNet
from .quant import ShiftWeights
from .surrogate import SurrogateConfig
from .tensor import Layout, TemporalTensor

MAGIC = b"SSNN1"
VERSION = 1

TAG_LINEAR = 1
TAG_SPIKING = 2
TAG_FUSED = 3
TAG_READOUT = 4

FLAG_QUANTIZED = 1
FLAG_SHARED = 2

_DTYPE_NAMES = {"f64": np.float64, "f32": np.float32, "i32": np.int32}


class ModelFormatError(ValueError):
    """Malformed or unsupported model/tensor file."""


def _f32(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


def _i8(a) -> bytes:
    return np.ascontiguousarray(a, dtype="i1").tobytes()


def save_model(net: SpikingNet, path: str, quantize: bool = False) -> None:
    """Serialize the network; with quantize=True spiking layers are folded
    to shift weights plus a float bias first."""
    chunks = [MAGIC, struct.pack("<HBI", VERSION, 0, len(net.layers))]
    any_fused = False
    for layer in net.layers:
        if isinstance(layer, LinearLayer):
            out_f, in_f = layer.W.value.shape
            chunks.append(struct.pack("<BBIII", TAG_LINEAR, 0, out_f, in_f, 1))
            chunks.append(_f32(layer.W.value))
            chunks.append(_f32(layer.b.value))
        elif isinstance(layer, SpikingLayer):
            cfg = layer.cfg
            if quantize:
                sw, b32 = layer.quantized_snapshot()
                chunks.append(struct.pack("<BBIII", TAG_FUSED, 0,
                                          cfg.channels, cfg.order, cfg.dilation))
                chunks.append(_i8(sw.sign))
                chunks.append(_i8(sw.exponent))
                chunks.append(_f32(b32))
                any_fused = True
            else:
                flags = (FLAG_QUANTIZED if cfg.quantized else 0)
                if layer.W.value.shape[0] == 1 and cfg.channels > 1:
                    flags |= FLAG_SHARED
                chunks.append(struct.pack("<BBIII", TAG_SPIKING, flags,
                                          cfg.channels, cfg.order, cfg.dilation))
                w = np.broadcast_to(layer.W.value, (cfg.channels, cfg.order))
                chunks.append(_f32(w))
                for vec in (layer.thr.gamma, layer.thr.beta,
                            layer.thr.running_mean, layer.thr.running_var):
                    chunks.append(_f32(vec))
                chunks.append(struct.pack("<ff", layer.thr.eps, layer.thr.momentum))
        elif isinstance(layer, ShiftLayer):
            c, k = layer.sw.shape
            chunks.append(struct.pack("<BBIII", TAG_FUSED, 0, c, k, layer.dilation))
            chunks.append(_i8(layer.sw.sign))
            chunks.append(_i8(layer.sw.exponent))
            chunks.append(_f32(layer.bias))
            any_fused = True
        elif isinstance(layer, ReadoutLayer):
            classes, in_f = layer.W.value.shape
            chunks.append(struct.pack("<BBIII", TAG_READOUT, 0, classes, in_f, 1))
            chunks.append(_f32(layer.W.value))
            chunks.append(_f32(layer.b.value))
            chunks.append(struct.pack("<f", layer.tau))
        else:
            raise ModelFormatError(f"cannot serialize layer type {type(layer).__name__}")
    chunks[1] = struct.pack("<HBI", VERSION, 1 if any_fused else 0, len(net.layers))
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise ModelFormatError("truncated model file")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def f32(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * count), dtype="<f4").copy()

    def i8(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(count), dtype="i1").copy()


def load_model(path: str) -> tuple[SpikingNet, dict]:
    with open(path, "rb") as f:
        buf = f.read()
    r = _Reader(buf)
    if r.take(5) != MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    version, quantized, layer_count = r.unpack("<HBI")
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    if layer_count == 0:
        raise ModelFormatError("model has no layers")
    layers: list = []
    for _ in range(layer_count):
        tag, flags, c, k, d = r.unpack("<BBIII")
        if tag == TAG_LINEAR:
            layer = LinearLayer(k, c)
            layer.W.value[...] = r.f32(c * k).reshape(c, k).astype(np.float64)
            layer.b.value[...] = r.f32(c).astype(np.float64)
        elif tag == TAG_SPIKING:
            cfg = NeuronConfig(
                channels=c, order=k, dilation=d,
                weight_sharing=WeightSharing.SHARED if flags & FLAG_SHARED
                else WeightSharing.CHANNEL_WISE,
                quantized=bool(flags & FLAG_QUANTIZED),
            )
            layer = SpikingLayer(cfg, surrogate=SurrogateConfig())
            w = r.f32(c * k).reshape(c, k).astype(np.float64)
            if flags & FLAG_SHARED:
                layer.W.value[...] = w[:1]
            else:
                layer.W.value[...] = w
            layer.thr.gamma[...] = r.f32(c).astype(np.float64)
            layer.thr.beta[...] = r.f32(c).astype(np.float64)
            layer.thr.running_mean[...] = r.f32(c).astype(np.float64)
            layer.thr.running_var[...] = r.f32(c).astype(np.float64)
            eps, momentum = r.unpack("<ff")
            layer.thr.eps = float(eps)
            layer.thr.momentum = float(momentum)
        elif tag == TAG_FUSED:
            sign = r.i8(c * k).reshape(c, k)
            exponent = r.i8(c * k).reshape(c, k)
            bias = r.f32(c)
            layer = ShiftLayer(ShiftWeights(sign=sign, exponent=exponent), bias, d)
        elif tag == TAG_READOUT:
            layer = ReadoutLayer(k, c)
            layer.W.value[...] = r.f32(c * k).reshape(c, k).astype(np.float64)
            layer.b.value[...] = r.f32(c).astype(np.float64)
            (layer.tau,) = r.unpack("<f")
            layer.tau = float(layer.tau)
        else:
            raise ModelFormatError(f"unknown layer tag {tag}")
        layers.append(layer)
    if r.pos != len(buf):
        raise ModelFormatError("trailing bytes after last layer")
    return SpikingNet(layers), {"version": version, "quantized": bool(quantized)}


# -- activation tensors -------------------------------------------------------

def save_tensor(path: str, x: TemporalTensor) -> None:
    dtype_name = {np.dtype(np.float64): "f64", np.dtype(np.float32): "f32",
                  np.dtype(np.int32): "i32"}[x.data.dtype]
    header = (
        "shiftsnn-tensor v1\n"
        f"dtype={dtype_name}\n"
        f"layout={x.layout.value}\n"
        f"shape={','.join(str(s) for s in x.shape)}\n"
        "data\n"
    )
    arr = np.ascontiguousarray(x.data)
    if arr.dtype.byteorder == ">":
        arr = arr.astype(arr.dtype.newbyteorder("<"))
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        f.write(arr.tobytes())


def load_tensor(path: str) -> TemporalTensor:
    with open(path, "rb") as f:
        buf = f.read()
    end = buf.find(b"data\n")
    if end < 0 or not buf.startswith(b"shiftsnn-tensor v1\n"):
        raise ModelFormatError("not an activation tensor file")
    fields = {}
    for line in buf[:end].decode("ascii").splitlines()[1:]:
        key, _, value = line.partition("=")
        fields[key] = value
    try:
        dtype = _DTYPE_NAMES[fields["dtype"]]
        layout = Layout(fields["layout"])
        shape = tuple(int(s) for s in fields["shape"].split(","))
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"bad tensor header: {exc}") from exc
    raw = buf[end + 5:]
    expect = int(np.prod(shape)) * np.dtype(dtype).itemsize
    if len(raw) != expect:
        raise ModelFormatError(f"tensor payload is {len(raw)} bytes, expected {expect}")
    data = np.frombuffer(raw, dtype=np.dtype(dtype).newbyteorder("<")).reshape(shape)
    return TemporalTensor(data.astype(dtype), layout)
