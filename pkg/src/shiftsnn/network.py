"""Layer stack: stateless synapses, spiking neuron layers, and a readout.

Three execution modes share one backward implementation:

* TRAIN  - float64, hard spikes with surrogate derivatives, batch statistics
           (updating the running ones), and the quantization-aware double
           pass when a layer is quantized: an unquantized charge pass feeds
           the normalization statistics, then the quantized fused pass
           produces the spikes.
* SMOOTH - float64 and pure: the spike step is replaced by the surrogate's
           primitive and running statistics are left untouched, so losses
           are differentiable and repeatable for finite-difference checks.
* EVAL   - float32 deployment path: normalization folded into the weights,
           power-of-two shift execution when quantized.  This is exactly the
           computation a saved model file performs after reload.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import engines
from .engines import BLOCK_SIZE_CANDIDATES, EngineKind, OpCounters
from .neuron import (
    FusedParams,
    NeuronConfig,
    NeuronParams,
    ThresholdParams,
    batch_stats,
    fuse_bn,
    init_weights,
)
from .quant import ShiftWeights, quantize_backward, quantize_pow2
from .surrogate import SurrogateConfig, spike_backward, spike_primitive
from .tensor import Layout, TemporalTensor, convert_layout


class Mode(Enum):
    TRAIN = "train"
    SMOOTH = "smooth"
    EVAL = "eval"


@dataclass
class Param:
    name: str
    value: np.ndarray
    grad: np.ndarray

    @classmethod
    def of(cls, name: str, value: np.ndarray) -> "Param":
        return cls(name=name, value=value, grad=np.zeros_like(value))


@dataclass(frozen=True)
class LayerMethod:
    """One benchmarkable implementation choice for a layer."""

    name: str
    engine: EngineKind | None = None
    block_size: int | None = None


def _ce_loss(logits: np.ndarray, labels: np.ndarray):
    """Cross entropy; returns (loss, dlogits, accuracy)."""
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(lse - z[np.arange(n), labels]))
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    p[np.arange(n), labels] -= 1.0
    acc = float(np.mean(np.argmax(logits, axis=1) == labels))
    return loss, p / n, acc


class LinearLayer:
    """Stateless synapse: one weight matrix shared across all time-steps.

    Time-first inputs fuse T and N into one batch axis (a free view) before
    the matrix multiply; time-last inputs contract the channel axis in
    place.  Rank-3 tensors only.
    """

    def __init__(self, in_features: int, out_features: int,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng()
        w = rng.normal(0.0, in_features ** -0.5, size=(out_features, in_features))
        self.W = Param.of("W", w)
        self.b = Param.of("b", np.zeros(out_features))
        self.method = LayerMethod("merge_mm")
        self._cache = None

    def out_channels(self) -> int:
        return self.W.value.shape[0]

    def parameters(self) -> list[Param]:
        return [self.W, self.b]

    def method_candidates(self, layout: Layout) -> list[LayerMethod]:
        return [LayerMethod("merge_mm" if layout is Layout.TIME_FIRST else "chan_einsum")]

    def configure(self, method: LayerMethod) -> None:
        self.method = method

    def forward(self, x: TemporalTensor, mode: Mode) -> TemporalTensor:
        if x.data.ndim != 3:
            raise ValueError("linear layers take rank-3 tensors")
        if mode is Mode.EVAL:
            w = self.W.value.astype(np.float32)
            b = self.b.value.astype(np.float32)
            xd = x.data.astype(np.float32, copy=False)
        else:
            w, b, xd = self.W.value, self.b.value, x.data
        if x.layout is Layout.TIME_FIRST:
            t, n, c = xd.shape
            y = (xd.reshape(t * n, c) @ w.T + b).reshape(t, n, -1)
        else:
            y = np.einsum("nct,oc->not", xd, w) + b[None, :, None]
        if mode is not Mode.EVAL:
            self._cache = x
        return TemporalTensor(y, x.layout)

    def backward(self, dy: TemporalTensor) -> TemporalTensor:
        x = self._cache
        if x.layout is Layout.TIME_FIRST:
            t, n, c = x.data.shape
            dym = dy.data.reshape(t * n, -1)
            xm = x.data.reshape(t * n, c)
            self.W.grad += dym.T @ xm
            self.b.grad += dym.sum(axis=0)
            dx = (dym @ self.W.value).reshape(t, n, c)
        else:
            self.W.grad += np.einsum("not,nct->oc", dy.data, x.data)
            self.b.grad += dy.data.sum(axis=(0, 2))
            dx = np.einsum("not,oc->nct", dy.data, self.W.value)
        return TemporalTensor(dx, x.layout)


class SpikingLayer:
    """Channel-wise spiking neuron layer with a normalized threshold."""

    def __init__(self, cfg: NeuronConfig, surrogate: SurrogateConfig | None = None,
                 weight_init: str = "lif", rng: np.random.Generator | None = None,
                 fuse_from_batch_stats: bool = True):
        self.cfg = cfg
        self.surrogate = surrogate or SurrogateConfig()
        self.W = Param.of("W", init_weights(cfg, kind=weight_init, rng=rng).W)
        self.thr = ThresholdParams.init(cfg.channels)
        self.gamma = Param.of("gamma", self.thr.gamma)
        self.beta = Param.of("beta", self.thr.beta)
        # whether the fused pass normalizes with this batch's statistics or
        # with the running ones from before this step
        self.fuse_from_batch_stats = fuse_from_batch_stats
        self.quantize_in_smooth_mode = False
        self.method = LayerMethod("direct", EngineKind.DIRECT)
        self._cache = None

    def out_channels(self) -> int:
        return self.cfg.channels

    def parameters(self) -> list[Param]:
        return [self.W, self.gamma, self.beta]

    def method_candidates(self, layout: Layout) -> list[LayerMethod]:
        methods = [
            LayerMethod("direct", EngineKind.DIRECT),
            LayerMethod("matmul", EngineKind.MATMUL),
        ]
        methods += [
            LayerMethod(f"blocked{bs}", EngineKind.BLOCKED, bs)
            for bs in BLOCK_SIZE_CANDIDATES
        ]
        if self.cfg.quantized:
            methods.append(LayerMethod("shift", EngineKind.SHIFT))
        return methods

    def configure(self, method: LayerMethod) -> None:
        self.method = method

    # -- helpers -------------------------------------------------------------

    def _conv(self, x: TemporalTensor, w, bias=None,
              engine: EngineKind | None = None,
              counters: OpCounters | None = None) -> TemporalTensor:
        engine = engine or self.method.engine or EngineKind.DIRECT
        if engine is EngineKind.SHIFT and not isinstance(w, ShiftWeights):
            engine = EngineKind.DIRECT  # raw float pass of a shift-configured layer
        return engines.conv_forward(
            x, w, bias=bias, d=self.cfg.dilation, engine=engine,
            counters=counters, block_size=self.method.block_size or 32,
        )

    def _broadcast_w(self) -> np.ndarray:
        w = self.W.value
        if w.shape[0] == 1 and self.cfg.channels > 1:
            return np.broadcast_to(w, (self.cfg.channels, w.shape[1]))
        return w

    def fused_running(self) -> FusedParams:
        """Fold the running statistics into weights and bias (deployment)."""
        return fuse_bn(NeuronParams(self._broadcast_w().copy()), self.thr)

    def quantized_snapshot(self) -> tuple[ShiftWeights, np.ndarray]:
        fused = self.fused_running()
        return quantize_pow2(fused.W_f), fused.b_f.astype(np.float32)

    # -- forward -------------------------------------------------------------

    def forward(self, x: TemporalTensor, mode: Mode,
                counters: OpCounters | None = None) -> TemporalTensor:
        if mode is Mode.EVAL:
            return self._forward_eval(x, counters)
        return self._forward_train(x, mode)

    def _forward_eval(self, x: TemporalTensor, counters) -> TemporalTensor:
        x32 = TemporalTensor(x.data.astype(np.float32, copy=False), x.layout)
        if self.cfg.quantized:
            sw, b32 = self.quantized_snapshot()
            h = self._conv(x32, sw, bias=b32.astype(np.float64),
                           engine=EngineKind.SHIFT, counters=counters)
        else:
            fused = self.fused_running()
            engine = self.method.engine
            if engine is EngineKind.SHIFT:
                engine = EngineKind.DIRECT
            # weights pass through f32: the precision a saved model carries
            h = self._conv(x32, fused.W_f.astype(np.float32).astype(np.float64),
                           bias=fused.b_f.astype(np.float32).astype(np.float64),
                           engine=engine, counters=counters)
        return TemporalTensor((h.data >= 0).astype(np.float32), x.layout)

    def _forward_train(self, x: TemporalTensor, mode: Mode) -> TemporalTensor:
        thr = self.thr
        running_prev = (thr.running_mean.copy(), thr.running_var.copy())
        h1 = self._conv(x, self.W.value)
        mu_b, var_b = batch_stats(h1)
        if mode is Mode.TRAIN:
            m = h1.data.size // h1.C
            unbiased = var_b * (m / (m - 1)) if m > 1 else var_b
            mom = thr.momentum
            thr.running_mean *= 1 - mom
            thr.running_mean += mom * mu_b
            thr.running_var *= 1 - mom
            thr.running_var += mom * unbiased

        use_batch = self.fuse_from_batch_stats
        mu, var = (mu_b, var_b) if use_batch else running_prev
        s = np.sqrt(var + thr.eps)
        a = self.gamma.value / s
        w_f = a[:, None] * self._broadcast_w()
        b_f = self.beta.value - a * mu

        quantize = self.cfg.quantized and (mode is Mode.TRAIN or self.quantize_in_smooth_mode)
        w_q = quantize_pow2(w_f).values() if quantize else w_f
        h2 = self._conv(x, w_q, bias=b_f)

        if mode is Mode.SMOOTH:
            out = spike_primitive(h2.data, self.surrogate)
        else:
            out = (h2.data >= 0).astype(np.float64)
        self._cache = dict(x=x, h1=h1, mu=mu, s=s, a=a,
                           w_f=w_f, w_q=w_q, h2=h2, use_batch=use_batch,
                           quantized=quantize)
        return TemporalTensor(out, x.layout)

    # -- backward ------------------------------------------------------------

    def backward(self, dy: TemporalTensor) -> TemporalTensor:
        c = self._cache
        x, h2 = c["x"], c["h2"]
        d = self.cfg.dilation
        k = self.cfg.order
        shared = self.W.value.shape[0] == 1

        dh2 = TemporalTensor(dy.data * spike_backward(h2.data, self.surrogate), x.layout)

        db_f = engines.conv_backward_bias(dh2)
        dw_q = engines.conv_backward_weight(x, dh2, k, d)
        bw_engine = (EngineKind.MATMUL if self.method.engine is EngineKind.MATMUL
                     else EngineKind.DIRECT)
        dx = engines.conv_backward_input(dh2, c["w_q"], d, engine=bw_engine)
        if c["quantized"]:
            dw_f = quantize_backward(dw_q, c["w_f"], self.cfg.grad_mode)
        else:
            dw_f = dw_q

        a, s, mu = c["a"], c["s"], c["mu"]
        w_bc = self._broadcast_w()
        da = (dw_f * w_bc).sum(axis=1) - db_f * mu
        dw = a[:, None] * dw_f
        self.beta.grad += db_f
        self.gamma.grad += da / s

        if c["use_batch"]:
            # statistics of the first pass depend on x and W; push the
            # gradient through mean and biased variance
            ds = -da * self.gamma.value / (s * s)
            dvar = ds / (2.0 * s)
            dmu = -db_f * a
            h1 = c["h1"]
            m = h1.data.size // h1.C
            cshape = [1] * h1.data.ndim
            cshape[h1.channel_axis] = h1.C
            dh1 = (dmu / m).reshape(cshape) + (2.0 / m) * dvar.reshape(cshape) * (
                h1.data - mu.reshape(cshape)
            )
            dh1_t = TemporalTensor(dh1, x.layout)
            dx = TemporalTensor(
                dx.data + engines.conv_backward_input(dh1_t, self.W.value, d).data, x.layout
            )
            dw += engines.conv_backward_weight(x, dh1_t, k, d)

        self.W.grad += dw.sum(axis=0, keepdims=True) if shared else dw
        return dx


class ShiftLayer:
    """Inference-only spiking layer: fused power-of-two weights plus bias.

    This is what a quantized model file deserializes to; it has no float
    weights (except the fused bias), no statistics, and no backward.
    """

    def __init__(self, sw: ShiftWeights, bias_f32: np.ndarray, dilation: int):
        if sw.sign.ndim != 2:
            raise ValueError("shift weights must be (C, k)")
        self.sw = sw
        self.bias = np.asarray(bias_f32, dtype=np.float32)
        if self.bias.shape != (sw.shape[0],):
            raise ValueError("bias must have one entry per channel")
        self.dilation = dilation
        self.method = LayerMethod("shift", EngineKind.SHIFT)
        self._cache = None

    def out_channels(self) -> int:
        return self.sw.shape[0]

    def parameters(self) -> list[Param]:
        return []

    def method_candidates(self, layout: Layout) -> list[LayerMethod]:
        return [LayerMethod("shift", EngineKind.SHIFT)]

    def configure(self, method: LayerMethod) -> None:
        self.method = method

    def forward(self, x: TemporalTensor, mode: Mode,
                counters: OpCounters | None = None) -> TemporalTensor:
        if mode is not Mode.EVAL:
            raise ValueError("quantized fused layers are inference-only")
        x32 = TemporalTensor(x.data.astype(np.float32, copy=False), x.layout)
        h = engines.conv_forward(x32, self.sw, bias=self.bias.astype(np.float64),
                                 d=self.dilation, engine=EngineKind.SHIFT,
                                 counters=counters)
        return TemporalTensor((h.data >= 0).astype(np.float32), x.layout)

    def backward(self, dy):
        raise ValueError("quantized fused layers are inference-only")


class ReadoutLayer:
    """Non-spiking readout: linear map into a leaky accumulator.

    The accumulator never fires (its threshold is effectively infinite), so
    its membrane potential after the last step is a geometric moving average
    of the class currents; those potentials are the class scores.  A
    time-uniform average would erase temporal order entirely, which is why
    the recency-weighted potential is used instead.
    """

    def __init__(self, in_features: int, classes: int, tau: float = 2.0,
                 rng: np.random.Generator | None = None):
        if tau <= 1:
            raise ValueError("tau must be > 1")
        rng = rng or np.random.default_rng()
        w = rng.normal(0.0, in_features ** -0.5, size=(classes, in_features))
        self.W = Param.of("W", w)
        self.b = Param.of("b", np.zeros(classes))
        self.tau = tau
        self.method = LayerMethod("recurrent")
        self._cache = None

    def out_channels(self) -> int:
        return self.W.value.shape[0]

    def parameters(self) -> list[Param]:
        return [self.W, self.b]

    def method_candidates(self, layout: Layout) -> list[LayerMethod]:
        return [LayerMethod("recurrent")]

    def configure(self, method: LayerMethod) -> None:
        self.method = method

    def forward(self, x: TemporalTensor, mode: Mode) -> np.ndarray:
        if x.data.ndim != 3:
            raise ValueError("readout takes rank-3 tensors")
        if mode is Mode.EVAL:
            w = self.W.value.astype(np.float32)
            b = self.b.value.astype(np.float32)
            xd = x.data.astype(np.float32, copy=False)
        else:
            w, b, xd = self.W.value, self.b.value, x.data
        if x.layout is Layout.TIME_FIRST:
            cur = np.einsum("tnc,oc->tno", xd, w) + b
        else:
            cur = np.einsum("nct,oc->tno", xd, w) + b
        inv = np.asarray(1.0 / self.tau, dtype=cur.dtype)
        v = np.zeros_like(cur[0])
        for t in range(cur.shape[0]):
            v = (1 - inv) * v + inv * cur[t]
        logits = v
        if mode is not Mode.EVAL:
            self._cache = (x, cur.shape[0])
        return logits

    def backward(self, dlogits: np.ndarray) -> TemporalTensor:
        x, t_len = self._cache
        inv = 1.0 / self.tau
        dcur = np.empty((t_len,) + dlogits.shape)
        g = dlogits
        for t in range(t_len - 1, -1, -1):
            dcur[t] = inv * g
            g = (1 - inv) * g
        if x.layout is Layout.TIME_FIRST:
            self.W.grad += np.einsum("tno,tnc->oc", dcur, x.data)
            dx = np.einsum("tno,oc->tnc", dcur, self.W.value)
        else:
            self.W.grad += np.einsum("tno,nct->oc", dcur, x.data)
            dx = np.einsum("tno,oc->nct", dcur, self.W.value)
        self.b.grad += dcur.sum(axis=(0, 1))
        return TemporalTensor(dx, x.layout)


class SpikingNet:
    """A stack of layers ending in a readout, run under one global layout."""

    def __init__(self, layers: list, layout: Layout = Layout.TIME_FIRST):
        if not layers:
            raise ValueError("network must have at least one layer")
        self.layers = layers
        self.layout = layout

    def spiking_layers(self) -> list[SpikingLayer]:
        return [l for l in self.layers if isinstance(l, SpikingLayer)]

    def parameters(self) -> list[Param]:
        out = []
        for layer in self.layers:
            out.extend(layer.parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0

    def ingest(self, x: TemporalTensor) -> TemporalTensor:
        return convert_layout(x, self.layout)

    def forward(self, x: TemporalTensor, mode: Mode = Mode.TRAIN,
                counters: list[OpCounters] | None = None):
        h = self.ingest(x)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, (SpikingLayer, ShiftLayer)) and mode is Mode.EVAL:
                h = layer.forward(h, mode, counters=counters[i] if counters is not None else None)
            else:
                h = layer.forward(h, mode)
        return h

    def backward(self, dlogits: np.ndarray) -> TemporalTensor:
        g = dlogits
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g

    def loss(self, x: TemporalTensor, labels: np.ndarray, mode: Mode = Mode.TRAIN):
        """Forward + cross entropy; returns (loss, dlogits, accuracy)."""
        logits = self.forward(x, mode)
        return _ce_loss(np.asarray(logits, dtype=np.float64), labels)

    def train_step_grads(self, x: TemporalTensor, labels: np.ndarray,
                         mode: Mode = Mode.TRAIN):
        self.zero_grad()
        logits = self.forward(x, mode)
        loss, dlogits, acc = _ce_loss(np.asarray(logits, dtype=np.float64), labels)
        self.backward(dlogits.astype(np.float64))
        return loss, acc

    def predict(self, x: TemporalTensor,
                counters: list[OpCounters] | None = None) -> np.ndarray:
        logits = self.forward(x, Mode.EVAL, counters=counters)
        return np.argmax(logits, axis=1)
