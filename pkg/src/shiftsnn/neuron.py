"""Channel-wise parallel spiking neuron: charge, fire, fusion, dilations.

The neuron is a causal dilated temporal convolution per channel followed by a
Heaviside threshold.  The learnable threshold is realized as batch
normalization of the membrane potential: charging weights and normalization
fold into fused weights plus a per-channel bias for inference, at which point
spiking reduces to the sign of the fused charge.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .engines import EngineKind, OpCounters, conv_forward
from .quant import QuantGradMode, ShiftWeights
from .tensor import TemporalTensor

BN_EPS_DEFAULT = 1e-5
BN_MOMENTUM_DEFAULT = 0.1


class WeightSharing(Enum):
    CHANNEL_WISE = "channel_wise"
    SHARED = "shared"  # one weight row for all channels (sliding form)


@dataclass
class NeuronConfig:
    channels: int
    order: int = 2
    dilation: int = 1
    weight_sharing: WeightSharing = WeightSharing.CHANNEL_WISE
    quantized: bool = False
    grad_mode: QuantGradMode = QuantGradMode.WHOLE_STE

    def __post_init__(self):
        if self.channels < 1 or self.order < 1 or self.dilation < 1:
            raise ValueError("channels, order and dilation must all be >= 1")

    @property
    def weight_rows(self) -> int:
        return 1 if self.weight_sharing is WeightSharing.SHARED else self.channels


@dataclass
class NeuronParams:
    """Synaptic weights W, one row per channel (or a single shared row)."""

    W: np.ndarray  # (C, k) or (1, k) float64

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.W.ndim != 2:
            raise ValueError("W must be 2-D (channels x order)")
        if not np.all(np.isfinite(self.W)):
            raise ValueError("W must be finite")


@dataclass
class ThresholdParams:
    """Normalization statistics realizing the learnable firing threshold."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS_DEFAULT
    momentum: float = BN_MOMENTUM_DEFAULT

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.running_mean = np.asarray(self.running_mean, dtype=np.float64)
        self.running_var = np.asarray(self.running_var, dtype=np.float64)
        if not (self.gamma.shape == self.beta.shape ==
                self.running_mean.shape == self.running_var.shape):
            raise ValueError("threshold parameter vectors must share shape")
        if np.any(self.running_var < 0):
            raise ValueError("variance must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0 < self.momentum < 1:
            raise ValueError("momentum must be in (0, 1)")

    @classmethod
    def init(cls, channels: int, eps: float = BN_EPS_DEFAULT,
             momentum: float = BN_MOMENTUM_DEFAULT) -> "ThresholdParams":
        # gamma starts at 1, beta at -1: fresh neurons fire only above one
        # standard deviation, keeping early spike rates sparse.
        return cls(
            gamma=np.ones(channels),
            beta=-np.ones(channels),
            running_mean=np.zeros(channels),
            running_var=np.ones(channels),
            eps=eps,
            momentum=momentum,
        )


@dataclass
class FusedParams:
    """Convolution weights and bias after folding normalization in."""

    W_f: np.ndarray
    b_f: np.ndarray

    def __post_init__(self):
        self.W_f = np.asarray(self.W_f, dtype=np.float64)
        self.b_f = np.asarray(self.b_f, dtype=np.float64)
        if self.W_f.ndim != 2 or self.b_f.ndim != 1 or self.W_f.shape[0] != self.b_f.shape[0]:
            raise ValueError("W_f must be (C, k) and b_f (C,)")


def sawtooth_schedule(num_layers: int) -> list[int]:
    """Dilations across a stack: 1, 2, 3, 1, 2, 3, ... (d' = d mod 3 + 1)."""
    if num_layers < 1:
        raise ValueError("num_layers must be >= 1")
    out = [1]
    for _ in range(num_layers - 1):
        out.append(out[-1] % 3 + 1)
    return out


def receptive_field(orders: list[int], dilations: list[int]) -> int:
    """Past time-steps reaching the final output: 1 + sum (k_l - 1) * d_l."""
    if len(orders) != len(dilations):
        raise ValueError("orders and dilations must have equal length")
    return 1 + sum((k - 1) * d for k, d in zip(orders, dilations))


def lif_taps(k: int, tau_m: float = 2.0) -> np.ndarray:
    """Leaky-integrator kernel truncated to the last k steps.

    Tap i (i = k-1 is the current step) carries (1/tau) * (1 - 1/tau)**(k-1-i),
    the geometric charge decay of a reset-free leaky neuron.
    """
    if tau_m <= 1:
        raise ValueError("tau_m must be > 1")
    inv = 1.0 / tau_m
    return inv * (1.0 - inv) ** np.arange(k - 1, -1, -1, dtype=np.float64)


def init_weights(cfg: NeuronConfig, kind: str = "lif", tau_m: float = 2.0,
                 rng: np.random.Generator | None = None) -> NeuronParams:
    rows = cfg.weight_rows
    if kind == "lif":
        w = np.tile(lif_taps(cfg.order, tau_m), (rows, 1))
    elif kind == "uniform":
        rng = rng or np.random.default_rng()
        bound = cfg.order ** -0.5
        w = rng.uniform(-bound, bound, size=(rows, cfg.order))
    else:
        raise ValueError(f"unknown init kind {kind!r}")
    return NeuronParams(W=w)


def charge(x: TemporalTensor, params, cfg: NeuronConfig,
           engine: EngineKind = EngineKind.DIRECT,
           counters: OpCounters | None = None,
           block_size: int = 32) -> TemporalTensor:
    """Membrane potentials H for input x under the configured dynamics.

    ``params`` may be raw weights (NeuronParams), fused weights-plus-bias
    (FusedParams) or quantized shift weights (ShiftWeights).  Out-of-range
    past inputs count as zero.  The result is engine-independent up to float
    summation tolerance.
    """
    if x.C != cfg.channels:
        raise ValueError(f"input has {x.C} channels, config expects {cfg.channels}")
    if isinstance(params, FusedParams):
        w, bias = params.W_f, params.b_f
    elif isinstance(params, NeuronParams):
        w, bias = params.W, None
    elif isinstance(params, ShiftWeights):
        w, bias = params, None
    else:
        raise TypeError(f"unsupported params type {type(params).__name__}")
    return conv_forward(x, w, bias=bias, d=cfg.dilation, engine=engine,
                        counters=counters, block_size=block_size)


def batch_stats(h: TemporalTensor) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel mean and biased variance over every non-channel axis."""
    axes = tuple(a for a in range(h.data.ndim) if a != h.channel_axis)
    hd = h.data.astype(np.float64, copy=False)
    mean = hd.mean(axis=axes)
    var = hd.var(axis=axes)
    return mean, var


def fire(h: TemporalTensor, thr: ThresholdParams, training: bool = False,
         counters: OpCounters | None = None) -> TemporalTensor:
    """Binary spikes from membrane potentials under the normalized threshold.

    S = step(gamma * (H - mu) / sqrt(var + eps) + beta), with step(0) = 1.
    Training mode normalizes by the current batch statistics and updates the
    running ones with the configured momentum; inference mode uses the
    running statistics.  Counters get the one ADD per element the threshold
    comparison costs once fused.
    """
    if h.C != thr.gamma.shape[0]:
        raise ValueError(f"input has {h.C} channels, threshold expects {thr.gamma.shape[0]}")
    if training:
        mean, var = batch_stats(h)
        m = h.data.size // h.C
        unbiased = var * (m / (m - 1)) if m > 1 else var
        mom = thr.momentum
        thr.running_mean *= 1 - mom
        thr.running_mean += mom * mean
        thr.running_var *= 1 - mom
        thr.running_var += mom * unbiased
    else:
        mean, var = thr.running_mean, thr.running_var
    cshape = [1] * h.data.ndim
    cshape[h.channel_axis] = h.C
    scale = (thr.gamma / np.sqrt(var + thr.eps)).reshape(cshape)
    shift = (thr.beta - thr.gamma * mean / np.sqrt(var + thr.eps)).reshape(cshape)
    pre = h.data * scale + shift
    if counters is not None:
        counters.adds += h.data.size
    out_dtype = h.data.dtype if h.data.dtype in (np.float32, np.float64) else np.float64
    return TemporalTensor((pre >= 0).astype(out_dtype), h.layout)


def fuse_bn(params: NeuronParams, thr: ThresholdParams) -> FusedParams:
    """Fold the threshold normalization into the convolution.

    W_f scales each weight row by gamma / sqrt(var + eps); b_f absorbs the
    mean and beta.  Afterwards firing is just the sign of the fused charge,
    so inference convolves once with no separate normalization pass.
    """
    c = thr.gamma.shape[0]
    scale = thr.gamma / np.sqrt(thr.running_var + thr.eps)
    w = params.W
    if w.shape[0] == 1 and c > 1:
        w = np.broadcast_to(w, (c, w.shape[1]))
    elif w.shape[0] != c:
        raise ValueError(f"weights have {w.shape[0]} rows, threshold has {c} channels")
    w_f = w * scale[:, None]
    b_f = thr.beta - scale * thr.running_mean
    return FusedParams(W_f=w_f, b_f=b_f)
