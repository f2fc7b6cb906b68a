"""Reference parallel spiking neurons used as equivalence and cost baselines.

The full parallel neuron multiplies the whole sequence by a dense T x T
weight matrix (one hidden state per step, weights shared across channels);
the sliding variant keeps only a length-k causal window.  Both are float-only
and exist for testing and energy comparisons, not performance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engines import OpCounters, conv_forward_direct
from .tensor import Layout, TemporalTensor

PSN_VTH_DEFAULT = 1.0


@dataclass
class PSNParams:
    W_full: np.ndarray  # (T, T)
    V_th: np.ndarray    # (T,)

    def __post_init__(self):
        self.W_full = np.asarray(self.W_full, dtype=np.float64)
        self.V_th = np.asarray(self.V_th, dtype=np.float64)
        if self.W_full.ndim != 2 or self.W_full.shape[0] != self.W_full.shape[1]:
            raise ValueError("W_full must be square")
        if self.V_th.shape != (self.W_full.shape[0],):
            raise ValueError("V_th length must match W_full")

    @classmethod
    def init(cls, T: int, v_th: float = PSN_VTH_DEFAULT) -> "PSNParams":
        return cls(W_full=np.eye(T), V_th=np.full(T, v_th))


def psn_charge(x: TemporalTensor, p: PSNParams,
               counters: OpCounters | None = None) -> TemporalTensor:
    """H[t] = sum_i W[t][i] X[i]; every hidden state sees the whole sequence."""
    T = p.W_full.shape[0]
    if x.T != T:
        raise ValueError(f"input has {x.T} time-steps, weights expect {T}")
    if x.layout is Layout.TIME_FIRST:
        h = np.tensordot(p.W_full, x.data.astype(np.float64, copy=False), axes=([1], [0]))
    else:
        h = x.data.astype(np.float64, copy=False) @ p.W_full.T
    if counters is not None:
        per_matrix = x.data.size // T  # channel/batch/spatial copies of the sequence
        counters.muls += T * T * per_matrix
        counters.adds += T * T * per_matrix
    return TemporalTensor(h, x.layout)


def psn_forward(x: TemporalTensor, p: PSNParams,
                counters: OpCounters | None = None) -> TemporalTensor:
    h = psn_charge(x, p, counters)
    vshape = [1] * h.data.ndim
    vshape[h.time_axis] = h.T
    s = (h.data - p.V_th.reshape(vshape) >= 0).astype(np.float64)
    if counters is not None:
        counters.adds += h.data.size
    return TemporalTensor(s, x.layout)


def lif_weight_init(T: int, tau_m: float) -> np.ndarray:
    """Dense weights replicating a reset-free leaky integrate-and-fire charge.

    W[t][i] = (1/tau) * (1 - 1/tau)**(t - i) for i <= t, zero above the
    diagonal; row t reproduces the step-by-step recurrence
    V[t] = (1 - 1/tau) V[t-1] + (1/tau) X[t].
    """
    if tau_m <= 1:
        raise ValueError("tau_m must be > 1")
    inv = 1.0 / tau_m
    t_idx = np.arange(T)
    lag = t_idx[:, None] - t_idx[None, :]
    w = inv * (1.0 - inv) ** np.maximum(lag, 0)
    return np.where(lag >= 0, w, 0.0)


def sliding_psn_forward(x: TemporalTensor, w: np.ndarray, v_th: float,
                        counters: OpCounters | None = None) -> TemporalTensor:
    """Length-k causal window with one weight vector shared by all channels."""
    w = np.asarray(w, dtype=np.float64).reshape(1, -1)
    h = conv_forward_direct(x, w, bias=None, d=1, counters=counters)
    s = (h.data - v_th >= 0).astype(np.float64)
    if counters is not None:
        counters.adds += h.data.size
    return TemporalTensor(s, x.layout)
