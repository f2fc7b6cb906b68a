"""Multiplication-free channel-wise parallel spiking neurons on CPU."""

from .analysis import (
    EnergyModel,
    EnergyReport,
    NeuronOpCounts,
    inference_memory_estimate,
    network_energy_report,
    neuron_energy,
    neuron_op_counts,
    synaptic_energy,
)
from .autoselect import BenchReport, autoselect, benchmark_candidate
from .baseline import PSNParams, lif_weight_init, psn_charge, psn_forward, sliding_psn_forward
from .engines import (
    EngineKind,
    OpCounters,
    conv_backward_bias,
    conv_backward_input,
    conv_backward_weight,
    conv_forward,
    conv_forward_direct,
    conv_forward_matmul,
)
from .network import LinearLayer, Mode, ReadoutLayer, ShiftLayer, SpikingLayer, SpikingNet
from .neuron import (
    FusedParams,
    NeuronConfig,
    NeuronParams,
    ThresholdParams,
    WeightSharing,
    charge,
    fire,
    fuse_bn,
    receptive_field,
    sawtooth_schedule,
)
from .quant import (
    QuantGradMode,
    ShiftWeights,
    dequantize,
    quantize_backward,
    quantize_pow2,
    shift_mul_float,
    shift_mul_int,
)
from .surrogate import SurrogateConfig, SurrogateKind, spike_backward, spike_primitive
from .tensor import Layout, TemporalTensor, convert_layout, merge_time_batch
from .train import ToyTask, TrainConfig, build_task_net, finite_diff_check, train

__version__ = "0.1.0"
