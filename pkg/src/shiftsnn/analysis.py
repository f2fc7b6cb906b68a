"""Energy and inference-memory cost models (45nm CMOS constants).

Per-operation energies: 3.7 pJ for an fp32 multiply, 0.9 pJ for an fp32 add,
0.13 pJ for a fix32 shift by a power of two; synaptic layers cost 4.6 pJ per
multiply-accumulate and 0.9 pJ per accumulate.  Neuron-layer counts follow
the closed forms

    dense parallel neuron: (T^2 + T) ADD + T^2 MUL          per channel
    windowed neuron:       (u + T) ADD + u SHIFT,  u = (T + (1-k)/2) * k

and synaptic energy is E_mac * FLOPs(first layer) + E_ac * sum(SOPs), with
SOPs = firing_rate * T * FLOPs for spike-driven layers.  All reports are
pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PJ_PER_UJ = 1e6


@dataclass(frozen=True)
class EnergyModel:
    e_mul_fp32: float = 3.7
    e_add_fp32: float = 0.9
    e_shift_fix32: float = 0.13
    e_mac: float = 4.6
    e_ac: float = 0.9

    def __post_init__(self):
        if min(self.e_mul_fp32, self.e_add_fp32, self.e_shift_fix32,
               self.e_mac, self.e_ac) <= 0:
            raise ValueError("energy constants must be positive")


@dataclass
class NeuronOpCounts:
    muls: int = 0
    adds: int = 0
    shifts: int = 0


def window_tap_count(T: int, k: int) -> int:
    """In-range taps of the length-k causal window over T steps (d=1)."""
    return T * k - k * (k - 1) // 2


def neuron_op_counts(neuron: str, T: int, k: int = 1) -> NeuronOpCounts:
    """Closed-form per-channel inference operation counts."""
    if T < 1:
        raise ValueError("T must be >= 1")
    if neuron == "psn":
        return NeuronOpCounts(muls=T * T, adds=T * T + T)
    if neuron == "ours":
        if not 1 <= k <= T:
            raise ValueError(f"order k must satisfy 1 <= k <= T, got k={k}, T={T}")
        u = window_tap_count(T, k)
        return NeuronOpCounts(shifts=u, adds=u + T)
    raise ValueError(f"unknown neuron kind {neuron!r}")


def neuron_energy(neuron: str, T: int, k: int = 1,
                  model: EnergyModel = EnergyModel()) -> float:
    """Picojoules for one channel of one sequence through the neuron layer."""
    ops = neuron_op_counts(neuron, T, k)
    return (model.e_mul_fp32 * ops.muls + model.e_add_fp32 * ops.adds +
            model.e_shift_fix32 * ops.shifts)


def sops_from_flops(flops: float, firing_rate: float, T: int) -> float:
    """Spike-driven synaptic operations: firing_rate * T * FLOPs."""
    if flops < 0 or firing_rate < 0 or T < 1:
        raise ValueError("counts must be nonnegative and T >= 1")
    return firing_rate * T * flops


def synaptic_energy(flops_first_layer: float, sops_per_layer,
                    model: EnergyModel = EnergyModel()) -> float:
    """Picojoules for the synaptic stack: MACs encode the first layer,
    accumulates carry the spike-driven rest."""
    sops = np.asarray(sops_per_layer, dtype=np.float64)
    if flops_first_layer < 0 or np.any(sops < 0):
        raise ValueError("operation counts must be nonnegative")
    return model.e_mac * flops_first_layer + model.e_ac * float(sops.sum())


@dataclass
class EnergyReport:
    neuron_counts: NeuronOpCounts
    synaptic_flops_first: float
    synaptic_sops: float
    neuron_pj: float
    synaptic_pj: float

    @property
    def total_pj(self) -> float:
        return self.neuron_pj + self.synaptic_pj

    @property
    def total_uj(self) -> float:
        return self.total_pj / PJ_PER_UJ

    def to_text(self) -> str:
        c = self.neuron_counts
        return (
            "section ops energy_uj\n"
            f"neuron mul={c.muls} add={c.adds} shift={c.shifts} "
            f"{self.neuron_pj / PJ_PER_UJ:.4f}\n"
            f"synaptic flops={self.synaptic_flops_first:g} sops={self.synaptic_sops:g} "
            f"{self.synaptic_pj / PJ_PER_UJ:.4f}\n"
            f"total - {self.total_uj:.4f}\n"
        )


def network_energy_report(neuron_counts: NeuronOpCounts,
                          synaptic_flops_first: float,
                          synaptic_sops_per_layer,
                          model: EnergyModel = EnergyModel()) -> EnergyReport:
    """Energy of a whole network from measured or supplied operation counts."""
    sops_total = float(np.asarray(synaptic_sops_per_layer, dtype=np.float64).sum())
    neuron_pj = (model.e_mul_fp32 * neuron_counts.muls +
                 model.e_add_fp32 * neuron_counts.adds +
                 model.e_shift_fix32 * neuron_counts.shifts)
    syn_pj = synaptic_energy(synaptic_flops_first, synaptic_sops_per_layer, model)
    return EnergyReport(neuron_counts=neuron_counts,
                        synaptic_flops_first=synaptic_flops_first,
                        synaptic_sops=sops_total,
                        neuron_pj=neuron_pj,
                        synaptic_pj=syn_pj)


@dataclass
class MemoryEntry:
    layer: int
    order: int
    dilation: int
    window_steps: int
    elements: int
    bytes: int


@dataclass
class MemoryReport:
    entries: list[MemoryEntry] = field(default_factory=list)

    @property
    def total_elements(self) -> int:
        return sum(e.elements for e in self.entries)

    @property
    def total_bytes(self) -> int:
        return sum(e.bytes for e in self.entries)

    def to_text(self) -> str:
        lines = ["layer k d window_steps elements bytes"]
        for e in self.entries:
            lines.append(f"{e.layer} {e.order} {e.dilation} {e.window_steps} "
                         f"{e.elements} {e.bytes}")
        lines.append(f"total - - - {self.total_elements} {self.total_bytes}")
        return "\n".join(lines) + "\n"


def inference_memory_estimate(layer_specs, elem_bytes: int = 4) -> MemoryReport:
    """Step-by-step inference must buffer each neuron layer's last
    (k-1)*d + 1 input steps; report those window sizes.

    ``layer_specs`` is a sequence of (k, d, elements_per_step) triples;
    elements_per_step is batch x channels x spatial of that layer's input.
    Parameters and runtime overheads are deliberately excluded, so this
    tracks relative activation cost, not a full process footprint.
    """
    report = MemoryReport()
    for i, (k, d, per_step) in enumerate(layer_specs):
        if k < 1 or d < 1 or per_step < 1:
            raise ValueError("layer_specs entries must be >= 1")
        window = (k - 1) * d + 1
        elems = window * per_step
        report.entries.append(MemoryEntry(i, k, d, window, elems, elems * elem_bytes))
    return report
