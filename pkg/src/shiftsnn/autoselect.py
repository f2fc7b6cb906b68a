"""Empirical per-layer selection of the fastest implementation and layout.

Before training starts (input shape known, weights irrelevant to speed),
every layer's candidate implementations are benchmarked under both data
layouts: forward, then backward with a randomized upstream gradient, timed
on a monotonic clock over 2m+1 repetitions of which the last m are averaged.
The layout with the smallest summed per-layer minimum wins and the network
is configured accordingly.  Selection is purely measurement-driven; there is
no cost model.

Benchmarking is single-threaded; the clock is injectable so selection logic
can be tested against scripted timings.
"""

from __future__ import annotations

import time
from contextlib import nullcontext
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .network import LayerMethod, Mode, SpikingNet
from .tensor import Layout, TemporalTensor, convert_layout

DEFAULT_M = 5


@dataclass(frozen=True)
class Candidate:
    layer_index: int
    layout: Layout
    method: LayerMethod


@dataclass
class BenchEntry:
    layer_index: int
    layout: Layout
    method: LayerMethod
    mean_seconds: float


@dataclass
class BenchReport:
    entries: list[BenchEntry] = field(default_factory=list)
    chosen: dict[Layout, list[LayerMethod]] = field(default_factory=dict)
    totals: dict[Layout, float] = field(default_factory=dict)
    best_layout: Layout = Layout.TIME_FIRST

    def selected_methods(self) -> list[LayerMethod]:
        return self.chosen[self.best_layout]

    def to_text(self) -> str:
        lines = []
        for e in self.entries:
            lines.append(
                f"layer={e.layer_index} layout={e.layout.value} "
                f"method={e.method.name} mean_seconds={e.mean_seconds:.9e}"
            )
        for layout, total in self.totals.items():
            picks = ",".join(m.name for m in self.chosen[layout])
            lines.append(f"layout={layout.value} total_seconds={total:.9e} chosen={picks}")
        lines.append(f"best_layout={self.best_layout.value}")
        return "\n".join(lines) + "\n"


def _random_like(output, rng: np.random.Generator):
    if isinstance(output, TemporalTensor):
        return TemporalTensor(rng.standard_normal(output.shape), output.layout)
    return rng.standard_normal(np.asarray(output).shape)


def _timed_execution(layer, x: TemporalTensor, method: LayerMethod,
                     clock, rng: np.random.Generator) -> float:
    """One forward+backward execution: the upstream gradient is drawn
    between the two timed sections and excluded from both."""
    layer.configure(method)
    t0 = clock()
    y = layer.forward(x, Mode.TRAIN)
    t1 = clock()
    z = _random_like(y, rng)
    t2 = clock()
    layer.backward(z)
    t3 = clock()
    return (t1 - t0) + (t3 - t2)


def benchmark_candidate(layer, x: TemporalTensor, method: LayerMethod,
                        m: int = DEFAULT_M, clock=time.perf_counter,
                        seed: int = 0) -> float:
    """Mean duration of (forward + backward) over the last m of 2m+1 runs."""
    if m < 1:
        raise ValueError("m must be >= 1")
    rng = np.random.default_rng(seed)
    durations = [_timed_execution(layer, x, method, clock, rng)
                 for _ in range(2 * m + 1)]
    return float(np.mean(durations[-m:]))


def _benchmark_layer(layer, x: TemporalTensor, methods: list[LayerMethod],
                     m: int, clock, seed: int) -> list[float]:
    """2m+1 executions per candidate, interleaved round-robin.

    Each candidate still gets the mean of its own last m runs; interleaving
    spreads clock-speed drift across candidates instead of letting it bias
    whichever was measured last.
    """
    rngs = [np.random.default_rng(seed) for _ in methods]
    durations = [[] for _ in methods]
    for _ in range(2 * m + 1):
        for ci, method in enumerate(methods):
            durations[ci].append(_timed_execution(layer, x, method, clock, rngs[ci]))
    return [float(np.mean(d[-m:])) for d in durations]


def autoselect(net: SpikingNet, input_shape: tuple[int, int, int],
               m: int = DEFAULT_M, clock=time.perf_counter,
               seed: int = 0, pin_threads: bool = True) -> BenchReport:
    """Benchmark every (layout, layer, method) triple and configure the net.

    ``input_shape`` is the logical (T, N, C) of the sequences the network
    will train on.  For each layout the per-layer winners are the argmin of
    their measured times (ties to the lower candidate index); the layout
    whose winners sum fastest is applied to the whole network.  Running
    statistics perturbed by the benchmark forwards are restored afterwards.

    ``pin_threads`` caps BLAS pools at one thread while measuring: on small
    kernels pool scheduling jitter otherwise dwarfs the differences being
    compared.
    """
    if not net.layers:
        raise ValueError("cannot autoselect on an empty network")
    t, n, c = input_shape
    rng = np.random.default_rng(seed)
    x0 = rng.standard_normal((t, n, c))

    stats_backup = [
        (l.thr.running_mean.copy(), l.thr.running_var.copy())
        for l in net.spiking_layers()
    ]

    report = BenchReport()
    guard = threadpool_limits(limits=1) if pin_threads else nullcontext()
    with guard:
        for layout in (Layout.TIME_FIRST, Layout.TIME_LAST):
            x = convert_layout(TemporalTensor(x0, Layout.TIME_FIRST), layout)
            total = 0.0
            picks: list[LayerMethod] = []
            for li, layer in enumerate(net.layers):
                methods = layer.method_candidates(layout)
                times = _benchmark_layer(layer, x, methods, m, clock, seed + li)
                for method, mean in zip(methods, times):
                    report.entries.append(BenchEntry(li, layout, method, mean))
                best_i = int(np.argmin(times))
                picks.append(methods[best_i])
                total += times[best_i]
                layer.configure(methods[best_i])
                x = layer.forward(x, Mode.TRAIN)
                if not isinstance(x, TemporalTensor):
                    break  # readout ends the temporal chain
            report.chosen[layout] = picks
            report.totals[layout] = total

    report.best_layout = min(report.totals, key=lambda lo: report.totals[lo])
    net.layout = report.best_layout
    for layer, method in zip(net.layers, report.chosen[report.best_layout]):
        layer.configure(method)

    for layer, (mean_bk, var_bk) in zip(net.spiking_layers(), stats_backup):
        layer.thr.running_mean[...] = mean_bk
        layer.thr.running_var[...] = var_bk
    net.zero_grad()
    return report
