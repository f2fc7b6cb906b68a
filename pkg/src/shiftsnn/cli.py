"""Command-line front end: quantize, infer, train, bench, energy, rf.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Config files are flat key=value text; `train --dump-config` prints every
default.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .analysis import (
    EnergyModel,
    NeuronOpCounts,
    inference_memory_estimate,
    network_energy_report,
)
from .autoselect import autoselect
from .engines import OpCounters
from .modelio import ModelFormatError, load_model, load_tensor, save_model, save_tensor
from .network import LinearLayer, Mode, ReadoutLayer, ShiftLayer, SpikingLayer
from .neuron import receptive_field, sawtooth_schedule
from .quant import QuantGradMode, dequantize, quantize_pow2
from .train import (
    ToyTask,
    TrainConfig,
    TrainDivergedError,
    build_task_net,
    metrics_to_text,
    train,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _read_config(path: str) -> dict:
    out = {}
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValueError(f"config line without '=': {line!r}")
            out[key.strip()] = value.strip()
    return out


TRAIN_DEFAULTS = {
    "task": "delayed_xor",
    "lag": 6,
    "T": 20,
    "train_size": 1024,
    "test_size": 256,
    "channels": 24,
    "layers": 3,
    "order": 2,
    "dilations": "sawtooth",
    "quantized": 1,
    "grad_mode": "whole_ste",
    "optimizer": "adam",
    "learning_rate": 5e-3,
    "epochs": 30,
    "batch_size": 64,
    "seed": 0,
}


def _dilations_from(value: str, layers: int) -> list[int]:
    if value == "sawtooth":
        return sawtooth_schedule(layers)
    if value == "fixed":
        return [1] * layers
    return [int(v) for v in value.split(",")]


def _merged_train_settings(args) -> dict:
    settings = dict(TRAIN_DEFAULTS)
    if args.config:
        settings.update(_read_config(args.config))
    for key in TRAIN_DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    for key in ("lag", "T", "train_size", "test_size", "channels", "layers",
                "order", "quantized", "epochs", "batch_size", "seed"):
        settings[key] = int(settings[key])
    settings["learning_rate"] = float(settings["learning_rate"])
    return settings


def cmd_train(args) -> int:
    s = _merged_train_settings(args)
    if args.dump_config:
        for key in TRAIN_DEFAULTS:
            print(f"{key}={s[key]}")
        return 0
    dilations = _dilations_from(str(s["dilations"]), s["layers"])
    grad_mode = QuantGradMode(s["grad_mode"])
    net = build_task_net(
        channels=s["channels"], num_layers=s["layers"], order=s["order"],
        dilations=dilations, quantized=bool(s["quantized"]),
        grad_mode=grad_mode, seed=s["seed"],
    )
    task = ToyTask(name=s["task"], lag=s["lag"], T=s["T"],
                   train_size=s["train_size"], test_size=s["test_size"],
                   seed=s["seed"])
    cfg = TrainConfig(optimizer=s["optimizer"], learning_rate=s["learning_rate"],
                      epochs=s["epochs"], batch_size=s["batch_size"],
                      grad_mode=grad_mode, seed=s["seed"])
    if args.autoselect:
        autoselect(net, (task.T, min(cfg.batch_size, task.train_size), 1), m=args.m)
    history = train(net, task, cfg)
    text = metrics_to_text(history)
    if args.metrics_out:
        with open(args.metrics_out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    if args.out:
        save_model(net, args.out, quantize=False)
        print(f"saved model to {args.out}")
    print(f"final test_acc={history[-1].test_acc:.4f}")
    return 0


def cmd_quantize(args) -> int:
    net, meta = load_model(args.model)
    spiking = [l for l in net.layers if isinstance(l, SpikingLayer)]
    if meta["quantized"] or any(isinstance(l, ShiftLayer) for l in net.layers):
        raise ValueError("model is already quantized")
    if not spiking:
        raise ValueError("model has no spiking layers to quantize")
    for i, layer in enumerate(net.layers):
        if not isinstance(layer, SpikingLayer):
            continue
        fused = layer.fused_running()
        q = quantize_pow2(fused.W_f)
        vals = dequantize(q)
        nz = fused.W_f != 0
        if np.any(nz):
            err = float(np.max(np.abs((vals[nz] - fused.W_f[nz]) / fused.W_f[nz])))
        else:
            err = 0.0
        print(f"layer {i}: max relative weight error {err:.4f}")
    save_model(net, args.out, quantize=True)
    print(f"wrote quantized model to {args.out}")
    return 0


def cmd_infer(args) -> int:
    net, meta = load_model(args.model)
    x = load_tensor(args.input)
    counters = [OpCounters() for _ in net.layers]
    has_readout = isinstance(net.layers[-1], ReadoutLayer)
    if has_readout:
        output = net.predict(x, counters=counters)
    else:
        output = net.forward(x, Mode.EVAL, counters=counters)

    neuron_muls = 0
    for i, layer in enumerate(net.layers):
        if isinstance(layer, (SpikingLayer, ShiftLayer)):
            c = counters[i]
            neuron_muls += c.muls
            print(f"layer {i} ({type(layer).__name__}): "
                  f"muls={c.muls} adds={c.adds} shifts={c.shifts}")
    if meta["quantized"]:
        print(f"mul_free={'yes' if neuron_muls == 0 else 'no'}")

    if args.compare_model:
        other, _ = load_model(args.compare_model)
        if has_readout:
            other_out = other.predict(x)
            agree = float(np.mean(output == other_out))
        else:
            other_out = other.forward(x, Mode.EVAL)
            agree = float(np.mean(output.data == other_out.data))
        print(f"agreement={agree:.4f}")

    if has_readout:
        text = "\n".join(str(int(p)) for p in output) + "\n"
        if args.out:
            with open(args.out, "w") as f:
                f.write(text)
        else:
            sys.stdout.write(text)
    elif args.out:
        save_tensor(args.out, output)
    return 0


def cmd_bench(args) -> int:
    sweep = [int(t) for t in args.sweep.split(",")] if args.sweep else [args.T]
    for t in sweep:
        net = build_task_net(channels=args.channels, num_layers=args.layers,
                             order=args.order,
                             dilations=_dilations_from(args.dilations, args.layers),
                             quantized=bool(args.quantized), seed=args.seed)
        report = autoselect(net, (t, args.N, 1), m=args.m, seed=args.seed)
        if len(sweep) > 1:
            picks = ",".join(m.name for m in report.selected_methods())
            print(f"T={t} best_layout={report.best_layout.value} "
                  f"totals={{{', '.join(f'{k.value}={v:.3e}' for k, v in report.totals.items())}}} "
                  f"chosen={picks}")
        else:
            sys.stdout.write(report.to_text())
    return 0


def _parse_counts_file(path: str) -> dict:
    raw = _read_config(path)
    required = ("neuron_muls", "neuron_adds", "neuron_shifts",
                "syn_flops_first", "syn_sops")
    missing = [k for k in required if k not in raw]
    if missing:
        raise ValueError(f"counts file missing keys: {', '.join(missing)}")
    return raw


def cmd_energy(args) -> int:
    if args.counts_file:
        raw = _parse_counts_file(args.counts_file)
        counts = NeuronOpCounts(muls=int(float(raw["neuron_muls"])),
                                adds=int(float(raw["neuron_adds"])),
                                shifts=int(float(raw["neuron_shifts"])))
        flops_first = float(raw["syn_flops_first"])
        sops = [float(v) for v in str(raw["syn_sops"]).split(",")]
    elif args.model and args.input:
        net, _ = load_model(args.model)
        x = load_tensor(args.input)
        counters = [OpCounters() for _ in net.layers]
        layer_inputs = []
        h = net.ingest(x)
        for i, layer in enumerate(net.layers):
            layer_inputs.append(h)
            if isinstance(layer, (SpikingLayer, ShiftLayer)):
                h = layer.forward(h, Mode.EVAL, counters=counters[i])
            else:
                h = layer.forward(h, Mode.EVAL)
        counts = NeuronOpCounts()
        for i, layer in enumerate(net.layers):
            if isinstance(layer, (SpikingLayer, ShiftLayer)):
                counts.muls += counters[i].muls
                counts.adds += counters[i].adds
                counts.shifts += counters[i].shifts
        flops_first = 0.0
        sops = []
        t = x.T
        first = True
        for layer, inp in zip(net.layers, layer_inputs):
            if isinstance(layer, (LinearLayer, ReadoutLayer)):
                per_step = layer.W.value.size * inp.N
                if first:
                    flops_first = float(t * per_step)
                    first = False
                else:
                    fr = float(np.mean(inp.data))
                    sops.append(fr * t * per_step)
    else:
        raise ValueError("energy needs either --counts-file or --model plus --input")
    report = network_energy_report(counts, flops_first, sops, EnergyModel())
    sys.stdout.write(report.to_text())
    return 0


def cmd_rf(args) -> int:
    dilations = _dilations_from(args.dilations, args.layers)
    orders = [args.order] * args.layers
    print("layer k d rf_so_far")
    for i in range(args.layers):
        rf = receptive_field(orders[: i + 1], dilations[: i + 1])
        print(f"{i} {orders[i]} {dilations[i]} {rf}")
    total = receptive_field(orders, dilations)
    print(f"receptive_field={total}")
    if args.memory:
        per_step = args.N * args.channels
        specs = [(orders[i], dilations[i], per_step) for i in range(args.layers)]
        sys.stdout.write(inference_memory_estimate(specs, elem_bytes=args.elem_bytes).to_text())
    return 0


def build_parser() -> _Parser:
    p = _Parser(prog="shiftsnn",
                description="Multiplication-free channel-wise parallel spiking neurons on CPU")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train on a synthetic temporal task")
    t.add_argument("--config", help="key=value config file")
    t.add_argument("--dump-config", action="store_true")
    for key in ("task", "dilations", "grad_mode", "optimizer"):
        t.add_argument(f"--{key.replace('_', '-')}", dest=key)
    for key in ("lag", "T", "train_size", "test_size", "channels", "layers",
                "order", "quantized", "epochs", "batch_size", "seed"):
        t.add_argument(f"--{key.replace('_', '-')}", dest=key, type=int)
    t.add_argument("--learning-rate", dest="learning_rate", type=float)
    t.add_argument("--autoselect", action="store_true",
                   help="run the engine/layout benchmark before training")
    t.add_argument("--m", type=int, default=2, help="benchmark repetitions parameter")
    t.add_argument("--out", help="model file to write")
    t.add_argument("--metrics-out", help="metrics text file to write")
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("quantize", help="fold normalization and quantize weights to powers of two")
    q.add_argument("model")
    q.add_argument("out")
    q.set_defaults(func=cmd_quantize)

    i = sub.add_parser("infer", help="run a model on an activation tensor file")
    i.add_argument("model")
    i.add_argument("input")
    i.add_argument("--out", help="predictions (text) or spike tensor file")
    i.add_argument("--compare-model", help="second model; report output agreement")
    i.set_defaults(func=cmd_infer)

    b = sub.add_parser("bench", help="benchmark engines/layouts and pick the fastest")
    b.add_argument("--T", type=int, default=16)
    b.add_argument("--N", type=int, default=8)
    b.add_argument("--channels", type=int, default=16)
    b.add_argument("--layers", type=int, default=3)
    b.add_argument("--order", type=int, default=2)
    b.add_argument("--dilations", default="sawtooth")
    b.add_argument("--quantized", type=int, default=0)
    b.add_argument("--m", type=int, default=5)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--sweep", help="comma-separated T values, e.g. 2,4,8,16,32")
    b.set_defaults(func=cmd_bench)

    e = sub.add_parser("energy", help="energy report from counts or a measured run")
    e.add_argument("--counts-file", help="key=value operation counts")
    e.add_argument("--model")
    e.add_argument("--input")
    e.set_defaults(func=cmd_energy)

    r = sub.add_parser("rf", help="receptive field (and optional memory window) table")
    r.add_argument("--layers", type=int, default=3)
    r.add_argument("--order", type=int, default=2)
    r.add_argument("--dilations", default="sawtooth")
    r.add_argument("--memory", action="store_true")
    r.add_argument("--N", type=int, default=1)
    r.add_argument("--channels", type=int, default=1)
    r.add_argument("--elem-bytes", type=int, default=4)
    r.set_defaults(func=cmd_rf)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except TrainDivergedError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (ModelFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
