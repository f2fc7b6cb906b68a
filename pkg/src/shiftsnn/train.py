"""Desk-scale surrogate-gradient training and gradient certification.

Tasks are synthetic binary streams whose labels depend on time positions a
configurable lag apart, so a model can only solve them if its receptive
field covers the lag.  Training is quantization-aware when the layers are
quantized: forwards always spike from the quantized fused weights while the
float shadow weights receive straight-through gradients.

``finite_diff_check`` certifies analytic gradients against central
differences of the smooth-spike loss surface.  Parameters feeding a live
quantizer are reported separately instead of failing the check: their
straight-through gradients intentionally disagree with the locally flat
numeric ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .neuron import NeuronConfig, WeightSharing, sawtooth_schedule
from .network import LinearLayer, Mode, Param, ReadoutLayer, SpikingLayer, SpikingNet
from .quant import QuantGradMode
from .surrogate import SurrogateConfig
from .tensor import Layout, TemporalTensor


class TrainDivergedError(RuntimeError):
    """Loss became non-finite (the known quantized-gradient collapse mode)."""


@dataclass
class ToyTask:
    name: str = "delayed_xor"   # or "temporal_parity"
    lag: int = 6
    T: int = 20
    train_size: int = 1024
    test_size: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.name not in ("delayed_xor", "temporal_parity"):
            raise ValueError(f"unknown task {self.name!r}")
        if not 0 <= self.lag < self.T:
            raise ValueError("lag must be in [0, T)")


@dataclass
class TrainConfig:
    optimizer: str = "adam"     # "sgd" or "adam"
    learning_rate: float = 5e-3
    epochs: int = 30
    batch_size: int = 64
    grad_mode: QuantGradMode = QuantGradMode.WHOLE_STE
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochMetrics:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float


def metrics_to_text(history: list[EpochMetrics]) -> str:
    lines = ["epoch loss train_acc test_acc"]
    for m in history:
        lines.append(f"{m.epoch} {m.loss:.6f} {m.train_acc:.4f} {m.test_acc:.4f}")
    return "\n".join(lines) + "\n"


def make_task_data(task: ToyTask):
    """Binary streams plus labels; returns (x_train, y_train, x_test, y_test).

    delayed_xor: label = x[T-1-lag] XOR x[T-1]; with lag 0 this degenerates
    to a constant, so lag 0 means the current-step copy task label = x[T-1].
    temporal_parity: label = XOR over the last lag+1 steps.
    """
    rng = np.random.default_rng(task.seed)
    n = task.train_size + task.test_size
    x = rng.integers(0, 2, size=(n, task.T)).astype(np.float64)
    if task.name == "delayed_xor":
        if task.lag == 0:
            y = x[:, -1]
        else:
            y = np.logical_xor(x[:, -1 - task.lag], x[:, -1])
    else:
        y = x[:, task.T - 1 - task.lag:].astype(np.int64).sum(axis=1) % 2
    y = np.asarray(y, dtype=np.int64)
    return (x[: task.train_size], y[: task.train_size],
            x[task.train_size:], y[task.train_size:])


def batch_to_tensor(xb: np.ndarray) -> TemporalTensor:
    """(batch, T) stream matrix -> time-first (T, batch, 1) tensor."""
    return TemporalTensor(xb.T[:, :, None].copy(), Layout.TIME_FIRST)


def build_task_net(channels: int = 24, num_layers: int = 3, order: int = 2,
                   dilations: list[int] | None = None, classes: int = 2,
                   quantized: bool = True,
                   grad_mode: QuantGradMode = QuantGradMode.WHOLE_STE,
                   weight_sharing: WeightSharing = WeightSharing.CHANNEL_WISE,
                   surrogate: SurrogateConfig | None = None,
                   seed: int = 0) -> SpikingNet:
    """Input synapse, a stack of spiking layers, and a class readout.

    ``dilations`` defaults to the sawtooth schedule; pass [1]*num_layers for
    the fixed-dilation baseline.
    """
    if dilations is None:
        dilations = sawtooth_schedule(num_layers)
    if len(dilations) != num_layers:
        raise ValueError("need one dilation per layer")
    rng = np.random.default_rng(seed)
    surrogate = surrogate or SurrogateConfig()
    # synapse + neuron per block: the stateless layer mixes channels, the
    # spiking layer supplies the (depthwise) temporal window
    layers: list = []
    prev = 1
    for d in dilations:
        layers.append(LinearLayer(prev, channels, rng=rng))
        cfg = NeuronConfig(channels=channels, order=order, dilation=d,
                           weight_sharing=weight_sharing, quantized=quantized,
                           grad_mode=grad_mode)
        layers.append(SpikingLayer(cfg, surrogate=surrogate, weight_init="uniform", rng=rng))
        prev = channels
    layers.append(ReadoutLayer(channels, classes, rng=rng))
    return SpikingNet(layers, Layout.TIME_FIRST)


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[Param]) -> None:
        for p in params:
            p.value[...] -= self.lr * p.grad


class Adam:
    """First/second-moment adaptive steps (decoupled weight decay omitted)."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._state: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def step(self, params: list[Param]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p in params:
            m, v = self._state.setdefault(
                id(p), (np.zeros_like(p.value), np.zeros_like(p.value))
            )
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            mh = m / (1 - b1 ** self.t)
            vh = v / (1 - b2 ** self.t)
            p.value[...] -= self.lr * mh / (np.sqrt(vh) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return SGD(cfg.learning_rate) if cfg.optimizer == "sgd" else Adam(cfg.learning_rate)


def evaluate(net: SpikingNet, x: np.ndarray, y: np.ndarray,
             batch_size: int = 256) -> float:
    """Deployment-path (float32, fused/quantized) test accuracy."""
    hits = 0
    for lo in range(0, len(x), batch_size):
        xb = batch_to_tensor(x[lo:lo + batch_size])
        hits += int(np.sum(net.predict(xb) == y[lo:lo + batch_size]))
    return hits / len(x)


def train(net: SpikingNet, task: ToyTask, cfg: TrainConfig) -> list[EpochMetrics]:
    """Minibatch gradient descent; per-epoch loss/accuracy history.

    Spiking layers set their gradient mode from the config.  A non-finite
    loss aborts with a diagnostic rather than continuing on garbage.
    """
    for layer in net.spiking_layers():
        layer.cfg.grad_mode = cfg.grad_mode
    x_train, y_train, x_test, y_test = make_task_data(task)
    opt = make_optimizer(cfg)
    rng = np.random.default_rng(cfg.seed)
    params = net.parameters()
    history: list[EpochMetrics] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x_train))
        losses, accs = [], []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            xb = batch_to_tensor(x_train[idx])
            loss, acc = net.train_step_grads(xb, y_train[idx])
            if not np.isfinite(loss):
                raise TrainDivergedError(
                    f"non-finite loss {loss} at epoch {epoch}, batch {lo // cfg.batch_size}"
                )
            opt.step(params)
            losses.append(loss)
            accs.append(acc)
        test_acc = evaluate(net, x_test, y_test)
        history.append(EpochMetrics(epoch, float(np.mean(losses)),
                                    float(np.mean(accs)), test_acc))
    return history


@dataclass
class FDReport:
    max_rel_error: float
    worst: tuple[str, tuple] | None
    passed: bool
    checked: int
    flagged_max_rel_error: float = 0.0
    flagged: int = 0
    nonfinite: list = field(default_factory=list)


def finite_diff_check(net: SpikingNet, x: TemporalTensor, labels: np.ndarray,
                      h: float = 1e-5, tol: float = 1e-4) -> FDReport:
    """Central-difference certification of every parameter gradient.

    Both sides run the smooth-spike loss (the surrogate's primitive as the
    activation), so analytic and numeric gradients target the same surface.
    If a layer quantizes inside smooth mode, its parameters' mismatches are
    reported in the flagged fields instead of failing the check.
    """
    net.train_step_grads(x, labels, mode=Mode.SMOOTH)
    analytic = {id(p): p.grad.copy() for p in net.parameters()}

    # A live quantizer breaks agreement for its own parameters and for every
    # layer upstream of it (their perturbations reach the quantizer input,
    # where the straight-through gradient and the locally flat numeric one
    # disagree).  Layers strictly after the last quantizer stay exact.
    flagged_ids = set()
    last_q = -1
    for i, layer in enumerate(net.layers):
        if isinstance(layer, SpikingLayer) and layer.cfg.quantized \
                and layer.quantize_in_smooth_mode:
            last_q = i
    for layer in net.layers[: last_q + 1]:
        flagged_ids.update(id(p) for p in layer.parameters())

    report = FDReport(max_rel_error=0.0, worst=None, passed=True, checked=0)
    for p in net.parameters():
        flat = p.value.reshape(-1)
        a_flat = analytic[id(p)].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = net.loss(x, labels, mode=Mode.SMOOTH)[0]
            flat[i] = orig - h
            lm = net.loss(x, labels, mode=Mode.SMOOTH)[0]
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            ana = a_flat[i]
            if not (np.isfinite(num) and np.isfinite(ana)):
                report.nonfinite.append((p.name, np.unravel_index(i, p.value.shape)))
                continue
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-6)
            if id(p) in flagged_ids:
                report.flagged += 1
                report.flagged_max_rel_error = max(report.flagged_max_rel_error, rel)
                continue
            report.checked += 1
            if rel > report.max_rel_error:
                report.max_rel_error = rel
                report.worst = (p.name, np.unravel_index(i, p.value.shape))
    report.passed = report.max_rel_error <= tol and not report.nonfinite
    return report
