"""Field network, reverse-mode gradients, and the training loop.

The network is a small tanh MLP (default 3 hidden layers of 128) taking
features ``(x_t, t, log t)`` and regressing the *time-scaled* velocity
``t * F`` (the displacement ``x_t - x0`` for the linear family).  The raw
target ``(x_t - x0) / t`` is unbounded near the time floor; scaling it by
``t`` is a loss-equivalent reweighting and the field adapter divides by
``t`` at evaluation.

Everything runs in float64 numpy with hand-written backprop, which keeps
training bitwise reproducible given ``(seed, config)`` and lets gradients
be checked against finite differences to tight tolerances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInput, NumericFault
from .rng import stream
from .sampler import PriorSpec, TrainingBatch, TrainingPair, sample_training_batch
from .trajectory import Family, TrajectorySpec

CHECKPOINT_FORMAT_VERSION = "1.0"


@dataclass
class FieldNet:
    """Feed-forward network: tanh hidden layers, identity output."""

    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def create(cls, widths: Sequence[int], rng: np.random.Generator) -> "FieldNet":
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise InvalidInput(f"bad width chain {widths}")
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            scale = 1.0 / math.sqrt(fan_in)
            weights.append(rng.uniform(-scale, scale, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(widths=widths, weights=weights, biases=biases)

    @classmethod
    def default_widths(cls, dimension: int, hidden: int = 128, depth: int = 3) -> list[int]:
        return [dimension + 2] + [hidden] * depth + [dimension]

    @property
    def dimension(self) -> int:
        return self.widths[-1]

    def parameters(self):
        for w, b in zip(self.weights, self.biases):
            yield w
            yield b

    def check_finite(self):
        for p in self.parameters():
            if not np.all(np.isfinite(p)):
                raise NumericFault("network parameters are non-finite")

    def features(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = np.broadcast_to(np.asarray(t, dtype=float), (x.shape[0],))
        if np.any(t <= 0.0):
            raise InvalidInput("time features need t > 0")
        return np.concatenate([x, t[:, None], np.log(t)[:, None]], axis=1)

    def forward(self, x: np.ndarray, t) -> np.ndarray:
        """Network output for states ``x`` (B, d) at times ``t`` (B,) or scalar."""
        self.check_finite()
        single = np.asarray(x).ndim == 1
        h = self.features(x, t)
        if h.shape[1] != self.widths[0]:
            raise InvalidInput(
                f"feature width {h.shape[1]} does not match input width {self.widths[0]}"
            )
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
        return h[0] if single else h

    def _forward_cached(self, feats: np.ndarray):
        acts = [feats]
        pre = []
        h = feats
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = np.tanh(z) if i < last else z
            acts.append(h)
        return acts, pre

    def clone(self) -> "FieldNet":
        return FieldNet(
            widths=list(self.widths),
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def _as_batch(batch) -> TrainingBatch:
    if isinstance(batch, TrainingBatch):
        return batch
    pairs = list(batch)
    if not pairs:
        raise InvalidInput("batch must be non-empty")
    if not all(isinstance(p, TrainingPair) for p in pairs):
        raise InvalidInput("batch must hold TrainingPair items")
    return TrainingBatch(
        x0=np.stack([p.x0 for p in pairs]),
        t=np.asarray([p.t for p in pairs]),
        x_t=np.stack([p.x_t for p in pairs]),
        target=np.stack([p.target for p in pairs]),
    )


def loss_and_grad(net: FieldNet, batch) -> tuple[float, list[np.ndarray]]:
    """Mean squared error against time-scaled targets, with exact gradients.

    Returns ``(loss, grads)`` where ``grads`` interleaves weight and bias
    gradients in the order of ``net.parameters()``.
    """
    b = _as_batch(batch)
    if len(b) == 0:
        raise InvalidInput("batch must be non-empty")
    if not np.all(np.isfinite(b.target)):
        raise InvalidInput("targets must be finite")
    y = b.target * b.t[:, None]  # time-scaled regression target
    feats = net.features(b.x_t, b.t)
    acts, pre = net._forward_cached(feats)
    out = acts[-1]
    resid = out - y
    n_terms = resid.size
    loss = float(np.sum(resid * resid) / n_terms)

    grads: list[np.ndarray] = []
    delta = 2.0 * resid / n_terms
    last = len(net.weights) - 1
    grad_w = [None] * len(net.weights)
    grad_b = [None] * len(net.weights)
    for i in range(last, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ net.weights[i].T) * (1.0 - np.tanh(pre[i - 1]) ** 2)
    for w, bias in zip(grad_w, grad_b):
        grads.append(w)
        grads.append(bias)
    return loss, grads


@dataclass
class OptimState:
    """Adam accumulators plus the step/epoch learning-rate schedule."""

    step: int = 0
    m: list = dataclass_field(default_factory=list)
    v: list = dataclass_field(default_factory=list)
    lr_initial: float = 1e-4
    lr_decay: float = 0.8
    lr_decay_epochs: int = 3
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def learning_rate(self, epoch: int) -> float:
        """Schedule: initial rate times ``lr_decay`` every ``lr_decay_epochs``."""
        return self.lr_initial * self.lr_decay ** (epoch // self.lr_decay_epochs)

    def update(self, net: FieldNet, grads: list[np.ndarray], lr: float):
        params = list(net.parameters())
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step += 1
        b1c = 1.0 - self.beta1**self.step
        b2c = 1.0 - self.beta2**self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


@dataclass(frozen=True)
class TrainerConfig:
    steps: int = 4000
    batch_size: int = 32
    lr: float = 1e-4
    lr_decay: float = 0.8
    lr_decay_epochs: int = 3
    val_fraction: float = 0.1
    val_every: int = 1000
    val_size: int = 512
    hidden: int = 128
    depth: int = 3
    jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidInput("steps and batch_size must be >= 1")
        if self.lr <= 0.0 or not (0.0 < self.lr_decay <= 1.0):
            raise InvalidInput("need lr > 0 and 0 < lr_decay <= 1")
        if not (0.0 <= self.val_fraction < 1.0):
            raise InvalidInput("val_fraction must be in [0, 1)")


@dataclass
class TrainLog:
    steps: list = dataclass_field(default_factory=list)
    epochs: list = dataclass_field(default_factory=list)
    lrs: list = dataclass_field(default_factory=list)
    losses: list = dataclass_field(default_factory=list)
    val_steps: list = dataclass_field(default_factory=list)
    val_losses: list = dataclass_field(default_factory=list)


@dataclass
class TrainResult:
    net: FieldNet          # best-validation checkpoint
    final_net: FieldNet    # parameters at the last step
    log: TrainLog
    best_step: int
    best_val_loss: float


def train(
    dataset: np.ndarray,
    spec: TrajectorySpec,
    prior: PriorSpec,
    config: TrainerConfig,
) -> TrainResult:
    """Fit a field network on a dataset of points, shape (n, d).

    Keeps the checkpoint with the lowest validation loss (evaluated every
    ``val_every`` steps on a frozen validation batch drawn from a held-out
    split).  Raises ``NumericFault`` with the diverged network attached if
    the loss goes non-finite.
    """
    data = np.atleast_2d(np.asarray(dataset, dtype=float))
    if data.size == 0:
        raise InvalidInput("training dataset must be non-empty")
    if data.shape[1] != spec.dimension:
        raise InvalidInput("dataset dimension does not match the spec")
    n = data.shape[0]
    perm = stream(config.seed, "split").permutation(n)
    n_val = int(round(config.val_fraction * n))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx = perm
    train_points = data[train_idx]

    net = FieldNet.create(
        FieldNet.default_widths(spec.dimension, config.hidden, config.depth),
        stream(config.seed, "init"),
    )
    opt = OptimState(
        lr_initial=config.lr,
        lr_decay=config.lr_decay,
        lr_decay_epochs=config.lr_decay_epochs,
        batch_size=config.batch_size,
    )
    steps_per_epoch = max(1, len(train_points) // config.batch_size)

    val_batch = None
    if len(val_idx) > 0:
        vrng = stream(config.seed, "val")
        rows = val_idx[vrng.integers(0, len(val_idx), size=config.val_size)]
        val_batch = sample_training_batch(spec, prior, data[rows], vrng)

    log = TrainLog()
    best = net.clone()
    best_step = 0
    best_val = math.inf

    def validate(step):
        nonlocal best, best_step, best_val
        if val_batch is None:
            return
        vloss, _ = loss_and_grad(net, val_batch)
        log.val_steps.append(step)
        log.val_losses.append(vloss)
        if vloss < best_val:
            best_val = vloss
            best_step = step
            best = net.clone()

    for step_index in range(config.steps):
        epoch = step_index // steps_per_epoch
        lr = opt.learning_rate(epoch)
        brng = stream(config.seed, "batch", step_index)
        rows = brng.integers(0, len(train_points), size=config.batch_size)
        x0 = train_points[rows]
        if config.jitter > 0.0:
            x0 = x0 + config.jitter * brng.standard_normal(x0.shape)
        batch = sample_training_batch(spec, prior, x0, brng)
        loss, grads = loss_and_grad(net, batch)
        if not math.isfinite(loss):
            raise NumericFault(
                f"training diverged at step {step_index}", diagnostic=net.clone()
            )
        opt.update(net, grads, lr)
        log.steps.append(step_index)
        log.epochs.append(epoch)
        log.lrs.append(lr)
        log.losses.append(loss)
        if (step_index + 1) % config.val_every == 0:
            validate(step_index + 1)
    validate(config.steps)
    if val_batch is None:
        best = net.clone()
        best_step = config.steps
        best_val = log.losses[-1] if log.losses else math.inf
    return TrainResult(
        net=best, final_net=net, log=log, best_step=best_step, best_val_loss=best_val
    )


# ---------------------------------------------------------------------------
# checkpoint container: versioned `key = value` text, weights row-major
# ---------------------------------------------------------------------------

_SPEC_FIELDS = (
    "family",
    "dimension",
    "horizon",
    "t_min",
    "curve_m",
    "overlap",
    "sigma_min",
    "sigma_max",
    "poisson_a",
    "terminal_sigma",
)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def save_checkpoint(path, net: FieldNet, spec: TrajectorySpec, optim: Optional[OptimState] = None):
    """Write a network (and optionally optimizer moments) as versioned text."""
    if spec.bridge is not None:
        raise InvalidInput("custom bridge schedules are not serializable")
    if spec.terminal_log_density is not None:
        raise InvalidInput("custom terminal densities are not serializable")
    lines = [f"format_version = {CHECKPOINT_FORMAT_VERSION}"]
    for name in _SPEC_FIELDS:
        value = getattr(spec, name)
        if isinstance(value, Family):
            value = value.value
        elif isinstance(value, float):
            value = _fmt(value)
        lines.append(f"{name} = {value}")
    lines.append("target_scaling = time")
    lines.append("layer_widths = " + ",".join(str(w) for w in net.widths))
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"W{i} = " + " ".join(_fmt(v) for v in w.ravel(order="C")))
        lines.append(f"b{i} = " + " ".join(_fmt(v) for v in b))
    if optim is not None and optim.m:
        lines.append(f"optim_step = {optim.step}")
        for i, (m, v) in enumerate(zip(optim.m, optim.v)):
            lines.append(f"m{i} = " + " ".join(_fmt(x) for x in m.ravel(order="C")))
            lines.append(f"v{i} = " + " ".join(_fmt(x) for x in v.ravel(order="C")))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[FieldNet, TrajectorySpec]:
    """Read a checkpoint; rejects unknown major format versions."""
    entries = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInput(f"malformed checkpoint line: {line!r}")
        key, _, value = line.partition("=")
        entries[key.strip()] = value.strip()
    version = entries.get("format_version")
    if version is None:
        raise InvalidInput("checkpoint missing format_version")
    major = version.split(".", 1)[0]
    if major != CHECKPOINT_FORMAT_VERSION.split(".", 1)[0]:
        raise InvalidInput(f"unsupported checkpoint major version {version}")
    try:
        widths = [int(w) for w in entries["layer_widths"].split(",")]
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            w = np.array(entries[f"W{i}"].split(), dtype=float).reshape(fan_in, fan_out)
            b = np.array(entries[f"b{i}"].split(), dtype=float)
            if b.shape != (fan_out,):
                raise InvalidInput(f"bias b{i} has wrong length")
            weights.append(w)
            biases.append(b)
        spec = TrajectorySpec(
            family=Family(entries["family"]),
            dimension=int(entries["dimension"]),
            horizon=float(entries["horizon"]),
            t_min=float(entries["t_min"]),
            curve_m=float(entries["curve_m"]),
            overlap=int(entries["overlap"]),
            sigma_min=float(entries["sigma_min"]),
            sigma_max=float(entries["sigma_max"]),
            poisson_a=float(entries["poisson_a"]),
            terminal_sigma=float(entries["terminal_sigma"]),
        )
    except KeyError as missing:
        raise InvalidInput(f"checkpoint missing field {missing}") from None
    except ValueError as bad:
        raise InvalidInput(f"checkpoint field unparsable: {bad}") from None
    net = FieldNet(widths=widths, weights=weights, biases=biases)
    net.check_finite()
    return net, spec


def gradient_check(
    net: FieldNet, batch, h: float = 1e-5
) -> float:
    """Max relative mismatch between backprop and central finite differences."""
    _, grads = loss_and_grad(net, batch)
    worst = 0.0
    params = list(net.parameters())
    for p, g in zip(params, grads):
        flat = p.ravel()
        gflat = g.ravel()
        for j in range(flat.size):
            keep = flat[j]
            flat[j] = keep + h
            lp, _ = loss_and_grad(net, batch)
            flat[j] = keep - h
            lm, _ = loss_and_grad(net, batch)
            flat[j] = keep
            fd = (lp - lm) / (2.0 * h)
            denom = max(abs(fd), abs(gflat[j]), 1e-8)
            worst = max(worst, abs(fd - gflat[j]) / denom)
    return worst
