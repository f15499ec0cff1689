"""Set-based training: loss, gradient sets, schedules, optimizers, loop.

The loss couples a point term with a set term,

    (1 - tau) * cross_entropy(t, center) + (tau / epsilon) * f_radius(output),

so tau trades accuracy pressure against enclosure shrinkage and the radius
term is normalized by the input perturbation budget. The training loop
propagates whole mini-batches of input sets through one of the three
backends and updates weights from the batch-averaged gradient sets.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .attacks import fgsm_deltas_batch, fgsm_input_set
from .data import batches
from .network import (
    Linear,
    Network,
    cross_entropy,
    cross_entropy_grad,
    point_forward,
    softmax,
)
from .propagate import (
    BACKENDS,
    ForwardTrace,
    f_radius_seed,
    linf_input_set,
    output_f_radius,
    set_backward,
    set_backward_batch,
    set_forward,
    set_forward_batch,
)
from .zonotope import Zonotope, f_radius, f_radius_gradient

__all__ = [
    "ADAM_BETA1",
    "ADAM_BETA2",
    "ADAM_EPS",
    "INPUT_SET_MODES",
    "OPTIMIZERS",
    "EpochMetrics",
    "ForwardTrace",
    "OptimizerState",
    "SetLossConfig",
    "TrainConfig",
    "TrainingDivergedError",
    "apply_update",
    "build_input_set",
    "clip_global_norm",
    "init_optimizer",
    "schedule",
    "set_backward",
    "set_forward",
    "set_loss",
    "set_loss_gradient",
    "train",
]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
OPTIMIZERS = ("sgd", "adam")
INPUT_SET_MODES = ("linf", "fgsm_zonotope")


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class SetLossConfig:
    """Loss weights: tau balances the terms, epsilon normalizes the radius.

    epsilon here is the normalization constant of the radius term and must
    stay positive even for point training runs (where tau = 0 makes it
    irrelevant); the input perturbation radius itself lives in TrainConfig.
    """

    tau: float = 0.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not 0.0 <= float(self.tau) <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")
        if not float(self.epsilon) > 0.0:
            raise ValueError(f"normalization epsilon must be > 0, got {self.epsilon}")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization and scheduling knobs for the training loop.

    epsilon is the target input perturbation radius; it ramps together with
    tau after the warm-up epochs. epsilon = 0 trains on point inputs.
    """

    learning_rate: float
    epochs: int
    batch_size: int
    optimizer: str = "sgd"
    seed: int = 0
    epsilon: float = 0.0
    grad_clip_norm: float = 10.0
    warmup_epochs: int = 0
    rampup_epochs: int = 0
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay_factor: float = 0.1
    backend: str = "zonotope_full"
    input_set_mode: str = "linf"
    fgsm_attacks: int = 1

    def __post_init__(self):
        object.__setattr__(
            self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs)
        )
        if not float(self.learning_rate) > 0.0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if float(self.epsilon) < 0.0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not float(self.grad_clip_norm) > 0.0:
            raise ValueError(f"grad_clip_norm must be > 0, got {self.grad_clip_norm}")
        if self.warmup_epochs < 0 or self.rampup_epochs < 0:
            raise ValueError("warmup_epochs and rampup_epochs must be >= 0")
        if self.warmup_epochs + self.rampup_epochs > self.epochs:
            raise ValueError(
                f"warmup ({self.warmup_epochs}) + rampup ({self.rampup_epochs}) "
                f"must not exceed epochs ({self.epochs})"
            )
        if any(e < 1 for e in self.lr_decay_epochs):
            raise ValueError("lr_decay_epochs must be >= 1")
        if not float(self.lr_decay_factor) > 0.0:
            raise ValueError(f"lr_decay_factor must be > 0, got {self.lr_decay_factor}")
        if self.backend not in BACKENDS:
            raise ValueError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.input_set_mode not in INPUT_SET_MODES:
            raise ValueError(
                f"input_set_mode must be one of {INPUT_SET_MODES}, got {self.input_set_mode!r}"
            )
        if self.fgsm_attacks < 1:
            raise ValueError(f"fgsm_attacks must be >= 1, got {self.fgsm_attacks}")


def schedule(
    epoch: int, cfg: TrainConfig, loss_cfg: SetLossConfig
) -> tuple[float, float, float]:
    """Scheduled (epsilon_t, tau_t, eta_t) for a 1-indexed epoch.

    Both epsilon and tau are 0 through the warm-up epochs, ramp linearly to
    their targets across the ramp-up epochs (reaching them exactly at epoch
    warmup + rampup), and hold afterward. The learning rate is multiplied by
    the decay factor once for every decay epoch already reached.
    """
    if epoch < 1:
        raise ValueError(f"epoch must be >= 1, got {epoch}")
    decays = sum(1 for d in cfg.lr_decay_epochs if epoch >= d)
    eta = cfg.learning_rate * cfg.lr_decay_factor**decays
    if epoch <= cfg.warmup_epochs:
        fraction = 0.0
    elif epoch <= cfg.warmup_epochs + cfg.rampup_epochs:
        fraction = (epoch - cfg.warmup_epochs) / cfg.rampup_epochs
    else:
        fraction = 1.0
    return fraction * cfg.epsilon, fraction * loss_cfg.tau, eta


def build_input_set(
    x,
    mode: str,
    epsilon: float,
    net: Network | None = None,
    target=None,
    attacks: int = 1,
) -> Zonotope:
    """Input zonotope around x: an epsilon box or scaled attack directions.

    linf mode returns <x, epsilon * I>. fgsm_zonotope mode runs `attacks`
    successive FGSM steps and uses their scaled deviations as generators;
    it needs the network and the one-hot target to compute attack gradients.
    """
    x = np.asarray(x, dtype=np.float64)
    if mode == "linf":
        return linf_input_set(x, epsilon)
    if mode == "fgsm_zonotope":
        if net is None or target is None:
            raise ValueError("fgsm_zonotope input sets need net and target")
        target = np.asarray(target, dtype=np.float64)
        return fgsm_input_set(net, x, target, epsilon, attacks)
    raise ValueError(f"unknown input set mode {mode!r}")


def set_loss(t, y: Zonotope, cfg: SetLossConfig) -> float:
    """(1 - tau) * cross-entropy of the center + (tau / epsilon) * F-radius."""
    point = cross_entropy(t, y.center)
    return (1.0 - cfg.tau) * float(point) + cfg.tau / cfg.epsilon * f_radius(y)


def set_loss_gradient(t, y: Zonotope, cfg: SetLossConfig) -> Zonotope:
    """Gradient of set_loss w.r.t. the output set, as a zonotope.

    The center carries the weighted cross-entropy gradient, the generators
    the weighted F-radius gradient.
    """
    dc = (1.0 - cfg.tau) * cross_entropy_grad(t, y.center)
    dg = cfg.tau / cfg.epsilon * f_radius_gradient(y).generators
    return Zonotope(dc, dg)


@dataclass
class OptimizerState:
    """Mutable bookkeeping for apply_update (moments are per linear layer)."""

    kind: str
    clip_norm: float
    step: int = 0
    first: list = field(default_factory=list)
    second: list = field(default_factory=list)


def init_optimizer(
    net: Network, optimizer: str = "sgd", grad_clip_norm: float = 10.0
) -> OptimizerState:
    """Fresh optimizer state sized to the network's linear layers."""
    if optimizer not in OPTIMIZERS:
        raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {optimizer!r}")
    if not float(grad_clip_norm) > 0.0:
        raise ValueError(f"grad_clip_norm must be > 0, got {grad_clip_norm}")
    state = OptimizerState(optimizer, float(grad_clip_norm))
    if optimizer == "adam":
        for layer in net.layers:
            if isinstance(layer, Linear):
                state.first.append((np.zeros_like(layer.weights), np.zeros_like(layer.bias)))
                state.second.append((np.zeros_like(layer.weights), np.zeros_like(layer.bias)))
            else:
                state.first.append(None)
                state.second.append(None)
    return state


def clip_global_norm(grads: list, clip_norm: float) -> tuple[list, float]:
    """Rescale gradients so their global l2 norm is at most clip_norm.

    grads is a per-layer list of (dW, db) or None. Returns the (possibly
    rescaled) list and the pre-clip norm; the input list is returned
    unchanged when no clipping applies.
    """
    total = 0.0
    for g in grads:
        if g is None:
            continue
        dW, db = g
        total += float(np.sum(dW * dW)) + float(np.sum(db * db))
    norm = math.sqrt(total)
    if norm <= clip_norm:
        return grads, norm
    scale = clip_norm / norm
    return [None if g is None else (g[0] * scale, g[1] * scale) for g in grads], norm


def apply_update(net: Network, grads: list, state: OptimizerState, eta: float) -> Network:
    """One optimizer step in place: clip globally, then SGD or Adam.

    grads must align with net.layers ((dW, db) for linear layers, None for
    activations), as produced by the backward passes.
    """
    if len(grads) != len(net.layers):
        raise ValueError(
            f"got {len(grads)} gradient entries for {len(net.layers)} layers"
        )
    grads, _ = clip_global_norm(grads, state.clip_norm)
    state.step += 1
    for k, layer in enumerate(net.layers):
        g = grads[k]
        if g is None:
            continue
        dW, db = g
        if state.kind == "sgd":
            layer.weights = layer.weights - eta * dW
            layer.bias = layer.bias - eta * db
            continue
        mW, mb = state.first[k]
        vW, vb = state.second[k]
        mW[:] = ADAM_BETA1 * mW + (1.0 - ADAM_BETA1) * dW
        mb[:] = ADAM_BETA1 * mb + (1.0 - ADAM_BETA1) * db
        vW[:] = ADAM_BETA2 * vW + (1.0 - ADAM_BETA2) * dW * dW
        vb[:] = ADAM_BETA2 * vb + (1.0 - ADAM_BETA2) * db * db
        c1 = 1.0 - ADAM_BETA1**state.step
        c2 = 1.0 - ADAM_BETA2**state.step
        layer.weights = layer.weights - eta * (mW / c1) / (np.sqrt(vW / c2) + ADAM_EPS)
        layer.bias = layer.bias - eta * (mb / c1) / (np.sqrt(vb / c2) + ADAM_EPS)
    return net


@dataclass(frozen=True)
class EpochMetrics:
    """One epoch of the metrics log."""

    epoch: int
    epsilon: float
    tau: float
    learning_rate: float
    set_loss: float
    f_radius: float
    accuracy: float
    wall_time: float


def _batch_input_sets(net, X, T, eps_t, cfg):
    """Centers (B, d) and generators (Bg, d, q) for one mini-batch."""
    d = X.shape[1]
    if eps_t == 0.0:
        # Point sets: q = 0 keeps the forward pass on the exact center path.
        return X, np.zeros((1, d, 0))
    if cfg.input_set_mode == "linf":
        return X, eps_t * np.eye(d)[None, :, :]
    deltas = fgsm_deltas_batch(net, X, T, eps_t, cfg.fgsm_attacks)
    return X + deltas.mean(axis=2), deltas / cfg.fgsm_attacks


def train(net, dataset, cfg: TrainConfig, loss_cfg: SetLossConfig):
    """Mini-batch set-based training.

    Shuffles deterministically per epoch, builds input sets at the scheduled
    radius, propagates each batch through the configured backend, averages
    per-sample gradients, clips, and updates. Returns (trained copy of net,
    list of EpochMetrics); the input network is left untouched.
    """
    if len(dataset) == 0:
        raise ValueError("dataset is empty")
    if net.input_dim != dataset.input_dim:
        raise ValueError(
            f"network expects {net.input_dim} inputs, dataset has {dataset.input_dim}"
        )
    if net.output_dim != dataset.num_classes:
        raise ValueError(
            f"network has {net.output_dim} outputs, dataset has {dataset.num_classes} classes"
        )
    if cfg.epsilon == 0.0 and loss_cfg.tau > 0.0:
        raise ValueError(
            "tau > 0 with epsilon = 0 silently rescales the point loss; "
            "use tau = 0 for point training"
        )
    net = net.copy()
    state = init_optimizer(net, cfg.optimizer, cfg.grad_clip_norm)
    inputs = dataset.inputs
    targets = dataset.targets()
    labels = dataset.labels
    n = len(dataset)
    coeff_norm = 1.0 / loss_cfg.epsilon
    log: list[EpochMetrics] = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        eps_t, tau_t, eta_t = schedule(epoch, cfg, loss_cfg)
        loss_sum = 0.0
        radius_sum = 0.0
        for idx in batches(n, cfg.batch_size, cfg.seed, epoch):
            X = inputs[idx]
            T = targets[idx]
            # overflow after a divergent update surfaces as the typed error
            # below, not as numpy warning spam
            with np.errstate(over="ignore", invalid="ignore"):
                centers, gens = _batch_input_sets(net, X, T, eps_t, cfg)
                trace = set_forward_batch(net, centers, gens, cfg.backend)
                c_out = trace.output.m if cfg.backend == "ibp" else trace.output.c
                ce = cross_entropy(T, c_out)
                radius = output_f_radius(trace)
                sample_loss = (1.0 - tau_t) * ce + tau_t * coeff_norm * radius
            batch_loss = float(np.mean(sample_loss))
            if not math.isfinite(batch_loss):
                raise TrainingDivergedError(
                    f"non-finite training loss at epoch {epoch}: {batch_loss!r}"
                )
            seed = f_radius_seed(trace, np.full(X.shape[0], tau_t * coeff_norm))
            dc = (1.0 - tau_t) * (softmax(c_out) - T)
            if cfg.backend == "ibp":
                seed = seed._replace(m=seed.m + dc)
            else:
                seed = seed._replace(c=seed.c + dc)
            _, grads = set_backward_batch(trace, seed, input_grad=False)
            apply_update(net, grads, state, eta_t)
            loss_sum += float(np.sum(sample_loss))
            radius_sum += float(np.sum(radius))
        y, _ = point_forward(net, inputs)
        accuracy = float(np.mean(np.argmax(y, axis=1) == labels))
        log.append(
            EpochMetrics(
                epoch=epoch,
                epsilon=eps_t,
                tau=tau_t,
                learning_rate=eta_t,
                set_loss=loss_sum / n,
                f_radius=radius_sum / n,
                accuracy=accuracy,
                wall_time=time.perf_counter() - start,
            )
        )
    return net, log
