"""Euclidean-loss regression training with Nesterov momentum SGD.

Update equations (``mu`` momentum, ``lr`` learning rate, ``g`` the gradient
at the current parameters)::

    v     <- mu * v - lr * g
    theta <- theta + mu * v - lr * g

This is the reparameterised form of Nesterov's method in which the stored
parameters are the look-ahead point, so the gradient is always evaluated
where the parameters currently sit. After every step the incoming weight
rows of the maxout layer (fc2) are projected back onto the ball of radius
``maxnorm_cap``.
"""

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import DivergenceError, InvalidArgumentError, InvalidShapeError
from .layers import (
    OUTPUT_SIZE,
    FcParams,
    Network,
    conv_stages_backward,
    maxout2_backward,
    net_backward,
    net_forward,
)
from .tensor import DTYPE, hflip, make_rng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 0.03
    lr_end: float = 0.0001
    epochs: int = 1000
    batch_size: int = 32
    momentum: float = 0.9
    maxnorm_cap: float = 2.0
    seed: int = 0
    val_fraction: float = 0.2
    lr_decay: str = "geometric"
    augment: bool = True
    maxout_weighted: bool = True
    weight_std: float = 0.01
    bias_init: float = 0.1

    def __post_init__(self):
        if not 0 < self.lr_end <= self.lr_start:
            raise InvalidArgumentError(
                f"need 0 < lr_end <= lr_start, got {self.lr_end}, {self.lr_start}"
            )
        if not 0 <= self.momentum < 1:
            raise InvalidArgumentError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 < self.val_fraction < 1:
            raise InvalidArgumentError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if not self.maxnorm_cap > 0:
            raise InvalidArgumentError(f"maxnorm_cap must be positive, got {self.maxnorm_cap}")
        if self.epochs < 0 or self.batch_size < 1:
            raise InvalidArgumentError("epochs must be >= 0 and batch_size >= 1")
        if self.lr_decay not in ("geometric", "linear"):
            raise InvalidArgumentError(f"unknown lr_decay {self.lr_decay!r}")

    def to_dict(self):
        return asdict(self)


class LossRecord(NamedTuple):
    epoch: int
    train_loss: float
    val_loss: float | None
    lr: float


@dataclass
class OptimizerState:
    velocity: Network
    steps: int = field(default=0)

    @classmethod
    def zeros(cls, net):
        return cls(net.zeros_like())


def euclidean_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``.

    Works on single vectors and on N x 2304 batches; for a batch the loss is
    averaged over every element, so the gradient carries a ``1 / pred.size``
    factor.
    """
    pred = np.asarray(pred, dtype=DTYPE)
    target = np.asarray(target, dtype=DTYPE)
    if pred.shape != target.shape:
        raise InvalidShapeError(f"pred {pred.shape} and target {target.shape} differ")
    diff = pred - target
    loss = float(np.mean(diff * diff))
    return loss, (2.0 / diff.size) * diff


def lr_schedule(epoch, cfg):
    if not 0 <= epoch < cfg.epochs:
        raise InvalidArgumentError(f"epoch {epoch} outside [0, {cfg.epochs})")
    if cfg.epochs == 1 or epoch == 0:
        return cfg.lr_start
    if epoch == cfg.epochs - 1:
        return cfg.lr_end
    frac = epoch / (cfg.epochs - 1)
    if cfg.lr_decay == "linear":
        return cfg.lr_start + (cfg.lr_end - cfg.lr_start) * frac
    return cfg.lr_start * (cfg.lr_end / cfg.lr_start) ** frac


def nesterov_update(net, grads, state, lr, momentum):
    """Apply one Nesterov step to ``net`` in place; returns ``(net, state)``."""
    params = net.blocks()
    g_blocks = grads.blocks()
    v_blocks = state.velocity.blocks()
    if params.keys() != g_blocks.keys() or params.keys() != v_blocks.keys():
        raise InvalidShapeError("network, gradients and velocity have different blocks")
    for name, p in params.items():
        g, v = g_blocks[name], v_blocks[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise InvalidShapeError(f"shape mismatch in block {name}")
        v *= momentum
        v -= lr * g
        p += momentum * v - lr * g
    state.steps += 1
    net.version += 1
    return net, state


def maxnorm_project(params, cap, inplace=False):
    """Rescale every weight row whose Euclidean norm exceeds ``cap`` to norm ``cap``."""
    if not cap > 0:
        raise InvalidArgumentError(f"cap must be positive, got {cap}")
    w = params.weights if inplace else params.weights.copy()
    norms = np.sqrt(np.einsum("ij,ij->i", w, w))
    over = norms > cap
    w[over] *= (cap / norms[over])[:, None]
    if inplace:
        return params
    return FcParams(w, params.bias.copy())


def split_dataset(items, val_fraction, seed):
    """Seeded shuffle, then the first ``ceil((1 - val_fraction) * n)`` go to training."""
    items = list(items)
    if not items:
        raise InvalidArgumentError("cannot split an empty dataset")
    if not 0 < val_fraction < 1:
        raise InvalidArgumentError(f"val_fraction must be in (0, 1), got {val_fraction}")
    order = make_rng(seed).permutation(len(items))
    n_train = math.ceil(round((1 - val_fraction) * len(items), 9))
    return [items[i] for i in order[:n_train]], [items[i] for i in order[n_train:]]


def augment_mirror(sample):
    """``(image, target_map)`` -> ``[original, mirrored]``, both flipped left-right."""
    image, target = sample
    return [(image, target), (hflip(image), np.ascontiguousarray(np.asarray(target)[..., ::-1]))]


def _as_targets(targets):
    targets = np.asarray(targets, dtype=DTYPE)
    if targets.ndim == 3:
        targets = targets.reshape(targets.shape[0], -1)
    if targets.ndim != 2 or targets.shape[1] != OUTPUT_SIZE:
        raise InvalidShapeError(f"targets must be N x 48 x 48 or N x 2304, got {targets.shape}")
    return targets


def train_step(net, state, images, targets, lr, cfg):
    """One fused forward/backward/update pass on a mini-batch. Returns the batch loss.

    Equivalent to ``net_backward`` + :func:`nesterov_update` +
    :func:`maxnorm_project` on fc2, but streams the fc weights once.
    """
    mu = cfg.momentum
    out, trace = net_forward(images, net, keep_trace=True)
    loss, dout = euclidean_loss(out, targets)
    vel = state.velocity

    d = maxout2_backward(dout, trace.maxout_idx)
    if net.fc2 is not None:
        d = _kernels.fc_backward_step(net.fc2, vel.fc2, trace.fc1_out, d, lr, mu, cfg.maxnorm_cap)
    d = _kernels.fc_backward_step(net.fc1, vel.fc1, trace.flat_features(), d, lr, mu)

    def step(name, dw, db):
        params, v = getattr(net, name), getattr(vel, name)
        for p, vv, g in ((params.weights, v.weights, dw), (params.bias, v.bias, db)):
            vv *= mu
            vv -= lr * g
            p += mu * vv - lr * g

    conv_stages_backward(trace, net, d, False, step)
    state.steps += 1
    net.version += 1
    return loss


def reference_step(net, state, images, targets, lr, cfg):
    """Unfused version of :func:`train_step`, built from the public operations."""
    out, trace = net_forward(images, net, keep_trace=True)
    loss, dout = euclidean_loss(out, targets)
    grads, _ = net_backward(trace, net, dout, need_input_grad=False)
    nesterov_update(net, grads, state, lr, cfg.momentum)
    if net.fc2 is not None:
        maxnorm_project(net.fc2, cfg.maxnorm_cap, inplace=True)
    return loss


def predict_raw(images, net, batch_size=32):
    """Forward a batch in chunks; returns N x 2304 raw outputs."""
    images = np.asarray(images, dtype=DTYPE)
    outs = [net_forward(images[i:i + batch_size], net)[0] for i in range(0, len(images), batch_size)]
    return np.concatenate(outs) if outs else np.empty((0, OUTPUT_SIZE))


def dataset_loss(images, targets, net, batch_size=32):
    if len(images) == 0:
        return None
    return euclidean_loss(predict_raw(images, net, batch_size), targets)[0]


class TrainResult(NamedTuple):
    network: Network
    history: list


def train(images, targets, cfg=None, callback=None):
    """Train a freshly initialised network.

    ``images`` is N x 3 x 96 x 96 (already normalised), ``targets`` N x 48 x 48
    (or N x 2304) saliency maps in [0, 1]. The data is split into training and
    validation parts, the training part is doubled by mirroring, and each epoch
    runs shuffled mini-batches at that epoch's learning rate.

    ``callback(step, net)`` is invoked after every optimizer step.
    """
    cfg = cfg or TrainConfig()
    images = np.asarray(images, dtype=DTYPE)
    if len(images) == 0:
        raise InvalidArgumentError("cannot train on an empty dataset")
    targets = _as_targets(targets)
    if len(images) != len(targets):
        raise InvalidArgumentError(f"{len(images)} images but {len(targets)} targets")

    net = Network.initialize(cfg.seed, cfg.weight_std, cfg.bias_init, cfg.maxout_weighted)
    history = []
    if cfg.epochs == 0:
        return TrainResult(net, history)

    train_idx, val_idx = split_dataset(range(len(images)), cfg.val_fraction, cfg.seed)
    x_train, y_train = images[train_idx], targets[train_idx]
    if cfg.augment:
        x_train = np.concatenate([x_train, hflip(x_train)])
        y_flip = y_train.reshape(-1, 48, 48)[..., ::-1].reshape(len(y_train), -1)
        y_train = np.concatenate([y_train, y_flip])
    x_val, y_val = images[val_idx], targets[val_idx]

    state = OptimizerState.zeros(net)
    rng = make_rng(cfg.seed + 1)
    n = len(x_train)
    for epoch in range(cfg.epochs):
        lr = lr_schedule(epoch, cfg)
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = np.sort(order[start:start + cfg.batch_size])
            loss = train_step(net, state, x_train[batch], y_train[batch], lr, cfg)
            if not math.isfinite(loss):
                raise DivergenceError(epoch, loss)
            total += loss * len(batch)
            if callback is not None:
                callback(state.steps, net)
        train_loss = total / n
        val_loss = dataset_loss(x_val, y_val, net)
        if val_loss is not None and not math.isfinite(val_loss):
            raise DivergenceError(epoch, val_loss)
        history.append(LossRecord(epoch, train_loss, val_loss, lr))
        logger.debug("epoch %d lr %.6g train %.6g val %s", epoch, lr, train_loss, val_loss)
    return TrainResult(net, history)


def write_loss_log(history, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LossRecord._fields)
        for rec in history:
            writer.writerow(
                [rec.epoch, repr(rec.train_loss), "" if rec.val_loss is None else repr(rec.val_loss), repr(rec.lr)]
            )


def read_loss_log(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            LossRecord(
                int(row["epoch"]),
                float(row["train_loss"]),
                float(row["val_loss"]) if row["val_loss"] else None,
                float(row["lr"]),
            )
            for row in reader
        ]
