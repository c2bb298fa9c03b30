"""Optimizer, loss assembly and the training loop.

The per-step loss is

    data + pd * sum(logit^2)            (all discrete slots)
         + beta * sum(p (1 - p))        (binary mode: pushes sign
                                         probabilities away from 1/2)
         + wd * ||W_out||^2             (output layer only)

with plain cross-entropy as the data term. Gradients accumulate into the
layers' buffers, the penalties add theirs on top, then one Adam step
updates every trainable tensor.
"""

import csv
import os
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .data import batch_iterator
from .dist import beta_penalty, probability_decay_penalty
from .errors import DivergenceError
from .layers import SoftmaxXent
from .network import STOCHASTIC_TYPES
from .tensor import (
    Rng,
    STREAM_AUGMENT,
    STREAM_DROPOUT,
    STREAM_GUMBEL,
    STREAM_NOISE,
    STREAM_SHUFFLE,
)

LOSS_CEILING = 1e8  # anything above this is treated as divergence


def make_streams(seed):
    """The named random streams one training run consumes."""
    return {
        "shuffle": Rng(seed, stream=STREAM_SHUFFLE),
        "noise": Rng(seed, stream=STREAM_NOISE),
        "dropout": Rng(seed, stream=STREAM_DROPOUT),
        "gumbel": Rng(seed, stream=STREAM_GUMBEL),
        "augment": Rng(seed, stream=STREAM_AUGMENT),
    }


def adam_update(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected adaptive-moment update, in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, entries, lr):
        self.t += 1
        for path, param, grad, _ in entries:
            if path not in self.m:
                self.m[path] = np.zeros_like(param)
                self.v[path] = np.zeros_like(param)
            adam_update(param, grad, self.m[path], self.v[path], self.t,
                        lr, self.beta1, self.beta2, self.eps)


def lr_schedule(base_lr, lr_drops, epoch):
    """Base rate divided by every divisor whose drop epoch has passed."""
    lr = base_lr
    for drop_epoch, divisor in lr_drops:
        if epoch >= drop_epoch:
            lr /= divisor
    return lr


@dataclass
class StepResult:
    loss: float
    data_loss: float
    penalty: float


@dataclass
class TrainHistory:
    columns: list
    rows: list = field(default_factory=list)
    epoch_mean_loss: list = field(default_factory=list)


def _first_bad_layer(net):
    for i, (name, layer) in enumerate(zip(net.names, net.layers)):
        if not hasattr(layer, "params"):
            continue
        arrays = list(layer.params().values()) + list(layer.grads().values())
        if any(not np.all(np.isfinite(a)) for a in arrays):
            return i, name
    return -1, ""


def train_step(net, head, x, y, cfg, opt, rngs, lr):
    """Forward, backward, penalties, one optimizer step.

    Returns the pre-update loss. Raises DivergenceError when the loss or
    any parameter stops being finite.
    """
    net.zero_grads()
    logits = net.forward(x, train=True, rngs=rngs, weight_mode="lr")
    data_loss = head.forward(logits, y)
    if np.isfinite(data_loss):
        net.backward(head.backward())

    penalty = 0.0
    for _, layer in net.slots():
        if not isinstance(layer, STOCHASTIC_TYPES):
            continue
        if cfg.probability_decay > 0.0:
            value, grads = probability_decay_penalty(layer.dist)
            penalty += cfg.probability_decay * value
            for key, g in grads.items():
                layer.grad[key] += cfg.probability_decay * g
        if cfg.mode == "binary" and cfg.beta_penalty > 0.0:
            value, grads = beta_penalty(layer.dist)
            penalty += cfg.beta_penalty * value
            for key, g in grads.items():
                layer.grad[key] += cfg.beta_penalty * g

    entries = net.param_entries()
    if cfg.weight_decay > 0.0:
        for _, param, grad, decay in entries:
            if decay:
                penalty += cfg.weight_decay * float(np.sum(param * param))
                grad += 2.0 * cfg.weight_decay * param

    loss = data_loss + penalty
    if not np.isfinite(loss) or abs(loss) > LOSS_CEILING:
        index, name = _first_bad_layer(net)
        raise DivergenceError(
            f"loss became {loss!r}" + (f" (first bad layer: {name})" if name else ""),
            layer_index=index,
        )
    opt.step(entries, lr)
    index, name = _first_bad_layer(net)
    if index >= 0:
        raise DivergenceError(f"non-finite parameters in layer {name}", layer_index=index)
    return StepResult(loss=float(loss), data_loss=float(data_loss), penalty=float(penalty))


def fit(net, train_ds, cfg, rngs, out_dir=None, start_epoch=0, opt=None,
        head=None, run_cfg=None, epoch_hook=None, augment_fn=None):
    """Train for cfg.epochs epochs, logging and checkpointing per epoch.

    The rngs dict carries the named random streams ("shuffle", "noise",
    "dropout", "gumbel", "augment"); their counters advance as training
    consumes them, which is what makes checkpoint resumption exact.
    When augment_fn is given each batch is passed through
    augment_fn(images, rngs["augment"]) before the forward pass.
    """
    opt = opt or Adam(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    head = head or SoftmaxXent()
    columns = ["epoch", "step", "loss", "lr"]
    columns += [f"entropy_{name}" for name, _ in net.slots() if net.mode != "fp"]
    history = TrainHistory(columns=columns)

    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_schedule(cfg.lr, cfg.lr_drops, epoch)
        losses = []
        steps = 0
        for step, (x, y) in enumerate(batch_iterator(train_ds, cfg.batch_size, rngs["shuffle"])):
            if augment_fn is not None:
                x = augment_fn(x, rngs["augment"])
            try:
                result = train_step(net, head, x, y, cfg, opt, rngs, lr)
            except DivergenceError as exc:
                raise DivergenceError(
                    f"epoch {epoch} step {step}: {exc}", layer_index=exc.layer_index
                ) from exc
            losses.append(result.loss)
            if step % cfg.log_every == 0:
                row = [epoch, step, result.loss, lr]
                if net.mode != "fp":
                    row += net.entropies()
                history.rows.append(row)
            steps += 1
        history.epoch_mean_loss.append(float(np.mean(losses)) if losses else float("nan"))
        if epoch_hook is not None:
            epoch_hook(epoch, net)
        if out_dir:
            save_checkpoint(
                os.path.join(out_dir, "checkpoint.bin"),
                net, opt, rngs, epoch + 1, run_cfg=run_cfg,
            )

    if out_dir:
        write_csv(os.path.join(out_dir, "train_log.csv"), history.columns, history.rows)
    return history


def format_cell(value):
    """Floats via repr so logs round-trip exactly and runs diff cleanly."""
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, columns, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
