"""SGD training for desk-scale models."""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from rnntest.autodiff import NUMPY_OPS, Tape
from rnntest.errors import InputError, TrainingError
from rnntest.rnn import _unroll, _resolve_lengths, check_params, embed, target_weights

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Inputs with their targets.

    ``inputs`` is (N, T) token ids or (N, T, in) reals; ``targets`` is
    (N, T) for per-step heads and (N,) for classifiers.
    """

    inputs: np.ndarray
    targets: np.ndarray
    lengths: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.inputs)

    def subset(self, idx):
        return Dataset(self.inputs[idx], self.targets[idx],
                       None if self.lengths is None else self.lengths[idx])

    @staticmethod
    def concat(a, b):
        if len(b) == 0:
            return a
        lengths = None
        if a.lengths is not None or b.lengths is not None:
            full = lambda d: d.lengths if d.lengths is not None else np.full(len(d), d.inputs.shape[1])
            lengths = np.concatenate([full(a), full(b)])
        return Dataset(np.concatenate([a.inputs, b.inputs]), np.concatenate([a.targets, b.targets]), lengths)


@dataclass
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 1.0
    batch_size: int = 32
    clip_norm: float = 5.0
    # multiply the rate by lr_decay after every epoch past decay_start
    lr_decay: float = 0.5
    decay_start: int = 6
    seed: int = 1


@dataclass
class EpochStats:
    epoch: int
    learning_rate: float
    train_perplexity: float
    valid_perplexity: Optional[float]
    valid_accuracy: Optional[float] = None


@dataclass
class TrainResult:
    params: dict
    history: List[EpochStats] = field(default_factory=list)


def _embed_or_pass(ops, config, params, inputs):
    steps = inputs.shape[1]
    if config.discrete:
        return [ops.gather(params["embedding"], inputs[:, t]) for t in range(steps)]
    return [ops.const(inputs[:, t, :]) for t in range(steps)]


def _batch_loss(config, params, batch, ops):
    steps = batch.inputs.shape[1]
    lengths = _resolve_lengths(batch.lengths, len(batch), steps)
    xs = _embed_or_pass(ops, config, params, batch.inputs)
    ctx = _unroll(config, params, xs, lengths, ops)
    labels, weights = target_weights(config, batch.targets, lengths, steps)
    return ctx, ops.softmax_xent(ctx.logits, labels, weights), weights


def evaluate(config, params, data, batch_size=256):
    """Perplexity (and accuracy for classifiers) of ``params`` on ``data``."""
    if len(data) == 0:
        return float("nan"), None
    if config.discrete:
        embed(config, params, data.inputs)  # range check
    nll = 0.0
    count = 0.0
    correct = 0
    for start in range(0, len(data), batch_size):
        batch = data.subset(slice(start, start + batch_size))
        ctx, loss, weights = _batch_loss(config, params, batch, NUMPY_OPS)
        rows = float(np.count_nonzero(weights))
        nll += float(loss) * rows
        count += rows
        if config.output_head == "softmax-final":
            correct += int(np.sum(ctx.logits.argmax(axis=1) == batch.targets))
    acc = correct / len(data) if config.output_head == "softmax-final" else None
    return float(np.exp(nll / count)), acc


def train(config, params, train_data, hyper, valid_data=None, callback=None):
    """Plain SGD with global-norm clipping and stepwise rate decay.

    Returns updated params and per-epoch perplexities. Raises
    ``TrainingError`` as soon as a batch loss is not finite.
    """
    check_params(config, params)
    params = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    if len(train_data) == 0:
        raise InputError("empty training set")
    rng = np.random.default_rng(hyper.seed)
    lr = hyper.learning_rate
    result = TrainResult(params)
    for epoch in range(1, hyper.epochs + 1):
        if epoch > hyper.decay_start:
            lr *= hyper.lr_decay
        order = rng.permutation(len(train_data))
        nll = 0.0
        count = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = train_data.subset(order[start:start + hyper.batch_size])
            tape = Tape()
            leaves = {k: tape.leaf(v) for k, v in params.items()}
            _, loss, weights = _batch_loss(config, leaves, batch, tape)
            value = float(loss.value)
            if not np.isfinite(value):
                raise TrainingError("loss is not finite", epoch)
            tape.backward(loss)
            grads = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = hyper.clip_norm / norm if norm > hyper.clip_norm else 1.0
            for k in params:
                params[k] = params[k] - lr * scale * grads[k]
            rows = float(np.count_nonzero(weights))
            nll += value * rows
            count += rows
        train_ppl = float(np.exp(nll / count))
        valid_ppl, valid_acc = (None, None)
        if valid_data is not None and len(valid_data):
            valid_ppl, valid_acc = evaluate(config, params, valid_data)
        stats = EpochStats(epoch, lr, train_ppl, valid_ppl, valid_acc)
        result.history.append(stats)
        log.info("epoch %d lr %.4g train ppl %.4f valid ppl %s", epoch, lr, train_ppl, valid_ppl)
        if callback is not None:
            callback(stats)
    result.params = params
    return result
