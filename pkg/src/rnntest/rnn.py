"""Minimal recurrent network engine with full state capture.

Cells (vanilla, GRU, LSTM) are written once against an ops object from
``rnntest.autodiff`` so the same arithmetic serves plain inference, state
tracing and reverse-mode gradients.

Parameter layout per layer ``l`` (``in`` is the layer input width):

* vanilla: ``layer{l}.W`` (in+E, E), ``layer{l}.b`` (E,)
* lstm: ``layer{l}.W`` (in+E, 4E), ``layer{l}.b`` (4E,); gate columns i, f, n, o
* gru: ``layer{l}.W`` (in+E, 2E) and ``layer{l}.b`` (2E,) for update/reset,
  ``layer{l}.W_cand`` (in+E, E) and ``layer{l}.b_cand`` (E,) for the candidate
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from rnntest.autodiff import NUMPY_OPS, Tape, log_softmax
from rnntest.errors import ConfigurationError, InputError

CELL_KINDS = ("vanilla", "gru", "lstm")
OUTPUT_HEADS = ("softmax-per-step", "softmax-final")


@dataclass(frozen=True)
class RnnConfig:
    cell_kind: str
    num_layers: int
    state_size: int
    input_dim: int
    vocab_size: Optional[int] = None
    embedding_dim: Optional[int] = None
    output_head: str = "softmax-per-step"
    num_classes: Optional[int] = None

    def __post_init__(self):
        if self.cell_kind not in CELL_KINDS:
            raise ConfigurationError(f"unknown cell_kind {self.cell_kind!r}")
        if self.output_head not in OUTPUT_HEADS:
            raise ConfigurationError(f"unknown output_head {self.output_head!r}")
        for name in ("num_layers", "state_size", "input_dim"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if self.vocab_size is not None:
            if self.embedding_dim is None or self.embedding_dim != self.input_dim:
                raise ConfigurationError("discrete models need embedding_dim == input_dim")
            if self.vocab_size < 2:
                raise ConfigurationError("vocab_size must be at least 2")
        elif self.embedding_dim is not None:
            raise ConfigurationError("embedding_dim given without vocab_size")
        if self.output_head == "softmax-final":
            if not self.num_classes or self.num_classes < 2:
                raise ConfigurationError("softmax-final needs num_classes >= 2")
        elif self.vocab_size is None and not self.num_classes:
            raise ConfigurationError("per-step head needs vocab_size or num_classes")

    @property
    def discrete(self):
        return self.vocab_size is not None

    @property
    def output_size(self):
        if self.output_head == "softmax-final" or self.vocab_size is None:
            return self.num_classes
        return self.vocab_size

    def param_shapes(self):
        """Name -> shape of every parameter this config declares."""
        e = self.state_size
        gates = {"vanilla": 1, "lstm": 4, "gru": 2}[self.cell_kind]
        shapes = {}
        if self.discrete:
            shapes["embedding"] = (self.vocab_size, self.embedding_dim)
        for layer in range(self.num_layers):
            width = (self.input_dim if layer == 0 else e) + e
            shapes[f"layer{layer}.W"] = (width, gates * e)
            shapes[f"layer{layer}.b"] = (gates * e,)
            if self.cell_kind == "gru":
                shapes[f"layer{layer}.W_cand"] = (width, e)
                shapes[f"layer{layer}.b_cand"] = (e,)
        shapes["output.W"] = (e, self.output_size)
        shapes["output.b"] = (self.output_size,)
        return shapes


def init_params(config, seed, scale=0.1):
    """Uniform(-scale, scale) initialisation from a seeded generator."""
    rng = np.random.default_rng(seed)
    return {name: rng.uniform(-scale, scale, size=shape)
            for name, shape in config.param_shapes().items()}


def check_params(config, params):
    expected = config.param_shapes()
    missing = set(expected) - set(params)
    if missing:
        raise ConfigurationError(f"missing parameters: {sorted(missing)}")
    for name, shape in expected.items():
        if np.shape(params[name]) != shape:
            raise ConfigurationError(f"{name} has shape {np.shape(params[name])}, expected {shape}")


def layer_params(params, layer):
    prefix = f"layer{layer}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# -- cells -------------------------------------------------------------------

def _lstm(ops, p, x, h, c):
    e = ops.value(h).shape[1]
    z = ops.add(ops.matmul(ops.concat([x, h], axis=1), p["W"]), p["b"])
    i = ops.sigmoid(ops.cols(z, 0, e))
    f = ops.sigmoid(ops.cols(z, e, 2 * e))
    n = ops.tanh(ops.cols(z, 2 * e, 3 * e))
    o = ops.sigmoid(ops.cols(z, 3 * e, 4 * e))
    c_new = ops.add(ops.mul(f, c), ops.mul(i, n))
    h_new = ops.mul(o, ops.tanh(c_new))
    return h_new, c_new


def _vanilla(ops, p, x, h):
    return ops.tanh(ops.add(ops.matmul(ops.concat([x, h], axis=1), p["W"]), p["b"]))


def _gru(ops, p, x, h):
    e = ops.value(h).shape[1]
    zr = ops.sigmoid(ops.add(ops.matmul(ops.concat([x, h], axis=1), p["W"]), p["b"]))
    z = ops.cols(zr, 0, e)
    r = ops.cols(zr, e, 2 * e)
    n = ops.tanh(ops.add(ops.matmul(ops.concat([x, ops.mul(r, h)], axis=1), p["W_cand"]), p["b_cand"]))
    # (1 - z) * n + z * h
    return ops.add(n, ops.mul(z, ops.sub(h, n)))


def _check_step_shapes(p, x, h, gates):
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ConfigurationError("x_t and h_prev must be (B, in) and (B, E) with equal B")
    e = h.shape[1]
    if p["W"].shape != (x.shape[1] + e, gates * e) or p["b"].shape != (gates * e,):
        raise ConfigurationError(f"cell weights do not match input width {x.shape[1]} and state size {e}")


def lstm_cell_step(params_l, x_t, h_prev, c_prev):
    """One LSTM step; returns ``(h, c)``."""
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    _check_step_shapes(params_l, x_t, h_prev, 4)
    if c_prev.shape != h_prev.shape:
        raise ConfigurationError("c_prev must match h_prev")
    return _lstm(NUMPY_OPS, params_l, x_t, h_prev, c_prev)


def vanilla_cell_step(params_l, x_t, h_prev):
    """One tanh RNN step."""
    x_t, h_prev = np.asarray(x_t, dtype=np.float64), np.asarray(h_prev, dtype=np.float64)
    _check_step_shapes(params_l, x_t, h_prev, 1)
    return _vanilla(NUMPY_OPS, params_l, x_t, h_prev)


def gru_cell_step(params_l, x_t, h_prev):
    """One GRU step."""
    x_t, h_prev = np.asarray(x_t, dtype=np.float64), np.asarray(h_prev, dtype=np.float64)
    _check_step_shapes(params_l, x_t, h_prev, 2)
    e = h_prev.shape[1]
    if params_l["W_cand"].shape != (x_t.shape[1] + e, e):
        raise ConfigurationError("candidate weights do not match")
    return _gru(NUMPY_OPS, params_l, x_t, h_prev)


# -- traces and results ------------------------------------------------------

@dataclass
class StateTrace:
    """Every hidden (and, for LSTM, cell) state of one forward pass.

    ``hidden`` and ``cell`` have shape (T, L, B, E). Positions with
    ``t >= step_lengths[b]`` are padding.
    """

    hidden: np.ndarray
    cell: Optional[np.ndarray]
    step_lengths: np.ndarray

    @property
    def shape(self):
        return self.hidden.shape

    def valid_mask(self):
        """(T, B) boolean mask of real (non-padding) steps."""
        t = self.hidden.shape[0]
        return np.arange(t)[:, None] < self.step_lengths[None, :]


@dataclass
class ForwardResult:
    logits: np.ndarray
    trace: Optional[StateTrace]
    loss: Optional[float] = None


class GraphContext:
    """State handles for one unrolled pass, used to build objectives.

    Values are plain arrays under ``NUMPY_OPS`` and ``Var`` nodes on a tape.
    """

    def __init__(self, config, ops, hidden, cell, logits, step_lengths, inputs):
        self.config = config
        self.ops = ops
        self._hidden = hidden
        self._cell = cell
        self.logits = logits
        self.step_lengths = step_lengths
        self.inputs = inputs

    @property
    def num_steps(self):
        return len(self._hidden)

    @property
    def batch_size(self):
        return len(self.step_lengths)

    @property
    def num_layers(self):
        return self.config.num_layers

    @property
    def has_cell(self):
        return self._cell is not None

    def hidden(self, t, layer):
        return self._hidden[t][layer]

    def cell(self, t, layer):
        if self._cell is None:
            raise ConfigurationError(f"{self.config.cell_kind} model has no cell states")
        return self._cell[t][layer]

    def trace(self):
        val = self.ops.value
        hidden = np.array([[val(h) for h in row] for row in self._hidden])
        cell = None
        if self._cell is not None:
            cell = np.array([[val(c) for c in row] for row in self._cell])
        return StateTrace(hidden, cell, np.asarray(self.step_lengths))


def _unroll(config, params, xs, step_lengths, ops):
    """Run all layers over per-step inputs ``xs`` (list of (B, in))."""
    batch = ops.value(xs[0]).shape[0]
    e = config.state_size
    zeros = ops.const(np.zeros((batch, e)))
    layers = [layer_params(params, layer) for layer in range(config.num_layers)]
    h = [zeros] * config.num_layers
    c = [zeros] * config.num_layers
    hidden, cell = [], []
    for x in xs:
        inp = x
        for layer, p in enumerate(layers):
            if config.cell_kind == "lstm":
                h[layer], c[layer] = _lstm(ops, p, inp, h[layer], c[layer])
            elif config.cell_kind == "gru":
                h[layer] = _gru(ops, p, inp, h[layer])
            else:
                h[layer] = _vanilla(ops, p, inp, h[layer])
            inp = h[layer]
        hidden.append(list(h))
        if config.cell_kind == "lstm":
            cell.append(list(c))

    if config.output_head == "softmax-final":
        lengths = np.asarray(step_lengths)
        n = len(xs)
        if np.all(lengths == n):
            top = hidden[-1][-1]
        else:
            top = None
            for t in range(n):
                pick = ops.const((lengths == t + 1).astype(np.float64)[:, None])
                term = ops.mul(hidden[t][-1], pick)
                top = term if top is None else ops.add(top, term)
        logits = ops.add(ops.matmul(top, params["output.W"]), params["output.b"])
    else:
        tops = ops.concat([row[-1] for row in hidden], axis=0)
        logits = ops.add(ops.matmul(tops, params["output.W"]), params["output.b"])
    return GraphContext(config, ops, hidden, cell if config.cell_kind == "lstm" else None,
                        logits, np.asarray(step_lengths), xs)


def _resolve_lengths(lengths, batch, steps):
    if lengths is None:
        return np.full(batch, steps, dtype=np.int64)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (batch,) or np.any(lengths < 1) or np.any(lengths > steps):
        raise InputError("step_lengths must be in [1, T] for every batch item")
    return lengths


def embed(config, params, ids):
    """Look up embeddings for token ids (B, T) -> (B, T, D)."""
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise InputError("token ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= config.vocab_size):
        raise InputError(f"token id outside [0, {config.vocab_size})")
    return params["embedding"][ids]


def _as_embedded(config, params, inputs):
    if config.discrete:
        inputs = np.asarray(inputs)
        if inputs.ndim != 2:
            raise InputError("discrete input must be (B, T) token ids")
        return embed(config, params, inputs)
    inputs = np.asarray(inputs, dtype=np.float64)
    if inputs.ndim != 3 or inputs.shape[2] != config.input_dim:
        raise InputError(f"continuous input must be (B, T, {config.input_dim})")
    return inputs


def target_weights(config, targets, step_lengths, steps):
    """Flattened labels and per-row weights of the mean training loss."""
    targets = np.asarray(targets)
    if config.output_head == "softmax-final":
        return targets.astype(np.int64), np.full(len(targets), 1.0 / len(targets))
    batch = len(step_lengths)
    valid = (np.arange(steps)[:, None] < step_lengths[None, :]).astype(np.float64)
    # rows are time-major: row t * B + b
    labels = targets.T.reshape(-1).astype(np.int64)
    weights = valid.reshape(-1) / valid.sum()
    assert labels.shape == (steps * batch,)
    return labels, weights


def _head_shape(config, logits, steps, batch):
    if config.output_head == "softmax-final":
        return logits
    return logits.reshape(steps, batch, -1)


def forward(config, params, inputs, targets=None, lengths=None, trace=True, embedded=None):
    """Batched forward pass.

    ``inputs`` is (B, T) token ids or (B, T, in) reals. Returns logits of
    shape (T, B, V) for the per-step head or (B, K) for the final head,
    the state trace when ``trace`` is set, and the mean cross-entropy when
    ``targets`` are given. ``embedded`` bypasses the embedding lookup.
    """
    x = _as_embedded(config, params, inputs) if embedded is None else np.asarray(embedded, dtype=np.float64)
    batch, steps = x.shape[:2]
    step_lengths = _resolve_lengths(lengths, batch, steps)
    ctx = _unroll(config, params, [x[:, t, :] for t in range(steps)], step_lengths, NUMPY_OPS)
    loss = None
    if targets is not None:
        labels, weights = target_weights(config, targets, step_lengths, steps)
        if labels.min() < 0 or labels.max() >= config.output_size:
            raise InputError("target outside the output range")
        loss = float(NUMPY_OPS.softmax_xent(ctx.logits, labels, weights))
    return ForwardResult(_head_shape(config, ctx.logits, steps, batch),
                         ctx.trace() if trace else None, loss)


def evaluate_objective(config, params, embedded, objective, lengths=None):
    """Value of ``objective(ctx)`` at an embedded/continuous input (B, T, in)."""
    x = np.asarray(embedded, dtype=np.float64)
    step_lengths = _resolve_lengths(lengths, x.shape[0], x.shape[1])
    ctx = _unroll(config, params, [x[:, t, :] for t in range(x.shape[1])], step_lengths, NUMPY_OPS)
    return float(objective(ctx))


def gradient_wrt_embedded(config, params, embedded, objective, lengths=None):
    """Gradient of ``objective(ctx)`` w.r.t. an embedded/continuous input.

    Returns ``(grad, value)`` where ``grad`` has the input's shape (B, T, in).
    """
    x = np.asarray(embedded, dtype=np.float64)
    batch, steps = x.shape[:2]
    step_lengths = _resolve_lengths(lengths, batch, steps)
    tape = Tape()
    leaves = [tape.leaf(x[:, t, :]) for t in range(steps)]
    consts = {k: tape.const(v) for k, v in params.items()}
    ctx = _unroll(config, consts, leaves, step_lengths, tape)
    out = objective(ctx)
    value = float(tape.value(out))
    tape.backward(out)
    grad = np.stack([leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
                     for leaf in leaves], axis=1)
    return grad, value


def gradient_wrt_input(config, params, inputs, objective, lengths=None):
    """Gradient of a scalar objective w.r.t. the (embedded) input.

    For discrete models the gradient is taken with respect to the embedding
    vectors of the given tokens, never the ids. ``objective`` receives a
    ``GraphContext`` and returns a scalar built from ``ctx.ops``.
    """
    x = _as_embedded(config, params, inputs)
    return gradient_wrt_embedded(config, params, x, objective, lengths)[0]


def token_log_probs(config, params, inputs, targets, lengths=None):
    """Per-step log-probability of each target token, shape (B, T)."""
    res = forward(config, params, inputs, lengths=lengths, trace=False)
    logp = log_softmax(res.logits)  # (T, B, V)
    targets = np.asarray(targets)
    t_idx, b_idx = np.meshgrid(np.arange(targets.shape[1]), np.arange(targets.shape[0]), indexing="ij")
    return logp[t_idx, b_idx, targets.T].T


@dataclass
class Model:
    """A config, its parameters and, for text models, the token names."""

    config: RnnConfig
    params: Dict[str, np.ndarray]
    vocab: Optional[list] = None
    meta: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        check_params(self.config, self.params)
        if self.vocab is not None and len(self.vocab) != self.config.vocab_size:
            raise ConfigurationError("vocabulary size does not match config")

    def forward(self, inputs, targets=None, lengths=None, trace=True):
        return forward(self.config, self.params, inputs, targets, lengths, trace)

    def embed(self, inputs):
        return _as_embedded(self.config, self.params, inputs)

    def gradient(self, embedded, objective: Callable, lengths=None):
        return gradient_wrt_embedded(self.config, self.params, embedded, objective, lengths)

    def objective_value(self, embedded, objective: Callable, lengths=None):
        return evaluate_objective(self.config, self.params, embedded, objective, lengths)
