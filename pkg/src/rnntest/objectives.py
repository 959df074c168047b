"""Scalar objectives maximised by gradient ascent on the input.

``obj1`` rewards state inconsistency: for each selected step ``t`` and every
layer it sums ``h[t-1] + c[t] - h[t]`` (the cell term only for LSTMs).
``obj2`` sums the raw values of the coverage targets. Joint kinds return
``obj1 + lambda_cov * obj2``. The baselines swap ``obj1`` for the model's
cross-entropy loss (FGSM-style) and use neuron-coverage targets
(DLFuzz-style).

Every term is built from an ops object, so the same function evaluates a
recorded trace with numpy or a live graph on a tape.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from rnntest.autodiff import NUMPY_OPS
from rnntest.coverage import CoverageConfig, select_targets
from rnntest.errors import ConfigurationError, InputError, StepSelectionError
from rnntest.rnn import forward, target_weights

log = logging.getLogger(__name__)

KINDS = ("rnn_test_adversary", "coverage_only", "rnn_test_joint",
         "fgsm_loss", "dlfuzz_joint", "random_baseline")
NEEDS_COVERAGE = {"coverage_only", "rnn_test_joint", "dlfuzz_joint"}
USES_ADVERSARY = {"rnn_test_adversary", "rnn_test_joint"}
USES_LOSS = {"fgsm_loss", "dlfuzz_joint"}
STEP_POLICIES = ("single_random_step", "k_random_steps")


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: str
    coverage: Optional[CoverageConfig] = None
    m: int = 10
    lambda_cov: float = 1.0
    step_policy: str = "single_random_step"
    k: int = 1
    selection_cadence: str = "once_per_input"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown objective kind {self.kind!r}")
        if self.kind in NEEDS_COVERAGE and self.coverage is None:
            raise ConfigurationError(f"{self.kind} needs a coverage config")
        if self.kind == "dlfuzz_joint" and self.coverage.metric != "NC":
            raise ConfigurationError("dlfuzz_joint is defined over neuron coverage (NC)")
        if self.step_policy not in STEP_POLICIES:
            raise ConfigurationError(f"unknown step policy {self.step_policy!r}")
        if self.m < 1 or self.k < 1:
            raise ConfigurationError("m and k must be positive")
        if self.selection_cadence != "once_per_input":
            raise ConfigurationError("only once_per_input target selection is supported")

    @property
    def label(self):
        """Short display name, e.g. ``rnn_test_joint[HS_C]``."""
        if self.coverage is not None and self.kind in NEEDS_COVERAGE:
            return f"{self.kind}[{self.coverage.metric}]"
        return self.kind


@dataclass
class ObjectiveValue:
    total: float
    obj1: float
    obj2: float
    selected_targets: list = field(default_factory=list)
    chosen_steps: list = field(default_factory=list)


class TraceContext:
    """Exposes a recorded ``StateTrace`` through the graph-context interface."""

    def __init__(self, trace, logits=None, config=None):
        self.ops = NUMPY_OPS
        self._trace = trace
        self.logits = logits
        self.config = config
        self.step_lengths = trace.step_lengths

    @property
    def num_steps(self):
        return self._trace.hidden.shape[0]

    @property
    def batch_size(self):
        return self._trace.hidden.shape[2]

    @property
    def num_layers(self):
        return self._trace.hidden.shape[1]

    @property
    def has_cell(self):
        return self._trace.cell is not None

    def hidden(self, t, layer):
        return self._trace.hidden[t, layer]

    def cell(self, t, layer):
        if self._trace.cell is None:
            raise ConfigurationError("trace has no cell states")
        return self._trace.cell[t, layer]


def _normalise_steps(t_list, batch):
    """Per-batch-item step lists from a flat list or a list of lists."""
    if len(t_list) and not np.isscalar(t_list[0]) and not isinstance(t_list[0], (int, np.integer)):
        if len(t_list) != batch:
            raise StepSelectionError("need one step list per batch item")
        return [list(map(int, ts)) for ts in t_list]
    return [list(map(int, t_list)) for _ in range(batch)]


def adversary_term(ctx, t_list, layers=None):
    """obj1 as an ops scalar; see ``adversary_objective``."""
    ops = ctx.ops
    per_item = _normalise_steps(t_list, ctx.batch_size)
    lengths = np.asarray(ctx.step_lengths)
    for b, ts in enumerate(per_item):
        for t in ts:
            if t < 1:
                raise StepSelectionError("step 0 has no predecessor state")
            if t >= lengths[b]:
                raise StepSelectionError(f"step {t} beyond sequence length {lengths[b]}")
    if layers is None:
        layers = range(ctx.num_layers)
    has_cell = ctx.has_cell
    total = None
    for t in sorted({t for ts in per_item for t in ts}):
        rows = np.array([t in ts for ts in per_item])
        mask = None if rows.all() else ops.const(rows.astype(np.float64)[:, None])
        for layer in layers:
            d = ops.add(ctx.hidden(t - 1, layer), ctx.cell(t, layer)) if has_cell else ctx.hidden(t - 1, layer)
            d = ops.sub(d, ctx.hidden(t, layer))
            if mask is not None:
                d = ops.mul(d, mask)
            s = ops.sum(d)
            total = s if total is None else ops.add(total, s)
    return total if total is not None else ops.const(0.0)


def adversary_objective(trace, t_list, layers=None):
    """Sum over selected steps and layers of ``h[t-1] + c[t] - h[t]``.

    Elements and batch items are reduced by summation; the cell term is
    omitted for models without cell states.
    """
    return float(adversary_term(TraceContext(trace), t_list, layers))


def coverage_term(ctx, targets):
    """obj2 as an ops scalar: the sum of the targeted state values."""
    ops = ctx.ops
    if not targets:
        return ops.const(0.0)
    groups = {}
    for ref in targets:
        groups.setdefault((ref.t, ref.l, ref.which), []).append((ref.b, ref.e))
    total = None
    for (t, layer, which), cells in sorted(groups.items()):
        state = ctx.cell(t, layer) if which == "cell" else ctx.hidden(t, layer)
        weights = np.zeros(ops.value(state).shape)
        for b, e in cells:
            weights[b, e] += 1.0
        s = ops.sum(ops.mul(state, ops.const(weights)))
        total = s if total is None else ops.add(total, s)
    return total


def coverage_objective(trace, targets):
    """Sum of the raw values of ``targets`` in ``trace``; 0 for no targets."""
    if not targets:
        log.debug("coverage objective with no targets is identically zero")
        return 0.0
    return float(coverage_term(TraceContext(trace), targets))


def select_steps(step_length, policy, rng, k=1):
    """Distinct steps drawn uniformly from ``[1, step_length)``."""
    if step_length < 2:
        raise InputError("sequence too short: adversary search needs at least 2 steps")
    if policy == "single_random_step":
        return [int(rng.integers(1, step_length))]
    if policy == "k_random_steps":
        n = min(k, step_length - 1)
        return sorted(int(t) for t in rng.choice(np.arange(1, step_length), size=n, replace=False))
    raise ConfigurationError(f"unknown step policy {policy!r}")


class PreparedObjective:
    """An objective with its steps, targets and labels frozen for one input.

    Calling it on a context returns the total as an ops scalar.
    """

    def __init__(self, spec, t_lists, targets, labels):
        self.spec = spec
        self.t_lists = t_lists
        self.targets = targets
        self.labels = labels

    def parts(self, ctx):
        ops = ctx.ops
        kind = self.spec.kind
        if kind == "random_baseline":
            zero = ops.const(0.0)
            return zero, zero, zero
        if kind in USES_ADVERSARY:
            obj1 = adversary_term(ctx, self.t_lists)
        elif kind in USES_LOSS:
            steps = ctx.num_steps
            labels, weights = target_weights(ctx.config, self.labels, np.asarray(ctx.step_lengths), steps)
            obj1 = ops.softmax_xent(ctx.logits, labels, weights)
        else:
            obj1 = ops.const(0.0)
        if kind in NEEDS_COVERAGE:
            obj2 = coverage_term(ctx, self.targets)
            total = ops.add(obj1, ops.mul(ops.const(self.spec.lambda_cov), obj2))
        else:
            obj2 = ops.const(0.0)
            total = obj1
        return total, obj1, obj2

    def __call__(self, ctx):
        return self.parts(ctx)[0]

    def value(self, ctx):
        total, obj1, obj2 = self.parts(ctx)
        val = ctx.ops.value
        steps = sorted({t for ts in _normalise_steps(self.t_lists, ctx.batch_size) for t in ts})
        return ObjectiveValue(float(val(total)), float(val(obj1)), float(val(obj2)),
                              list(self.targets), steps)


def prepare_objective(spec, model, embedded, t_lists, tracker=None, labels=None, lengths=None):
    """Select coverage targets and labels once, from the unperturbed input.

    ``t_lists`` holds the chosen steps per batch item. FGSM/DLFuzz labels
    default to the model's own argmax predictions.
    """
    if model.config.cell_kind != "lstm" and spec.coverage is not None \
            and spec.kind in NEEDS_COVERAGE and spec.coverage.metric == "CS_C":
        raise ConfigurationError("CS_C guidance requires an LSTM model")
    result = forward(model.config, model.params, None, lengths=lengths, trace=True, embedded=embedded)
    targets = []
    if spec.kind in NEEDS_COVERAGE:
        if tracker is None:
            raise ConfigurationError(f"{spec.kind} needs a coverage tracker")
        targets = select_targets(result.trace, tracker, spec.m, spec.coverage.metric)
    if spec.kind in USES_LOSS and labels is None:
        if model.config.output_head == "softmax-final":
            labels = result.logits.argmax(axis=1)
        else:
            labels = result.logits.argmax(axis=2).T
    return PreparedObjective(spec, t_lists, targets, labels), result


def objective_gradient(model, embedded, prepared, lengths=None):
    """Gradient of the prepared objective w.r.t. the embedded input.

    Returns ``(grad, ObjectiveValue)``.
    """
    captured = {}

    def objective(ctx):
        total, obj1, obj2 = prepared.parts(ctx)
        captured["parts"] = (total, obj1, obj2)
        return total

    grad, _ = model.gradient(embedded, objective, lengths)
    total, obj1, obj2 = (float(np.asarray(getattr(p, "value", p))) for p in captured["parts"])
    steps = sorted({t for ts in _normalise_steps(prepared.t_lists, embedded.shape[0]) for t in ts})
    return grad, ObjectiveValue(total, obj1, obj2, list(prepared.targets), steps)
