"""Turn an input gradient into a concrete adversarial input."""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from rnntest import kernels
from rnntest.errors import ConfigurationError, InputError

PERFORMANCE_REDUCED = "performance_reduced"
GENERATED_NOT_REDUCED = "generated_not_reduced"
NOT_GENERATED = "not_generated"
OUTCOMES = (PERFORMANCE_REDUCED, GENERATED_NOT_REDUCED, NOT_GENERATED)

# direction in which each task metric gets worse
WORSE_WHEN_HIGHER = {"perplexity": True, "wer": True, "bleu": False, "accuracy": False}


@dataclass
class EmbeddingTable:
    vectors: np.ndarray
    tokens: Optional[list] = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        v = self.vectors.shape[0]
        if self.vectors.ndim != 2 or v < 2:
            raise ConfigurationError("embedding table must be (V >= 2, D)")
        if len(np.unique(self.vectors, axis=0)) != v:
            raise ConfigurationError("embedding rows must be distinct")
        if self.tokens is not None and len(self.tokens) != v:
            raise ConfigurationError("token names do not match table rows")

    def __len__(self):
        return self.vectors.shape[0]


@dataclass(frozen=True)
class SynthesisConfig:
    max_scale: int = 10
    epsilon: float = 0.04
    # raw ascent step before the L2 cap (continuous inputs only)
    step_size: float = 1.0

    def __post_init__(self):
        if self.max_scale < 1:
            raise ConfigurationError("max_scale must be at least 1")
        if not self.epsilon > 0 or not self.step_size > 0:
            raise ConfigurationError("epsilon and step_size must be positive")


@dataclass
class AdversarialCandidate:
    input: np.ndarray
    changed_positions: List[int] = field(default_factory=list)
    perturbation_l2: float = 0.0
    scale_used: Optional[int] = None
    status: str = NOT_GENERATED
    perturbation: Optional[np.ndarray] = None

    @property
    def generated(self):
        return self.status != NOT_GENERATED


def gen_adv_discrete(x, t, grad, embs, cfg):
    """Scale the gradient at step ``t`` until the nearest token changes.

    For ``scale = 1 .. max_scale`` the embedding of ``x[t]`` is moved by
    ``grad[t] * scale`` and replaced by its L2-nearest vocabulary entry
    (lowest index on ties). The first scale that lands on a different
    token wins. A zero gradient, or no change up to ``max_scale``, leaves
    ``x`` untouched.
    """
    return gen_adv_discrete_steps(x, [t], grad, embs, cfg)


def gen_adv_discrete_steps(x, t_list, grad, embs, cfg):
    """Run the single-step search independently at each step in ``t_list``."""
    x = np.asarray(x)
    grad = np.asarray(grad, dtype=np.float64)
    table = embs.vectors
    if grad.shape != (len(x), table.shape[1]):
        raise InputError(f"gradient must be ({len(x)}, {table.shape[1]})")
    out = x.copy()
    changed, scales = [], []
    for t in t_list:
        if not 0 <= t < len(x):
            raise InputError(f"step {t} outside the sequence")
        g = grad[t]
        if not np.all(np.isfinite(g)):
            raise InputError("gradient is not finite")
        if not np.any(g):
            continue
        tok, scale = kernels.nearest_scan(table, int(x[t]), g, cfg.max_scale)
        if scale:
            out[t] = tok
            changed.append(int(t))
            scales.append(scale)
    if not changed:
        return AdversarialCandidate(x.copy(), perturbation=np.zeros((len(x), table.shape[1])))
    pert = table[out] - table[x]
    return AdversarialCandidate(out, sorted(changed), float(np.linalg.norm(pert)), max(scales),
                                GENERATED_NOT_REDUCED, pert)


def perturb_continuous(x, grad, cfg, sign=False):
    """Step along the raw gradient (or its sign) with an L2 cap of ``epsilon``.

    The step is ``step_size * grad`` shrunk to norm ``epsilon`` when longer,
    so the direction always matches the gradient.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != x.shape:
        raise InputError("gradient shape does not match input")
    if not np.all(np.isfinite(grad)):
        raise InputError("gradient is not finite")
    direction = np.sign(grad) if sign else grad
    delta = cfg.step_size * direction
    norm = float(np.linalg.norm(delta))
    if norm == 0.0:
        return AdversarialCandidate(x.copy(), perturbation=np.zeros_like(x))
    if norm > cfg.epsilon:
        delta = delta * (cfg.epsilon / norm)
    out = x + delta
    actual = out - x
    steps = x.reshape(x.shape[0], -1) if x.ndim > 1 else x[:, None]
    moved = np.flatnonzero(np.any(actual.reshape(steps.shape) != 0, axis=1))
    return AdversarialCandidate(out, [int(t) for t in moved], float(np.linalg.norm(actual)), None,
                                GENERATED_NOT_REDUCED, actual)


def gaussian_noise(x, cfg, rng):
    """Random baseline for continuous inputs: Gaussian noise of norm ``epsilon``."""
    x = np.asarray(x, dtype=np.float64)
    noise = rng.standard_normal(x.shape)
    return perturb_continuous(x, noise * (cfg.epsilon / np.linalg.norm(noise)), SynthesisConfig(
        max_scale=cfg.max_scale, epsilon=cfg.epsilon, step_size=1.0))


def random_replacement(x, t_list, vocab_size, rng, embs=None):
    """Random baseline for token inputs: a different random token at each step."""
    x = np.asarray(x)
    out = x.copy()
    for t in t_list:
        r = int(rng.integers(0, vocab_size - 1))
        out[t] = r if r < x[t] else r + 1
    pert = None
    l2 = 0.0
    if embs is not None:
        pert = embs.vectors[out] - embs.vectors[x]
        l2 = float(np.linalg.norm(pert))
    return AdversarialCandidate(out, sorted(int(t) for t in t_list), l2, None, GENERATED_NOT_REDUCED, pert)


def classify_outcome(original_metric, adversarial_metric, task_kind, mutated=True):
    """Tri-state outcome of one adversarial attempt.

    ``task_kind`` is a metric name from ``WORSE_WHEN_HIGHER`` or ``"label"``
    for classifiers, where any change of predicted label counts as reduced.
    """
    if not mutated:
        return NOT_GENERATED
    if task_kind == "label":
        reduced = original_metric != adversarial_metric
    elif task_kind in WORSE_WHEN_HIGHER:
        if WORSE_WHEN_HIGHER[task_kind]:
            reduced = adversarial_metric > original_metric
        else:
            reduced = adversarial_metric < original_metric
    else:
        raise ConfigurationError(f"unknown task metric {task_kind!r}")
    return PERFORMANCE_REDUCED if reduced else GENERATED_NOT_REDUCED
