"""Sequence-model metrics and campaign rates."""
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from rnntest import kernels
from rnntest.errors import MetricError
from rnntest.synthesis import NOT_GENERATED, PERFORMANCE_REDUCED


def perplexity(log_probs, lengths=None):
    """exp of the mean negative log-likelihood per token.

    ``log_probs`` is a flat sequence, or (B, T) with per-row ``lengths``
    selecting the valid prefix of each row.
    """
    lp = np.asarray(log_probs, dtype=np.float64)
    if lengths is not None:
        lengths = np.asarray(lengths)
        mask = np.arange(lp.shape[1])[None, :] < lengths[:, None]
        lp = lp[mask]
    lp = lp.reshape(-1)
    if lp.size == 0:
        raise MetricError("perplexity of an empty sequence")
    if not np.all(np.isfinite(lp)):
        raise MetricError("log-probabilities must be finite")
    return float(np.exp(-lp.sum() / lp.size))


def _as_ids(reference, hypothesis):
    ids = {}
    a = np.array([ids.setdefault(tok, len(ids)) for tok in reference], dtype=np.int64)
    b = np.array([ids.setdefault(tok, len(ids)) for tok in hypothesis], dtype=np.int64)
    return a, b


def edit_distance(reference, hypothesis):
    """Levenshtein distance over arbitrary hashable tokens."""
    a, b = _as_ids(reference, hypothesis)
    return kernels.levenshtein(a, b)


def wer(reference, hypothesis):
    """Word-level edit distance divided by the reference length."""
    if len(reference) == 0:
        raise MetricError("WER needs a non-empty reference")
    return edit_distance(reference, hypothesis) / len(reference)


def _ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(reference, hypothesis, max_n=4):
    """Sentence BLEU with add-one smoothing on zero n-gram matches.

    Precision of order n is ``matches / hyp_ngrams``; an order with no
    match uses ``1 / (hyp_ngrams + 1)`` instead. The brevity penalty is
    ``exp(min(0, 1 - |ref| / |hyp|))``.
    """
    if len(reference) == 0:
        raise MetricError("BLEU needs a non-empty reference")
    if len(hypothesis) == 0:
        return 0.0
    log_p = 0.0
    for n in range(1, max_n + 1):
        hyp = _ngrams(hypothesis, n)
        ref = _ngrams(reference, n)
        total = sum(hyp.values())
        matches = sum(min(c, ref[g]) for g, c in hyp.items())
        if matches == 0:
            p = 1.0 / (total + 1)
        else:
            p = matches / total
        log_p += math.log(p) / max_n
    bp = math.exp(min(0.0, 1.0 - len(reference) / len(hypothesis)))
    return min(1.0, bp * math.exp(log_p))


@dataclass
class Rates:
    total: int
    generated: int
    reduced: int
    generation_rate: float
    success_rate: float
    adversary_rate: float


def aggregate_rates(candidates):
    """Generation, success and adversary rates of a list of outcomes.

    Accepts candidates with a ``status`` attribute or bare status strings.
    """
    statuses = [getattr(c, "status", c) for c in candidates]
    total = len(statuses)
    generated = sum(s != NOT_GENERATED for s in statuses)
    reduced = sum(s == PERFORMANCE_REDUCED for s in statuses)
    return Rates(
        total=total,
        generated=generated,
        reduced=reduced,
        generation_rate=generated / total if total else 0.0,
        success_rate=reduced / generated if generated else 0.0,
        adversary_rate=reduced / total if total else 0.0,
    )
