"""Retrain from scratch with and without adversarial inputs and compare perplexities."""
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from rnntest.errors import ConfigurationError, VocabularyError
from rnntest.rnn import init_params
from rnntest.train import Dataset, evaluate, train

COLUMNS = ("epoch", "train_original", "train_augmented", "train_increment_pct",
           "valid_original", "valid_augmented", "valid_decrement_pct")


def _pct(new, old):
    return 100.0 * (new - old) / old


@dataclass
class RetrainReport:
    rows: list
    test_original: float
    test_augmented: float
    repeats: int
    adversarial_count: int

    @property
    def test_decrement_pct(self):
        return 0.0 - _pct(self.test_augmented, self.test_original)

    def to_dict(self):
        return {"columns": list(COLUMNS), "rows": self.rows, "repeats": self.repeats,
                "adversarial_count": self.adversarial_count, "test_original": self.test_original,
                "test_augmented": self.test_augmented, "test_decrement_pct": self.test_decrement_pct}

    def table(self):
        head = "epoch  train orig  train w.adv  increment  valid orig  valid w.adv  decrement\n"
        lines = [head]
        for r in self.rows:
            lines.append(f"{r['epoch']:>5}  {r['train_original']:>10.3f}  {r['train_augmented']:>11.3f}  "
                         f"{r['train_increment_pct']:>8.3f}%  {r['valid_original']:>10.3f}  "
                         f"{r['valid_augmented']:>11.3f}  {r['valid_decrement_pct']:>8.3f}%\n")
        lines.append(f"test perplexity: original {self.test_original:.3f}, w. adv. {self.test_augmented:.3f}, "
                     f"decrement {self.test_decrement_pct:.3f}%\n")
        return "".join(lines)


def check_vocab(adversarial, vocab_size):
    """Adversarial token ids must index the model vocabulary."""
    ids = np.asarray(adversarial.inputs)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab_size):
        raise VocabularyError("adversarial inputs use tokens outside the model vocabulary")
    tgt = np.asarray(adversarial.targets)
    if tgt.size and (tgt.min() < 0 or tgt.max() >= vocab_size):
        raise VocabularyError("adversarial targets use tokens outside the model vocabulary")


def _curve(config, params, data, valid, hyper):
    """Per-epoch (train, valid) perplexity; epoch 0 is the untrained model.

    Later train figures are the running mean over each epoch's batches.
    """
    curve = [(evaluate(config, params, data)[0], evaluate(config, params, valid)[0])]
    if hyper.epochs == 0:
        return curve, params
    result = train(config, params, data, hyper, valid)
    curve.extend((s.train_perplexity, s.valid_perplexity) for s in result.history)
    return curve, result.params


def retrain_experiment(config, train_data, valid_data, test_data, adversarial, hyper, repeats=5, seed=1):
    """Train fresh models on the original and on the augmented training set.

    Both variants of a repetition share the init seed and the shuffle seed;
    repetition ``r`` uses ``seed + r``. Figures are averaged over repetitions.
    """
    if repeats < 1:
        raise ConfigurationError("repeats must be at least 1")
    if config.discrete:
        check_vocab(adversarial, config.vocab_size)
    augmented = Dataset.concat(train_data, adversarial)
    sums = None
    test_orig, test_aug = [], []
    for r in range(repeats):
        s = seed + r
        h = replace(hyper, seed=s)
        p0 = init_params(config, s)
        orig_curve, orig_params = _curve(config, p0, train_data, valid_data, h)
        aug_curve, aug_params = _curve(config, p0, augmented, valid_data, h)
        arr = np.array([[o[0], a[0], o[1], a[1]] for o, a in zip(orig_curve, aug_curve)])
        sums = arr if sums is None else sums + arr
        test_orig.append(evaluate(config, orig_params, test_data)[0])
        test_aug.append(evaluate(config, aug_params, test_data)[0])
    mean = sums / repeats
    rows = []
    for epoch, (to, ta, vo, va) in enumerate(mean):
        rows.append({"epoch": epoch, "train_original": float(to), "train_augmented": float(ta),
                     "train_increment_pct": _pct(ta, to), "valid_original": float(vo),
                     "valid_augmented": float(va), "valid_decrement_pct": 0.0 - _pct(va, vo)})
    return RetrainReport(rows, float(np.mean(test_orig)), float(np.mean(test_aug)), repeats, len(adversarial))


def write_retrain_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "retrain.json").write_text(json.dumps(report.to_dict(), sort_keys=True) + "\n", encoding="utf-8")
    (out / "retrain.txt").write_text(report.table(), encoding="utf-8")
    return out


def write_adversarial_text(pairs, path):
    """One JSON object per line holding an adversarial input and its targets as text."""
    with open(path, "w", encoding="utf-8") as fh:
        for inp, tgt in pairs:
            fh.write(json.dumps({"input": inp, "target": tgt}, sort_keys=True) + "\n")


def read_adversarial_text(path, vocab):
    """Inverse of ``write_adversarial_text``, encoded with ``vocab``."""
    index = {ch: i for i, ch in enumerate(vocab)}
    xs, ys = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if len(rec["input"]) != len(rec["target"]):
                raise ConfigurationError(f"{path}:{lineno}: input and target lengths differ")
            try:
                xs.append([index[ch] for ch in rec["input"]])
                ys.append([index[ch] for ch in rec["target"]])
            except KeyError as exc:
                raise VocabularyError(f"{path}:{lineno}: character {exc.args[0]!r} not in vocabulary") from None
    if len({len(x) for x in xs}) > 1:
        raise ConfigurationError(f"{path}: adversarial inputs differ in length")
    if not xs:
        return Dataset(np.zeros((0, 0), dtype=np.int64), np.zeros((0, 0), dtype=np.int64))
    return Dataset(np.array(xs, dtype=np.int64), np.array(ys, dtype=np.int64))
