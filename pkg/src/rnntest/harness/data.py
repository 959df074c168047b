"""Corpus and dataset ingestion."""
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from rnntest.errors import IngestionError, InputError
from rnntest.train import Dataset

SPLIT_RATIO = (8, 1, 1)


def bundled(name):
    """Path of a data file shipped with the package."""
    return Path(str(resources.files("rnntest") / "data" / name))


@dataclass
class TextCorpus:
    vocab: list
    train: str
    valid: str
    test: str

    @property
    def index(self):
        return {ch: i for i, ch in enumerate(self.vocab)}

    def encode(self, text):
        idx = self.index
        try:
            return np.array([idx[ch] for ch in text], dtype=np.int64)
        except KeyError as exc:
            raise InputError(f"character {exc.args[0]!r} not in vocabulary") from None

    def decode(self, ids):
        return "".join(self.vocab[int(i)] for i in ids)


def read_text(path):
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IngestionError(f"cannot read {path}: {exc}") from exc
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise IngestionError(f"{path} is not valid UTF-8") from exc
    if not text:
        raise IngestionError(f"{path} is empty")
    return text


def split_lines(text):
    """Train/valid/test split on line boundaries by the fixed 8:1:1 ratio."""
    lines = text.splitlines(keepends=True)
    n = len(lines)
    total = sum(SPLIT_RATIO)
    n_train = n * SPLIT_RATIO[0] // total
    n_valid = n * SPLIT_RATIO[1] // total
    return (lines[:n_train], lines[n_train:n_train + n_valid], lines[n_train + n_valid:])


def ingest_text_corpus(path):
    """Character vocabulary (sorted by code point) and an 8:1:1 line split."""
    text = read_text(path)
    vocab = sorted(set(text))
    train, valid, test = ("".join(part) for part in split_lines(text))
    return TextCorpus(vocab, train, valid, test)


def lm_windows(ids, seq_len):
    """Non-overlapping next-token windows: inputs ids[i:i+T], targets shifted by one."""
    ids = np.asarray(ids, dtype=np.int64)
    n = (len(ids) - 1) // seq_len
    if n <= 0:
        return Dataset(np.zeros((0, seq_len), dtype=np.int64), np.zeros((0, seq_len), dtype=np.int64))
    starts = np.arange(n) * seq_len
    offsets = np.arange(seq_len)
    inputs = ids[starts[:, None] + offsets[None, :]]
    targets = ids[starts[:, None] + offsets[None, :] + 1]
    return Dataset(inputs, targets)


def ingest_sequence_dataset(path, steps, input_dim, num_classes):
    """Rows of ``label,v0,...`` reshaped to (steps, input_dim) sequences."""
    text = read_text(path)
    width = steps * input_dim
    labels, rows = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width + 1:
            raise IngestionError(f"{path}:{lineno}: expected {width + 1} fields, got {len(parts)}")
        try:
            label = int(parts[0])
            values = [float(v) for v in parts[1:]]
        except ValueError as exc:
            raise IngestionError(f"{path}:{lineno}: {exc}") from exc
        if not 0 <= label < num_classes:
            raise IngestionError(f"{path}:{lineno}: label {label} outside [0, {num_classes})")
        labels.append(label)
        rows.append(values)
    inputs = np.array(rows, dtype=np.float64).reshape(len(rows), steps, input_dim)
    return Dataset(inputs, np.array(labels, dtype=np.int64))


def write_sequence_dataset(path, data):
    """Inverse of ``ingest_sequence_dataset``; floats are written with ``repr``."""
    with open(path, "w", encoding="utf-8") as fh:
        for x, y in zip(data.inputs, data.targets):
            fh.write(",".join([str(int(y))] + [repr(float(v)) for v in np.ravel(x)]) + "\n")
