import numpy as np
import pytest

from rnntest import checkpoint
from rnntest.harness.data import write_sequence_dataset
from rnntest.rnn import Model, RnnConfig, init_params
from rnntest.train import Dataset

TOY_TEXT = "the cat sat on the mat\nand the dog ate the hat\n" * 6


@pytest.fixture
def toy_lm(tmp_path):
    """Untrained small char-LM saved with a matching test text."""
    vocab = sorted(set(TOY_TEXT))
    cfg = RnnConfig("lstm", 2, 6, 4, vocab_size=len(vocab), embedding_dim=4)
    model = Model(cfg, init_params(cfg, 3, scale=0.5), vocab, {"task_kind": "char_lm", "seq_len": "8"})
    checkpoint.save(model, tmp_path / "lm.ckpt")
    (tmp_path / "test.txt").write_text(TOY_TEXT[:120], encoding="utf-8")
    return model, tmp_path / "lm.ckpt", tmp_path / "test.txt"


@pytest.fixture
def toy_clf(tmp_path):
    """Untrained small classifier over 6-step rows with a labelled CSV."""
    cfg = RnnConfig("lstm", 1, 5, 3, output_head="softmax-final", num_classes=4)
    model = Model(cfg, init_params(cfg, 4, scale=0.8), None, {"task_kind": "seq_classifier", "seq_len": "6"})
    checkpoint.save(model, tmp_path / "clf.ckpt")
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(12, 6, 3)), rng.integers(0, 4, size=12))
    write_sequence_dataset(tmp_path / "rows.csv", data)
    return model, tmp_path / "clf.ckpt", tmp_path / "rows.csv"


# one line per acceptance criterion, echoed again at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
