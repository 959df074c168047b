import numpy as np
import pytest

from rnntest.errors import IngestionError
from rnntest.harness.data import (bundled, ingest_sequence_dataset, ingest_text_corpus, lm_windows,
                                  write_sequence_dataset)
from rnntest.train import Dataset


def test_tiny_corpus_vocabulary(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("ab\n")
    corpus = ingest_text_corpus(p)
    assert corpus.vocab == ["\n", "a", "b"]
    assert corpus.encode("ba\n").tolist() == [2, 1, 0]


def test_ingestion_is_deterministic(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("zeta\nalpha\nbeta\n" * 7)
    a, b = ingest_text_corpus(p), ingest_text_corpus(p)
    assert a == b


def test_split_ratio_on_lines(tmp_path):
    p = tmp_path / "c.txt"
    p.write_text("".join(f"line {i}\n" for i in range(1000)))
    corpus = ingest_text_corpus(p)
    sizes = [part.count("\n") for part in (corpus.train, corpus.valid, corpus.test)]
    assert sizes == [800, 100, 100]
    assert corpus.valid.startswith("line 800\n") and corpus.test.startswith("line 900\n")


def test_bad_text_files_raise(tmp_path):
    empty = tmp_path / "e.txt"
    empty.write_bytes(b"")
    bad = tmp_path / "b.txt"
    bad.write_bytes(b"\xff\xfe\x00abc")
    for path in (empty, bad, tmp_path / "missing.txt"):
        with pytest.raises(IngestionError):
            ingest_text_corpus(path)


def test_lm_windows_shift_targets():
    d = lm_windows(np.arange(10), 3)
    assert d.inputs.tolist() == [[0, 1, 2], [3, 4, 5], [6, 7, 8]]
    assert d.targets.tolist() == [[1, 2, 3], [4, 5, 6], [7, 8, 9]]
    assert len(lm_windows(np.arange(3), 3)) == 0


def test_sequence_row_reshape(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("3,1,2,3,4,5,6,7,8\n")
    d = ingest_sequence_dataset(p, 4, 2, 10)
    assert d.inputs.shape == (1, 4, 2)
    assert d.inputs[0, 1].tolist() == [3.0, 4.0] and d.targets.tolist() == [3]


@pytest.mark.parametrize("text", ["10,1,2,3,4\n", "1,1,2,3\n", "x,1,2,3,4\n", "1,1,2,3,4\n1,1,2\n"])
def test_bad_sequence_rows_raise(tmp_path, text):
    p = tmp_path / "s.csv"
    p.write_text(text)
    with pytest.raises(IngestionError):
        ingest_sequence_dataset(p, 2, 2, 10)


def test_sequence_round_trip_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    data = Dataset(rng.normal(size=(5, 3, 2)) * 1e3, rng.integers(0, 4, size=5))
    p = tmp_path / "s.csv"
    write_sequence_dataset(p, data)
    back = ingest_sequence_dataset(p, 3, 2, 4)
    assert back.inputs.tobytes() == data.inputs.tobytes()
    assert back.targets.tolist() == data.targets.tolist()


def test_bundled_data_shapes():
    corpus = ingest_text_corpus(bundled("shakespeare.txt"))
    assert 150_000 < len(corpus.train) + len(corpus.valid) + len(corpus.test) < 250_000
    train = ingest_sequence_dataset(bundled("digits_train.csv"), 8, 8, 10)
    test = ingest_sequence_dataset(bundled("digits_test.csv"), 8, 8, 10)
    assert len(train) == 1437 and len(test) == 360
    assert train.inputs.min() >= 0.0 and train.inputs.max() <= 1.0
