"""Train the two desk-scale models and persist them with their data splits."""
import json
from dataclasses import asdict, replace
from pathlib import Path

from rnntest import checkpoint
from rnntest.harness.data import bundled, ingest_sequence_dataset, ingest_text_corpus, lm_windows
from rnntest.rnn import Model, RnnConfig, init_params
from rnntest.train import TrainConfig, evaluate, train

CHAR_LM_SEQ_LEN = 32
CHAR_LM_TRAIN = TrainConfig(epochs=16, learning_rate=3.0, batch_size=32, decay_start=12)
CLASSIFIER_STEPS = 8
CLASSIFIER_TRAIN = TrainConfig(epochs=20, learning_rate=1.0, batch_size=16, decay_start=15)


def char_lm_config(vocab_size, state_size=64, num_layers=2, embedding_dim=32):
    return RnnConfig("lstm", num_layers, state_size, embedding_dim, vocab_size=vocab_size,
                     embedding_dim=embedding_dim)


def classifier_config(state_size=32, input_dim=8, num_classes=10):
    return RnnConfig("lstm", 1, state_size, input_dim, output_head="softmax-final", num_classes=num_classes)


def _finish(model, result, out_dir, extra):
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint.save(model, out / "model.ckpt")
    history = {"history": [asdict(s) for s in result.history], **extra}
    (out / "history.json").write_text(json.dumps(history, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def train_char_lm(corpus_path=None, seed=1, hyper=None, seq_len=CHAR_LM_SEQ_LEN, out_dir=None, callback=None):
    """Character LM on a text file; the three splits are written next to the checkpoint."""
    corpus = ingest_text_corpus(corpus_path or bundled("shakespeare.txt"))
    hyper = replace(hyper or CHAR_LM_TRAIN, seed=seed)
    config = char_lm_config(len(corpus.vocab))
    train_data = lm_windows(corpus.encode(corpus.train), seq_len)
    valid_data = lm_windows(corpus.encode(corpus.valid), seq_len)
    result = train(config, init_params(config, seed), train_data, hyper, valid_data, callback)
    model = Model(config, result.params, corpus.vocab,
                  {"task_kind": "char_lm", "seq_len": str(seq_len), "seed": str(seed)})
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name in ("train", "valid", "test"):
            (out / f"{name}.txt").write_text(getattr(corpus, name), encoding="utf-8")
    _finish(model, result, out_dir, {"valid_perplexity": result.history[-1].valid_perplexity
                                     if result.history else None})
    return model, result, corpus


def train_classifier(train_path=None, test_path=None, seed=1, hyper=None, out_dir=None, callback=None):
    """Row-sequence digit classifier; returns the model, history and test accuracy."""
    config = classifier_config()
    load = lambda p: ingest_sequence_dataset(p, CLASSIFIER_STEPS, config.input_dim, config.num_classes)
    train_data = load(train_path or bundled("digits_train.csv"))
    test_data = load(test_path or bundled("digits_test.csv"))
    hyper = replace(hyper or CLASSIFIER_TRAIN, seed=seed)
    result = train(config, init_params(config, seed), train_data, hyper, None, callback)
    model = Model(config, result.params, None,
                  {"task_kind": "seq_classifier", "seq_len": str(CLASSIFIER_STEPS), "seed": str(seed)})
    _, accuracy = evaluate(config, result.params, test_data)
    _finish(model, result, out_dir, {"test_accuracy": accuracy})
    return model, result, accuracy
