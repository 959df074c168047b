"""Command-line entry point: ``rnntest <subcommand> ...``."""
import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from rnntest import checkpoint
from rnntest.errors import (CheckpointError, ConfigurationError, IngestionError, RnnTestError,
                            VocabularyError)
from rnntest.harness import campaign as camp
from rnntest.harness.config import (KEY_TYPES, OUTPUT_DIR_ENV, campaign_from_values, load_config,
                                    resolve_output_dir)
from rnntest.harness.data import ingest_text_corpus, lm_windows
from rnntest.harness.retrain import (read_adversarial_text, retrain_experiment, write_adversarial_text,
                                     write_retrain_report)
from rnntest.harness.training import (CHAR_LM_SEQ_LEN, CHAR_LM_TRAIN, CLASSIFIER_TRAIN, char_lm_config,
                                      train_char_lm, train_classifier)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_INGEST = 3
EXIT_CHECKPOINT = 4

DEFAULT_OBJECTIVES = ("rnn_test_joint:HS_C", "rnn_test_joint:CS_C", "fgsm_loss", "dlfuzz_joint:NC",
                      "random_baseline")


def _flag(key):
    return "--" + key.replace(".", "-").replace("_", "-")


def _add_campaign_flags(p):
    p.add_argument("--config", help="flat key = value campaign file")
    for key in KEY_TYPES:
        p.add_argument(_flag(key), dest=key, default=None, metavar="VALUE", help=f"overrides {key}")


def _campaign_config(args):
    values = load_config(args.config) if args.config else {}
    for key, conv in KEY_TYPES.items():
        raw = getattr(args, key)
        if raw is not None:
            try:
                values[key] = conv(raw)
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {_flag(key)}: {exc}") from None
    values["output_dir"] = resolve_output_dir(values.get("output_dir", "rnntest-out"))
    return campaign_from_values(values)


def _hyper(args, base):
    hyper = base
    for name in ("epochs", "learning_rate", "batch_size"):
        if getattr(args, name) is not None:
            hyper = replace(hyper, **{name: getattr(args, name)})
    return hyper


def cmd_train(args):
    out = resolve_output_dir(args.output_dir)
    log_epoch = lambda s: print(f"epoch {s.epoch}: train ppl {s.train_perplexity:.4f} "
                                f"valid ppl {s.valid_perplexity if s.valid_perplexity is None else round(s.valid_perplexity, 4)}")
    if args.task == "char_lm":
        _, result, _ = train_char_lm(args.corpus, args.seed, _hyper(args, CHAR_LM_TRAIN), out_dir=out,
                                     callback=log_epoch)
        print(f"valid perplexity {result.history[-1].valid_perplexity:.4f}" if result.history else "no epochs run")
    else:
        _, _, acc = train_classifier(args.train_set, args.test_set, args.seed, _hyper(args, CLASSIFIER_TRAIN),
                                     out_dir=out, callback=log_epoch)
        print(f"test accuracy {acc:.4f}")
    print(f"checkpoint written to {Path(out) / 'model.ckpt'}")
    return EXIT_OK


def _write_adversarial(report, data, model, out):
    if model.vocab is None:
        return
    text = lambda ids: "".join(model.vocab[int(i)] for i in ids)
    pairs = [(text(x), text(data.targets[i])) for i, x in report.adversarial]
    write_adversarial_text(pairs, Path(out) / "adversarial.jsonl")


def cmd_test_campaign(args):
    cfg = _campaign_config(args)
    cfg.check_paths()
    model = checkpoint.load(cfg.model)
    data = camp.load_test_set(model, cfg.task_kind, cfg.test_set)
    report = camp.run_campaign(cfg, model, data, cfg.output_dir)
    _write_adversarial(report, data if cfg.limit is None else data.subset(np.arange(min(cfg.limit, len(data)))),
                       model, cfg.output_dir)
    print(camp.summary_table([report]), end="")
    return EXIT_OK


def _objectives(cfg):
    return cfg.compare_objectives or DEFAULT_OBJECTIVES


def cmd_compare(args):
    cfg = _campaign_config(args)
    reports = camp.run_comparison(cfg, _objectives(cfg), out_dir=cfg.output_dir)
    print(camp.summary_table(reports), end="")
    return EXIT_OK


def cmd_export_perturbations(args):
    cfg = replace(_campaign_config(args), export_perturbations=True)
    reports = camp.run_comparison(cfg, _objectives(cfg))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    items = [item for rep in reports for item in rep.perturbations]
    camp.write_perturbations(items, out / "perturbations.jsonl")
    print(f"{len(items)} perturbation vectors written to {out / 'perturbations.jsonl'}")
    return EXIT_OK


def cmd_retrain(args):
    out = resolve_output_dir(args.output_dir)
    corpus = ingest_text_corpus(args.corpus)
    config = char_lm_config(len(corpus.vocab), args.state_size, args.num_layers, args.embedding_dim)
    windows = lambda text: lm_windows(corpus.encode(text), args.seq_len)
    adversarial = read_adversarial_text(args.adversarial, corpus.vocab) if args.adversarial else windows("")
    hyper = _hyper(args, replace(CHAR_LM_TRAIN, epochs=12))
    report = retrain_experiment(config, windows(corpus.train), windows(corpus.valid), windows(corpus.test),
                                adversarial, hyper, args.repeats, args.seed)
    write_retrain_report(report, out)
    print(report.table(), end="")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="rnntest", description="Coverage-guided adversarial testing of RNNs.",
                                     epilog=f"{OUTPUT_DIR_ENV} overrides every output directory.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a desk-scale model")
    p.add_argument("--task", choices=("char_lm", "seq_classifier"), default="char_lm")
    p.add_argument("--corpus", help="text file for char_lm (default: bundled corpus)")
    p.add_argument("--train-set", help="CSV rows for seq_classifier (default: bundled digits)")
    p.add_argument("--test-set", help="CSV rows for seq_classifier (default: bundled digits)")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--output-dir", default="rnntest-model")
    p.set_defaults(func=cmd_train)

    for name, func, text in (("test-campaign", cmd_test_campaign, "run one objective over a test set"),
                             ("compare", cmd_compare, "run several objectives over the same inputs"),
                             ("export-perturbations", cmd_export_perturbations,
                              "write perturbation vectors of each objective")):
        p = sub.add_parser(name, help=text)
        _add_campaign_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("retrain", help="retrain with and without adversarial inputs")
    p.add_argument("--corpus", required=True)
    p.add_argument("--adversarial", help="adversarial.jsonl from a char_lm campaign (omit for none)")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seq-len", type=int, default=CHAR_LM_SEQ_LEN)
    p.add_argument("--state-size", type=int, default=64)
    p.add_argument("--num-layers", type=int, default=2)
    p.add_argument("--embedding-dim", type=int, default=32)
    p.add_argument("--output-dir", default="rnntest-retrain")
    p.set_defaults(func=cmd_retrain)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IngestionError, VocabularyError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INGEST
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except (RnnTestError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
