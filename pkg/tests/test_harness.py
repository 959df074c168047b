import json
from dataclasses import replace

import numpy as np
import pytest

from rnntest.coverage import CoverageConfig
from rnntest.errors import ConfigurationError, IngestionError, VocabularyError
from rnntest.harness import campaign as camp
from rnntest.harness.config import (OUTPUT_DIR_ENV, CampaignConfig, campaign_from_values, campaign_to_values,
                                    dump_config, make_objective, parse_config_text, resolve_output_dir)
from rnntest.harness.retrain import (COLUMNS, read_adversarial_text, retrain_experiment, write_adversarial_text)
from rnntest.harness.data import lm_windows
from rnntest.objectives import ObjectiveSpec
from rnntest.rnn import RnnConfig
from rnntest.synthesis import NOT_GENERATED, SynthesisConfig
from rnntest.train import Dataset, TrainConfig


def _lm_cfg(model_path, test_path, kind="rnn_test_joint", metric="HS_C", **kw):
    cov = CoverageConfig(metric)
    obj = make_objective(kind, cov, ObjectiveSpec("random_baseline", m=4))
    return CampaignConfig(str(model_path), str(test_path), "char_lm", obj, cov,
                          SynthesisConfig(max_scale=20), **{"num_runs": 2, **kw})


def _clf_cfg(model_path, test_path, kind="rnn_test_joint", **kw):
    cov = CoverageConfig("HS_C")
    obj = make_objective(kind, cov, ObjectiveSpec("random_baseline", step_policy="k_random_steps", k=2))
    return CampaignConfig(str(model_path), str(test_path), "seq_classifier", obj, cov,
                          SynthesisConfig(epsilon=0.5, step_size=10.0), **{"num_runs": 2, **kw})


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k not in camp.TIMING_FIELDS}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _read_outputs(out):
    files = {}
    for path in sorted(out.rglob("*.json*")):
        lines = path.read_text(encoding="utf-8").splitlines()
        files[str(path.relative_to(out))] = [_strip_timing(json.loads(line)) for line in lines]
    return files


# -- config ------------------------------------------------------------------

def test_config_round_trip(tmp_path):
    cfg = _lm_cfg("m.ckpt", "t.txt", "rnn_test_joint", "CS_C", limit=7, compare_objectives=("fgsm_loss",))
    cfg = replace(cfg, coverage=CoverageConfig("CS_C", 4, (-1.0, -0.3, 0.1, 0.6, 1.0), 0.25))
    text = dump_config(campaign_to_values(cfg))
    again = campaign_from_values(parse_config_text(text))
    assert campaign_to_values(again) == campaign_to_values(cfg)
    assert dump_config(campaign_to_values(again)) == text


@pytest.mark.parametrize("text", [
    "model = a\nbogus = 1\n",
    "model = a\nmodel = b\n",
    "num_runs = three\n",
    "just a line\n",
    "export_perturbations = maybe\n",
])
def test_config_parse_errors(text):
    with pytest.raises(ConfigurationError):
        parse_config_text(text)


def test_config_value_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        campaign_from_values({"test_set": "x"})
    with pytest.raises(ConfigurationError):
        campaign_from_values({"model": "m", "test_set": "t", "num_runs": 0})
    with pytest.raises(ConfigurationError):
        campaign_from_values({"model": "m", "test_set": "t", "task_kind": "vision"})
    with pytest.raises(ConfigurationError):
        campaign_from_values({"model": "m", "test_set": "t", "synthesis.max_scale": 0})
    with pytest.raises(ConfigurationError):
        _lm_cfg(tmp_path / "none.ckpt", tmp_path / "none.txt").check_paths()


def test_comment_lines_ignored():
    assert parse_config_text("# note\n\nseed = 4\n") == {"seed": 4}


def test_dlfuzz_forced_to_nc():
    cfg = campaign_from_values({"model": "m", "test_set": "t", "objective.kind": "dlfuzz_joint"})
    assert cfg.objective.coverage.metric == "NC"
    assert _lm_cfg("m", "t").with_objective("dlfuzz_joint").objective.label == "dlfuzz_joint[NC]"


def test_output_dir_env_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    assert resolve_output_dir("here") == "here"
    monkeypatch.setenv(OUTPUT_DIR_ENV, "/elsewhere")
    assert resolve_output_dir("here") == "/elsewhere"


# -- campaigns -----------------------------------------------------------------

def test_empty_test_set(toy_lm, tmp_path):
    model, mp, tp = toy_lm
    empty = Dataset(np.zeros((0, 8), dtype=np.int64), np.zeros((0, 8), dtype=np.int64))
    rep = camp.run_campaign(_lm_cfg(mp, tp), model, empty, tmp_path / "out")
    assert rep.num_inputs == 0 and rep.records == []
    assert all(r["total"] == 0 and r["generation_rate"] == 0.0 for r in rep.runs)
    assert (tmp_path / "out" / "summary.json").is_file()


def test_wrong_task_rejected(toy_lm, toy_clf):
    with pytest.raises(ConfigurationError):
        camp.run_campaign(_clf_cfg(toy_lm[1], toy_lm[2]), toy_lm[0])
    with pytest.raises(ConfigurationError):
        camp.run_campaign(_lm_cfg(toy_clf[1], toy_clf[2]), toy_clf[0])


def test_unknown_characters_rejected(toy_lm, tmp_path):
    model, _, _ = toy_lm
    bad = tmp_path / "bad.txt"
    bad.write_text("zebra quiz\n", encoding="utf-8")
    with pytest.raises(IngestionError):
        camp.load_test_set(model, "char_lm", bad)


@pytest.mark.parametrize("kind,metric", [("rnn_test_joint", "HS_C"), ("rnn_test_joint", "CS_C"),
                                         ("fgsm_loss", "HS_C"), ("random_baseline", "HS_C")])
def test_lm_campaign_determinism(toy_lm, tmp_path, kind, metric):
    model, mp, tp = toy_lm
    cfg = _lm_cfg(mp, tp, kind, metric, export_perturbations=True)
    camp.run_campaign(cfg, out_dir=tmp_path / "a")
    camp.run_campaign(cfg, out_dir=tmp_path / "b")
    a, b = _read_outputs(tmp_path / "a"), _read_outputs(tmp_path / "b")
    assert a == b and "records.jsonl" in a
    assert (tmp_path / "a" / "summary.txt").read_text() == (tmp_path / "b" / "summary.txt").read_text()


def test_classifier_campaign_records(toy_clf, tmp_path):
    model, mp, tp = toy_clf
    rep = camp.run_campaign(_clf_cfg(mp, tp), model)
    assert len(rep.records) == 2 * 12
    for rec in rep.records:
        assert rec["status"] != "error"
        assert rec["perturbation_l2"] <= 0.5 + 1e-12
        assert len(rec["steps"]) == 2
    assert 0.0 <= rep.aggregate["accuracy"] <= 1.0


def test_gaussian_baseline_uses_full_budget(toy_clf):
    model, mp, tp = toy_clf
    rep = camp.run_campaign(_clf_cfg(mp, tp, "random_baseline", num_runs=1), model)
    assert all(rec["perturbation_l2"] == pytest.approx(0.5, rel=1e-12) for rec in rep.records)


def test_coverage_only_on_full_tracker_generates_nothing(toy_lm, monkeypatch):
    model, mp, tp = toy_lm
    original = camp._new_trackers

    def full(cfg, m):
        trackers = original(cfg, m)
        for t in trackers.values():
            t.fully_cover(64, m.config.num_layers, m.config.state_size)
        return trackers

    monkeypatch.setattr(camp, "_new_trackers", full)
    rep = camp.run_campaign(_lm_cfg(mp, tp, "coverage_only"), model)
    assert rep.aggregate["generation_rate"] == 0.0
    assert all(r["status"] == NOT_GENERATED and r["num_targets"] == 0 for r in rep.records)


def test_crash_isolation(toy_lm, monkeypatch):
    model, mp, tp = toy_lm
    data = camp.load_test_set(model, "char_lm", tp)
    original = camp.process_input

    def flaky(model, cfg, x, y, *rest):
        if int(x[0]) == int(data.inputs[2][0]):
            raise ValueError("boom")
        return original(model, cfg, x, y, *rest)

    monkeypatch.setattr(camp, "process_input", flaky)
    rep = camp.run_campaign(_lm_cfg(mp, tp), model, data)
    assert len(rep.records) == 2 * len(data)
    errors = [r for r in rep.records if r["status"] == "error"]
    assert errors and all("boom" in r["error"] for r in errors)
    assert all(r["errors"] == len(errors) // 2 for r in rep.runs)


def test_too_short_inputs_become_error_records(toy_lm):
    model, mp, tp = toy_lm
    data = Dataset(np.zeros((3, 1), dtype=np.int64), np.zeros((3, 1), dtype=np.int64))
    rep = camp.run_campaign(_lm_cfg(mp, tp), model, data)
    assert len(rep.records) == 6 and all(r["status"] == "error" for r in rep.records)
    assert all(r["generation_rate"] == 0.0 for r in rep.runs)


def test_positions_covered_non_decreasing(toy_lm):
    model, mp, tp = toy_lm
    rep = camp.run_campaign(_lm_cfg(mp, tp, num_runs=1), model)
    for metric in ("HS_C", "NC", "CS_C"):
        seq = [r["positions_covered"][metric] for r in rep.records]
        assert seq == sorted(seq)


def test_comparison_parity(toy_lm, tmp_path):
    model, mp, tp = toy_lm
    labels = ["rnn_test_joint:HS_C", "rnn_test_joint:CS_C", "fgsm_loss", "dlfuzz_joint:NC", "random_baseline"]
    reps = camp.run_comparison(_lm_cfg(mp, tp), labels, model, out_dir=tmp_path)
    keyed = [[(r["run"], r["index"], r["steps"], r["original_metric"]) for r in rep.records] for rep in reps]
    assert all(k == keyed[0] for k in keyed)
    assert [r.objective for r in reps] == ["rnn_test_joint[HS_C]", "rnn_test_joint[CS_C]", "fgsm_loss",
                                           "dlfuzz_joint[NC]", "random_baseline"]
    assert (tmp_path / "rnn_test_joint-HS_C" / "records.jsonl").is_file()
    assert len(json.loads((tmp_path / "comparison.json").read_text())) == 5


def test_discrete_outputs_are_legal_and_local(toy_lm):
    model, mp, tp = toy_lm
    data = camp.load_test_set(model, "char_lm", tp)
    rep = camp.run_campaign(_lm_cfg(mp, tp, num_runs=1), model, data)
    by_index = {r["index"]: r for r in rep.records}
    for i, x in rep.adversarial:
        assert x.min() >= 0 and x.max() < model.config.vocab_size
        changed = np.flatnonzero(x != data.inputs[i]).tolist()
        assert changed == by_index[i]["changed_positions"]
        assert set(changed) <= set(by_index[i]["steps"])


def test_adversarial_dataset_pairs_targets(toy_lm):
    model, mp, tp = toy_lm
    data = camp.load_test_set(model, "char_lm", tp)
    rep = camp.run_campaign(_lm_cfg(mp, tp, "random_baseline", num_runs=1), model, data)
    adv = camp.adversarial_dataset([rep], data)
    assert len(adv) == len(data)
    assert np.array_equal(adv.targets, data.targets)
    assert not np.array_equal(adv.inputs, data.inputs)


def test_perturbation_export(toy_lm):
    model, mp, tp = toy_lm
    rep = camp.run_campaign(_lm_cfg(mp, tp, num_runs=1, export_perturbations=True), model)
    generated = [r for r in rep.records if r["status"] != NOT_GENERATED]
    assert len(rep.perturbations) == len(generated)
    for item in rep.perturbations:
        assert item["l2"] == pytest.approx(np.linalg.norm(item["perturbation"]), rel=1e-12)
        assert len(item["perturbation"]) == 8 * model.config.embedding_dim


# -- retraining -----------------------------------------------------------------

def _toy_lm_data():
    ids = np.array([i % 5 for i in range(400)])
    windows = lm_windows(ids, 8)
    return RnnConfig("lstm", 1, 6, 4, vocab_size=5, embedding_dim=4), windows


def test_null_augmentation_identical():
    cfg, w = _toy_lm_data()
    empty = Dataset(np.zeros((0, 8), dtype=np.int64), np.zeros((0, 8), dtype=np.int64))
    rep = retrain_experiment(cfg, w, w.subset(np.arange(5)), w.subset(np.arange(5)), empty,
                             TrainConfig(epochs=2, batch_size=8), repeats=2)
    assert len(rep.rows) == 3 and list(rep.rows[0]) == list(COLUMNS)
    for row in rep.rows:
        assert row["train_original"] == row["train_augmented"]
        assert row["valid_original"] == row["valid_augmented"]
        assert row["train_increment_pct"] == 0.0 and row["valid_decrement_pct"] == 0.0
    assert rep.test_original == rep.test_augmented


def test_zero_epochs_single_row():
    cfg, w = _toy_lm_data()
    adv = w.subset(np.arange(3))
    rep = retrain_experiment(cfg, w, w, w, adv, TrainConfig(epochs=0), repeats=1)
    assert len(rep.rows) == 1 and rep.rows[0]["epoch"] == 0
    # no training: both variants are the same initial model on the shared splits
    assert rep.rows[0]["valid_original"] == rep.rows[0]["valid_augmented"]
    assert rep.test_original == rep.test_augmented
    assert "decrement" in rep.table()


def test_retrain_vocabulary_mismatch():
    cfg, w = _toy_lm_data()
    bad = Dataset(np.full((1, 8), 9), np.zeros((1, 8), dtype=np.int64))
    with pytest.raises(VocabularyError):
        retrain_experiment(cfg, w, w, w, bad, TrainConfig(epochs=1))


def test_adversarial_text_round_trip(tmp_path):
    path = tmp_path / "adv.jsonl"
    write_adversarial_text([("abca", "bcab"), ("ccba", "cbaa")], path)
    data = read_adversarial_text(path, ["a", "b", "c"])
    assert data.inputs.tolist() == [[0, 1, 2, 0], [2, 2, 1, 0]]
    assert data.targets.tolist() == [[1, 2, 0, 1], [2, 1, 0, 0]]
    with pytest.raises(VocabularyError):
        read_adversarial_text(path, ["a", "b"])
    write_adversarial_text([("ab", "ba"), ("abc", "bca")], path)
    with pytest.raises(ConfigurationError):
        read_adversarial_text(path, ["a", "b", "c"])
