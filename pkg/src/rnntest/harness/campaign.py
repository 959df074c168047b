"""Testing campaigns: per-input search, outcome classification and reports."""
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from rnntest import checkpoint
from rnntest.coverage import CoverageConfig, CoverageTracker
from rnntest.errors import ConfigurationError, IngestionError, RnnTestError
from rnntest.harness.data import ingest_sequence_dataset, lm_windows, read_text
from rnntest.metrics import aggregate_rates, perplexity
from rnntest.objectives import NEEDS_COVERAGE, objective_gradient, prepare_objective, select_steps
from rnntest.rnn import token_log_probs
from rnntest.synthesis import (EmbeddingTable, classify_outcome, gaussian_noise, gen_adv_discrete_steps,
                               perturb_continuous, random_replacement)
from rnntest.train import Dataset

log = logging.getLogger(__name__)

DEFAULT_SEQ_LEN = 32
# report fields that carry wall-clock time and are excluded from determinism checks
TIMING_FIELDS = ("elapsed_s", "mean_elapsed_s")


def check_task(model, task_kind):
    cfg = model.config
    if task_kind == "char_lm" and not (cfg.discrete and cfg.output_head == "softmax-per-step"):
        raise ConfigurationError("char_lm campaigns need a token model with a per-step head")
    if task_kind == "seq_classifier" and cfg.output_head != "softmax-final":
        raise ConfigurationError("seq_classifier campaigns need a final-step classifier head")


def load_test_set(model, task_kind, path):
    """Test inputs for a model: text windows for LMs, labelled rows for classifiers."""
    cfg = model.config
    if task_kind == "char_lm":
        text = read_text(path)
        index = {ch: i for i, ch in enumerate(model.vocab or [])}
        unknown = sorted(set(text) - set(index))
        if unknown:
            raise IngestionError(f"test set has characters outside the model vocabulary: {unknown[:5]}")
        ids = np.array([index[ch] for ch in text], dtype=np.int64)
        return lm_windows(ids, int(model.meta.get("seq_len", DEFAULT_SEQ_LEN)))
    steps = int(model.meta.get("seq_len", 8))
    return ingest_sequence_dataset(path, steps, cfg.input_dim, cfg.num_classes)


def _task_metric(model, task_kind, x, y):
    if task_kind == "char_lm":
        return perplexity(token_log_probs(model.config, model.params, x[None], y[None])[0])
    return int(np.argmax(model.forward(x[None], trace=False).logits[0]))


def _metric_name(task_kind):
    return "perplexity" if task_kind == "char_lm" else "label"


def _new_trackers(cfg, model):
    metrics = ["HS_C", "NC"] + (["CS_C"] if model.config.cell_kind == "lstm" else [])
    if cfg.objective.coverage is not None and cfg.objective.coverage.metric not in metrics:
        raise ConfigurationError("CS_C needs an LSTM model")
    trackers = {}
    for metric in metrics:
        base = cfg.coverage
        if cfg.objective.coverage is not None and cfg.objective.coverage.metric == metric:
            base = cfg.objective.coverage
        trackers[metric] = CoverageTracker(CoverageConfig(metric, base.num_sections, base.section_edges,
                                                          base.nc_threshold))
    return trackers


@dataclass
class InputOutcome:
    record: dict
    candidate: object = None


def process_input(model, cfg, x, y, rng_steps, rng_noise, trackers, embs):
    """One pass of the pipeline for a single input; returns the record."""
    spec = cfg.objective
    task = cfg.task_kind
    x = np.asarray(x)
    embedded = model.embed(x[None])
    original = _task_metric(model, task, x, y)
    steps = select_steps(len(x), spec.step_policy, rng_steps, spec.k)
    guide = trackers.get(spec.coverage.metric) if spec.kind in NEEDS_COVERAGE else None
    labels = None
    if spec.kind in ("fgsm_loss", "dlfuzz_joint"):
        labels = y[None] if task == "char_lm" else np.array([y])
    prepared, result = prepare_objective(spec, model, embedded, [steps], guide, labels)
    for tracker in trackers.values():
        tracker.update(result.trace)
    obj = None
    if spec.kind == "random_baseline":
        if model.config.discrete:
            cand = random_replacement(x, steps, model.config.vocab_size, rng_noise, embs)
        else:
            cand = gaussian_noise(x, cfg.synthesis, rng_noise)
    else:
        grad, obj = objective_gradient(model, embedded, prepared)
        if model.config.discrete:
            cand = gen_adv_discrete_steps(x, steps, grad[0], embs, cfg.synthesis)
        else:
            cand = perturb_continuous(x, grad[0], cfg.synthesis, sign=spec.kind == "fgsm_loss")
    adversarial = None
    if cand.generated:
        adversarial = _task_metric(model, task, cand.input, y)
        adv_trace = model.forward(cand.input[None]).trace
        for tracker in trackers.values():
            tracker.update(adv_trace)
    cand.status = classify_outcome(original, adversarial, _metric_name(task), cand.generated)
    record = {
        "status": cand.status,
        "steps": steps,
        "original_metric": original,
        "adversarial_metric": adversarial,
        "changed_positions": cand.changed_positions,
        "scale_used": cand.scale_used,
        "perturbation_l2": cand.perturbation_l2,
        "objective_total": None if obj is None else obj.total,
        "obj1": None if obj is None else obj.obj1,
        "obj2": None if obj is None else obj.obj2,
        "num_targets": len(prepared.targets),
    }
    if task == "seq_classifier":
        record["true_label"] = int(y)
    return InputOutcome(record, cand)


def _mean(values):
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


def summarize_run(records, trackers, task_kind):
    statuses = [r["status"] if r["status"] != "error" else "not_generated" for r in records]
    rates = aggregate_rates(statuses)
    gen = [r for r in records if r["status"] not in ("error", "not_generated")]
    out = asdict(rates)
    out["errors"] = sum(r["status"] == "error" for r in records)
    out["mean_original_metric"] = _mean([r["original_metric"] for r in gen]) if task_kind == "char_lm" else None
    out["mean_adversarial_metric"] = _mean([r["adversarial_metric"] for r in gen]) if task_kind == "char_lm" else None
    out["mean_perturbation_l2"] = _mean([r["perturbation_l2"] for r in gen])
    if task_kind == "seq_classifier":
        ok = [r for r in records if r["status"] != "error"]
        out["accuracy"] = _mean([float(r["original_metric"] == r["true_label"]) for r in ok])
    out["mean_elapsed_s"] = _mean([r["elapsed_s"] for r in records])
    out["coverage"] = {m: t.report() for m, t in sorted(trackers.items())}
    return out


AGG_KEYS = ("generation_rate", "success_rate", "adversary_rate", "mean_original_metric",
            "mean_adversarial_metric", "mean_perturbation_l2", "accuracy", "mean_elapsed_s")


def aggregate_runs(runs):
    """Arithmetic mean of each per-run figure; coverage ratios included."""
    agg = {}
    for key in AGG_KEYS:
        vals = [r.get(key) for r in runs]
        agg[key] = _mean(vals) if all(v is not None for v in vals) and vals else None
    metrics = sorted(runs[0]["coverage"]) if runs else []
    agg["coverage_ratio"] = {m: _mean([r["coverage"][m]["ratio"] for r in runs]) for m in metrics}
    return agg


@dataclass
class CampaignReport:
    objective: str
    task_kind: str
    num_inputs: int
    runs: list
    aggregate: dict
    records: list = field(default_factory=list)
    perturbations: list = field(default_factory=list)
    # (input index, adversarial input) for every generated candidate
    adversarial: list = field(default_factory=list)

    def summary(self):
        return {"objective": self.objective, "task_kind": self.task_kind, "num_inputs": self.num_inputs,
                "runs": self.runs, "aggregate": self.aggregate}


def _dump(obj):
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def _fmt(v):
    if v is None:
        return "-"
    return f"{v:.4f}" if isinstance(v, float) else str(v)


def summary_table(reports):
    """Fixed-width comparison table of aggregate figures."""
    cols = ("generation_rate", "success_rate", "adversary_rate", "mean_adversarial_metric",
            "mean_perturbation_l2")
    head = ["objective"] + list(cols) + [f"cov[{m}]" for m in ("HS_C", "CS_C", "NC")]
    rows = [head]
    for rep in reports:
        cov = rep.aggregate["coverage_ratio"]
        rows.append([rep.objective] + [_fmt(rep.aggregate[c]) for c in cols]
                    + [_fmt(cov.get(m)) for m in ("HS_C", "CS_C", "NC")])
    widths = [max(len(r[i]) for r in rows) for i in range(len(head))]
    return "".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() + "\n" for r in rows)


def write_report(report, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "records.jsonl", "w", encoding="utf-8") as fh:
        for rec in report.records:
            fh.write(_dump(rec) + "\n")
    (out / "summary.json").write_text(_dump(report.summary()) + "\n", encoding="utf-8")
    (out / "summary.txt").write_text(summary_table([report]), encoding="utf-8")
    if report.perturbations:
        write_perturbations(report.perturbations, out / "perturbations.jsonl")
    return out


def write_perturbations(items, path):
    with open(path, "w", encoding="utf-8") as fh:
        for item in items:
            fh.write(_dump(item) + "\n")


def run_campaign(cfg, model=None, data=None, out_dir=None):
    """Run ``cfg.num_runs`` passes over the test set and write the report.

    Step choices and random draws depend only on ``(seed, run, index)``, so
    every objective sees the same inputs and the same steps.
    """
    if model is None:
        cfg.check_paths()
        model = checkpoint.load(cfg.model)
    check_task(model, cfg.task_kind)
    if data is None:
        data = load_test_set(model, cfg.task_kind, cfg.test_set)
    if cfg.limit is not None:
        data = data.subset(np.arange(min(cfg.limit, len(data))))
    embs = EmbeddingTable(model.params["embedding"], model.vocab) if model.config.discrete else None
    records, runs, perturbations, adversarial = [], [], [], []
    for run in range(cfg.num_runs):
        trackers = _new_trackers(cfg, model)
        run_records = []
        for i in range(len(data)):
            rng_steps = np.random.default_rng([cfg.seed, run, i])
            rng_noise = np.random.default_rng([cfg.seed, run, i, 1])
            start = time.monotonic()
            try:
                res = process_input(model, cfg, data.inputs[i], data.targets[i], rng_steps, rng_noise, trackers, embs)
                rec = res.record
            except (RnnTestError, FloatingPointError, ValueError) as exc:
                log.warning("input %d failed: %s", i, exc)
                res = None
                rec = {"status": "error", "error": f"{type(exc).__name__}: {exc}"}
            rec = {"run": run, "index": i, "objective": cfg.objective.label, **rec,
                   "positions_covered": {m: t.positions_covered() for m, t in sorted(trackers.items())},
                   "elapsed_s": time.monotonic() - start}
            run_records.append(rec)
            if res is not None and res.candidate.generated:
                adversarial.append((i, res.candidate.input))
            if cfg.export_perturbations and res is not None and res.candidate.generated:
                perturbations.append({"objective": cfg.objective.label, "run": run, "index": i,
                                      "l2": res.candidate.perturbation_l2,
                                      "perturbation": np.ravel(res.candidate.perturbation).tolist()})
        runs.append(summarize_run(run_records, trackers, cfg.task_kind))
        records.extend(run_records)
    report = CampaignReport(cfg.objective.label, cfg.task_kind, len(data), runs, aggregate_runs(runs),
                            records, perturbations, adversarial)
    if out_dir is not None:
        write_report(report, out_dir)
    return report


def run_comparison(cfg, labels, model=None, data=None, out_dir=None):
    """One campaign per objective label over identical inputs and steps."""
    if model is None:
        cfg.check_paths()
        model = checkpoint.load(cfg.model)
    if data is None:
        data = load_test_set(model, cfg.task_kind, cfg.test_set)
    reports = []
    for label in labels:
        sub = cfg.with_objective(label)
        name = sub.objective.label.replace("[", "-").replace("]", "")
        target = None if out_dir is None else Path(out_dir) / name
        reports.append(run_campaign(sub, model, data, target))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.json").write_text(_dump([r.summary() for r in reports]) + "\n", encoding="utf-8")
        (out / "comparison.txt").write_text(summary_table(reports), encoding="utf-8")
    return reports


def adversarial_dataset(reports, data):
    """Generated adversarial inputs paired with their original targets."""
    pairs = [(i, x) for rep in reports for i, x in rep.adversarial]
    if not pairs:
        return data.subset(np.arange(0))
    idx = np.array([i for i, _ in pairs])
    return Dataset(np.stack([x for _, x in pairs]), data.targets[idx])
