"""Flat ``key = value`` campaign configuration with typed keys."""
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Tuple

from rnntest.coverage import CoverageConfig
from rnntest.errors import ConfigurationError
from rnntest.objectives import ObjectiveSpec
from rnntest.synthesis import SynthesisConfig

OUTPUT_DIR_ENV = "RNNTEST_OUTPUT_DIR"
TASK_KINDS = ("char_lm", "seq_classifier")


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


KEY_TYPES = {
    "model": str,
    "task_kind": str,
    "test_set": str,
    "output_dir": str,
    "num_runs": int,
    "seed": int,
    "limit": int,
    "export_perturbations": _bool,
    "objective.kind": str,
    "objective.m": int,
    "objective.lambda_cov": float,
    "objective.step_policy": str,
    "objective.k": int,
    "objective.selection_cadence": str,
    "coverage.metric": str,
    "coverage.num_sections": int,
    "coverage.section_edges": _floats,
    "coverage.nc_threshold": float,
    "synthesis.max_scale": int,
    "synthesis.epsilon": float,
    "synthesis.step_size": float,
    "compare.objectives": _names,
}


def parse_config_text(text):
    """Typed dict from ``key = value`` lines; ``#`` starts a comment line."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEY_TYPES:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = KEY_TYPES[key](value)
        except ValueError as exc:
            raise ConfigurationError(f"line {lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text)


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(values):
    """Inverse of ``parse_config_text`` for a typed dict."""
    return "".join(f"{k} = {_format(values[k])}\n" for k in KEY_TYPES if k in values)


def parse_objective_label(label, coverage):
    """``kind`` or ``kind:METRIC`` into ``(kind, CoverageConfig)``."""
    kind, _, metric = label.partition(":")
    if metric:
        coverage = replace(coverage, metric=metric)
    return kind, coverage


@dataclass(frozen=True)
class CampaignConfig:
    model: str
    test_set: str
    task_kind: str = "char_lm"
    objective: ObjectiveSpec = field(default_factory=lambda: ObjectiveSpec("rnn_test_joint", CoverageConfig()))
    coverage: CoverageConfig = field(default_factory=CoverageConfig)
    synthesis: SynthesisConfig = field(default_factory=SynthesisConfig)
    num_runs: int = 3
    seed: int = 1
    output_dir: str = "rnntest-out"
    limit: Optional[int] = None
    export_perturbations: bool = False
    compare_objectives: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ConfigurationError(f"unknown task_kind {self.task_kind!r}")
        if self.num_runs < 1:
            raise ConfigurationError("num_runs must be at least 1")
        if self.limit is not None and self.limit < 0:
            raise ConfigurationError("limit must be non-negative")

    def check_paths(self):
        for name in ("model", "test_set"):
            if not Path(getattr(self, name)).is_file():
                raise ConfigurationError(f"{name} path does not exist: {getattr(self, name)}")

    def with_objective(self, label):
        kind, cov = parse_objective_label(label, self.coverage)
        return replace(self, objective=make_objective(kind, cov, self.objective))


def make_objective(kind, coverage, template=None):
    """Objective spec of ``kind`` sharing the search settings of ``template``."""
    base = template or ObjectiveSpec("random_baseline")
    if kind == "dlfuzz_joint" and coverage.metric != "NC":
        coverage = replace(coverage, metric="NC")
    return ObjectiveSpec(kind, coverage, m=base.m, lambda_cov=base.lambda_cov,
                         step_policy=base.step_policy, k=base.k,
                         selection_cadence=base.selection_cadence)


def campaign_from_values(values):
    """Build a ``CampaignConfig`` from a typed dict (see ``KEY_TYPES``)."""
    for key in ("model", "test_set"):
        if key not in values:
            raise ConfigurationError(f"missing required key {key!r}")
    cov_args = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("coverage.")}
    coverage = CoverageConfig(**cov_args)
    obj_args = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("objective.")}
    kind = obj_args.pop("kind", "rnn_test_joint")
    if kind == "dlfuzz_joint" and coverage.metric != "NC":
        coverage = replace(coverage, metric="NC")
    objective = ObjectiveSpec(kind, coverage, **obj_args)
    synth = SynthesisConfig(**{k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("synthesis.")})
    top = {k: values[k] for k in ("model", "test_set", "task_kind", "num_runs", "seed", "output_dir",
                                  "limit", "export_perturbations") if k in values}
    return CampaignConfig(objective=objective, coverage=coverage, synthesis=synth,
                          compare_objectives=values.get("compare.objectives", ()), **top)


def campaign_to_values(cfg):
    """Typed dict for a ``CampaignConfig``; round-trips through ``campaign_from_values``."""
    values = {
        "model": cfg.model, "task_kind": cfg.task_kind, "test_set": cfg.test_set,
        "output_dir": cfg.output_dir, "num_runs": cfg.num_runs, "seed": cfg.seed,
        "export_perturbations": cfg.export_perturbations,
        "objective.kind": cfg.objective.kind, "objective.m": cfg.objective.m,
        "objective.lambda_cov": cfg.objective.lambda_cov, "objective.step_policy": cfg.objective.step_policy,
        "objective.k": cfg.objective.k, "objective.selection_cadence": cfg.objective.selection_cadence,
        "coverage.metric": cfg.coverage.metric, "coverage.num_sections": cfg.coverage.num_sections,
        "coverage.section_edges": tuple(cfg.coverage.section_edges),
        "coverage.nc_threshold": cfg.coverage.nc_threshold,
        "synthesis.max_scale": cfg.synthesis.max_scale, "synthesis.epsilon": cfg.synthesis.epsilon,
        "synthesis.step_size": cfg.synthesis.step_size,
    }
    if cfg.limit is not None:
        values["limit"] = cfg.limit
    if cfg.compare_objectives:
        values["compare.objectives"] = tuple(cfg.compare_objectives)
    return values


def resolve_output_dir(configured):
    """The env override wins over the configured directory."""
    return os.environ.get(OUTPUT_DIR_ENV) or configured
