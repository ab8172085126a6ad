"""Run configuration: strict JSON (comments stripped, unknown keys rejected)
with dotted-path overrides from the command line."""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, fields

from .errors import ConfigError, KwslabError
from .losses import LossConfig
from .model import ModelConfig
from .operate import ASSISTIVE, HANDS_FREE, Scenario
from .sampling import SamplerConfig
from .synthgen import SynthConfig
from .training import TrainConfig

DATA_ROOT_ENV = "KWSLAB_DATA_ROOT"


@dataclass(frozen=True)
class CorpusConfig:
    root: str | None = None
    synth: SynthConfig | None = None

    def __post_init__(self):
        if self.root is None and self.synth is None:
            raise ConfigError("corpus needs a root directory, a synth section, or both")


@dataclass(frozen=True)
class TaskConfig:
    keywords: tuple[str, ...]
    beta_neg_s: float = 0.1
    beta_pos_s: float = 0.3

    def __post_init__(self):
        if not self.keywords:
            raise ConfigError("task.keywords must list at least one keyword")
        if self.beta_neg_s < 0 or self.beta_pos_s < 0:
            raise ConfigError("task buffers must be >= 0")
        object.__setattr__(self, "keywords", tuple(k.lower() for k in self.keywords))


@dataclass(frozen=True)
class EvaluationConfig:
    tau: float = 0.5
    bootstrap_resamples: int = 4000
    permutation_draws: int = 10000
    target_recall: float = 0.10
    fa_budgets: tuple[float, ...] = (2.0, 0.5)
    scenarios: tuple[Scenario, ...] = (ASSISTIVE, HANDS_FREE)
    stat_seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    corpus: CorpusConfig
    task: TaskConfig
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seeds: tuple[int, ...] = (0, 1, 2)

    def resolved_root(self) -> str | None:
        return os.environ.get(DATA_ROOT_ENV) or self.corpus.root


_TUPLE_FIELDS = {"word_duration_range_s", "gap_range_s", "keywords", "fa_budgets", "seeds", "channel_names"}


def _build_dataclass(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        kwargs[key] = _coerce(cls, key, value, f"{path}.{key}")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (KwslabError, TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _coerce(cls, key, value, path):
    nested = {
        (CorpusConfig, "synth"): SynthConfig,
        (RunConfig, "corpus"): CorpusConfig,
        (RunConfig, "task"): TaskConfig,
        (RunConfig, "model"): ModelConfig,
        (RunConfig, "loss"): LossConfig,
        (RunConfig, "sampler"): SamplerConfig,
        (RunConfig, "training"): TrainConfig,
        (RunConfig, "evaluation"): EvaluationConfig,
    }
    target = nested.get((cls, key))
    if target is not None and value is not None:
        return _build_dataclass(target, value, path)
    if cls is EvaluationConfig and key == "scenarios":
        return tuple(_build_dataclass(Scenario, v, f"{path}[{i}]") for i, v in enumerate(value))
    if key in _TUPLE_FIELDS and isinstance(value, list):
        return tuple(value)
    return value


def strip_json_comments(text: str) -> str:
    """Drop // line comments and /* */ blocks outside of strings."""
    out = []
    i = 0
    n = len(text)
    in_string = False
    while i < n:
        ch = text[i]
        if in_string:
            out.append(ch)
            if ch == "\\" and i + 1 < n:
                out.append(text[i + 1])
                i += 2
                continue
            if ch == '"':
                in_string = False
            i += 1
            continue
        if ch == '"':
            in_string = True
            out.append(ch)
            i += 1
            continue
        if ch == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                i += 1
            continue
        if ch == "/" and i + 1 < n and text[i + 1] == "*":
            i += 2
            while i + 1 < n and not (text[i] == "*" and text[i + 1] == "/"):
                i += 1
            i += 2
            continue
        out.append(ch)
        i += 1
    return "".join(out)


def _apply_override(data: dict, dotted: str):
    if "=" not in dotted:
        raise ConfigError(f"override {dotted!r} must look like path.to.key=value")
    path, raw = dotted.split("=", 1)
    keys = path.strip().split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = data
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override path {path!r} crosses a non-object value")
    node[keys[-1]] = value


def run_config_from_dict(data: dict) -> RunConfig:
    return _build_dataclass(RunConfig, data, "config")


def load_run_config(path: str, overrides=(), require_corpus=False) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(strip_json_comments(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    for item in overrides:
        _apply_override(data, item)
    config = run_config_from_dict(data)
    if require_corpus:
        root = config.resolved_root()
        if root is None:
            raise ConfigError("this command needs corpus.root (or KWSLAB_DATA_ROOT)")
        manifest = os.path.join(root, "manifest.json")
        if not os.path.exists(manifest):
            raise ConfigError(f"referenced corpus manifest does not exist: {manifest}")
    return config


def config_to_dict(config) -> dict:
    """Canonical plain-dict view (tuples as lists) for hashing and reports."""

    def convert(obj):
        if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
            return {f.name: convert(getattr(obj, f.name)) for f in fields(obj)}
        if isinstance(obj, (list, tuple)):
            return [convert(v) for v in obj]
        return obj

    return convert(config)
