"""Run configuration: one JSON document with a block per module.

Unknown keys anywhere are rejected. Command-line overrides use dotted paths
such as ``train.epochs=5``.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .errors import BadConfig
from .metafair import MetaConfig
from .pruning import PruneConfig
from .skintone import FstType, ToneParams
from .snnl import SnnlParams

STAGES = ("normalize", "train", "prune", "meta-prune", "evaluate", "explain")


@dataclass
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "manifest"
    manifest: Optional[str] = None
    n: int = 4000
    bias: float = 0.9
    age_bias: float = 0.0
    gender_bias: float = 0.0
    size: int = 32
    skin_scheme: str = "binary"
    test_fraction: float = 0.2

    def validate(self):
        if self.source not in ("synthetic", "manifest"):
            raise BadConfig(f"data.source must be 'synthetic' or 'manifest', got {self.source!r}")
        if self.source == "manifest" and not self.manifest:
            raise BadConfig("data.manifest is required when data.source is 'manifest'")
        if self.skin_scheme not in ("binary", "fst"):
            raise BadConfig("data.skin_scheme must be 'binary' or 'fst'")
        if not 0.0 < self.test_fraction < 1.0:
            raise BadConfig("data.test_fraction must lie in (0, 1)")
        if self.n < 1:
            raise BadConfig("data.n must be >= 1")


@dataclass
class ModelBlock:
    conv_channels: tuple = (8, 16, 32)
    n_classes: int = 4


@dataclass
class TrainConfig:
    epochs: int = 10
    lr: float = 0.05
    batch_size: int = 32
    adaptive_blend: bool = False
    tau: float = 0.7
    delta: float = 0.05
    eval_period_K: int = 5
    folds: int = 1

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0:
            raise BadConfig("train.epochs >= 0, train.batch_size >= 1 and train.lr >= 0 are required")
        if self.folds < 1:
            raise BadConfig("train.folds must be >= 1")
        if self.eval_period_K < 1:
            raise BadConfig("train.eval_period_K must be >= 1")


@dataclass
class PruneBlock:
    attribute: int = 0
    prune_ratio: float = 0.02
    max_iterations: int = 3
    acc_threshold: float = 0.03
    fair_threshold: float = 0.005
    finetune_epochs: int = 3
    finetune_lr: float = 0.02
    finetune_batch_size: int = 32

    def to_prune_config(self, positive_class: int, seed: int) -> PruneConfig:
        d = dataclasses.asdict(self)
        d.pop("attribute")
        return PruneConfig(**d, positive_class=positive_class, seed=seed)


@dataclass
class MetaBlock:
    alpha: float = 0.05
    eta: float = 0.1
    meta_iterations_T: int = 20
    meta_split: float = 0.10
    fd_step: float = 1e-3

    def to_meta_config(self, seed: int) -> MetaConfig:
        return MetaConfig(**dataclasses.asdict(self), seed=seed)


@dataclass
class ToneBlock:
    lambda_L: float = 0.01
    lambda_b: float = 0.01
    eta: float = 0.1
    sigma: float = 2.0
    kernel_radius: int = 2
    edge_radius: int = 3
    target_fst: str = "IV"

    def to_params(self, seed: int) -> ToneParams:
        d = dataclasses.asdict(self)
        d["target_fst"] = FstType.parse(d["target_fst"])
        return ToneParams(**d, rng_seed=seed)


@dataclass
class SnnlBlock:
    temperature_T: float = 1.0
    batch_b: int = 64


@dataclass
class MetricsBlock:
    positive_class: int = 0
    di_attribute: int = 0


@dataclass
class ExplainBlock:
    n_images: int = 4
    class_c: Optional[int] = None  # None: each image's predicted class
    max_channels: int = 4


@dataclass
class RunConfig:
    seed: int = 0
    out: str = "run"
    stages: tuple = STAGES
    workers: int = 1
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelBlock = field(default_factory=ModelBlock)
    train: TrainConfig = field(default_factory=TrainConfig)
    tone: ToneBlock = field(default_factory=ToneBlock)
    snnl: SnnlBlock = field(default_factory=SnnlBlock)
    prune: PruneBlock = field(default_factory=PruneBlock)
    meta: MetaBlock = field(default_factory=MetaBlock)
    metrics: MetricsBlock = field(default_factory=MetricsBlock)
    explain: ExplainBlock = field(default_factory=ExplainBlock)
    checkpoint: Optional[str] = None

    def validate(self) -> "RunConfig":
        unknown = [s for s in self.stages if s not in STAGES]
        if unknown:
            raise BadConfig(f"unknown stages {unknown}; choose from {list(STAGES)}")
        if self.workers < 1:
            raise BadConfig("workers must be >= 1")
        self.data.validate()
        self.train.validate()
        # the module configs validate themselves on construction
        try:
            self.tone.to_params(self.seed)
            SnnlParams(**dataclasses.asdict(self.snnl))
            self.prune.to_prune_config(self.metrics.positive_class, self.seed)
            self.meta.to_meta_config(self.seed)
        except (ValueError, KeyError) as exc:
            raise BadConfig(str(exc)) from exc
        if not 0 <= self.metrics.positive_class < self.model.n_classes:
            raise BadConfig("metrics.positive_class outside the class range")
        return self

    def snnl_params(self) -> SnnlParams:
        return SnnlParams(**dataclasses.asdict(self.snnl))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["stages"] = list(self.stages)
        d["model"]["conv_channels"] = list(self.model.conv_channels)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def hash(self) -> str:
        """SHA-256 of the canonical JSON form, ignoring the output directory."""
        d = self.to_dict()
        d.pop("out")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _build(cls, data: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise BadConfig(f"{path or 'config'} must be an object")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        where = f" in {path}" if path else ""
        raise BadConfig(f"unknown key(s){where}: {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        f = fields[name]
        sub = f.default_factory() if f.default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(sub):
            kwargs[name] = _build(type(sub), value, f"{path}.{name}" if path else name)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise BadConfig(str(exc)) from exc


def config_from_dict(data: dict) -> RunConfig:
    return _build(RunConfig, data, "").validate()


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise BadConfig(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise BadConfig(f"config is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def parse_value(text: str):
    """JSON literal if it parses, otherwise the raw string."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Set dotted keys (``"prune.max_iterations=2"``) on a config dict copy."""
    data = copy.deepcopy(data)
    for item in overrides:
        if "=" not in item:
            raise BadConfig(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise BadConfig(f"cannot set {key}: {p} is not a block")
        node[parts[-1]] = parse_value(raw)
    return data
