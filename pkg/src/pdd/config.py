"""Run configuration: one JSON document covering model, training, data and scoring."""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from importlib import resources

import jsonschema

from .backbones import EncoderConfig
from .data import SyntheticSpec
from .errors import ConfigError
from .objectives import DivThresholds, LossWeights
from .rng import digest64


@dataclass
class ModelConfig:
    teachers: int = 2
    students: int = 2
    use_mpa: bool = True
    mmu_stages: str = "all"


@dataclass
class TrainSettings:
    epochs: int = 100
    batch_size: int = 8
    lr_max: float = 2e-3
    lr_min: float = 0.0
    seed: int = 0
    precision: str = "float32"
    # wall time would make otherwise identical logs differ byte-wise
    log_wall_time: bool = False
    checkpoint_every: int = 0
    debug: bool = False
    data_dir: str | None = None
    out_dir: str | None = None


@dataclass
class ScoringConfig:
    score_pairs: str = "fused"
    reduction: str = "max"
    sigma: float = 4.0
    raw_maps: bool = False


SCORING_DEFAULTS = asdict(ScoringConfig())

_SECTIONS = {
    "encoder": EncoderConfig,
    "model": ModelConfig,
    "loss": LossWeights,
    "div": DivThresholds,
    "train": TrainSettings,
    "data": SyntheticSpec,
    "scoring": ScoringConfig,
}


def _schema(name):
    return json.loads(resources.files("pdd.schemas").joinpath(name).read_text())


def validate_document(doc, schema="config.schema.json"):
    try:
        jsonschema.validate(doc, _schema(schema))
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{where}: {exc.message}") from None


@dataclass
class Config:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    div: DivThresholds = field(default_factory=DivThresholds)
    train: TrainSettings = field(default_factory=TrainSettings)
    data: SyntheticSpec = field(default_factory=SyntheticSpec)
    scoring: ScoringConfig = field(default_factory=ScoringConfig)

    @classmethod
    def from_dict(cls, doc):
        """Schema-check ``doc`` (unknown keys rejected) and fill in defaults."""
        validate_document(doc)
        kwargs = {}
        for name, typ in _SECTIONS.items():
            try:
                kwargs[name] = typ(**doc.get(name, {}))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"{name}: {exc}") from None
        return cls(**kwargs)

    def to_dict(self):
        out = {}
        for name in _SECTIONS:
            sec = getattr(self, name)
            out[name] = sec.to_dict() if hasattr(sec, "to_dict") else asdict(sec)
        return out

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def digest(self):
        return digest64(json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode())

    def replace(self, **sections):
        """Copy with some fields overridden: ``replace(train={"epochs": 5})``."""
        doc = copy.deepcopy(self.to_dict())
        for sec, vals in sections.items():
            doc.setdefault(sec, {}).update(vals)
        return Config.from_dict(doc)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            try:
                doc = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(doc)

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json())
