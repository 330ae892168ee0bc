"""One JSON document holding every configurable value of a run."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .dataio import DatasetConfig
from .model import ModelConfig, TrainConfig
from .nn.layers import ConfigError

CONFIG_VERSION = 1


@dataclass
class RunConfig:
    data: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "RunConfig":
        self.data.validate()
        self.model.validate()
        self.train.validate()
        if (self.model.t_h, self.model.t_f) != (self.data.t_h, self.data.t_f):
            raise ConfigError(f"model horizon (t_h={self.model.t_h}, t_f={self.model.t_f}) differs "
                              f"from data horizon (t_h={self.data.t_h}, t_f={self.data.t_f})")
        return self

    def to_dict(self) -> dict:
        d = {"version": CONFIG_VERSION, "data": asdict(self.data), "model": asdict(self.model),
             "train": asdict(self.train)}
        d["data"]["split"] = list(self.data.split)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        doc = dict(doc)
        version = doc.pop("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        unknown = set(doc) - {"data", "model", "train"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        data = _build(DatasetConfig, doc.get("data", {}))
        data.split = tuple(data.split)
        model_doc = dict(doc.get("model", {}))
        model_doc.setdefault("t_h", data.t_h)
        model_doc.setdefault("t_f", data.t_f)
        return cls(data, _build(ModelConfig, model_doc), _build(TrainConfig, doc.get("train", {})))

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _build(klass, values: dict):
    names = {f.name for f in fields(klass)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
    return klass(**values)


def desk_config() -> RunConfig:
    """Small network sized for single-core desk training runs."""
    cfg = RunConfig()
    cfg.model.d, cfg.model.n_heads, cfg.model.n_layers = 32, 4, 1
    cfg.train.batch_size = 32
    return cfg
