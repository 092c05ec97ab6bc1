"""Declarative configuration.

Defaults reproduce the full-scale settings (300 queries, 6 layers, 256-d
embeddings, top-100 object-score filtering, combined-IoU NMS at 0.5).
:meth:`Config.desk` returns the small CPU profile used by the test suite.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


@dataclass
class BackboneConfig:
    base_dim: int = 96
    model_dim: int = 256
    use_extra_level: bool = False
    stage_depth: int = 1  # residual 3x3 blocks after each downsampling conv

    def validate(self, heads: int) -> None:
        if self.base_dim <= 0 or self.model_dim <= 0:
            raise ValueError("backbone dimensions must be positive")
        if self.model_dim % heads:
            raise ValueError(f"model_dim {self.model_dim} not divisible by {heads} heads")


@dataclass
class TransformerConfig:
    heads: int = 8
    points: int = 4
    layers: int = 6
    queries: int = 300
    ffn_dim: int = 1024

    def validate(self) -> None:
        for name in ("heads", "points", "layers", "queries", "ffn_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"transformer.{name} must be positive")


@dataclass
class HeadConfig:
    num_object_classes: int = 80
    num_action_classes: int = 117
    # "inverse_sigmoid": c = sigmoid(logit(p) + d); "additive": c = clip(p + d, 0, 1)
    box_composition: str = "inverse_sigmoid"
    prior_prob: float = 0.01


@dataclass
class LossConfig:
    cls: float = 2.0
    act: float = 2.0
    l1: float = 5.0
    giou: float = 2.0
    alpha: float = 0.25
    gamma: float = 2.0
    aux: bool = True


@dataclass
class TrainConfig:
    lr: float = 1e-4
    lr_backbone: float = 1e-5
    weight_decay: float = 1e-4
    epochs: int = 150
    lr_drop: int = 120
    lr_drop_factor: float = 0.1
    clip_max_norm: float = 0.1
    batch_size: int = 16
    max_steps: int | None = None
    precision: int = 64
    checkpoint_every: int = 0  # epochs; 0 keeps only the final checkpoint
    log_every: int = 1


@dataclass
class PostprocessConfig:
    topk: int = 100
    delta: float = 0.5
    iou: str = "combined"  # human | object | combined
    score: str = "co"  # ca | co | caco
    use_nms: bool = True

    def validate(self) -> None:
        if self.topk < 1:
            raise ValueError("postprocess.topk must be >= 1")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("postprocess.delta must lie in [0, 1]")
        if self.iou not in ("human", "object", "combined"):
            raise ValueError(f"unknown IoU variant {self.iou!r}")
        if self.score not in ("ca", "co", "caco"):
            raise ValueError(f"unknown top-K score {self.score!r}")


@dataclass
class EvalConfig:
    match_iou: float = 0.5
    rare_threshold: int = 10
    bins: int = 10
    min_bin_count: int = 1000


@dataclass
class SyntheticConfig:
    seed: int = 0
    num_images: int = 20
    image_size: int = 64
    num_object_classes: int = 2
    num_action_classes: int = 3
    instances_per_image: int = 1


@dataclass
class DataConfig:
    annotations: str | None = None
    image_dir: str | None = None


@dataclass
class Config:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    transformer: TransformerConfig = field(default_factory=TransformerConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> "Config":
        self.transformer.validate()
        self.backbone.validate(self.transformer.heads)
        self.postprocess.validate()
        if self.head.box_composition not in ("inverse_sigmoid", "additive"):
            raise ValueError(f"unknown box composition {self.head.box_composition!r}")
        if self.train.precision not in (32, 64):
            raise ValueError("train.precision must be 32 or 64")
        return self

    @classmethod
    def desk(cls) -> "Config":
        """CPU-tractable profile: C_d=64, N_q=20, N_L=2, M=4, K=2."""
        return cls(
            backbone=BackboneConfig(base_dim=16, model_dim=64),
            transformer=TransformerConfig(heads=4, points=2, layers=2, queries=20, ffn_dim=128),
            head=HeadConfig(num_object_classes=2, num_action_classes=3),
            train=TrainConfig(lr=1e-3, lr_backbone=1e-3, epochs=2000, lr_drop=1500,
                              batch_size=20, max_steps=2000, log_every=10),
            eval=EvalConfig(min_bin_count=0),
        ).validate()

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict[str, Any], base: "Config | None" = None) -> "Config":
        cfg = base or cls()
        for section, values in raw.items():
            if section == "profile":
                continue
            if not hasattr(cfg, section):
                raise KeyError(f"unknown config section {section!r}")
            target = getattr(cfg, section)
            for key, value in (values or {}).items():
                if not hasattr(target, key):
                    raise KeyError(f"unknown config key {section}.{key}")
                setattr(target, key, value)
        return cfg.validate()

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        """Read a YAML or JSON file; ``profile: desk`` starts from the desk profile."""
        text = Path(path).read_text()
        raw = json.loads(text) if str(path).endswith(".json") else yaml.safe_load(text)
        raw = raw or {}
        profile = raw.get("profile", "full")
        if profile not in ("full", "desk"):
            raise ValueError(f"unknown profile {profile!r}")
        base = cls.desk() if profile == "desk" else cls()
        return cls.from_dict(raw, base)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
