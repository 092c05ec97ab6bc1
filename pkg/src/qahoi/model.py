"""End-to-end network: backbone, encoder, anchor queries, decoder, heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .backbone import Backbone, FeatureProjector, prepare_images
from .config import Config
from .deformable_transformer import Decoder, Encoder, QueryBank, attn_config
from .interaction_head import InteractionHead, compose_boxes
from .layers import Module
from .numerics import Array
from .training.losses import LayerOutput


@dataclass
class ModelOutput:
    layers: list[LayerOutput]  # one per decoder layer, the last is the prediction
    anchors: Array  # (N_q, 2)

    @property
    def final(self) -> LayerOutput:
        return self.layers[-1]


class QAHOI(Module):
    def __init__(self, cfg: Config, seed: int = 0):
        cfg.validate()
        self.cfg = cfg
        rng = np.random.default_rng(seed)
        bcfg = cfg.backbone
        c = bcfg.base_dim
        self.num_levels = 4 if bcfg.use_extra_level else 3
        self.backbone = Backbone(bcfg, rng)
        self.projector = FeatureProjector([2 * c, 4 * c, 8 * c], bcfg.model_dim, rng, self.num_levels)
        acfg = attn_config(cfg.transformer, bcfg.model_dim, self.num_levels)
        self.encoder = Encoder(acfg, cfg.transformer.ffn_dim, rng)
        self.queries = QueryBank(cfg.transformer.queries, bcfg.model_dim, rng)
        self.decoder = Decoder(acfg, cfg.transformer.ffn_dim, rng)
        self.head = InteractionHead(cfg.head, bcfg.model_dim, rng)

    def backbone_parameters(self):
        return [p for name, p in self.named_parameters() if name.startswith("backbone.")]

    def generate_anchors(self) -> Array:
        return self.queries.generate_anchors()

    def predict_anchors(self) -> np.ndarray:
        with nx.no_grad():
            return self.queries.generate_anchors().data.copy()

    def forward(self, images) -> ModelOutput:
        """``images``: a list of 3 x H x W arrays with values in [0, 1]."""
        batch, sizes = prepare_images(images, self.cfg.backbone.use_extra_level)
        pyramid = self.backbone.extract_pyramid(batch, sizes)
        seq = self.projector.project_and_flatten(pyramid)
        memory = self.encoder.encode(seq, self.projector.positional_encoding(seq))
        anchors = self.queries.generate_anchors()
        mode = self.cfg.head.box_composition
        layers = []
        for emb in self.decoder.decode(self.queries, anchors, memory):
            raw = self.head.predict_heads(emb)
            layers.append(LayerOutput(
                human_boxes=compose_boxes(raw.human_delta, anchors, mode),
                object_boxes=compose_boxes(raw.object_delta, anchors, mode),
                object_logits=raw.object_logits,
                action_logits=raw.action_logits,
            ))
        return ModelOutput(layers, anchors)

    def predict(self, images) -> ModelOutput:
        with nx.no_grad():
            return self.forward(images)
