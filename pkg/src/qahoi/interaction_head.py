"""Per-anchor prediction of human box, object box, object class and actions.

Boxes are normalized (cx, cy, w, h). Plain-numpy geometry helpers serve
matching, NMS and evaluation; the ``Array`` variants feed the losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .config import HeadConfig
from .layers import MLP, Linear, Module
from .numerics import Array


# ----------------------------------------------------------------------------
# geometry on plain arrays


def cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=float)
    c, s = boxes[..., :2], boxes[..., 2:]
    return np.concatenate([c - s / 2, c + s / 2], axis=-1)


def xyxy_to_cxcywh(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=float)
    lo, hi = boxes[..., :2], boxes[..., 2:]
    return np.concatenate([(lo + hi) / 2, hi - lo], axis=-1)


def box_area(xyxy: np.ndarray) -> np.ndarray:
    wh = np.clip(xyxy[..., 2:] - xyxy[..., :2], 0.0, None)
    return wh[..., 0] * wh[..., 1]


def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of corner-form boxes, (N, 4) x (M, 4) -> (N, M).

    A pair involving a zero-area box has IoU 0.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    area_a, area_b = box_area(a), box_area(b)
    lo = np.maximum(a[:, None, :2], b[None, :, :2])
    hi = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(hi - lo, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    degenerate = (area_a[:, None] <= 0) | (area_b[None, :] <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        iou = np.where(degenerate, 0.0, inter / np.where(union > 0, union, 1.0))
    return iou


def generalized_box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise GIoU of corner-form boxes, in (-1, 1]."""
    a = np.asarray(a, dtype=float).reshape(-1, 4)
    b = np.asarray(b, dtype=float).reshape(-1, 4)
    iou = box_iou(a, b)
    area_a, area_b = box_area(a), box_area(b)
    lo = np.maximum(a[:, None, :2], b[None, :, :2])
    hi = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(hi - lo, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    union = area_a[:, None] + area_b[None, :] - inter
    elo = np.minimum(a[:, None, :2], b[None, :, :2])
    ehi = np.maximum(a[:, None, 2:], b[None, :, 2:])
    ewh = np.clip(ehi - elo, 0.0, None)
    enclosing = ewh[..., 0] * ewh[..., 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        penalty = np.where(enclosing > 0, (enclosing - union) / np.where(enclosing > 0, enclosing, 1.0), 0.0)
    return iou - penalty


def box_geometry(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Corner forms, IoU and GIoU of two (cx, cy, w, h) boxes."""
    xa, xb = cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)
    return xa, xb, float(box_iou(xa, xb)[0, 0]), float(generalized_box_iou(xa, xb)[0, 0])


# ----------------------------------------------------------------------------
# differentiable geometry


def cxcywh_to_xyxy_array(boxes: Array) -> Array:
    c, s = boxes[..., :2], boxes[..., 2:]
    return nx.concat([c - s * 0.5, c + s * 0.5], axis=-1)


def paired_giou(a: Array, b: Array, eps: float = 0.0) -> Array:
    """Elementwise GIoU between matched (N, 4) cx-cy-w-h boxes."""
    xa, xb = cxcywh_to_xyxy_array(a), cxcywh_to_xyxy_array(b)
    area_a = (xa[:, 2] - xa[:, 0]) * (xa[:, 3] - xa[:, 1])
    area_b = (xb[:, 2] - xb[:, 0]) * (xb[:, 3] - xb[:, 1])
    lo = nx.maximum(xa[:, :2], xb[:, :2])
    hi = nx.minimum(xa[:, 2:], xb[:, 2:])
    wh = nx.maximum(hi - lo, 0.0)
    inter = wh[:, 0] * wh[:, 1]
    union = area_a + area_b - inter
    iou = inter / (union + eps)
    elo = nx.minimum(xa[:, :2], xb[:, :2])
    ehi = nx.maximum(xa[:, 2:], xb[:, 2:])
    ewh = ehi - elo
    enclosing = ewh[:, 0] * ewh[:, 1]
    return iou - (enclosing - union) / (enclosing + eps)


def compose_boxes(delta: Array, anchors: Array, mode: str = "inverse_sigmoid") -> Array:
    """Turn raw (d_x, d_y, w, h) outputs into normalized boxes around anchors.

    ``delta`` is (..., N_q, 4) and ``anchors`` (N_q, 2). In the default mode
    the center is sigmoid(logit(anchor) + d); ``"additive"`` clips
    anchor + d into [0, 1]. Sizes are always sigmoid(w), sigmoid(h).
    """
    if mode == "inverse_sigmoid":
        center = nx.sigmoid(nx.inverse_sigmoid(anchors) + delta[..., :2])
    elif mode == "additive":
        center = nx.clip(anchors + delta[..., :2], 0.0, 1.0)
    else:
        raise ValueError(f"unknown box composition {mode!r}")
    return nx.concat([center, nx.sigmoid(delta[..., 2:])], axis=-1)


# ----------------------------------------------------------------------------


@dataclass
class RawPrediction:
    human_delta: Array  # (B, N_q, 4)
    object_delta: Array  # (B, N_q, 4)
    object_logits: Array  # (B, N_q, K_o + 1), last slot is "no pair"
    action_logits: Array  # (B, N_q, K_a)


class InteractionHead(Module):
    def __init__(self, cfg: HeadConfig, model_dim: int, rng: np.random.Generator):
        self.cfg = cfg
        self.human_box = MLP(model_dim, model_dim, 4, 3, rng, zero_last=True)
        self.object_box = MLP(model_dim, model_dim, 4, 3, rng, zero_last=True)
        self.object_class = Linear(model_dim, cfg.num_object_classes + 1, rng)
        self.action_class = Linear(model_dim, cfg.num_action_classes, rng)
        prior = -np.log((1 - cfg.prior_prob) / cfg.prior_prob)
        self.object_class.bias.assign(np.full(cfg.num_object_classes + 1, prior))
        self.action_class.bias.assign(np.full(cfg.num_action_classes, prior))
        self.object_class.bias.init_spec = self.action_class.bias.init_spec = "focal_prior"

    def predict_heads(self, embeddings: Array) -> RawPrediction:
        return RawPrediction(
            human_delta=self.human_box(embeddings),
            object_delta=self.object_box(embeddings),
            object_logits=self.object_class(embeddings),
            action_logits=self.action_class(embeddings),
        )

    forward = predict_heads
