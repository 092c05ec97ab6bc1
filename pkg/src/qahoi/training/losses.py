"""Set-prediction losses: focal classification, box L1 and GIoU, auxiliary layers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numerics as nx
from ..config import LossConfig
from ..interaction_head import paired_giou
from ..numerics import Array
from ..structures import GroundTruthSet
from .matcher import MatchResult

TERMS = ("obj_focal", "act_focal", "human_l1", "object_l1", "human_giou", "object_giou")


def focal_loss(logits, targets, alpha: float = 0.25, gamma: float = 2.0) -> Array:
    """Elementwise sigmoid focal loss.

    With p = sigmoid(logit): target 1 gives -alpha (1-p)^gamma log p, target
    0 gives -(1-alpha) p^gamma log(1-p). Reduction is left to the caller.
    """
    if not 0.0 <= alpha <= 1.0 or gamma < 0:
        raise ValueError("focal loss needs alpha in [0, 1] and gamma >= 0")
    logits = nx.as_array(logits)
    t = np.broadcast_to(np.asarray(targets, dtype=logits.dtype), logits.shape)
    p = nx.sigmoid(logits)
    log_p = nx.log_sigmoid(logits)
    log_not_p = nx.log_sigmoid(-logits)
    if gamma == 0:
        pos_mod, neg_mod = 1.0, 1.0
    else:
        pos_mod = (1.0 - p) ** gamma
        neg_mod = p ** gamma
    pos = pos_mod * log_p * (-alpha)
    neg = neg_mod * log_not_p * (-(1.0 - alpha))
    return pos * t + neg * (1.0 - t)


@dataclass
class LayerOutput:
    """Composed predictions of one decoder layer for a batch."""

    human_boxes: Array  # (B, N_q, 4) normalized cx, cy, w, h
    object_boxes: Array
    object_logits: Array  # (B, N_q, K_o + 1)
    action_logits: Array  # (B, N_q, K_a)


@dataclass
class LossBreakdown:
    total: Array
    terms: dict[str, float] = field(default_factory=dict)

    def as_row(self) -> dict[str, float]:
        return {"total": float(self.total.data), **self.terms}


def _layer_losses(out: LayerOutput, targets: list[GroundTruthSet], matches: list[MatchResult],
                  cfg: LossConfig, num_boxes: float) -> dict[str, Array]:
    B, Nq, K1 = out.object_logits.shape
    K_a = out.action_logits.shape[2]
    no_pair = K1 - 1

    obj_target = np.zeros((B, Nq, K1))
    obj_target[:, :, no_pair] = 1.0
    act_target = np.zeros((B, Nq, K_a))
    flat_idx, gt_h, gt_o = [], [], []
    for b, (gts, match) in enumerate(zip(targets, matches)):
        q = match.query_indices
        g = match.gt_indices
        if len(q) == 0:
            continue
        obj_target[b, q, no_pair] = 0.0
        obj_target[b, q, gts.object_classes()[g]] = 1.0
        act_target[b, q] = gts.action_targets(K_a)[g]
        flat_idx.append(b * Nq + q)
        gt_h.append(gts.human_cxcywh()[g])
        gt_o.append(gts.object_cxcywh()[g])

    losses = {
        "obj_focal": focal_loss(out.object_logits, obj_target, cfg.alpha, cfg.gamma).sum() / num_boxes,
        "act_focal": focal_loss(out.action_logits, act_target, cfg.alpha, cfg.gamma).sum() / num_boxes,
    }
    if not flat_idx:
        zero = Array(0.0, dtype=out.human_boxes.dtype)
        losses.update(human_l1=zero, object_l1=zero, human_giou=zero, object_giou=zero)
        return losses

    idx = np.concatenate(flat_idx)
    ph = out.human_boxes.reshape(B * Nq, 4)[idx]
    po = out.object_boxes.reshape(B * Nq, 4)[idx]
    th = Array(np.concatenate(gt_h), dtype=ph.dtype)
    to = Array(np.concatenate(gt_o), dtype=po.dtype)
    losses["human_l1"] = nx.abs_(ph - th).sum() / num_boxes
    losses["object_l1"] = nx.abs_(po - to).sum() / num_boxes
    losses["human_giou"] = (1.0 - paired_giou(ph, th)).sum() / num_boxes
    losses["object_giou"] = (1.0 - paired_giou(po, to)).sum() / num_boxes
    return losses


def compute_loss(layers: list[LayerOutput], targets: list[GroundTruthSet],
                 matches: list[list[MatchResult]], cfg: LossConfig) -> LossBreakdown:
    """Weighted loss over decoder layers; ``matches[l][b]`` pairs layer l, image b.

    Terms are normalized by the number of real annotations in the batch
    (at least 1). Without auxiliary supervision only the last layer counts.
    """
    num_boxes = float(max(1, sum(len(t) for t in targets)))
    used = range(len(layers)) if cfg.aux else [len(layers) - 1]
    weights = {"obj_focal": cfg.cls, "act_focal": cfg.act, "human_l1": cfg.l1, "object_l1": cfg.l1,
               "human_giou": cfg.giou, "object_giou": cfg.giou}
    total = None
    terms: dict[str, float] = {}
    last = len(layers) - 1
    for li in used:
        parts = _layer_losses(layers[li], targets, matches[li], cfg, num_boxes)
        for name, value in parts.items():
            key = name if li == last else f"{name}_aux{li}"
            terms[key] = float(value.data)
            weighted = value * weights[name]
            total = weighted if total is None else total + weighted
    return LossBreakdown(total=total, terms=terms)
