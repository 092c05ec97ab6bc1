"""From per-anchor outputs to a ranked HOI instance list.

Each query yields one instance per action class scored c_o * c_a. Top-K
keeps whole queries, then per-action greedy NMS drops instances overlapping
an already kept, higher-ranked instance by more than delta.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .config import PostprocessConfig
from .interaction_head import box_iou, cxcywh_to_xyxy
from .numerics import _sigmoid_np
from .structures import HOIInstance

IOU_VARIANTS = ("human", "object", "combined")
SCORE_VARIANTS = ("ca", "co", "caco")


def expand_instances(human_boxes, object_boxes, object_logits, action_logits) -> list[HOIInstance]:
    """One instance per (query, action) for a single image.

    Boxes are (N_q, 4) normalized cx-cy-w-h; logits are raw. The object
    class is the most probable non-"no pair" slot.
    """
    obj_prob = _sigmoid_np(np.asarray(object_logits, dtype=float))[:, :-1]
    act_prob = _sigmoid_np(np.asarray(action_logits, dtype=float))
    hx = cxcywh_to_xyxy(human_boxes)
    ox = cxcywh_to_xyxy(object_boxes)
    labels = obj_prob.argmax(axis=1)
    c_o = obj_prob[np.arange(len(labels)), labels]
    out = []
    for q in range(len(labels)):
        h, o = tuple(map(float, hx[q])), tuple(map(float, ox[q]))
        for a in range(act_prob.shape[1]):
            c_a = float(act_prob[q, a])
            out.append(HOIInstance(h, o, int(labels[q]), float(c_o[q]), a, c_a, float(c_o[q]) * c_a, q))
    return out


def canonical_order(instances: list[HOIInstance]) -> list[HOIInstance]:
    """Descending c_HOI, then anchor index, then action class."""
    return sorted(instances, key=lambda d: (-d.score, d.anchor_index, d.action_class))


def _query_score(inst: HOIInstance, variant: str) -> float:
    if variant == "co":
        return inst.object_score
    if variant == "ca":
        return inst.action_score
    if variant == "caco":
        return inst.score
    raise ValueError(f"unknown top-K score {variant!r}")


def topk_filter(instances: list[HOIInstance], cfg: PostprocessConfig) -> list[HOIInstance]:
    """Keep every instance of the ``cfg.topk`` best queries.

    A query's score is c_o, or the max over its actions of c_a or c_a * c_o.
    Queries tie-break by anchor index.
    """
    best: dict[int, float] = {}
    for inst in instances:
        s = _query_score(inst, cfg.score)
        best[inst.anchor_index] = max(best.get(inst.anchor_index, -np.inf), s)
    ranked = sorted(best, key=lambda q: (-best[q], q))
    kept = set(ranked[: cfg.topk])
    return canonical_order([d for d in instances if d.anchor_index in kept])


def pair_iou(i: HOIInstance, j: HOIInstance, variant: str = "combined") -> float:
    """Overlap of two instances: human IoU, object IoU, or their product."""
    if variant not in IOU_VARIANTS:
        raise ValueError(f"unknown IoU variant {variant!r}")
    iou_h = float(box_iou(np.array(i.human_box), np.array(j.human_box))[0, 0])
    iou_o = float(box_iou(np.array(i.object_box), np.array(j.object_box))[0, 0])
    if variant == "human":
        return iou_h
    if variant == "object":
        return iou_o
    return iou_h * iou_o


def pair_iou_matrix(instances: list[HOIInstance], variant: str = "combined") -> np.ndarray:
    if variant not in IOU_VARIANTS:
        raise ValueError(f"unknown IoU variant {variant!r}")
    if variant == "human":
        boxes = np.array([d.human_box for d in instances]).reshape(-1, 4)
        return box_iou(boxes, boxes)
    if variant == "object":
        boxes = np.array([d.object_box for d in instances]).reshape(-1, 4)
        return box_iou(boxes, boxes)
    return pair_iou_matrix(instances, "human") * pair_iou_matrix(instances, "object")


def hoi_nms(instances: list[HOIInstance], delta: float = 0.5, variant: str = "combined") -> list[HOIInstance]:
    """Greedy per-action suppression; output in canonical order."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError("delta must lie in [0, 1]")
    by_action: dict[int, list[HOIInstance]] = defaultdict(list)
    for inst in canonical_order(instances):
        by_action[inst.action_class].append(inst)
    kept = []
    for group in by_action.values():
        iou = pair_iou_matrix(group, variant)
        alive = np.ones(len(group), dtype=bool)
        for k in range(len(group)):
            if alive[k]:
                kept.append(group[k])
                alive[k + 1:] &= ~(iou[k, k + 1:] > delta)
    return canonical_order(kept)


def filter_instances(instances: list[HOIInstance], cfg: PostprocessConfig) -> list[HOIInstance]:
    kept = topk_filter(instances, cfg)
    return hoi_nms(kept, cfg.delta, cfg.iou) if cfg.use_nms else kept


def postprocess(human_boxes, object_boxes, object_logits, action_logits,
                cfg: PostprocessConfig) -> list[HOIInstance]:
    return filter_instances(expand_instances(human_boxes, object_boxes, object_logits, action_logits), cfg)
