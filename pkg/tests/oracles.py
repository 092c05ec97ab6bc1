"""Slow, independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


# -- assignment ---------------------------------------------------------------


@lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(n))), dtype=np.int64).reshape(-1, n)


def brute_force_assignment(cost: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Minimum total over all n! permutations and the lexicographically first minimizer.

    Totals are accumulated row by row, in the same order a plain Python
    ``sum`` over rows would use.
    """
    n = cost.shape[0]
    perms = _permutations(n)
    totals = np.zeros(len(perms))
    for row in range(n):
        totals = totals + cost[row, perms[:, row]]
    best = totals.min()
    first = int(np.flatnonzero(totals == best)[0])  # permutations come in lexicographic order
    return float(best), tuple(int(c) for c in perms[first])


# -- geometry -----------------------------------------------------------------


def iou(a, b) -> float:
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    area_a = max(ax2 - ax1, 0.0) * max(ay2 - ay1, 0.0)
    area_b = max(bx2 - bx1, 0.0) * max(by2 - by1, 0.0)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = max(min(ax2, bx2) - max(ax1, bx1), 0.0)
    ih = max(min(ay2, by2) - max(ay1, by1), 0.0)
    inter = iw * ih
    return inter / (area_a + area_b - inter)


def instance_iou(i, j, variant: str) -> float:
    h = iou(i.human_box, j.human_box)
    o = iou(i.object_box, j.object_box)
    return {"human": h, "object": o, "combined": h * o}[variant]


# -- suppression ----------------------------------------------------------------


def quadratic_nms(instances, delta: float, variant: str):
    """Keep an instance unless it overlaps a kept, higher-ranked one of its action by more than delta."""
    ranked = sorted(instances, key=lambda d: (-d.score, d.anchor_index, d.action_class))
    kept = []
    for cand in ranked:
        if all(k.action_class != cand.action_class or instance_iou(cand, k, variant) <= delta for k in kept):
            kept.append(cand)
    return kept


# -- average precision ------------------------------------------------------------


def _label(dets, gts, thr):
    """Greedy claim in score order; dets are (score, image, anchor, hbox, obox), gts (image, key, hbox, obox)."""
    claimed = set()
    labels = []
    for score, image, anchor, hb, ob in dets:
        best, best_q = None, -1.0
        for img, key, gh, go in gts:
            if img != image or key in claimed:
                continue
            ih, io = iou(hb, gh), iou(ob, go)
            if ih > thr and io > thr and min(ih, io) > best_q:
                best, best_q = key, min(ih, io)
        if best is not None:
            claimed.add(best)
        labels.append(best)
    return labels


def sweep_ap(scored_flags: list[tuple[float, bool]], num_gt: int) -> float:
    """AP by sweeping each distinct score threshold and integrating the PR envelope."""
    if num_gt == 0:
        return float("nan")
    points = []
    for t in sorted({s for s, _ in scored_flags}, reverse=True):
        kept = [f for s, f in scored_flags if s >= t]
        tp = sum(kept)
        points.append((tp / num_gt, tp / len(kept)))
    ap, prev_recall = 0.0, 0.0
    for k, (recall, _) in enumerate(points):
        if recall > prev_recall:
            ap += (recall - prev_recall) * max(p for _, p in points[k:])
            prev_recall = recall
    return ap


def oracle_class_labels(preds, gts, table, setting="default", thr=0.5):
    """Per class: ground-truth keys and (score, image, anchor, action, claimed key or None) detections."""
    index = {g.image_id: i for i, g in enumerate(gts)}
    out = {}
    for c, (obj, act) in enumerate(table.pairs):
        gt_items = []
        for i, g in enumerate(gts):
            h, o = g.human_xyxy(), g.object_xyxy()
            for k, ann in enumerate(g.annotations):
                if ann.object_class == obj and act in ann.actions:
                    gt_items.append((i, (i, k), h[k], o[k]))
        dets = []
        for p in preds:
            i = index[p.image_id]
            if setting == "ko" and obj not in {a.object_class for a in gts[i].annotations}:
                continue
            for d in p.instances:
                if d.object_class == obj and d.action_class == act:
                    dets.append((d.score, i, d.anchor_index, d.human_box, d.object_box))
        dets.sort(key=lambda t: (-t[0], t[1], t[2]))
        labels = _label(dets, gt_items, thr)
        out[c] = ([key for _, key, _, _ in gt_items], [(d[0], d[1], d[2], lab) for d, lab in zip(dets, labels)])
    return out


def oracle_class_aps(preds, gts, table, setting="default", thr=0.5) -> np.ndarray:
    aps = []
    for c, (gt_keys, dets) in oracle_class_labels(preds, gts, table, setting, thr).items():
        aps.append(sweep_ap([(s, lab is not None) for s, _, _, lab in dets], len(gt_keys)))
    return np.array(aps)


def oracle_spatial(preds, gts, table, mode: str, bins: int = 10):
    """Per bin (count, AP) with pooled classes and unmatched detections in every bin."""
    labelled = oracle_class_labels(preds, gts, table)
    metric = {}
    for c, (gt_keys, _) in labelled.items():
        for i, k in gt_keys:
            h, o = gts[i].human_xyxy()[k], gts[i].object_xyxy()[k]
            if mode == "area":
                metric[(c, (i, k))] = max((h[2] - h[0]) * (h[3] - h[1]), (o[2] - o[0]) * (o[3] - o[1]))
            else:
                metric[(c, (i, k))] = float(np.hypot((h[0] + h[2]) / 2 - (o[0] + o[2]) / 2,
                                                     (h[1] + h[3]) / 2 - (o[1] + o[3]) / 2))
    top = max(metric.values())
    where = {key: (0 if top <= 0 else min(int(v / top * bins), bins - 1)) for key, v in metric.items()}
    out = []
    for b in range(bins):
        count = sum(1 for v in where.values() if v == b)
        flags = []
        for c, (_, dets) in labelled.items():
            for s, _, _, lab in dets:
                if lab is None:
                    flags.append((s, False))
                elif where[(c, lab)] == b:
                    flags.append((s, True))
        out.append((count, sweep_ap(flags, count)))
    return out
