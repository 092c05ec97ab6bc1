"""HOI detection mAP with Full/Rare/Non-Rare splits and spatial-scale bins.

A ground-truth instance of HOI class (object o, action a) is one annotated
pair whose object class is o and whose action set contains a. A detection
is a true positive when both its human and object boxes overlap an
unclaimed ground truth by more than the IoU threshold.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .interaction_head import box_iou, xyxy_to_cxcywh
from .structures import GroundTruthSet, ImagePredictions

SETTINGS = ("default", "ko")
SPATIAL_MODES = ("area", "distance")


@dataclass
class HOIClassTable:
    """(object, action) pairs with ids, plus training-set instance counts."""

    pairs: list[tuple[int, int]]
    train_counts: list[int]
    rare_threshold: int = 10
    _index: dict[tuple[int, int], int] = field(init=False, repr=False)

    def __post_init__(self):
        self.pairs = [(int(o), int(a)) for o, a in self.pairs]
        self.train_counts = [int(c) for c in self.train_counts]
        if len(self.pairs) != len(self.train_counts):
            raise ValueError("class table needs one training count per HOI class")
        self._index = {p: i for i, p in enumerate(self.pairs)}
        if len(self._index) != len(self.pairs):
            raise ValueError("duplicate (object, action) pair in class table")

    def __len__(self) -> int:
        return len(self.pairs)

    def class_id(self, object_class: int, action_class: int) -> int | None:
        return self._index.get((int(object_class), int(action_class)))

    @property
    def rare(self) -> np.ndarray:
        return np.array(self.train_counts) < self.rare_threshold

    @classmethod
    def from_annotations(cls, train: Iterable[GroundTruthSet], rare_threshold: int = 10) -> "HOIClassTable":
        """Classes and counts taken from a training annotation set, ordered by (object, action)."""
        counts: dict[tuple[int, int], int] = defaultdict(int)
        for gts in train:
            for ann in gts.annotations:
                for a in ann.actions:
                    counts[(ann.object_class, a)] += 1
        pairs = sorted(counts)
        return cls(pairs, [counts[p] for p in pairs], rare_threshold)


def match_detections(pred_human, pred_object, gt_human, gt_object, iou_threshold: float = 0.5) -> np.ndarray:
    """Greedy matching of score-ranked detections of one class in one image.

    Returns, per detection, the index of the claimed ground truth or -1.
    Among eligible unclaimed ground truths the one with the largest
    min(human IoU, object IoU) is claimed, the lower index on ties.
    """
    n = len(pred_human)
    claimed = np.full(n, -1, dtype=np.int64)
    if n == 0 or len(gt_human) == 0:
        return claimed
    iou_h = box_iou(pred_human, gt_human)
    iou_o = box_iou(pred_object, gt_object)
    quality = np.where((iou_h > iou_threshold) & (iou_o > iou_threshold), np.minimum(iou_h, iou_o), -np.inf)
    free = np.ones(len(gt_human), dtype=bool)
    for k in range(n):
        q = np.where(free, quality[k], -np.inf)
        g = int(np.argmax(q))
        if q[g] > -np.inf:
            claimed[k] = g
            free[g] = False
    return claimed


def average_precision(tp: Sequence[bool], num_gt: int) -> float:
    """All-points interpolated AP of ranked TP/FP flags; NaN without ground truth."""
    if num_gt <= 0:
        return float("nan")
    tp = np.asarray(tp, dtype=bool)
    if tp.size == 0:
        return 0.0
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / num_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class Detection:
    image: int  # position in the ground-truth list
    class_id: int
    score: float
    anchor_index: int
    action_class: int
    gt: int = -1  # claimed annotation index within the image, or -1

    @property
    def tp(self) -> bool:
        return self.gt >= 0


@dataclass
class EvalReport:
    setting: str
    ap: np.ndarray  # per HOI class, NaN where the class has no ground truth
    num_gt: np.ndarray
    rare: np.ndarray
    detections: list[Detection] = field(default_factory=list)

    @staticmethod
    def _mean(values: np.ndarray) -> float:
        values = values[~np.isnan(values)]
        return float(values.mean()) if values.size else float("nan")

    @property
    def full(self) -> float:
        return self._mean(self.ap)

    @property
    def rare_map(self) -> float:
        return self._mean(self.ap[self.rare])

    @property
    def non_rare_map(self) -> float:
        return self._mean(self.ap[~self.rare])

    def summary(self) -> dict[str, float]:
        return {"full": self.full, "rare": self.rare_map, "non_rare": self.non_rare_map}


def _gt_instances(gts: Sequence[GroundTruthSet], table: HOIClassTable):
    """Per class: list of (image, annotation index)."""
    pools: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for i, image in enumerate(gts):
        for k, ann in enumerate(image.annotations):
            for a in ann.actions:
                c = table.class_id(ann.object_class, a)
                if c is None:
                    raise ValueError(f"image {image.image_id}: pair (object {ann.object_class}, action {a}) "
                                     "missing from the class table")
                pools[c].append((i, k))
    return pools


def evaluate(preds: Sequence[ImagePredictions], gts: Sequence[GroundTruthSet], table: HOIClassTable,
             setting: str = "default", iou_threshold: float = 0.5) -> EvalReport:
    """Per-class AP over the whole set and the split means.

    Under ``"ko"`` a class is scored only on images whose annotations
    contain its object class. Detections whose (object, action) pair is not
    a known HOI class are ignored.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}")
    index = {g.image_id: i for i, g in enumerate(gts)}
    pools = _gt_instances(gts, table)
    present = [{a.object_class for a in g.annotations} for g in gts]

    per_class: dict[int, list[tuple[int, object]]] = defaultdict(list)
    for p in preds:
        if p.image_id not in index:
            raise ValueError(f"predictions for unknown image {p.image_id!r}")
        i = index[p.image_id]
        for inst in p.instances:
            c = table.class_id(inst.object_class, inst.action_class)
            if c is None:
                continue
            if setting == "ko" and inst.object_class not in present[i]:
                continue
            per_class[c].append((i, inst))

    aps = np.full(len(table), np.nan)
    num_gt = np.zeros(len(table), dtype=np.int64)
    detections: list[Detection] = []
    for c in range(len(table)):
        gt_list = pools.get(c, [])
        num_gt[c] = len(gt_list)
        ranked = sorted(per_class.get(c, []), key=lambda t: (-t[1].score, t[0], t[1].anchor_index))
        by_image_gt: dict[int, list[int]] = defaultdict(list)
        for i, k in gt_list:
            by_image_gt[i].append(k)
        by_image_det: dict[int, list[int]] = defaultdict(list)
        for r, (i, _) in enumerate(ranked):
            by_image_det[i].append(r)
        claimed = np.full(len(ranked), -1, dtype=np.int64)
        for i, rows in by_image_det.items():
            ks = by_image_gt.get(i, [])
            image = gts[i]
            ph = np.array([ranked[r][1].human_box for r in rows])
            po = np.array([ranked[r][1].object_box for r in rows])
            gh = image.human_xyxy()[ks] if ks else np.zeros((0, 4))
            go = image.object_xyxy()[ks] if ks else np.zeros((0, 4))
            local = match_detections(ph, po, gh, go, iou_threshold)
            for r, g in zip(rows, local):
                claimed[r] = ks[g] if g >= 0 else -1
        aps[c] = average_precision(claimed >= 0, len(gt_list))
        detections.extend(Detection(i, c, inst.score, inst.anchor_index, inst.action_class, int(g))
                          for (i, inst), g in zip(ranked, claimed))
    return EvalReport(setting, aps, num_gt, table.rare, detections)


# ----------------------------------------------------------------------------
# spatial-scale analysis


def spatial_metric(human_xyxy: np.ndarray, object_xyxy: np.ndarray, mode: str) -> np.ndarray:
    """Larger normalized box area, or the distance between the two box centers."""
    h = np.asarray(human_xyxy, dtype=float).reshape(-1, 4)
    o = np.asarray(object_xyxy, dtype=float).reshape(-1, 4)
    if mode == "area":
        area = lambda b: (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])  # noqa: E731
        return np.maximum(area(h), area(o))
    if mode == "distance":
        return np.linalg.norm(xyxy_to_cxcywh(h)[:, :2] - xyxy_to_cxcywh(o)[:, :2], axis=1)
    raise ValueError(f"unknown spatial mode {mode!r}")


def bin_index(values: np.ndarray, bins: int) -> tuple[np.ndarray, np.ndarray]:
    """Equal-width bins over [0, max(values)]; returns (bin per value, edges)."""
    values = np.asarray(values, dtype=float)
    top = float(values.max()) if values.size else 0.0
    edges = np.linspace(0.0, top, bins + 1)
    if top <= 0:
        return np.zeros(values.shape, dtype=np.int64), edges
    idx = np.floor(values / top * bins).astype(np.int64)
    return np.clip(idx, 0, bins - 1), edges


@dataclass
class SpatialBin:
    index: int
    low: float
    high: float
    count: int
    ap: float  # NaN when suppressed
    reported: bool


def spatial_bins(report: EvalReport, gts: Sequence[GroundTruthSet], table: HOIClassTable, mode: str,
                 bins: int = 10, min_count: int = 1000) -> list[SpatialBin]:
    """AP per spatial bin, pooling all HOI classes.

    Ground-truth instances fall into the bin of their metric. A bin ranks
    the true positives matched to its own instances together with every
    unmatched detection. Bins holding no more than ``min_count`` instances
    are not reported.
    """
    pools = _gt_instances(gts, table)
    keys = sorted({key for inst in pools.values() for key in inst})
    metric = {}
    if keys:
        h = np.array([gts[i].human_xyxy()[k] for i, k in keys])
        o = np.array([gts[i].object_xyxy()[k] for i, k in keys])
        metric = dict(zip(keys, spatial_metric(h, o, mode)))
    gt_bins = []  # one entry per ground-truth instance, i.e. per (class, annotation)
    for c, inst in pools.items():
        gt_bins.extend((c, key) for key in inst)
    values = np.array([metric[key] for _, key in gt_bins])
    idx, edges = bin_index(values, bins)
    where = {entry: int(b) for entry, b in zip(gt_bins, idx)}
    counts = np.bincount(idx, minlength=bins) if len(idx) else np.zeros(bins, dtype=np.int64)

    ranked = sorted(report.detections, key=lambda d: (-d.score, d.image, d.class_id, d.anchor_index))
    out = []
    for b in range(bins):
        flags = [d.tp for d in ranked if not d.tp or where[(d.class_id, (d.image, d.gt))] == b]
        reported = bool(counts[b] > min_count)
        ap = average_precision(flags, int(counts[b])) if reported else float("nan")
        out.append(SpatialBin(b, float(edges[b]), float(edges[b + 1]), int(counts[b]), ap, reported))
    return out
