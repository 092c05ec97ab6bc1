"""Bipartite matching of predictions to "no pair"-padded ground truth."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import LossConfig
from ..interaction_head import cxcywh_to_xyxy, generalized_box_iou


@dataclass
class MatchResult:
    """``assignment[q]`` is the padded ground-truth index of query ``q``.

    Indices below ``num_real`` are real annotations; the rest are padding.
    """

    assignment: np.ndarray
    total_cost: float
    num_real: int

    @property
    def query_indices(self) -> np.ndarray:
        """Queries matched to real annotations, ordered by annotation index."""
        order = np.argsort(self.assignment, kind="stable")
        return order[: self.num_real]

    @property
    def gt_indices(self) -> np.ndarray:
        return np.arange(self.num_real)


def _shortest_augmenting_path(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Hungarian algorithm with potentials, O(n^3).

    Returns (row_to_col, u, v) with u[i] + v[j] <= cost[i, j] everywhere and
    equality on the assignment.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    col_owner = np.zeros(n + 1, dtype=np.int64)  # 1-based row owning each column, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        col_owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = col_owner[j0]
            free = ~used[1:]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]
            u[col_owner[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if col_owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            col_owner[j0] = col_owner[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=np.int64)
    row_to_col[col_owner[1:] - 1] = np.arange(n)
    return row_to_col, u[1:], v[1:]


def _lexicographic_optimum(tight: np.ndarray, row_to_col: np.ndarray) -> np.ndarray:
    """Lexicographically smallest perfect matching within the tight-edge graph.

    Every optimal assignment uses only edges whose reduced cost is zero, so
    walking rows in order and taking the lowest column that still admits a
    perfect matching yields the optimal assignment preferred by the
    tie-break rule.
    """
    n = tight.shape[0]
    match = row_to_col.copy()
    owner = np.empty(n, dtype=np.int64)
    owner[match] = np.arange(n)
    fixed_cols = np.zeros(n, dtype=bool)

    def augment(row: int, target_col: int, visited: np.ndarray) -> bool:
        # find an alternating path giving ``row`` a column, ending at target_col
        for col in np.flatnonzero(tight[row] & ~fixed_cols & ~visited):
            visited[col] = True
            if col == target_col or augment(owner[col], target_col, visited):
                match[row] = col
                owner[col] = row
                return True
        return False

    for i in range(n):
        for j in np.flatnonzero(tight[i] & ~fixed_cols):
            if j == match[i]:
                break
            saved_match, saved_owner = match.copy(), owner.copy()
            freed = match[i]
            displaced = owner[j]
            match[i], owner[j] = j, i
            fixed_cols[j] = True
            visited = np.zeros(n, dtype=bool)
            if augment(displaced, freed, visited):
                fixed_cols[j] = False
                break
            fixed_cols[j] = False
            match[:], owner[:] = saved_match, saved_owner
        fixed_cols[match[i]] = True
    return match


def hungarian_match(cost: np.ndarray, num_real: int | None = None) -> MatchResult:
    """Minimum-cost perfect matching of a square cost matrix.

    Among equal-cost optima the lexicographically smallest assignment (by
    query index, then annotation index) is returned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix must be finite")
    n = cost.shape[0]
    if n == 0:
        return MatchResult(np.zeros(0, dtype=np.int64), 0.0, 0)
    row_to_col, u, v = _shortest_augmenting_path(cost)
    reduced = cost - u[:, None] - v[None, :]
    tol = 1e-10 * (1.0 + np.abs(cost).max()) * n
    assignment = _lexicographic_optimum(reduced <= tol, row_to_col)
    total = float(sum(cost[i, assignment[i]] for i in range(n)))
    return MatchResult(assignment, total, n if num_real is None else num_real)


def _focal_costs(prob: np.ndarray, alpha: float, gamma: float) -> np.ndarray:
    """Positive-minus-negative focal cost per entry."""
    neg = (1 - alpha) * prob ** gamma * -np.log(1 - prob + 1e-8)
    pos = alpha * (1 - prob) ** gamma * -np.log(prob + 1e-8)
    return pos - neg


def cost_matrix(human_boxes: np.ndarray, object_boxes: np.ndarray, object_prob: np.ndarray,
                action_prob: np.ndarray, gt_human: np.ndarray, gt_object: np.ndarray,
                gt_classes: np.ndarray, gt_actions: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """Pairwise (N_q, G) matching cost between predictions and real annotations.

    Boxes are normalized (cx, cy, w, h); probabilities are sigmoid outputs;
    ``gt_actions`` is multi-hot (G, K_a).
    """
    G = len(gt_classes)
    Nq = human_boxes.shape[0]
    if G == 0:
        return np.zeros((Nq, 0))
    cls_cost = _focal_costs(object_prob, cfg.alpha, cfg.gamma)[:, gt_classes]
    act_focal = _focal_costs(action_prob, cfg.alpha, cfg.gamma)  # (Nq, K_a)
    counts = np.maximum(gt_actions.sum(axis=1), 1.0)
    act_cost = act_focal @ gt_actions.T / counts[None, :]
    l1 = (np.abs(human_boxes[:, None, :] - gt_human[None, :, :]).sum(-1)
          + np.abs(object_boxes[:, None, :] - gt_object[None, :, :]).sum(-1))
    giou = (generalized_box_iou(cxcywh_to_xyxy(human_boxes), cxcywh_to_xyxy(gt_human))
            + generalized_box_iou(cxcywh_to_xyxy(object_boxes), cxcywh_to_xyxy(gt_object)))
    return cfg.cls * cls_cost + cfg.act * act_cost + cfg.l1 * l1 - cfg.giou * giou


def match_cost(pred: dict, gt: dict, cfg: LossConfig) -> float:
    """Cost of assigning one composed prediction to one real annotation.

    ``pred`` holds ``human_box``, ``object_box`` (cx, cy, w, h),
    ``object_prob`` and ``action_prob``; ``gt`` holds ``human_box``,
    ``object_box``, ``object_class`` and ``actions`` (ids).
    """
    K_a = len(pred["action_prob"])
    actions = np.zeros((1, K_a))
    actions[0, list(gt["actions"])] = 1.0
    c = cost_matrix(np.asarray(pred["human_box"], float)[None], np.asarray(pred["object_box"], float)[None],
                    np.asarray(pred["object_prob"], float)[None], np.asarray(pred["action_prob"], float)[None],
                    np.asarray(gt["human_box"], float)[None], np.asarray(gt["object_box"], float)[None],
                    np.array([gt["object_class"]]), actions, cfg)
    return float(c[0, 0])


def match_image(human_boxes, object_boxes, object_prob, action_prob, targets, num_actions: int,
                cfg: LossConfig) -> MatchResult:
    """Match one image's N_q predictions against its padded ground truth."""
    Nq = human_boxes.shape[0]
    G = len(targets)
    targets.padded_size(Nq)
    real = cost_matrix(human_boxes, object_boxes, object_prob, action_prob,
                       targets.human_cxcywh(), targets.object_cxcywh(),
                       targets.object_classes(), targets.action_targets(num_actions), cfg)
    padded = np.zeros((Nq, Nq))
    padded[:, :G] = real
    return hungarian_match(padded, num_real=G)
