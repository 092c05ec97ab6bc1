"""Finite-difference gradient checks on randomly drawn desk-scale inputs.

Each ``check_*`` draws inputs from ``seed`` and returns the max relative
error reported by :func:`numerics.finite_difference_check`.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np

from . import numerics as nx
from .config import LossConfig
from .deformable_transformer import DeformAttnConfig, MSDeformAttn
from .interaction_head import compose_boxes, paired_giou
from .numerics import Array
from .structures import GroundTruthSet, HOIAnnotation
from .training.losses import LayerOutput, compute_loss, focal_loss
from .training.matcher import match_image

LEVEL_SHAPES = [(8, 8), (4, 4), (2, 2)]
# sampling locations are kept this many level pixels away from grid lines so
# the probed function is smooth within the finite-difference step
BOUNDARY_MARGIN = 1e-3


def _leaf(x) -> Array:
    return Array(x, requires_grad=True)


def _readout(out: Array, rng) -> Array:
    # a random linear functional avoids cancellation in a plain sum
    return (out * Array(rng.standard_normal(out.shape))).sum()


def sampling_locations(attn: MSDeformAttn, query: np.ndarray, reference: np.ndarray,
                       level_shapes) -> list[np.ndarray]:
    """Pixel coordinates (x, y) sampled on each level, computed directly."""
    cfg = attn.cfg
    B, Nq, _ = query.shape
    off = (query @ attn.sampling_offsets.weight.data + attn.sampling_offsets.bias.data)
    off = off.reshape(B, Nq, cfg.heads, cfg.levels, cfg.points, 2)
    out = []
    for li, (h, w) in enumerate(level_shapes):
        extent = np.array([w, h], dtype=float)
        loc = reference[:, :, None, None, :] + off[:, :, :, li] / extent
        out.append(loc * extent - 0.5)
    return out


def _near_grid(locations: list[np.ndarray], margin: float) -> bool:
    return any(np.any(np.abs(loc - np.round(loc)) < margin) for loc in locations)


def check_ms_deform_attn(seed: int, max_entries: int = 12, model_dim: int = 64, heads: int = 4,
                         points: int = 2, num_queries: int = 5) -> float:
    rng = np.random.default_rng(seed)
    cfg = DeformAttnConfig(heads=heads, points=points, levels=len(LEVEL_SHAPES), model_dim=model_dim)
    attn = MSDeformAttn(cfg, rng)
    attn.sampling_offsets.weight.assign(rng.normal(0, 0.05, attn.sampling_offsets.weight.shape))
    attn.attention_weights.weight.assign(rng.normal(0, 0.1, attn.attention_weights.weight.shape))
    ns = sum(h * w for h, w in LEVEL_SHAPES)
    starts = list(np.cumsum([0] + [h * w for h, w in LEVEL_SHAPES])[:-1])
    memory = _leaf(rng.standard_normal((1, ns, model_dim)))
    query = _leaf(rng.standard_normal((1, num_queries, model_dim)))
    while True:
        ref = rng.uniform(0.05, 0.95, (1, num_queries, 2))
        if not _near_grid(sampling_locations(attn, query.data, ref, LEVEL_SHAPES), BOUNDARY_MARGIN):
            break
    reference = _leaf(ref)
    readout = rng.standard_normal((1, num_queries, model_dim))

    def f():
        out = attn(query, reference, memory, LEVEL_SHAPES, starts)
        return (out * Array(readout)).sum()

    params = [query, reference, memory] + attn.parameters()
    return nx.finite_difference_check(f, params, max_entries=max_entries, rng=rng)


def check_focal(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = _leaf(rng.normal(0, 3, (20, 4)))
    targets = rng.integers(0, 2, (20, 4))
    alpha, gamma = rng.uniform(0, 1), rng.choice([0.0, 1.0, 2.0, rng.uniform(0.5, 3)])
    return nx.finite_difference_check(lambda: focal_loss(logits, targets, alpha, gamma).sum(), [logits])


def _random_cxcywh(rng, n: int) -> np.ndarray:
    return np.concatenate([rng.uniform(0.2, 0.8, (n, 2)), rng.uniform(0.05, 0.5, (n, 2))], axis=1)


def check_giou(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a, b = _leaf(_random_cxcywh(rng, 12)), _leaf(_random_cxcywh(rng, 12))
    w = rng.standard_normal(12)
    return nx.finite_difference_check(lambda: (paired_giou(a, b) * Array(w)).sum(), [a, b])


def check_compose_boxes(seed: int) -> float:
    rng = np.random.default_rng(seed)
    anchors = _leaf(rng.uniform(0.05, 0.95, (20, 2)))
    delta = _leaf(rng.normal(0, 1, (2, 20, 4)))
    readout = rng.standard_normal((2, 20, 4))
    errs = [nx.finite_difference_check(lambda: (compose_boxes(delta, anchors) * Array(readout)).sum(),
                                       [delta, anchors])]
    # additive composition: keep anchor + offset strictly inside the clip range
    delta_small = _leaf(np.concatenate([rng.uniform(-0.04, 0.04, (2, 20, 2)), rng.normal(0, 1, (2, 20, 2))], -1))
    errs.append(nx.finite_difference_check(
        lambda: (compose_boxes(delta_small, anchors, "additive") * Array(readout)).sum(), [delta_small, anchors]))
    return max(errs)


def _random_targets(rng, batch: int, num_objects: int, num_actions: int) -> list[GroundTruthSet]:
    out = []
    for b in range(batch):
        anns = []
        for _ in range(int(rng.integers(0, 4))):
            boxes = []
            for _ in range(2):
                x1, y1 = rng.uniform(0, 40, 2)
                w, h = rng.uniform(8, 24, 2)
                boxes.append((float(x1), float(y1), float(x1 + w), float(y1 + h)))
            k = int(rng.integers(1, num_actions + 1))
            acts = tuple(sorted(rng.choice(num_actions, size=k, replace=False).tolist()))
            anns.append(HOIAnnotation(boxes[0], boxes[1], int(rng.integers(num_objects)), acts))
        out.append(GroundTruthSet(f"img{b}", 64, 64, anns))
    return out


def check_compute_loss(seed: int, batch: int = 2, num_queries: int = 20, num_layers: int = 2,
                       num_objects: int = 2, num_actions: int = 3, max_entries: int = 15) -> float:
    """Whole loss graph: composed boxes from raw deltas and anchors, all layers."""
    rng = np.random.default_rng(seed)
    cfg = LossConfig()
    targets = _random_targets(rng, batch, num_objects, num_actions)
    anchors = _leaf(rng.uniform(0.1, 0.9, (num_queries, 2)))
    raw = []
    for _ in range(num_layers):
        raw.append(tuple(_leaf(x) for x in (
            rng.normal(0, 1, (batch, num_queries, 4)), rng.normal(0, 1, (batch, num_queries, 4)),
            rng.normal(0, 2, (batch, num_queries, num_objects + 1)),
            rng.normal(0, 2, (batch, num_queries, num_actions)))))

    def layers():
        return [LayerOutput(compose_boxes(h, anchors), compose_boxes(o, anchors), ol, al) for h, o, ol, al in raw]

    with nx.no_grad():
        matches = [[match_image(L.human_boxes.data[b], L.object_boxes.data[b],
                                nx._sigmoid_np(L.object_logits.data[b]), nx._sigmoid_np(L.action_logits.data[b]),
                                targets[b], num_actions, cfg) for b in range(batch)] for L in layers()]
    params = [anchors] + [p for group in raw for p in group]
    return nx.finite_difference_check(lambda: compute_loss(layers(), targets, matches, cfg).total, params,
                                      max_entries=max_entries, rng=rng)


CHECKS = {
    "ms_deform_attn": check_ms_deform_attn,
    "focal_loss": check_focal,
    "giou": check_giou,
    "compose_boxes": check_compose_boxes,
    "compute_loss": check_compute_loss,
}


def run_gradient_checks(seeds: Iterable[int]) -> dict[str, float]:
    """Worst error of each check over ``seeds``, at 64-bit precision."""
    seeds = list(seeds)
    with nx.default_dtype(np.float64):
        return {name: max(check(s) for s in seeds) for name, check in CHECKS.items()}
