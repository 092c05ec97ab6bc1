"""Optimization loop, checkpoints and the loss log."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import numerics as nx
from ..config import Config
from ..structures import GroundTruthSet
from .losses import LayerOutput, compute_loss
from .matcher import MatchResult, match_image
from .optim import AdamW, ParamGroup, clip_grad_norm, step_decay

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainResult:
    steps: int
    history: list[dict[str, float]] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [row["total"] for row in self.history]


def match_layer(layer: LayerOutput, targets: Sequence[GroundTruthSet], cfg: Config) -> list[MatchResult]:
    """Hungarian matching of every image in the batch for one decoder layer."""
    obj_prob = nx._sigmoid_np(layer.object_logits.data)
    act_prob = nx._sigmoid_np(layer.action_logits.data)
    K_a = cfg.head.num_action_classes
    return [match_image(layer.human_boxes.data[b], layer.object_boxes.data[b], obj_prob[b], act_prob[b],
                        gts, K_a, cfg.loss)
            for b, gts in enumerate(targets)]


def build_optimizer(model, cfg: Config) -> AdamW:
    backbone = {id(p) for p in model.backbone_parameters()}
    params = model.parameters()
    groups = [
        ParamGroup([p for p in params if id(p) not in backbone], cfg.train.lr),
        ParamGroup([p for p in params if id(p) in backbone], cfg.train.lr_backbone),
    ]
    return AdamW(groups, weight_decay=cfg.train.weight_decay)


def save_checkpoint(path: str | Path, model, cfg: Config, step: int) -> None:
    meta = {"format": "qahoi-checkpoint", "version": CHECKPOINT_VERSION, "step": step,
            "config": cfg.to_dict()}
    arrays = model.state_dict()
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    """(meta, arrays) of a checkpoint file."""
    with np.load(path, allow_pickle=False) as archive:
        if "__meta__" not in archive.files:
            raise ValueError(f"{path}: not a checkpoint")
        meta = json.loads(str(archive["__meta__"]))
        if meta.get("format") != "qahoi-checkpoint" or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint format {meta.get('format')!r} v{meta.get('version')}")
        state = {k: archive[k] for k in archive.files if k != "__meta__"}
    return meta, state


def load_checkpoint(path: str | Path, model) -> dict:
    """Load parameters into ``model``; shapes and names must match exactly."""
    meta, state = read_checkpoint(path)
    model.load_state_dict(state)
    return meta


def train_loop(dataset: Sequence[tuple[np.ndarray, GroundTruthSet]], model, cfg: Config, seed: int = 0,
               out_dir: str | Path | None = None,
               callback: Callable[[int, dict[str, float]], bool] | None = None) -> TrainResult:
    """Train ``model`` on (image, annotations) pairs.

    One epoch is one shuffled pass over the dataset in batches of
    ``cfg.train.batch_size``. Both learning rates drop by
    ``lr_drop_factor`` at epoch ``lr_drop``. ``callback(step, row)`` may
    return True to stop early. With ``out_dir`` set, ``loss.csv`` and
    ``checkpoint.npz`` are written there.
    """
    tcfg = cfg.train
    if not dataset:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    optim = build_optimizer(model, cfg)
    params = model.parameters()
    batch_size = min(tcfg.batch_size, len(dataset))
    max_steps = tcfg.max_steps
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    result = TrainResult(steps=0)
    step = 0
    writer = csv_file = None
    try:
        for epoch in range(tcfg.epochs):
            optim.set_decay(step_decay(epoch, tcfg.lr_drop, tcfg.lr_drop_factor))
            order = rng.permutation(len(dataset))
            for start in range(0, len(order), batch_size):
                batch = [dataset[i] for i in order[start:start + batch_size]]
                images = [im for im, _ in batch]
                targets = [gts for _, gts in batch]
                try:
                    output = model(images)
                    matches = [match_layer(layer, targets, cfg) for layer in output.layers]
                    losses = compute_loss(output.layers, targets, matches, cfg.loss)
                    model.zero_grad()
                    nx.backward(losses.total)
                except nx.NonFiniteError as exc:
                    raise TrainingDiverged(f"non-finite value at step {step} (epoch {epoch}): {exc}") from exc
                row = {"step": step, "epoch": epoch, **losses.as_row()}
                row["grad_norm"] = clip_grad_norm(params, tcfg.clip_max_norm)
                if not np.isfinite(row["grad_norm"]):
                    raise TrainingDiverged(f"non-finite gradient norm at step {step}")
                optim.step()
                step += 1
                result.history.append(row)
                if out is not None:
                    if writer is None:
                        csv_file = open(out / "loss.csv", "w", newline="")
                        writer = csv.DictWriter(csv_file, fieldnames=list(row))
                        writer.writeheader()
                    writer.writerow(row)
                if tcfg.log_every and step % tcfg.log_every == 0:
                    log.info("step %d loss %.5f", step, row["total"])
                stop = callback is not None and callback(step, row)
                if stop or (max_steps is not None and step >= max_steps):
                    break
            else:
                if out is not None and tcfg.checkpoint_every and (epoch + 1) % tcfg.checkpoint_every == 0:
                    save_checkpoint(out / f"checkpoint_epoch{epoch + 1:04d}.npz", model, cfg, step)
                continue
            break
    finally:
        if csv_file is not None:
            csv_file.close()
    result.steps = step
    if out is not None:
        save_checkpoint(out / "checkpoint.npz", model, cfg, step)
    return result
