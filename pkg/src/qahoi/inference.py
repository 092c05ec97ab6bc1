"""Batched prediction with post-processing."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .config import PostprocessConfig
from .postprocess import canonical_order, expand_instances, filter_instances
from .structures import GroundTruthSet, ImagePredictions


def predict_images(model, images: Sequence[np.ndarray], metas: Sequence[GroundTruthSet],
                   cfg: PostprocessConfig | None, batch_size: int = 8) -> list[ImagePredictions]:
    """Run ``model`` and build ranked instances per image.

    ``metas`` supplies id and size of each image. With ``cfg=None`` every
    expanded instance is kept (unfiltered output for later sweeps).
    """
    out = []
    for start in range(0, len(images), batch_size):
        result = model.predict(list(images[start:start + batch_size])).final
        for b, meta in enumerate(metas[start:start + batch_size]):
            instances = expand_instances(result.human_boxes.data[b], result.object_boxes.data[b],
                                         result.object_logits.data[b], result.action_logits.data[b])
            instances = canonical_order(instances) if cfg is None else filter_instances(instances, cfg)
            out.append(ImagePredictions(meta.image_id, meta.height, meta.width, instances))
    return out
