"""Ground-truth and prediction records shared by training, filtering and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .interaction_head import xyxy_to_cxcywh


@dataclass(frozen=True)
class HOIAnnotation:
    """One annotated triplet; boxes are (x1, y1, x2, y2) in pixels."""

    human_box: tuple[float, float, float, float]
    object_box: tuple[float, float, float, float]
    object_class: int
    actions: tuple[int, ...]


@dataclass
class GroundTruthSet:
    """All annotations of one image.

    For matching, the set is conceptually padded with "no pair" entries up
    to the number of queries; only the real entries are stored.
    """

    image_id: str
    height: int
    width: int
    annotations: list[HOIAnnotation] = field(default_factory=list)
    file_name: str | None = None

    def __len__(self) -> int:
        return len(self.annotations)

    def _scale(self) -> np.ndarray:
        return np.array([self.width, self.height, self.width, self.height], dtype=float)

    def human_xyxy(self) -> np.ndarray:
        """Normalized corner boxes, (G, 4)."""
        return np.array([a.human_box for a in self.annotations], dtype=float).reshape(-1, 4) / self._scale()

    def object_xyxy(self) -> np.ndarray:
        return np.array([a.object_box for a in self.annotations], dtype=float).reshape(-1, 4) / self._scale()

    def human_cxcywh(self) -> np.ndarray:
        return xyxy_to_cxcywh(self.human_xyxy())

    def object_cxcywh(self) -> np.ndarray:
        return xyxy_to_cxcywh(self.object_xyxy())

    def object_classes(self) -> np.ndarray:
        return np.array([a.object_class for a in self.annotations], dtype=np.int64)

    def action_targets(self, num_actions: int) -> np.ndarray:
        """Multi-hot action matrix, (G, K_a)."""
        out = np.zeros((len(self.annotations), num_actions))
        for i, a in enumerate(self.annotations):
            out[i, list(a.actions)] = 1.0
        return out

    def padded_size(self, num_queries: int) -> int:
        if len(self.annotations) > num_queries:
            raise ValueError(f"image {self.image_id}: {len(self.annotations)} annotations exceed {num_queries} queries")
        return num_queries


@dataclass
class HOIInstance:
    """One scored prediction. Boxes are normalized corner form (x1, y1, x2, y2)."""

    human_box: tuple[float, float, float, float]
    object_box: tuple[float, float, float, float]
    object_class: int
    object_score: float
    action_class: int
    action_score: float
    score: float  # object_score * action_score
    anchor_index: int


@dataclass
class ImagePredictions:
    image_id: str
    height: int
    width: int
    instances: list[HOIInstance] = field(default_factory=list)
