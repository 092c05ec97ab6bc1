"""File formats and the synthetic scene generator.

Annotation files (JSON, ``"format": "qahoi-annotations"``)::

    {"format": "qahoi-annotations", "version": 1,
     "hoi_classes": [{"object": 0, "action": 2, "train_count": 14}, ...],
     "images": [{"id": "000001", "file_name": "000001.png", "height": 64, "width": 64,
                 "hois": [{"human_box": [x1, y1, x2, y2], "object_box": [...],
                           "object_class": 0, "actions": [2]}]}]}

Boxes are in pixels. Prediction files (``"qahoi-predictions"``) carry
normalized corner boxes and the scores of every kept instance; the anchor
sidecar (``"qahoi-anchors"``) lists the N_q anchors as (x, y).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .config import SyntheticConfig
from .evaluation import HOIClassTable
from .structures import GroundTruthSet, HOIAnnotation, HOIInstance, ImagePredictions

SCHEMA_VERSION = 1
ACTION_NAMES = ("touch", "above", "beside")


class AnnotationError(ValueError):
    pass


# ----------------------------------------------------------------------------
# annotations


def _box(raw, image_id, name: str, height: int, width: int) -> tuple[float, float, float, float]:
    try:
        x1, y1, x2, y2 = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise AnnotationError(f"image {image_id}: {name} must be four numbers, got {raw!r}") from None
    if not all(np.isfinite([x1, y1, x2, y2])):
        raise AnnotationError(f"image {image_id}: {name} is not finite")
    x1, x2 = min(max(x1, 0.0), width), min(max(x2, 0.0), width)
    y1, y2 = min(max(y1, 0.0), height), min(max(y2, 0.0), height)
    if not (x1 < x2 and y1 < y2):
        raise AnnotationError(f"image {image_id}: {name} needs x1 < x2 and y1 < y2 inside the image, got {raw!r}")
    return x1, y1, x2, y2


def parse_annotation_dict(doc: dict, rare_threshold: int = 10) -> tuple[list[GroundTruthSet], HOIClassTable]:
    if doc.get("format") != "qahoi-annotations":
        raise AnnotationError(f"not an annotation file (format={doc.get('format')!r})")
    if doc.get("version") != SCHEMA_VERSION:
        raise AnnotationError(f"unsupported annotation schema version {doc.get('version')!r}")
    try:
        classes = doc["hoi_classes"]
        table = HOIClassTable([(c["object"], c["action"]) for c in classes],
                              [c.get("train_count", 0) for c in classes], rare_threshold)
    except (KeyError, TypeError) as exc:
        raise AnnotationError(f"malformed hoi_classes: {exc}") from None
    num_objects = 1 + max((o for o, _ in table.pairs), default=-1)
    num_actions = 1 + max((a for _, a in table.pairs), default=-1)
    out = []
    seen = set()
    for raw in doc.get("images", []):
        image_id = str(raw.get("id", "?"))
        if image_id in seen:
            raise AnnotationError(f"image {image_id}: duplicate id")
        seen.add(image_id)
        try:
            height, width = int(raw["height"]), int(raw["width"])
        except (KeyError, TypeError, ValueError):
            raise AnnotationError(f"image {image_id}: missing or invalid height/width") from None
        if height <= 0 or width <= 0:
            raise AnnotationError(f"image {image_id}: height/width must be positive")
        anns = []
        for k, hoi in enumerate(raw.get("hois", [])):
            try:
                obj = int(hoi["object_class"])
                actions = tuple(int(a) for a in hoi["actions"])
                hb, ob = hoi["human_box"], hoi["object_box"]
            except (KeyError, TypeError, ValueError) as exc:
                raise AnnotationError(f"image {image_id}: hoi {k} missing or invalid field {exc}") from None
            if not 0 <= obj < num_objects:
                raise AnnotationError(f"image {image_id}: hoi {k} object_class {obj} outside the class table")
            if not actions or any(not 0 <= a < num_actions for a in actions):
                raise AnnotationError(f"image {image_id}: hoi {k} actions {list(actions)} invalid")
            for a in actions:
                if table.class_id(obj, a) is None:
                    raise AnnotationError(f"image {image_id}: hoi {k} pair ({obj}, {a}) not in hoi_classes")
            anns.append(HOIAnnotation(_box(hb, image_id, f"hoi {k} human_box", height, width),
                                      _box(ob, image_id, f"hoi {k} object_box", height, width), obj, actions))
        out.append(GroundTruthSet(image_id, height, width, anns, raw.get("file_name")))
    return out, table


def parse_annotations(path: str | Path, rare_threshold: int = 10) -> tuple[list[GroundTruthSet], HOIClassTable]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: invalid JSON ({exc})") from None
    return parse_annotation_dict(doc, rare_threshold)


def annotation_dict(gts: Sequence[GroundTruthSet], table: HOIClassTable) -> dict:
    images = []
    for g in gts:
        entry = {"id": g.image_id, "height": g.height, "width": g.width}
        if g.file_name is not None:
            entry["file_name"] = g.file_name
        entry["hois"] = [{"human_box": list(a.human_box), "object_box": list(a.object_box),
                          "object_class": a.object_class, "actions": list(a.actions)} for a in g.annotations]
        images.append(entry)
    classes = [{"object": o, "action": a, "train_count": n} for (o, a), n in zip(table.pairs, table.train_counts)]
    return {"format": "qahoi-annotations", "version": SCHEMA_VERSION, "hoi_classes": classes, "images": images}


def write_annotations(path: str | Path, gts: Sequence[GroundTruthSet], table: HOIClassTable) -> None:
    Path(path).write_text(json.dumps(annotation_dict(gts, table), indent=1))


# ----------------------------------------------------------------------------
# predictions and anchors


_INSTANCE_FIELDS = ("human_box", "object_box", "object_class", "object_score", "action_class",
                    "action_score", "score", "anchor_index")


def write_predictions(path: str | Path, preds: Sequence[ImagePredictions]) -> None:
    images = []
    for p in preds:
        rows = []
        for d in p.instances:
            row = {name: getattr(d, name) for name in _INSTANCE_FIELDS}
            row["human_box"], row["object_box"] = list(d.human_box), list(d.object_box)
            rows.append(row)
        images.append({"id": p.image_id, "height": p.height, "width": p.width, "instances": rows})
    doc = {"format": "qahoi-predictions", "version": SCHEMA_VERSION, "images": images}
    Path(path).write_text(json.dumps(doc, indent=1))


def read_predictions(path: str | Path) -> list[ImagePredictions]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "qahoi-predictions" or doc.get("version") != SCHEMA_VERSION:
        raise AnnotationError(f"{path}: not a version-{SCHEMA_VERSION} prediction file")
    out = []
    for raw in doc["images"]:
        instances = []
        for k, row in enumerate(raw["instances"]):
            try:
                instances.append(HOIInstance(
                    tuple(float(v) for v in row["human_box"]), tuple(float(v) for v in row["object_box"]),
                    int(row["object_class"]), float(row["object_score"]), int(row["action_class"]),
                    float(row["action_score"]), float(row["score"]), int(row["anchor_index"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise AnnotationError(f"image {raw.get('id')}: instance {k} invalid ({exc})") from None
        out.append(ImagePredictions(str(raw["id"]), int(raw["height"]), int(raw["width"]), instances))
    return out


def write_anchors(path: str | Path, anchors: np.ndarray) -> None:
    doc = {"format": "qahoi-anchors", "version": SCHEMA_VERSION,
           "anchors": [[float(x), float(y)] for x, y in np.asarray(anchors)]}
    Path(path).write_text(json.dumps(doc, indent=1))


def read_anchors(path: str | Path) -> np.ndarray:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != "qahoi-anchors":
        raise AnnotationError(f"{path}: not an anchor file")
    return np.array(doc["anchors"], dtype=float).reshape(-1, 2)


# ----------------------------------------------------------------------------
# images


def load_image(path: str | Path) -> np.ndarray:
    """RGB image as a 3 x H x W float array in [0, 1]."""
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return rgb.transpose(2, 0, 1).astype(float) / 255.0


def save_image(path: str | Path, image: np.ndarray) -> None:
    rgb = np.clip(np.round(np.asarray(image).transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(rgb).save(path, format="PNG")


def load_dataset(annotations: str | Path, image_dir: str | Path | None = None,
                 rare_threshold: int = 10) -> tuple[list[tuple[np.ndarray, GroundTruthSet]], HOIClassTable]:
    """Images paired with their annotations; ``file_name`` is resolved against ``image_dir``."""
    gts, table = parse_annotations(annotations, rare_threshold)
    root = Path(image_dir) if image_dir is not None else Path(annotations).parent
    samples = []
    for g in gts:
        image = load_image(root / (g.file_name or f"{g.image_id}.png"))
        if image.shape[1:] != (g.height, g.width):
            raise AnnotationError(f"image {g.image_id}: file is {image.shape[1:]}, annotation says "
                                  f"{(g.height, g.width)}")
        samples.append((image, g))
    return samples, table


# ----------------------------------------------------------------------------
# synthetic scenes


def action_of(human_box, object_box) -> int:
    """0 when the boxes overlap, 1 when the human is higher, 2 otherwise."""
    hx1, hy1, hx2, hy2 = human_box
    ox1, oy1, ox2, oy2 = object_box
    if min(hx2, ox2) > max(hx1, ox1) and min(hy2, oy2) > max(hy1, oy1):
        return 0
    if (hy1 + hy2) / 2 < (oy1 + oy2) / 2:
        return 1
    return 2


@dataclass
class SyntheticSet:
    images: list[np.ndarray]
    annotations: list[GroundTruthSet]
    table: HOIClassTable

    @property
    def samples(self) -> list[tuple[np.ndarray, GroundTruthSet]]:
        return list(zip(self.images, self.annotations))

    def write(self, out_dir: str | Path) -> Path:
        out = Path(out_dir)
        (out / "images").mkdir(parents=True, exist_ok=True)
        for image, g in zip(self.images, self.annotations):
            save_image(out / g.file_name, image)
        path = out / "annotations.json"
        write_annotations(path, self.annotations, self.table)
        return path


def _color(rng: np.random.Generator, family: int) -> np.ndarray:
    # family 0 is red (humans); objects cycle through green, blue, yellow, ...
    bases = [(0.9, 0.15, 0.15), (0.15, 0.85, 0.2), (0.2, 0.3, 0.95), (0.9, 0.85, 0.1),
             (0.8, 0.2, 0.85), (0.1, 0.85, 0.85)]
    base = np.array(bases[family % len(bases)])
    return np.clip(base + rng.uniform(-0.08, 0.08, size=3), 0.0, 1.0)


def _contains(outer, inner) -> bool:
    return outer[0] <= inner[0] and outer[1] <= inner[1] and outer[2] >= inner[2] and outer[3] >= inner[3]


def generate_synthetic(spec: SyntheticConfig) -> SyntheticSet:
    """Rectangles on a dark noisy background.

    Humans are red, objects take the color of their class, and each pair's
    single action follows :func:`action_of`. Pixels are quantized to 8 bits
    so the images survive a PNG round trip unchanged.
    """
    if spec.num_object_classes < 1 or spec.num_action_classes < 1:
        raise ValueError("synthetic vocabulary sizes must be >= 1")
    rng = np.random.default_rng(spec.seed)
    size = spec.image_size
    lo, hi = max(4, size // 6), max(6, size // 2)
    images, gts = [], []
    for n in range(spec.num_images):
        canvas = 0.1 + rng.uniform(0.0, 0.06, size=(size, size, 3))
        anns = []
        for _ in range(spec.instances_per_image):
            obj = int(rng.integers(spec.num_object_classes))
            while True:
                boxes = []
                for _part in range(2):
                    w, h = rng.integers(lo, hi + 1, size=2)
                    x1, y1 = rng.integers(0, size - w + 1), rng.integers(0, size - h + 1)
                    boxes.append((float(x1), float(y1), float(x1 + w), float(y1 + h)))
                human, thing = boxes
                # the object is drawn first and must stay partly visible
                if not _contains(human, thing):
                    break
            action = action_of(human, thing) % spec.num_action_classes
            for box, family in ((thing, 1 + obj), (human, 0)):
                x1, y1, x2, y2 = (int(v) for v in box)
                canvas[y1:y2, x1:x2] = _color(rng, family)
            anns.append(HOIAnnotation(human, thing, obj, (action,)))
        image = np.round(canvas.transpose(2, 0, 1) * 255.0) / 255.0
        image_id = f"{n:06d}"
        images.append(image)
        gts.append(GroundTruthSet(image_id, size, size, anns, f"images/{image_id}.png"))
    table = HOIClassTable.from_annotations(gts)
    full_pairs = [(o, a) for o in range(spec.num_object_classes) for a in range(spec.num_action_classes)]
    counts = dict(zip(table.pairs, table.train_counts))
    table = HOIClassTable(full_pairs, [counts.get(p, 0) for p in full_pairs])
    return SyntheticSet(images, gts, table)
