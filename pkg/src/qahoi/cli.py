"""Command-line entry point: ``qahoi <command> ...``."""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from pathlib import Path

import numpy as np

from . import numerics as nx
from .config import Config, PostprocessConfig, SyntheticConfig
from .data import (AnnotationError, generate_synthetic, load_dataset, load_image, parse_annotations,
                   read_predictions, write_anchors, write_predictions)
from .evaluation import SPATIAL_MODES, evaluate, spatial_bins
from .inference import predict_images
from .model import QAHOI
from .postprocess import filter_instances
from .structures import GroundTruthSet, ImagePredictions
from .training.loop import TrainingDiverged, load_checkpoint, read_checkpoint, train_loop

log = logging.getLogger("qahoi")

IOU_ALIASES = {"h": "human", "o": "object", "comb": "combined", "human": "human", "object": "object",
               "combined": "combined"}


def _load_config(path: str | None) -> Config:
    return Config.load(path) if path else Config.desk()


def _model_dtype(cfg: Config):
    return np.float32 if cfg.train.precision == 32 else np.float64


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if cfg.data.annotations:
        samples, _ = load_dataset(cfg.data.annotations, cfg.data.image_dir, cfg.eval.rare_threshold)
    else:
        samples = generate_synthetic(cfg.synthetic).samples
    with nx.default_dtype(_model_dtype(cfg)):
        model = QAHOI(cfg, seed=args.seed)
        result = train_loop(samples, model, cfg, seed=args.seed, out_dir=args.out)
    cfg.dump(Path(args.out) / "config.yaml")
    print(f"trained {result.steps} steps; final loss {result.losses[-1]:.6f}")
    return 0


def _images_from_args(args) -> tuple[list[np.ndarray], list[GroundTruthSet]]:
    if args.gts:
        samples, _ = load_dataset(args.gts, args.image_dir)
        return [im for im, _ in samples], [g for _, g in samples]
    paths = []
    for item in args.images:
        p = Path(item)
        paths.extend(sorted(p.glob("*.png")) if p.is_dir() else [p])
    images = [load_image(p) for p in paths]
    metas = [GroundTruthSet(p.stem, im.shape[1], im.shape[2]) for p, im in zip(paths, images)]
    return images, metas


def cmd_infer(args) -> int:
    # without --config the checkpoint's own configuration is used
    cfg = Config.load(args.config) if args.config else Config.from_dict(read_checkpoint(args.checkpoint)[0]["config"])
    with nx.default_dtype(_model_dtype(cfg)):
        model = QAHOI(cfg, seed=0)
        load_checkpoint(args.checkpoint, model)
        images, metas = _images_from_args(args)
        if not images:
            raise AnnotationError("no input images")
        preds = predict_images(model, images, metas, None if args.raw else cfg.postprocess)
        write_predictions(args.out, preds)
        write_anchors(Path(args.out).with_suffix(".anchors.json"), model.predict_anchors())
    print(f"wrote {sum(len(p.instances) for p in preds)} instances for {len(preds)} images to {args.out}")
    return 0


def cmd_eval(args) -> int:
    gts, table = parse_annotations(args.gts, args.rare_threshold)
    report = evaluate(read_predictions(args.preds), gts, table, args.setting)
    if args.report:
        with open(args.report, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["hoi_class", "object", "action", "num_gt", "rare", "ap"])
            for c, (o, a) in enumerate(table.pairs):
                w.writerow([c, o, a, int(report.num_gt[c]), bool(report.rare[c]), repr(float(report.ap[c]))])
            for name, value in report.summary().items():
                w.writerow([name, "", "", "", "", repr(value)])
    s = report.summary()
    print(f"{args.setting}: full {s['full']:.6f} rare {s['rare']:.6f} non-rare {s['non_rare']:.6f}")
    return 0


def _parse_list(values: list[str], convert) -> list:
    out = []
    for v in values:
        out.extend(convert(x) for x in v.split(",") if x)
    return out


def cmd_nms_sweep(args) -> int:
    gts, table = parse_annotations(args.gts, args.rare_threshold)
    raw = read_predictions(args.preds)
    scores = _parse_list(args.scores, str)
    topks = _parse_list(args.topk, int)
    ious = _parse_list(args.iou, lambda x: IOU_ALIASES[x])
    deltas = _parse_list(args.delta, lambda x: None if x == "none" else float(x))
    rows = []
    for score, topk, iou, delta in itertools.product(scores, topks, ious, deltas):
        cfg = PostprocessConfig(topk=topk, delta=0.5 if delta is None else delta, iou=iou, score=score,
                                use_nms=delta is not None)
        cfg.validate()
        preds = [ImagePredictions(p.image_id, p.height, p.width, filter_instances(p.instances, cfg)) for p in raw]
        s = evaluate(preds, gts, table, args.setting).summary()
        rows.append([score, topk, iou, "none" if delta is None else delta, s["full"], s["rare"], s["non_rare"]])
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["score", "topk", "iou", "delta", "full", "rare", "non_rare"])
        w.writerows(rows)
    print(f"wrote {len(rows)} rows to {args.out}")
    return 0


def cmd_spatial_report(args) -> int:
    gts, table = parse_annotations(args.gts, args.rare_threshold)
    report = evaluate(read_predictions(args.preds), gts, table, args.setting)
    rows = spatial_bins(report, gts, table, args.mode, args.bins, args.min_count)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "low", "high", "count", "reported", "ap"])
        for r in rows:
            w.writerow([r.index, repr(r.low), repr(r.high), r.count, r.reported, repr(r.ap) if r.reported else ""])
    print(f"{args.mode}: {sum(r.reported for r in rows)} of {len(rows)} bins reported")
    return 0


def cmd_synth_gen(args) -> int:
    cfg = _load_config(args.config)
    spec = SyntheticConfig(**{**cfg.synthetic.__dict__, "seed": args.seed})
    if args.num_images is not None:
        spec.num_images = args.num_images
    path = generate_synthetic(spec).write(args.out)
    print(f"wrote {spec.num_images} images and {path}")
    return 0


def cmd_grad_check(args) -> int:
    from .gradcheck import run_gradient_checks

    worst = run_gradient_checks(seeds=range(args.seed, args.seed + args.seeds))
    for name, err in worst.items():
        print(f"{name}: max relative error {err:.3e}")
    ok = all(err < args.tol for err in worst.values())
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qahoi")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict HOI instances")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--images", nargs="+", help="PNG files or directories")
    group.add_argument("--gts", help="annotation file listing the images")
    p.add_argument("--image-dir")
    p.add_argument("--out", required=True)
    p.add_argument("--raw", action="store_true", help="skip top-K and NMS")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_infer)

    for name, func, help_ in (("eval", cmd_eval, "compute mAP"),
                              ("nms-sweep", cmd_nms_sweep, "mAP over filter settings"),
                              ("spatial-report", cmd_spatial_report, "AP per spatial bin")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--preds", required=True)
        p.add_argument("--gts", required=True)
        p.add_argument("--setting", choices=("default", "ko"), default="default")
        p.add_argument("--rare-threshold", type=int, default=10)
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=func)
        if name == "eval":
            p.add_argument("--report")
        elif name == "nms-sweep":
            p.add_argument("--scores", nargs="+", default=["co"])
            p.add_argument("--topk", nargs="+", default=["100"])
            p.add_argument("--iou", nargs="+", default=["comb"])
            p.add_argument("--delta", nargs="+", default=["0.5"])
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--mode", choices=SPATIAL_MODES, required=True)
            p.add_argument("--bins", type=int, default=10)
            p.add_argument("--min-count", type=int, default=1000)
            p.add_argument("--out", required=True)

    p = sub.add_parser("synth-gen", help="write a synthetic dataset")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-images", type=int)
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("grad-check", help="finite-difference gradient checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (AnnotationError, ValueError, KeyError, FileNotFoundError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
