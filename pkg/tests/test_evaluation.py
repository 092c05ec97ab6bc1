import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from qahoi.evaluation import (HOIClassTable, average_precision, bin_index, evaluate, match_detections,
                              spatial_bins, spatial_metric)
from qahoi.structures import GroundTruthSet, HOIAnnotation, HOIInstance, ImagePredictions

from conftest import random_eval_set
from oracles import oracle_class_aps, oracle_class_labels, oracle_spatial


def box(*v):
    return np.array([v], dtype=float)


class TestMatchDetections:
    def test_exact(self):
        b = box(0.1, 0.1, 0.4, 0.4)
        assert match_detections(b, b, b, b).tolist() == [0]

    def test_single_claim(self):
        b = box(0.1, 0.1, 0.4, 0.4)
        two = np.vstack([b, b])
        assert (match_detections(two, two, b, b) >= 0).tolist() == [True, False]

    def test_both_boxes_required(self):
        gt = box(0, 0, 10, 10)
        human = box(0, 0, 10, 6)  # IoU 0.6
        obj = box(0, 0, 10, 4)  # IoU 0.4
        assert match_detections(human, obj, gt, gt).tolist() == [-1]
        assert match_detections(human, human, gt, gt).tolist() == [0]

    def test_claims_best_min_iou(self):
        det = box(0, 0, 10, 10)
        gts_h = np.vstack([box(0, 0, 10, 8), box(0, 0, 10, 9)])
        gts_o = np.vstack([box(0, 0, 10, 10), box(0, 0, 10, 7)])
        # min IoUs: 0.8 and 0.7
        assert match_detections(det, det, gts_h, gts_o).tolist() == [0]


class TestAveragePrecision:
    def test_hand_examples(self):
        assert average_precision([True], 1) == 1.0
        assert average_precision([False, True], 1) == 0.5
        assert average_precision([True, False], 1) == 1.0

    def test_no_gt(self):
        assert np.isnan(average_precision([False], 0))

    def test_no_detections(self):
        assert average_precision([], 3) == 0.0

    @settings(max_examples=200)
    @given(st.lists(st.booleans(), max_size=30), st.integers(0, 5))
    def test_extremes(self, flags, extra):
        n_gt = sum(flags) + extra
        if n_gt == 0:
            return
        ap = average_precision(flags, n_gt)
        assert 0.0 <= ap <= 1.0
        assert (ap == 0.0) == (not any(flags))
        first_fp = flags.index(False) if False in flags else len(flags)
        assert (ap == 1.0) == (extra == 0 and sum(flags[:first_fp]) == n_gt)


def simple_set():
    anns = [HOIAnnotation((0, 0, 10, 10), (10, 10, 20, 20), 0, (0,)),
            HOIAnnotation((30, 30, 40, 40), (40, 40, 50, 50), 1, (1, 2))]
    gts = [GroundTruthSet("a", 64, 64, anns)]
    table = HOIClassTable([(0, 0), (1, 1), (1, 2)], [3, 50, 50])
    return gts, table


def perfect_predictions(gts):
    out = []
    for g in gts:
        inst = []
        h, o = g.human_xyxy(), g.object_xyxy()
        for k, ann in enumerate(g.annotations):
            for a in ann.actions:
                inst.append(HOIInstance(tuple(h[k]), tuple(o[k]), ann.object_class, 0.9, a, 0.9, 0.81, len(inst)))
        out.append(ImagePredictions(g.image_id, g.height, g.width, inst))
    return out


class TestEvaluate:
    def test_perfect(self):
        gts, table = simple_set()
        report = evaluate(perfect_predictions(gts), gts, table)
        assert report.full == 1.0 and report.rare_map == 1.0 and report.non_rare_map == 1.0

    def test_empty(self):
        gts, table = simple_set()
        report = evaluate([], gts, table)
        assert report.full == 0.0

    def test_unknown_gt_pair(self):
        gts, _ = simple_set()
        with pytest.raises(ValueError, match="class table"):
            evaluate([], gts, HOIClassTable([(0, 0)], [1]))

    def test_unknown_image(self):
        gts, table = simple_set()
        with pytest.raises(ValueError):
            evaluate([ImagePredictions("zzz", 1, 1, [])], gts, table)

    def test_zero_gt_classes_excluded(self):
        gts, _ = simple_set()
        table = HOIClassTable([(0, 0), (1, 1), (1, 2), (0, 2)], [3, 50, 50, 50])
        report = evaluate(perfect_predictions(gts), gts, table)
        assert np.isnan(report.ap[3]) and report.full == 1.0

    def test_rarity_from_training_counts(self):
        table = HOIClassTable([(0, 0), (0, 1)], [9, 10])
        assert table.rare.tolist() == [True, False]

    def test_hico_profile_rarity_split(self):
        counts = [5] * 138 + [50] * 462
        table = HOIClassTable([(k // 117, k % 117) for k in range(600)], counts)
        assert int(table.rare.sum()) == 138

    @pytest.mark.parametrize("setting", ["default", "ko"])
    def test_matches_threshold_sweep(self, setting):
        rng = np.random.default_rng(42)
        for _ in range(30):
            preds, gts, table = random_eval_set(rng, num_images=5)
            report = evaluate(preds, gts, table, setting)
            expected = oracle_class_aps(preds, gts, table, setting)
            assert_allclose(report.ap, expected, atol=1e-9, equal_nan=True)

    def test_known_object_fp_pool_subset(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            preds, gts, table = random_eval_set(rng)
            d = evaluate(preds, gts, table, "default")
            k = evaluate(preds, gts, table, "ko")
            fp = lambda r: {(x.class_id, x.image, x.anchor_index) for x in r.detections if not x.tp}  # noqa: E731
            assert fp(k) <= fp(d)

    def test_rank_only(self):
        rng = np.random.default_rng(8)
        preds, gts, table = random_eval_set(rng)
        base = evaluate(preds, gts, table).ap
        for p in preds:
            p.instances = [HOIInstance(d.human_box, d.object_box, d.object_class, d.object_score, d.action_class,
                                       d.action_score, d.score ** 3 * 0.5, d.anchor_index) for d in p.instances]
        assert_array_equal(evaluate(preds, gts, table).ap, base)

    def test_predictions_outside_table_ignored(self):
        gts, table = simple_set()
        preds = perfect_predictions(gts)
        preds[0].instances.append(HOIInstance((0, 0, 1, 1), (0, 0, 1, 1), 0, 1.0, 2, 1.0, 1.0, 99))
        assert evaluate(preds, gts, table).full == 1.0


class TestSpatial:
    def test_area_metric(self):
        h = np.array([[0, 0, 0.5, 0.5]])
        o = np.array([[0, 0, 0.2, 0.2]])
        assert spatial_metric(h, o, "area")[0] == pytest.approx(0.25)

    def test_coincident_centers(self):
        b = np.array([[0.2, 0.2, 0.4, 0.4]])
        d = spatial_metric(b, b, "distance")
        assert d[0] == 0.0
        idx, _ = bin_index(np.array([0.0, 0.5, 1.0]), 10)
        assert idx.tolist() == [0, 5, 9]

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            spatial_metric(np.zeros((1, 4)), np.zeros((1, 4)), "volume")

    def test_identical_metric_single_bin(self):
        anns = [HOIAnnotation((0, 0, 10, 10), (10, 10, 20, 20), 0, (0,))] * 3
        gts = [GroundTruthSet(f"i{k}", 64, 64, anns) for k in range(2)]
        table = HOIClassTable([(0, 0)], [20])
        report = evaluate(perfect_predictions(gts), gts, table)
        for mode in ("area", "distance"):
            bins = spatial_bins(report, gts, table, mode, min_count=0)
            assert len(bins) == 10
            assert [b.reported for b in bins] == [False] * 9 + [True]
            assert bins[9].count == 6 and bins[9].ap == 1.0

    def test_floor_suppression(self):
        rng = np.random.default_rng(0)
        preds, gts, table = random_eval_set(rng, num_images=8)
        report = evaluate(preds, gts, table)
        bins = spatial_bins(report, gts, table, "area", min_count=2)
        assert all(b.reported == (b.count > 2) for b in bins)
        assert all(np.isnan(b.ap) for b in bins if not b.reported)

    @pytest.mark.parametrize("mode", ["area", "distance"])
    def test_matches_oracle(self, mode):
        rng = np.random.default_rng(17)
        for _ in range(10):
            preds, gts, table = random_eval_set(rng, num_images=6)
            if not any(len(g) for g in gts):
                continue
            report = evaluate(preds, gts, table)
            bins = spatial_bins(report, gts, table, mode, min_count=0)
            for b, (count, ap) in zip(bins, oracle_spatial(preds, gts, table, mode)):
                assert b.count == count
                if count:
                    assert abs(b.ap - ap) <= 1e-9

    def test_oracle_labels_agree_with_detections(self):
        preds, gts, table = random_eval_set(np.random.default_rng(9))
        report = evaluate(preds, gts, table)
        labelled = oracle_class_labels(preds, gts, table)
        ours = sorted((d.class_id, d.image, d.anchor_index, d.gt) for d in report.detections)
        ref = sorted((c, i, q, -1 if lab is None else lab[1]) for c, (_, dets) in labelled.items()
                     for _, i, q, lab in dets)
        assert ours == ref
