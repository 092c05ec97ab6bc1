import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from qahoi.config import LossConfig
from qahoi.structures import GroundTruthSet, HOIAnnotation
from qahoi.training.matcher import cost_matrix, hungarian_match, match_cost, match_image

from oracles import brute_force_assignment


def gt_dict(human=(0.3, 0.4, 0.2, 0.3), obj=(0.6, 0.5, 0.2, 0.2), cls=1, actions=(0, 2)):
    return {"human_box": human, "object_box": obj, "object_class": cls, "actions": actions}


def pred_for(gt, k_o=3, k_a=4, saturate=True):
    obj = np.full(k_o + 1, 1e-6)
    act = np.full(k_a, 1e-6)
    if saturate:
        obj[gt["object_class"]] = 1 - 1e-6
        act[list(gt["actions"])] = 1 - 1e-6
    return {"human_box": np.array(gt["human_box"]), "object_box": np.array(gt["object_box"]),
            "object_prob": obj, "action_prob": act}


class TestMatchCost:
    def test_exact_prediction_is_cheapest(self):
        cfg = LossConfig()
        gt = gt_dict()
        best = match_cost(pred_for(gt), gt, cfg)
        rng = np.random.default_rng(0)
        for _ in range(200):
            p = pred_for(gt)
            p["human_box"] = p["human_box"] + rng.normal(0, 0.05, 4)
            p["object_box"] = p["object_box"] + rng.normal(0, 0.05, 4)
            p["object_prob"] = rng.uniform(0, 1, 4)
            p["action_prob"] = rng.uniform(0, 1, 4)
            assert match_cost(p, gt, cfg) > best

    def test_monotone_in_human_l1(self):
        cfg = LossConfig()
        gt = gt_dict()
        costs = []
        for shift in (0.0, 0.01, 0.05, 0.1):
            p = pred_for(gt, saturate=False)
            p["human_box"] = p["human_box"] + np.array([shift, 0, 0, 0])
            costs.append(match_cost(p, gt, cfg))
        assert all(a < b for a, b in zip(costs, costs[1:]))

    def test_three_queries_two_gts(self):
        cfg = LossConfig()
        rng = np.random.default_rng(5)
        anns = [HOIAnnotation((5, 5, 20, 30), (15, 20, 40, 50), 0, (1,)),
                HOIAnnotation((30, 10, 50, 40), (35, 35, 60, 60), 1, (0, 2))]
        gts = GroundTruthSet("x", 64, 64, anns)
        hb, ob = rng.uniform(0.2, 0.6, (3, 4)), rng.uniform(0.2, 0.6, (3, 4))
        op, ap = rng.uniform(0, 1, (3, 3)), rng.uniform(0, 1, (3, 3))
        res = match_image(hb, ob, op, ap, gts, 3, cfg)
        padded = np.zeros((3, 3))
        padded[:, :2] = cost_matrix(hb, ob, op, ap, gts.human_cxcywh(), gts.object_cxcywh(),
                                    gts.object_classes(), gts.action_targets(3), cfg)
        best, first = brute_force_assignment(padded)
        assert res.total_cost == best
        assert tuple(res.assignment.tolist()) == first
        assert len(res.query_indices) == 2

    def test_too_many_annotations(self):
        gts = GroundTruthSet("x", 10, 10, [HOIAnnotation((0, 0, 5, 5), (1, 1, 6, 6), 0, (0,))] * 3)
        with pytest.raises(ValueError, match="x"):
            match_image(np.zeros((2, 4)) + 0.5, np.zeros((2, 4)) + 0.5, np.zeros((2, 2)), np.zeros((2, 1)),
                        gts, 1, LossConfig())


class TestHungarian:
    def test_diagonal(self):
        r = hungarian_match(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert r.assignment.tolist() == [0, 1] and r.total_cost == 2.0

    def test_tie_break(self):
        assert hungarian_match(np.ones((2, 2))).assignment.tolist() == [0, 1]

    def test_tie_break_prefers_low_query_low_gt(self):
        cost = np.array([[0.0, 0.0, 5.0], [0.0, 0.0, 5.0], [5.0, 5.0, 0.0]])
        assert hungarian_match(cost).assignment.tolist() == [0, 1, 2]

    def test_errors(self):
        with pytest.raises(ValueError):
            hungarian_match(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            hungarian_match(np.array([[0.0, np.nan], [1.0, 2.0]]))

    def test_empty(self):
        assert hungarian_match(np.zeros((0, 0))).total_cost == 0.0

    @settings(max_examples=200, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)).map(lambda t: (t[0], t[0])),
                  elements=st.integers(-5, 5).map(float)))
    def test_matches_enumeration_with_lexicographic_ties(self, cost):
        best, first = brute_force_assignment(cost)
        r = hungarian_match(cost)
        assert r.total_cost == best
        assert tuple(r.assignment.tolist()) == first

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, (5, 5), elements=st.floats(-10, 10)), st.floats(-100, 100))
    def test_constant_shift_keeps_assignment(self, cost, shift):
        cost = np.round(cost * 4) / 4  # dyadic values keep the shifted sums exact
        shift = round(shift)
        assert hungarian_match(cost).assignment.tolist() == hungarian_match(cost + shift).assignment.tolist()

    def test_zero_padding_columns(self):
        rng = np.random.default_rng(0)
        cost = np.zeros((6, 6))
        cost[:, :2] = rng.uniform(-1, 1, (6, 2))
        r = hungarian_match(cost, num_real=2)
        assert len(r.query_indices) == 2
        assert r.total_cost == pytest.approx(brute_force_assignment(cost)[0])


def test_eight_by_eight_against_enumeration():
    rng = np.random.default_rng(88)
    for _ in range(1000):
        cost = rng.uniform(0, 10, (8, 8))
        best, first = brute_force_assignment(cost)
        r = hungarian_match(cost)
        assert r.total_cost == best
        assert tuple(r.assignment.tolist()) == first
