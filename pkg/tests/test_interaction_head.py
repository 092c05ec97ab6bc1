import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from qahoi import numerics as nx
from qahoi.config import HeadConfig
from qahoi.gradcheck import check_compose_boxes, check_giou
from qahoi.interaction_head import (InteractionHead, box_geometry, box_iou, compose_boxes, generalized_box_iou,
                                    paired_giou, xyxy_to_cxcywh)
from qahoi.numerics import Array

finite_box = st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 1), st.floats(0.01, 1))


class TestHead:
    def head(self):
        return InteractionHead(HeadConfig(num_object_classes=5, num_action_classes=7), 16, np.random.default_rng(0))

    def test_shapes(self):
        raw = self.head()(Array(np.random.default_rng(1).standard_normal((2, 9, 16))))
        assert raw.human_delta.shape == (2, 9, 4)
        assert raw.object_delta.shape == (2, 9, 4)
        assert raw.object_logits.shape == (2, 9, 6)
        assert raw.action_logits.shape == (2, 9, 7)

    def test_zeroed_final_layers(self):
        head = self.head()
        for lin in (head.human_box.layers[-1], head.object_box.layers[-1], head.object_class, head.action_class):
            lin.weight.assign(np.zeros_like(lin.weight.data))
            lin.bias.assign(np.zeros_like(lin.bias.data))
        raw = head(Array(np.random.default_rng(1).standard_normal((1, 4, 16))))
        for out in (raw.human_delta, raw.object_delta, raw.object_logits, raw.action_logits):
            assert_array_equal(out.data, 0.0)

    def test_deterministic(self):
        head = self.head()
        e = Array(np.random.default_rng(1).standard_normal((1, 4, 16)))
        assert_array_equal(head(e).object_logits.data, head(e).object_logits.data)

    def test_hico_sizes(self):
        cfg = HeadConfig()
        assert (cfg.num_object_classes, cfg.num_action_classes) == (80, 117)


class TestComposeBoxes:
    def test_zero_offset(self):
        out = compose_boxes(Array(np.zeros((1, 4))), Array([[0.3, 0.7]])).data
        assert_allclose(out[0, :2], [0.3, 0.7], atol=1e-15)
        assert_allclose(out[0, 2:], 0.5)

    def test_offset_arithmetic(self):
        d = np.log(0.6 / 0.4)
        out = compose_boxes(Array([[d, 0.0, 0.0, 0.0]]), Array([[0.5, 0.5]])).data
        assert out[0, 0] == pytest.approx(0.6, abs=1e-15)

    @settings(max_examples=50)
    @given(st.floats(-30, 30), st.floats(-30, 30), st.floats(1e-3, 1 - 1e-3), st.floats(1e-3, 1 - 1e-3))
    def test_range(self, dx, w, px, py):
        out = compose_boxes(Array([[dx, -dx, w, -w]]), Array([[px, py]])).data
        assert ((out >= 0) & (out <= 1)).all()

    @settings(max_examples=50)
    @given(st.floats(1e-3, 1 - 1e-3), st.floats(1e-3, 1 - 1e-3))
    def test_zero_delta_identity(self, px, py):
        out = compose_boxes(Array(np.zeros((1, 4))), Array([[px, py]])).data
        assert_allclose(out[0, :2], [px, py], rtol=1e-12)

    def test_additive_variant(self):
        out = compose_boxes(Array([[0.1, -0.9, 0.0, 0.0]]), Array([[0.3, 0.7]]), mode="additive").data
        assert_allclose(out[0, :2], [0.4, 0.0])
        with pytest.raises(ValueError):
            compose_boxes(Array(np.zeros((1, 4))), Array([[0.3, 0.7]]), mode="bogus")

    def test_gradients(self):
        assert max(check_compose_boxes(s) for s in range(5)) < 1e-4


class TestGeometry:
    def test_identical(self):
        _, _, iou, giou = box_geometry(np.array([0.5, 0.5, 0.2, 0.4]), np.array([0.5, 0.5, 0.2, 0.4]))
        assert iou == 1.0 and giou == 1.0

    def test_hand_example(self):
        a, b = xyxy_to_cxcywh(np.array([0, 0, 2, 2.0])), xyxy_to_cxcywh(np.array([1, 0, 3, 2.0]))
        xa, xb, iou, _ = box_geometry(a, b)
        assert_array_equal(xa, [0, 0, 2, 2])
        assert iou == pytest.approx(1 / 3, abs=1e-15)

    def test_disjoint(self):
        _, _, iou, giou = box_geometry(np.array([0.1, 0.1, 0.1, 0.1]), np.array([0.8, 0.8, 0.1, 0.1]))
        assert iou == 0.0 and giou < 0

    @settings(max_examples=100)
    @given(finite_box, finite_box)
    def test_symmetry_and_order(self, a, b):
        xa, xb = np.array([a[:2] + tuple(np.add(a[:2], a[2:]))]), np.array([b[:2] + tuple(np.add(b[:2], b[2:]))])
        assert box_iou(xa, xb)[0, 0] == box_iou(xb, xa)[0, 0]
        assert generalized_box_iou(xa, xb)[0, 0] <= box_iou(xa, xb)[0, 0] + 1e-12
        assert 0 <= box_iou(xa, xb)[0, 0] <= 1
        assert -1 < generalized_box_iou(xa, xb)[0, 0] <= 1

    def test_zero_area_is_zero(self):
        z = np.array([[0.2, 0.2, 0.2, 0.5]])
        assert box_iou(z, z)[0, 0] == 0.0

    def test_paired_matches_pairwise(self):
        rng = np.random.default_rng(0)
        a = np.concatenate([rng.uniform(0.2, 0.8, (6, 2)), rng.uniform(0.05, 0.5, (6, 2))], 1)
        b = np.concatenate([rng.uniform(0.2, 0.8, (6, 2)), rng.uniform(0.05, 0.5, (6, 2))], 1)
        from qahoi.interaction_head import cxcywh_to_xyxy
        expected = np.diag(generalized_box_iou(cxcywh_to_xyxy(a), cxcywh_to_xyxy(b)))
        assert_allclose(paired_giou(Array(a), Array(b)).data, expected, atol=1e-12)

    def test_giou_gradients(self):
        assert max(check_giou(s) for s in range(5)) < 1e-4
