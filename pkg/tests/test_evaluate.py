"""Inference and the two-stage metric suite (grounding accuracy, then mIoU)."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pl3d.errors import EmptyQuerySet
from pl3d.evaluate import acc_at_k, infer_mask, iou, miou
from pl3d.learner import init_model
from pl3d.types import PipelineConfig, PointCloud, SceneBundle


def _tiny_scene(gt=None):
    from pl3d.types import CameraView

    view = CameraView(
        intrinsics=np.array([[10.0, 0, 2], [0, 10.0, 2], [0, 0, 1]]),
        world_to_camera=np.eye(4),
        depth=np.full((5, 5), 2.0),
        width=5,
        height=5,
    )
    return SceneBundle(
        scene_id="tiny",
        query="q",
        cloud=PointCloud(positions=np.random.default_rng(0).standard_normal((6, 3))),
        views=[view],
        predictions=None,
        embed_dim=4,
        feature_dim=3,
        gt_mask=gt,
    )


class TestInferMask:
    def test_zero_projection_gives_half_probs_and_full_mask(self):
        # t = 0 -> every logit 0 -> sigma = 0.5 -> mask all true at >= 0.5.
        scene = _tiny_scene()
        model = init_model(4, 3, seed=0)
        model.params["wq"] = np.zeros((3, 4))
        result = infer_mask(model, scene, np.array([1.0, 0, 0, 0]), PipelineConfig())
        np.testing.assert_array_equal(result.point_probs, 0.5)
        assert result.binary_mask.all()
        assert result.iou_vs_gt is None

    def test_raising_threshold_never_grows_mask(self):
        scene = _tiny_scene()
        model = init_model(4, 3, seed=3)
        q = np.array([1.0, 0, 0, 0])
        prev = None
        for thr in (0.1, 0.3, 0.5, 0.7, 0.9):
            mask = infer_mask(
                model, scene, q, PipelineConfig(infer_threshold=thr)
            ).binary_mask
            if prev is not None:
                assert np.all(mask <= prev)  # level sets nest
            prev = mask

    def test_gt_present_reports_iou(self):
        gt = np.array([1, 1, 1, 0, 0, 0], dtype=bool)
        scene = _tiny_scene(gt=gt)
        model = init_model(4, 3, seed=0)
        model.params["wq"] = np.zeros((3, 4))
        result = infer_mask(model, scene, np.array([1.0, 0, 0, 0]), PipelineConfig())
        # All-true mask vs half-true gt: IoU = 3/6.
        assert result.iou_vs_gt == pytest.approx(0.5)

    def test_cosine_mode_maps_to_unit_interval(self):
        scene = _tiny_scene()
        model = init_model(4, 3, seed=3)
        cfg = PipelineConfig(prob_mode="cosine")
        result = infer_mask(model, scene, np.array([1.0, 0, 0, 0]), cfg)
        assert np.all(result.point_probs >= 0.0)
        assert np.all(result.point_probs <= 1.0)

    def test_cosine_mode_zero_projection_is_half(self):
        scene = _tiny_scene()
        model = init_model(4, 3, seed=0)
        model.params["wq"] = np.zeros((3, 4))
        cfg = PipelineConfig(prob_mode="cosine")
        result = infer_mask(model, scene, np.array([1.0, 0, 0, 0]), cfg)
        np.testing.assert_array_equal(result.point_probs, 0.5)

    def test_probs_match_sigmoid_of_logits(self):
        from pl3d.learner import forward_features, model_inputs, project_query

        scene = _tiny_scene()
        model = init_model(4, 3, seed=5)
        q = np.array([0.0, 1.0, 0.0, 0.0])
        result = infer_mask(model, scene, q, PipelineConfig())
        feats = forward_features(model, model_inputs(scene.cloud))
        logits = feats @ project_query(model, q)
        np.testing.assert_allclose(
            result.point_probs, 1.0 / (1.0 + np.exp(-logits)), atol=1e-12
        )


class TestIoU:
    def test_identical_nonempty(self):
        m = np.array([1, 0, 1], dtype=bool)
        assert iou(m, m) == 1.0

    def test_disjoint_nonempty(self):
        assert iou(np.array([1, 0]), np.array([0, 1])) == 0.0

    def test_counting_example_exact(self):
        # |pred| = |gt| = 100, overlap 50 -> 50 / 150.
        pred = np.zeros(200, dtype=bool)
        gt = np.zeros(200, dtype=bool)
        pred[:100] = True
        gt[50:150] = True
        assert iou(pred, gt) == 50 / 150

    def test_both_empty_defined_as_one(self):
        z = np.zeros(5, dtype=bool)
        assert iou(z, z) == 1.0

    def test_symmetric(self, rng):
        a = rng.random(50) > 0.5
        b = rng.random(50) > 0.5
        assert iou(a, b) == iou(b, a)

    def test_relabeling_invariance(self, rng):
        a = rng.random(50) > 0.5
        b = rng.random(50) > 0.5
        perm = rng.permutation(50)
        assert iou(a, b) == iou(a[perm], b[perm])

    def test_universe_mismatch_rejected(self):
        with pytest.raises(ValueError):
            iou(np.zeros(3, dtype=bool), np.zeros(4, dtype=bool))


class TestAccAtK:
    def test_counting_examples_exact(self):
        ious = [0.6, 0.3, 0.26]
        assert acc_at_k(ious, 0.25) == 1.0
        assert acc_at_k(ious, 0.5) == 1 / 3

    def test_all_perfect_any_k(self):
        for k in (0.01, 0.25, 0.5, 1.0):
            assert acc_at_k([1.0, 1.0], k) == 1.0

    def test_threshold_inclusive(self):
        assert acc_at_k([0.25], 0.25) == 1.0

    def test_empty_raises(self):
        with pytest.raises(EmptyQuerySet):
            acc_at_k([], 0.5)

    @pytest.mark.parametrize("k", [0.0, -0.1, 1.5])
    def test_k_out_of_range(self, k):
        with pytest.raises(ValueError):
            acc_at_k([0.5], k)

    @settings(max_examples=100, deadline=None)
    @given(
        st.lists(st.floats(min_value=0, max_value=1), min_size=1, max_size=30),
        st.lists(
            st.floats(min_value=0.01, max_value=1.0), min_size=2, max_size=8
        ),
    )
    def test_property_monotone_nonincreasing_in_k(self, ious, ks):
        values = [acc_at_k(ious, k) for k in sorted(ks)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestMiou:
    def test_mean_mode(self):
        assert miou([1.0, 0.0], mode="all") == 0.5

    def test_grounded_filters_then_means(self):
        assert miou([0.6, 0.1], mode="grounded", k=0.25) == 0.6

    def test_single_query_both_modes(self):
        assert miou([0.7], mode="all") == 0.7
        assert miou([0.7], mode="grounded") == 0.7

    def test_none_grounded_is_zero(self):
        assert miou([0.1, 0.2], mode="grounded", k=0.5) == 0.0

    def test_all_leq_grounded_when_mixed(self):
        ious = [0.9, 0.8, 0.05]
        assert miou(ious, mode="all") < miou(ious, mode="grounded", k=0.25)

    def test_empty_raises(self):
        with pytest.raises(EmptyQuerySet):
            miou([], mode="all")

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            miou([0.5], mode="median")
