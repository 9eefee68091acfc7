"""Point-mask inference from a trained model and the two-stage metrics.

Grounding quality is Accuracy@kIoU over queries; segmentation quality is mean
IoU, reported both over all queries and restricted to grounded ones (IoU >=
0.25 by default), since "after successful grounding" admits both readings.
"""

from __future__ import annotations

import numpy as np

from .errors import EmptyQuerySet
from .learner import FeatureModel, _sigmoid, forward_features, model_inputs, project_query
from .types import PipelineConfig, QueryResult, SceneBundle


def infer_mask(
    model: FeatureModel, scene: SceneBundle, q: np.ndarray, cfg: PipelineConfig
) -> QueryResult:
    """Per-point target probabilities and the thresholded mask.

    prob_mode "dot" uses sigma(f . t), the training logit, so the default 0.5
    threshold is the BCE decision boundary. Mode "cosine" maps cos(f, t) from
    [-1, 1] onto [0, 1] linearly; zero vectors get cosine 0 (probability 0.5).
    """
    feats = forward_features(model, model_inputs(scene.cloud))
    t = project_query(model, q)
    logits = feats @ t
    if cfg.prob_mode == "cosine":
        denom = np.linalg.norm(feats, axis=1) * np.linalg.norm(t)
        cos = np.divide(logits, denom, out=np.zeros_like(logits), where=denom > 0)
        probs = 0.5 * (cos + 1.0)
    else:
        probs = _sigmoid(logits)
    mask = probs >= cfg.infer_threshold
    iou_vs_gt = None
    if scene.gt_mask is not None:
        iou_vs_gt = iou(mask, scene.gt_mask)
    return QueryResult(
        point_probs=probs, binary_mask=mask, threshold=cfg.infer_threshold, iou_vs_gt=iou_vs_gt
    )


def iou(pred: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two point sets; 1.0 when both are empty."""
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    if p.shape != g.shape:
        raise ValueError(f"point sets live in different universes: {p.shape} vs {g.shape}")
    union = np.count_nonzero(p | g)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & g) / union


def acc_at_k(ious, k: float) -> float:
    """Fraction of queries whose IoU reaches k.

    Raises:
        EmptyQuerySet: nothing to average.
    """
    if not (0.0 < k <= 1.0):
        raise ValueError("k must be in (0, 1]")
    vals = np.asarray(ious, dtype=np.float64)
    if vals.size == 0:
        raise EmptyQuerySet("accuracy needs at least one query")
    return float(np.count_nonzero(vals >= k)) / vals.size


def miou(ious, mode: str = "all", k: float = 0.25) -> float:
    """Mean IoU over queries: every query ("all") or only those grounded at k
    ("grounded", 0.0 if none qualify).

    Raises:
        EmptyQuerySet: nothing to average.
    """
    vals = np.asarray(ious, dtype=np.float64)
    if vals.size == 0:
        raise EmptyQuerySet("mean IoU needs at least one query")
    if mode == "all":
        return float(vals.mean())
    if mode == "grounded":
        kept = vals[vals >= k]
        return float(kept.mean()) if kept.size else 0.0
    raise ValueError(f"mode must be 'all' or 'grounded', got {mode!r}")
