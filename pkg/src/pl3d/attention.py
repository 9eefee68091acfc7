"""View filtering, unified-query fusion, and pseudo-label aggregation.

The query embedding q and attention weights w are mutually defined (w needs
similarities against q, q is the w-weighted embedding mean), so `unify_query`
closes the loop with a short fixed-point iteration seeded from the
confidence-weighted mean. Everything downstream treats the result as
closed-form; there are no learned parameters here.
"""

from __future__ import annotations

import numpy as np

from .errors import AllViewsFiltered, DegenerateEmbeddings
from .types import (
    CorrespondenceSet,
    FusedLabels,
    PipelineConfig,
    UnifiedQuery,
    ViewPrediction,
)


def _normalize_rows(e: np.ndarray) -> np.ndarray:
    """Row-wise L2 normalization; zero rows stay zero rather than NaN."""
    norms = np.linalg.norm(e, axis=1, keepdims=True)
    return np.divide(e, norms, out=np.zeros_like(e), where=norms > 0)


def filter_predictions(preds: list[ViewPrediction], cfg: PipelineConfig) -> list[int]:
    """Indices of views passing both the confidence floor and the minimum
    hard-mask area fraction, in input order.

    Raises:
        AllViewsFiltered: nothing survives.
    """
    retained = []
    for i, pred in enumerate(preds):
        if pred.confidence < cfg.alpha_min:
            continue
        area_frac = float(np.count_nonzero(pred.mask > 0.5)) / pred.mask.size
        if area_frac < cfg.area_min_frac:
            continue
        retained.append(i)
    if not retained:
        raise AllViewsFiltered(
            f"no view passed confidence >= {cfg.alpha_min} "
            f"and area fraction >= {cfg.area_min_frac}"
        )
    return retained


def attention_weights(
    embeddings: np.ndarray, confidences: np.ndarray, q: np.ndarray
) -> np.ndarray:
    """w_i = a_i * max(0, e_hat_i . q), normalized to sum 1.

    Falls back to uniform weights when every similarity clamps to zero, so a
    retained view never silently loses its vote to a division by zero.
    """
    e_hat = _normalize_rows(np.asarray(embeddings, dtype=np.float64))
    alpha = np.asarray(confidences, dtype=np.float64)
    s = e_hat @ np.asarray(q, dtype=np.float64)
    raw = alpha * np.maximum(0.0, s)
    total = raw.sum()
    if total <= 0.0:
        return np.full(len(alpha), 1.0 / len(alpha))
    return raw / total


def unify_query(
    embeddings: np.ndarray,
    confidences: np.ndarray,
    retained_views: list[int],
    iters: int = 3,
) -> UnifiedQuery:
    """Fuse per-view embeddings into one unit query via fixed-point iteration.

    Seed: q0 = normalize(sum_i a_i * e_hat_i). Each iteration recomputes
    `attention_weights` against the current q and sets q = normalize(sum_i
    w_i * e_hat_i). Returns the final q with the last iteration's weights.

    Raises:
        DegenerateEmbeddings: every embedding is the zero vector.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    e = np.asarray(embeddings, dtype=np.float64)
    alpha = np.asarray(confidences, dtype=np.float64)
    if e.ndim != 2 or e.shape[0] != len(alpha) or e.shape[0] != len(retained_views):
        raise ValueError("embeddings, confidences, retained_views must align")
    e_hat = _normalize_rows(e)
    if not np.any(np.linalg.norm(e_hat, axis=1) > 0):
        raise DegenerateEmbeddings("all view embeddings are zero vectors")

    q = alpha @ e_hat
    nq = np.linalg.norm(q)
    if nq > 0:
        q = q / nq
    else:
        # Confidence-weighted mean cancelled out exactly; seed from the most
        # confident nonzero embedding so the recurrence still has a direction.
        nonzero = np.nonzero(np.linalg.norm(e_hat, axis=1) > 0)[0]
        q = e_hat[nonzero[np.argmax(alpha[nonzero])]].copy()

    w = np.full(len(alpha), 1.0 / len(alpha))
    for _ in range(iters):
        w = attention_weights(e_hat, alpha, q)
        q_next = w @ e_hat
        nq = np.linalg.norm(q_next)
        if nq > 0:
            q = q_next / nq
        # A cancelled weighted sum keeps the previous q; the weights above
        # remain the ones actually derived from it.

    return UnifiedQuery(q=q, weights=w, retained_views=tuple(int(i) for i in retained_views))


def fuse_pseudo_labels(corr: CorrespondenceSet, unified: UnifiedQuery) -> FusedLabels:
    """Per-point weighted average of sampled mask values.

    Weights are renormalized over each point's observing views, so partial
    visibility never shrinks a label toward zero. A point whose observing
    views all carry zero weight gets the plain mean of its samples.

    Raises:
        ValueError: a correspondence references a view outside the retained set.
    """
    if len(corr) == 0:
        return FusedLabels(
            point_indices=np.zeros(0, dtype=np.int64),
            labels=np.zeros(0),
            coverage=np.zeros(0, dtype=np.int64),
        )
    weight_of = {v: float(w) for v, w in zip(unified.retained_views, unified.weights)}
    missing = set(np.unique(corr.view_index).tolist()) - set(weight_of)
    if missing:
        raise ValueError(f"correspondences reference non-retained views {sorted(missing)}")

    pair_w = np.array([weight_of[int(v)] for v in corr.view_index])
    points, inverse = np.unique(corr.point_index, return_inverse=True)
    cov = np.bincount(inverse)
    wsum = np.bincount(inverse, weights=pair_w)
    wlab = np.bincount(inverse, weights=pair_w * corr.logit)
    mean = np.bincount(inverse, weights=corr.logit) / cov
    labels = np.where(wsum > 0, wlab / np.where(wsum > 0, wsum, 1.0), mean)
    return FusedLabels(point_indices=points, labels=labels, coverage=cov.astype(np.int64))
