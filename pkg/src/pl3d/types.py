"""Domain types shared by every pipeline stage.

Constructors normalize arrays and check structural shape; semantic invariants
(finiteness, orthonormality, value ranges, cross-type dimension agreement) are
checked by `validate_scene`, which reports violations instead of raising, and
is run on every bundle load.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

ROT_ORTHO_TOL = 1e-6
WEIGHT_SUM_TOL = 1e-9
UNIT_NORM_TOL = 1e-9


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr)
    out.flags.writeable = False
    return out


def _as_f64(arr, shape_hint: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.float64)
    if out.size == 0:
        raise ValueError(f"empty array where {shape_hint} expected")
    return out


@dataclass(frozen=True)
class PointCloud:
    """World-frame points in meters, with optional per-point RGB in [0, 1]."""

    positions: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        pos = _as_f64(self.positions, "N x 3 positions")
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise ValueError(f"positions must be N x 3, got {pos.shape}")
        object.__setattr__(self, "positions", _freeze(pos))
        if self.colors is not None:
            col = _as_f64(self.colors, "N x 3 colors")
            if col.shape != pos.shape:
                raise ValueError(f"colors shape {col.shape} != positions shape {pos.shape}")
            object.__setattr__(self, "colors", _freeze(col))

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True)
class CameraView:
    """Pinhole camera with a rigid world-to-camera transform and a depth map.

    Depth is in meters, 0 meaning no return. The rotation block of
    `world_to_camera` must be orthonormal with det +1.
    """

    intrinsics: np.ndarray
    world_to_camera: np.ndarray
    depth: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        K = _as_f64(self.intrinsics, "3 x 3 intrinsics")
        if K.shape != (3, 3):
            raise ValueError(f"intrinsics must be 3 x 3, got {K.shape}")
        P = _as_f64(self.world_to_camera, "4 x 4 transform")
        if P.shape != (4, 4):
            raise ValueError(f"world_to_camera must be 4 x 4, got {P.shape}")
        D = _as_f64(self.depth, "H x W depth")
        if D.ndim != 2:
            raise ValueError(f"depth must be 2-D, got {D.shape}")
        object.__setattr__(self, "intrinsics", _freeze(K))
        object.__setattr__(self, "world_to_camera", _freeze(P))
        object.__setattr__(self, "depth", _freeze(D))
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def fx(self) -> float:
        return float(self.intrinsics[0, 0])

    @property
    def fy(self) -> float:
        return float(self.intrinsics[1, 1])

    @property
    def cx(self) -> float:
        return float(self.intrinsics[0, 2])

    @property
    def cy(self) -> float:
        return float(self.intrinsics[1, 2])

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]


@dataclass(frozen=True)
class ViewPrediction:
    """Per-view 2D prediction: soft target mask, query-token embedding,
    self-estimated confidence, and an optional dense feature map.

    The mask holds per-pixel target probabilities; the hard mask is its
    >= 0.5 level set. `feature_map` may have a different resolution than the
    mask and is sampled with coordinate rescaling.
    """

    mask: np.ndarray
    embedding: np.ndarray
    confidence: float
    feature_map: Optional[np.ndarray] = None

    def __post_init__(self):
        M = _as_f64(self.mask, "H x W mask")
        if M.ndim != 2:
            raise ValueError(f"mask must be 2-D, got {M.shape}")
        e = _as_f64(self.embedding, "embedding vector")
        if e.ndim != 1:
            raise ValueError(f"embedding must be 1-D, got {e.shape}")
        object.__setattr__(self, "mask", _freeze(M))
        object.__setattr__(self, "embedding", _freeze(e))
        object.__setattr__(self, "confidence", float(self.confidence))
        if self.feature_map is not None:
            F = _as_f64(self.feature_map, "H' x W' x d_f feature map")
            if F.ndim != 3:
                raise ValueError(f"feature map must be 3-D, got {F.shape}")
            object.__setattr__(self, "feature_map", _freeze(F))


@dataclass(frozen=True)
class SceneBundle:
    """A scene: point cloud, posed depth views, per-view predictions for one
    textual query, and an optional ground-truth target mask."""

    scene_id: str
    query: str
    cloud: PointCloud
    views: list[CameraView]
    predictions: Optional[list[ViewPrediction]]
    embed_dim: int
    feature_dim: int
    gt_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.gt_mask is not None:
            gt = np.asarray(self.gt_mask).astype(bool)
            if gt.shape != (len(self.cloud),):
                raise ValueError(f"gt_mask shape {gt.shape} != ({len(self.cloud)},)")
            object.__setattr__(self, "gt_mask", _freeze(gt))


@dataclass(frozen=True)
class CorrespondenceSet:
    """Point-pixel pairs: for each (point, view) where the point projects
    in-frame and passes the visibility test, the sampled mask logit and the
    optionally sampled 2D feature vector.

    Stored column-wise; rows are ordered by (point_index, view_index) and each
    (point, view) pair appears at most once.
    """

    point_index: np.ndarray
    view_index: np.ndarray
    u: np.ndarray
    v: np.ndarray
    logit: np.ndarray
    features: Optional[np.ndarray] = None
    has_feature: Optional[np.ndarray] = None

    def __post_init__(self):
        pi = np.asarray(self.point_index, dtype=np.int64)
        vi = np.asarray(self.view_index, dtype=np.int64)
        n = pi.shape[0]
        for name in ("view_index", "u", "v", "logit"):
            if np.asarray(getattr(self, name)).shape != (n,):
                raise ValueError(f"{name} length != {n}")
        object.__setattr__(self, "point_index", _freeze(pi))
        object.__setattr__(self, "view_index", _freeze(vi))
        object.__setattr__(self, "u", _freeze(np.asarray(self.u, dtype=np.float64)))
        object.__setattr__(self, "v", _freeze(np.asarray(self.v, dtype=np.float64)))
        object.__setattr__(self, "logit", _freeze(np.asarray(self.logit, dtype=np.float64)))
        if self.features is not None:
            feat = np.asarray(self.features, dtype=np.float64)
            hf = np.asarray(self.has_feature, dtype=bool)
            if feat.ndim != 2 or feat.shape[0] != n or hf.shape != (n,):
                raise ValueError("features must be (n, d_f) with an (n,) presence mask")
            object.__setattr__(self, "features", _freeze(feat))
            object.__setattr__(self, "has_feature", _freeze(hf))
        else:
            object.__setattr__(self, "has_feature", _freeze(np.zeros(n, dtype=bool)))

    def __len__(self) -> int:
        return self.point_index.shape[0]

    def entries(self) -> Iterator[tuple]:
        """Yield (point, view, u, v, logit, feature-or-None) rows."""
        for i in range(len(self)):
            feat = None
            if self.features is not None and self.has_feature[i]:
                feat = self.features[i]
            yield (
                int(self.point_index[i]),
                int(self.view_index[i]),
                float(self.u[i]),
                float(self.v[i]),
                float(self.logit[i]),
                feat,
            )


@dataclass(frozen=True)
class UnifiedQuery:
    """Fused query embedding with per-retained-view attention weights.

    `q` is unit length; `weights` is a probability vector aligned with
    `retained_views` (indices into the bundle's original view list).
    """

    q: np.ndarray
    weights: np.ndarray
    retained_views: tuple[int, ...]

    def __post_init__(self):
        q = _as_f64(self.q, "query embedding")
        w = np.asarray(self.weights, dtype=np.float64)
        rv = tuple(int(i) for i in self.retained_views)
        if w.shape != (len(rv),):
            raise ValueError(f"weights length {w.shape} != retained view count {len(rv)}")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("weights must be nonnegative and sum to 1 within 1e-9")
        if abs(float(np.linalg.norm(q)) - 1.0) > UNIT_NORM_TOL:
            raise ValueError("q must be unit length within 1e-9")
        object.__setattr__(self, "q", _freeze(q))
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "retained_views", rv)


@dataclass(frozen=True)
class FusedLabels:
    """Attention-fused soft labels for every point observed by at least one
    retained view, with the observing-view count per point."""

    point_indices: np.ndarray
    labels: np.ndarray
    coverage: np.ndarray

    def __post_init__(self):
        pi = np.asarray(self.point_indices, dtype=np.int64)
        lab = np.asarray(self.labels, dtype=np.float64)
        cov = np.asarray(self.coverage, dtype=np.int64)
        if lab.shape != pi.shape or cov.shape != pi.shape:
            raise ValueError("point_indices, labels, coverage must share one length")
        object.__setattr__(self, "point_indices", _freeze(pi))
        object.__setattr__(self, "labels", _freeze(lab))
        object.__setattr__(self, "coverage", _freeze(cov))

    def __len__(self) -> int:
        return self.point_indices.shape[0]

    def as_dict(self) -> dict[int, float]:
        return {int(p): float(l) for p, l in zip(self.point_indices, self.labels)}

    def dense(self, num_points: int, fill: float = 0.0) -> np.ndarray:
        """Expand to a length-`num_points` array; uncovered points get `fill`."""
        out = np.full(num_points, fill, dtype=np.float64)
        out[self.point_indices] = self.labels
        return out


@dataclass(frozen=True)
class QueryResult:
    """Per-point target probabilities, the thresholded mask, and IoU against
    ground truth when the scene carries one."""

    point_probs: np.ndarray
    binary_mask: np.ndarray
    threshold: float
    iou_vs_gt: Optional[float] = None

    def __post_init__(self):
        probs = np.asarray(self.point_probs, dtype=np.float64)
        mask = np.asarray(self.binary_mask).astype(bool)
        if probs.ndim != 1 or mask.shape != probs.shape:
            raise ValueError("point_probs and binary_mask must be equal-length 1-D arrays")
        object.__setattr__(self, "point_probs", _freeze(probs))
        object.__setattr__(self, "binary_mask", _freeze(mask))
        object.__setattr__(self, "threshold", float(self.threshold))


_PROB_MODES = ("dot", "cosine")


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs shared by fusion, training, and inference.

    `lam` balances the spatial-consistency term in the total loss. The
    confidence floor and minimum mask-area fraction drive view filtering;
    `fixed_point_iters` is the query-fusion recurrence depth.
    """

    k: int = 4
    alpha_min: float = 0.3
    area_min_frac: float = 0.001
    lam: float = 1.0
    infer_threshold: float = 0.5
    depth_tol_frac: float = 0.01
    fixed_point_iters: int = 3
    seed: int = 0
    prob_mode: str = "dot"
    hidden_widths: tuple[int, ...] = (64, 64)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (0.0 <= self.alpha_min <= 1.0):
            raise ValueError("alpha_min must be in [0, 1]")
        if not (0.0 <= self.area_min_frac <= 1.0):
            raise ValueError("area_min_frac must be in [0, 1]")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not (0.0 <= self.infer_threshold <= 1.0):
            raise ValueError("infer_threshold must be in [0, 1]")
        if self.depth_tol_frac < 0:
            raise ValueError("depth_tol_frac must be >= 0")
        if self.fixed_point_iters < 1:
            raise ValueError("fixed_point_iters must be >= 1")
        if self.prob_mode not in _PROB_MODES:
            raise ValueError(f"prob_mode must be one of {_PROB_MODES}")
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))


@dataclass
class ValidationReport:
    """Outcome of `validate_scene`: empty `violations` means pass."""

    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, msg: str) -> None:
        self.violations.append(msg)


def validate_scene(scene: SceneBundle) -> ValidationReport:
    """Check every declared invariant of a bundle; never raises, never mutates.

    Violations name the offending view/point indices so a bad bundle can be
    repaired from the report alone.
    """
    rep = ValidationReport()
    pos = scene.cloud.positions
    if not np.all(np.isfinite(pos)):
        rep.add("non-finite point coordinates")
    if scene.cloud.colors is not None:
        col = scene.cloud.colors
        if not np.all(np.isfinite(col)):
            rep.add("non-finite point colors")
        elif col.min() < 0.0 or col.max() > 1.0:
            rep.add("point colors outside [0, 1]")

    preds = scene.predictions
    if preds is not None and len(preds) != len(scene.views):
        rep.add(f"{len(preds)} predictions for {len(scene.views)} views")
        preds = None

    for i, view in enumerate(scene.views):
        if view.fx <= 0 or view.fy <= 0:
            rep.add(f"view {i}: non-positive focal length")
        if (
            abs(view.intrinsics[0, 1]) > 0
            or abs(view.intrinsics[1, 0]) > 0
            or np.any(view.intrinsics[2] != (0.0, 0.0, 1.0))
        ):
            rep.add(f"view {i}: intrinsics not an upper-triangular pinhole with zero skew")
        R = view.rotation
        if np.max(np.abs(R.T @ R - np.eye(3))) > ROT_ORTHO_TOL:
            rep.add(f"view {i}: non-orthonormal rotation")
        elif np.linalg.det(R) < 0:
            rep.add(f"view {i}: rotation has negative determinant")
        if np.any(view.world_to_camera[3] != (0.0, 0.0, 0.0, 1.0)):
            rep.add(f"view {i}: world_to_camera bottom row is not (0, 0, 0, 1)")
        if view.depth.shape != (view.height, view.width):
            rep.add(
                f"view {i}: depth shape {view.depth.shape} != "
                f"(height, width) = ({view.height}, {view.width})"
            )
        if not np.all(np.isfinite(view.depth)) or np.any(view.depth < 0):
            rep.add(f"view {i}: depth must be finite and >= 0")

        if preds is None:
            continue
        pred = preds[i]
        if pred.mask.shape != (view.height, view.width):
            rep.add(f"view {i}: mask/view dim mismatch {pred.mask.shape}")
        if not np.all(np.isfinite(pred.mask)) or pred.mask.min() < 0 or pred.mask.max() > 1:
            rep.add(f"view {i}: mask values outside [0, 1]")
        if not np.all(np.isfinite(pred.embedding)):
            rep.add(f"view {i}: embedding has NaN/inf")
        if pred.embedding.shape != (scene.embed_dim,):
            rep.add(f"view {i}: embedding dim {pred.embedding.shape[0]} != {scene.embed_dim}")
        if not (0.0 <= pred.confidence <= 1.0):
            rep.add(f"view {i}: confidence {pred.confidence} outside [0, 1]")
        if pred.feature_map is not None and pred.feature_map.shape[2] != scene.feature_dim:
            rep.add(
                f"view {i}: feature width {pred.feature_map.shape[2]} != {scene.feature_dim}"
            )

    if scene.gt_mask is not None and scene.gt_mask.shape != (len(scene.cloud),):
        rep.add("gt mask length != point count")
    return rep
