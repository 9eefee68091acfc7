"""Pinhole projection, depth-based visibility, and point-pixel correspondences.

Conventions: pixel centers sit at integer coordinates, so a projection is
in-frame iff u in [0, W) and v in [0, H) (half-open; the border u = W is out).
Soft quantities (mask logits, feature maps) are sampled bilinearly with
clamp-to-edge; the visibility depth sample is nearest-neighbor so depths never
blend across occlusion boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BehindCamera, OutOfFrame
from .types import CameraView, CorrespondenceSet, SceneBundle, ViewPrediction


@dataclass(frozen=True)
class Projection:
    """A point's pixel location and its depth in the camera frame."""

    u: float
    v: float
    cam_depth: float


def project_point(point: np.ndarray, view: CameraView) -> Projection:
    """Project one world point through a view's pinhole model.

    Raises:
        BehindCamera: camera-frame depth z <= 0.
        OutOfFrame: pixel outside [0, W) x [0, H).
    """
    p = np.asarray(point, dtype=np.float64)
    cam = view.rotation @ p + view.translation
    z = float(cam[2])
    if z <= 0.0:
        raise BehindCamera(f"point depth {z} <= 0")
    u = view.fx * float(cam[0]) / z + view.cx
    v = view.fy * float(cam[1]) / z + view.cy
    if not (0.0 <= u < view.width and 0.0 <= v < view.height):
        raise OutOfFrame(f"pixel ({u:.2f}, {v:.2f}) outside {view.width} x {view.height}")
    return Projection(u=u, v=v, cam_depth=z)


def unproject_pixel(u: float, v: float, cam_depth: float, view: CameraView) -> np.ndarray:
    """Inverse of `project_point`: lift a pixel at a known camera depth to world."""
    x = (u - view.cx) * cam_depth / view.fx
    y = (v - view.cy) * cam_depth / view.fy
    cam = np.array([x, y, cam_depth])
    return view.rotation.T @ (cam - view.translation)


def nearest_pixel(u, v, width: int, height: int):
    """Round to the nearest pixel index, clamped into the image."""
    iu = np.clip(np.rint(u).astype(np.int64), 0, width - 1)
    iv = np.clip(np.rint(v).astype(np.int64), 0, height - 1)
    return iu, iv


def visibility_test(proj: Projection, view: CameraView, depth_tol_frac: float) -> bool:
    """True iff the depth map confirms the point is the visible surface.

    The sample at round(u, v) must be a real return (> 0) and agree with the
    point's camera depth within depth_tol_frac * cam_depth.
    """
    iu, iv = nearest_pixel(proj.u, proj.v, view.width, view.height)
    d = float(view.depth[int(iv), int(iu)])
    if d <= 0.0:
        return False
    return abs(proj.cam_depth - d) <= depth_tol_frac * proj.cam_depth


def bilinear_sample(img: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinearly sample an (H, W) or (H, W, C) image at fractional pixels.

    Coordinates are clamped to [0, W-1] x [0, H-1]; the last half pixel of the
    in-frame range therefore extends the edge value.
    """
    h, w = img.shape[:2]
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    u0 = np.floor(uc).astype(np.int64)
    v0 = np.floor(vc).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    au = uc - u0
    av = vc - v0
    if img.ndim == 3:
        au = au[..., None]
        av = av[..., None]
    top = img[v0, u0] * (1 - au) + img[v0, u1] * au
    bot = img[v1, u0] * (1 - au) + img[v1, u1] * au
    return top * (1 - av) + bot * av


def _project_all(points: np.ndarray, view: CameraView):
    """Vectorized projection of N points; returns (u, v, z, in_front_and_in_frame)."""
    cam = points @ view.rotation.T + view.translation
    z = cam[:, 2]
    front = z > 0.0
    zsafe = np.where(front, z, 1.0)
    u = view.fx * cam[:, 0] / zsafe + view.cx
    v = view.fy * cam[:, 1] / zsafe + view.cy
    ok = front & (u >= 0.0) & (u < view.width) & (v >= 0.0) & (v < view.height)
    return u, v, z, ok


def _sample_feature_map(fmap: np.ndarray, u, v, width: int, height: int) -> np.ndarray:
    # Feature maps may be lower resolution than the mask; rescale indices.
    fh, fw = fmap.shape[:2]
    return bilinear_sample(fmap, u * (fw / width), v * (fh / height))


def build_correspondences(
    scene: SceneBundle,
    retained: list[int],
    depth_tol_frac: float,
) -> CorrespondenceSet:
    """Build the paired set over all points and retained views.

    For every (point, view) where the point projects in-frame and passes the
    visibility test, emit the bilinear mask sample as the pair's soft logit
    and, when the view carries a feature map, the bilinear feature sample.
    Rows come out sorted by (point_index, view_index).
    """
    if scene.predictions is None:
        raise ValueError("scene has no view predictions")
    pts = scene.cloud.positions
    d_f = scene.feature_dim

    cols_p, cols_v, cols_u, cols_vv, cols_m = [], [], [], [], []
    cols_f, cols_hf = [], []
    for vi in retained:
        view = scene.views[vi]
        pred: ViewPrediction = scene.predictions[vi]
        u, v, z, ok = _project_all(pts, view)
        if not ok.any():
            continue
        idx = np.nonzero(ok)[0]
        uu, vv, zz = u[idx], v[idx], z[idx]
        iu, iv = nearest_pixel(uu, vv, view.width, view.height)
        dsamp = view.depth[iv, iu]
        vis = (dsamp > 0.0) & (np.abs(zz - dsamp) <= depth_tol_frac * zz)
        if not vis.any():
            continue
        idx, uu, vv = idx[vis], uu[vis], vv[vis]
        cols_p.append(idx)
        cols_v.append(np.full(idx.shape, vi, dtype=np.int64))
        cols_u.append(uu)
        cols_vv.append(vv)
        cols_m.append(bilinear_sample(pred.mask, uu, vv))
        if pred.feature_map is not None:
            cols_f.append(_sample_feature_map(pred.feature_map, uu, vv, view.width, view.height))
            cols_hf.append(np.ones(idx.shape, dtype=bool))
        else:
            cols_f.append(np.zeros((idx.shape[0], d_f)))
            cols_hf.append(np.zeros(idx.shape, dtype=bool))

    if not cols_p:
        empty = np.zeros(0)
        return CorrespondenceSet(
            point_index=np.zeros(0, dtype=np.int64),
            view_index=np.zeros(0, dtype=np.int64),
            u=empty,
            v=empty,
            logit=empty,
            features=np.zeros((0, d_f)),
            has_feature=np.zeros(0, dtype=bool),
        )

    point_index = np.concatenate(cols_p)
    view_index = np.concatenate(cols_v)
    order = np.lexsort((view_index, point_index))
    return CorrespondenceSet(
        point_index=point_index[order],
        view_index=view_index[order],
        u=np.concatenate(cols_u)[order],
        v=np.concatenate(cols_vv)[order],
        logit=np.concatenate(cols_m)[order],
        features=np.concatenate(cols_f)[order],
        has_feature=np.concatenate(cols_hf)[order],
    )
