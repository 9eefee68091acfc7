"""Deterministic synthetic scenes with exact ground truth.

Stands in for the frozen 2D model stack: generates object point clouds on a
floor plane, ring cameras with rendered depth, ideal per-view masks,
concept-vector embeddings and feature maps, plus corruption knobs
(hallucinated views, dropped masks, embedding noise) for robustness studies.

Depth maps combine a nearest-wins point splat with a solid-surface backstop
ray-cast against the generating primitives: the splat alone leaves sparse
clouds transparent between landed points, letting points of an object behind
the target pass the depth-visibility check through the gaps.

Everything is a pure function of (spec, seed). All stored arrays are rounded
through float32 at creation so written bundles read back bit-identical, and
depth maps / masks are derived from the rounded geometry so projection math
downstream sees exactly what the renderer saw.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import MissingFile
from .geometry import nearest_pixel
from .types import CameraView, PointCloud, SceneBundle, ViewPrediction

EMBED_DIM = 16
FEATURE_DIM = 8
HALLUCINATION_ANGLE_DEG = 85.0  # >= 60 degrees from the concept vector

# Scene layout: the queried object sits at the room center (the thing the
# camera orbit is scanning) with short distractors on a ring around it.
# Geometry margins the layout guarantees, and why they matter:
#   - sight lines from every camera to any target surface point pass above
#     the distractor tops (cap 0.32 m; rays stay >= 0.47 m at the ring), so
#     target coverage never depends on what lies between camera and target;
#   - the target's box faces are near-frontal to the axis-aligned cameras
#     (within ~15 degrees), keeping per-pixel depth spread under the
#     visibility tolerance; oblique surfaces would lose the depth race;
#   - distractors on the diagonals stay inside the field of view.
CAMERA_HEIGHT = 0.9
LOOK_AT_HEIGHT = 0.35
FOCAL_FRAC = 0.72  # focal length as a fraction of image width
RING_FRAC = 0.35   # camera ring radius as a fraction of the room's short side


@dataclass(frozen=True)
class SynthSpec:
    """Generator knobs. Rates are per-view probabilities."""

    seed: int = 0
    num_objects: int = 5
    points_per_object: int = 200
    room_extent: tuple[float, float, float] = (6.0, 6.0, 3.0)
    target_index: int = 0
    view_count: int = 4
    image_size: tuple[int, int] = (64, 64)
    hallucination_rate: float = 0.0
    drop_visible_rate: float = 0.0
    embed_noise: float = 0.0

    def __post_init__(self):
        if self.num_objects < 1 or self.points_per_object < 1:
            raise ValueError("need at least one object and one point per object")
        if not (0 <= self.target_index < self.num_objects):
            raise ValueError("target_index must be < num_objects")
        if self.view_count < 1:
            raise ValueError("view_count must be >= 1")
        for r in (self.hallucination_rate, self.drop_visible_rate):
            if not (0.0 <= r <= 1.0):
                raise ValueError("rates must be in [0, 1]")
        if self.embed_noise < 0:
            raise ValueError("embed_noise must be >= 0")
        if min(self.image_size) < 8 or min(self.room_extent) <= 0:
            raise ValueError("image_size >= 8 and positive room_extent required")
        object.__setattr__(self, "room_extent", tuple(float(v) for v in self.room_extent))
        object.__setattr__(self, "image_size", tuple(int(v) for v in self.image_size))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["room_extent"] = list(self.room_extent)
        d["image_size"] = list(self.image_size)
        return d

    @staticmethod
    def from_dict(d: dict) -> "SynthSpec":
        known = {f.name for f in dataclasses.fields(SynthSpec)}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown generator fields: {sorted(extra)}")
        d = dict(d)
        for key in ("room_extent", "image_size"):
            if key in d:
                d[key] = tuple(d[key])
        return SynthSpec(**d)

    @staticmethod
    def load(path: str) -> "SynthSpec":
        if not os.path.isfile(path):
            raise MissingFile(f"no generator spec at {path}")
        with open(path, "r", encoding="utf-8") as fh:
            return SynthSpec.from_dict(json.load(fh))


def _f32(a):
    """Round through float32, keep float64 in memory (storage-exact values)."""
    return np.asarray(np.asarray(a, dtype=np.float32), dtype=np.float64)


def _streams(seed: int):
    """Fixed substream split: geometry, concept vectors, rendering, corruption."""
    return np.random.SeedSequence(seed).spawn(4)


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _concepts(concept_ss):
    """Target concept vector (embedding space) and an orthonormal
    concept/distractor pair in feature space."""
    rng = np.random.default_rng(concept_ss)
    c_e = _unit(rng.standard_normal(EMBED_DIM))
    c_f = _unit(rng.standard_normal(FEATURE_DIM))
    raw = rng.standard_normal(FEATURE_DIM)
    o_f = _unit(raw - (raw @ c_f) * c_f)
    return _f32(c_e), _f32(c_f), _f32(o_f)


def _sample_box(rng, half, count: int) -> np.ndarray:
    """Surface points on the four side faces of an axis-aligned box.

    Top and bottom are excluded: a ring camera sees them only at grazing
    angles, where the per-pixel depth spread defeats the visibility test.
    """
    hx, hy, hz = half
    areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz])
    face = rng.choice(4, size=count, p=areas / areas.sum())
    a = rng.uniform(-1.0, 1.0, size=count)
    b = rng.uniform(-1.0, 1.0, size=count)
    pts = np.empty((count, 3))
    for f, axis, sign in ((0, 0, 1), (1, 0, -1), (2, 1, 1), (3, 1, -1)):
        sel = face == f
        pts[sel, axis] = sign * half[axis]
        others = [i for i in range(3) if i != axis]
        pts[sel, others[0]] = a[sel] * half[others[0]]
        pts[sel, others[1]] = b[sel] * half[others[1]]
    return pts


def _sample_sphere(rng, radius: float, count: int) -> np.ndarray:
    """Uniform points on a sphere's equatorial band (|z| <= 0.35 r), the part
    whose normals face a surrounding camera ring. Uniform z gives uniform
    area on a sphere."""
    z = rng.uniform(-0.35, 0.35, size=count)
    azim = rng.uniform(0.0, 2.0 * np.pi, size=count)
    rho = np.sqrt(1.0 - z**2)
    return radius * np.stack([rho * np.cos(azim), rho * np.sin(azim), z], axis=1)


def _gen_objects(spec: SynthSpec, rng):
    """The queried object at the room center, distractors on a ring around it.

    Distractor slots sit on the diagonals between camera axes and are kept
    short, so camera sight lines to the target clear them vertically.

    Returns (positions, colors, primitives); each primitive is
    ("box"|"sphere", center, half-extents-or-radius) in world frame and is the
    exact solid the object's points were sampled from.
    """
    positions, colors, prims = [], [], []
    slot = 0
    slot_count = max(spec.num_objects - 1, 1)
    for i in range(spec.num_objects):
        if i == spec.target_index:
            # The queried object is a box: its faces sit near-frontal to the
            # axis-aligned cameras, so every sampled point wins the depth
            # race in some view. A centered sphere's diagonal azimuths face
            # both adjacent cameras at ~45 degrees, where in-pixel depth
            # spread is ~2.4x the visibility tolerance and points near those
            # cusps can lose coverage entirely.
            center_xy = rng.uniform(-0.05, 0.05, size=2)
            lo, hi = 0.24, 0.3
            is_box = True
        else:
            angle = (
                np.pi / 4.0 + 2.0 * np.pi * slot / slot_count + rng.uniform(-0.14, 0.14)
            )
            ring_r = rng.uniform(0.9, 1.05)
            center_xy = np.array([ring_r * np.cos(angle), ring_r * np.sin(angle)])
            lo, hi = 0.12, 0.16
            is_box = rng.random() < 0.5
            slot += 1
        base_color = rng.uniform(0.1, 0.9, size=3)
        if is_box:
            half = np.array(
                [rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(lo, hi)]
            )
            pts = _sample_box(rng, half, spec.points_per_object)
            center = np.array([*center_xy, half[2]])
            prims.append(("box", _f32(center), _f32(half)))
        else:
            radius = rng.uniform(lo, hi)
            pts = _sample_sphere(rng, radius, spec.points_per_object)
            center = np.array([*center_xy, radius])
            prims.append(("sphere", _f32(center), float(_f32(radius))))
        positions.append(pts + center)
        jitter = rng.uniform(-0.05, 0.05, size=(spec.points_per_object, 3))
        colors.append(np.clip(base_color + jitter, 0.0, 1.0))
    return _f32(np.concatenate(positions)), _f32(np.concatenate(colors)), prims


def _scene_objects(spec: SynthSpec):
    """Re-derive the generated geometry (pure function of the spec)."""
    geo_ss, _, _, _ = _streams(spec.seed)
    return _gen_objects(spec, np.random.default_rng(geo_ss))


def _look_at(pos: np.ndarray, target: np.ndarray) -> np.ndarray:
    """World-to-camera rotation: +z forward toward target, +y down, det +1."""
    z = _unit(target - pos)
    x = np.cross(z, np.array([0.0, 0.0, 1.0]))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = _unit(x)
    y = np.cross(z, x)
    return np.stack([x, y, z])


def _make_cameras(spec: SynthSpec):
    """Evenly spaced inward-looking ring at fixed height."""
    w, h = spec.image_size
    fx = FOCAL_FRAC * w
    intrinsics = _f32(
        [[fx, 0.0, (w - 1) / 2.0], [0.0, fx, (h - 1) / 2.0], [0.0, 0.0, 1.0]]
    )
    radius = RING_FRAC * min(spec.room_extent[0], spec.room_extent[1])
    height = min(CAMERA_HEIGHT, 0.5 * spec.room_extent[2])
    target = np.array([0.0, 0.0, LOOK_AT_HEIGHT])
    cams = []
    for k in range(spec.view_count):
        theta = 2.0 * np.pi * k / spec.view_count
        pos = np.array([radius * np.cos(theta), radius * np.sin(theta), height])
        rot = _look_at(pos, target)
        w2c = np.eye(4)
        w2c[:3, :3] = rot
        w2c[:3, 3] = -rot @ pos
        cams.append((intrinsics, _f32(w2c)))
    return cams


def _splat(positions: np.ndarray, view: CameraView):
    """Nearest-wins point splat: per-pixel depth (inf where empty) and the
    winning point index (-1 where empty). Depth ties go to the lowest index."""
    h, w = view.height, view.width
    cam = positions @ view.rotation.T + view.translation
    z = cam[:, 2]
    front = z > 0.0
    zs = np.where(front, z, 1.0)
    u = view.fx * cam[:, 0] / zs + view.cx
    v = view.fy * cam[:, 1] / zs + view.cy
    ok = front & (u >= 0.0) & (u < w) & (v >= 0.0) & (v < h)
    zbuf = np.full((h, w), np.inf)
    widx = np.full((h, w), -1, dtype=np.int64)
    if not ok.any():
        return zbuf, widx
    ids = np.nonzero(ok)[0]
    iu, iv = nearest_pixel(u[ids], v[ids], w, h)
    np.minimum.at(zbuf, (iv, iu), z[ids])
    tie = z[ids] == zbuf[iv, iu]
    big = np.full((h, w), positions.shape[0], dtype=np.int64)
    np.minimum.at(big, (iv[tie], iu[tie]), ids[tie])
    hit = big < positions.shape[0]
    widx[hit] = big[hit]
    return zbuf, widx


def _raycast(prims, view: CameraView, du: float = 0.0, dv: float = 0.0):
    """Front-surface depth of one ray per pixel against the solid primitives.

    Ray directions keep camera z = 1 so the ray parameter IS camera depth.
    (du, dv) offsets the sample point within each pixel. Returns (depth, hit):
    depth is inf and hit is -1 where no primitive is struck, otherwise hit is
    the index of the front-most primitive.
    """
    h, w = view.height, view.width
    rot = view.rotation
    origin = -rot.T @ view.translation
    uu, vv = np.meshgrid(
        np.arange(w, dtype=np.float64) + du, np.arange(h, dtype=np.float64) + dv
    )
    dirs_cam = np.stack(
        [(uu - view.cx) / view.fx, (vv - view.cy) / view.fy, np.ones_like(uu)], axis=-1
    )
    dirs = dirs_cam @ rot  # row-vector form of R^T @ d
    depth = np.full((h, w), np.inf)
    hit = np.full((h, w), -1, dtype=np.int64)
    for idx, (kind, center, size) in enumerate(prims):
        if kind == "sphere":
            oc = origin - center
            a = np.sum(dirs * dirs, axis=-1)
            b = 2.0 * np.sum(dirs * oc, axis=-1)
            c = oc @ oc - size * size
            disc = b * b - 4.0 * a * c
            root = np.sqrt(np.maximum(disc, 0.0))
            near = (-b - root) / (2.0 * a)
            t = np.where((disc > 0.0) & (near > 1e-9), near, np.inf)
        else:
            bmin = center - size
            bmax = center + size
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (bmin - origin) / dirs
                t2 = (bmax - origin) / dirs
            enter = np.max(np.fmin(t1, t2), axis=-1)
            exit_ = np.min(np.fmax(t1, t2), axis=-1)
            t = np.where((enter <= exit_) & (enter > 1e-9), enter, np.inf)
        closer = t < depth
        depth[closer] = t[closer]
        hit[closer] = idx
    return depth, hit


def _surface_backstop(prims, view: CameraView) -> np.ndarray:
    """Deepest front-surface sample across each pixel's footprint.

    Sampling the center plus the four corners and keeping the maximum gives a
    per-pixel upper bound on the depth of any surface point inside the pixel,
    so a point lying on an oblique face is never occluded by its own face. A
    miss on any of the five rays leaves the pixel unconstrained (inf)."""
    offsets = ((0.0, 0.0), (-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5))
    depth = np.full((view.height, view.width), -np.inf)
    for du, dv in offsets:
        depth = np.maximum(depth, _raycast(prims, view, du, dv)[0])
    return depth


def _dilate3(mask: np.ndarray) -> np.ndarray:
    """3x3 box dilation (separable passes)."""
    a = mask.copy()
    a[1:] |= mask[:-1]
    a[:-1] |= mask[1:]
    out = a.copy()
    out[:, 1:] |= a[:, :-1]
    out[:, :-1] |= a[:, 1:]
    return out


def _member_mask(
    widx: np.ndarray, member: np.ndarray, hit: np.ndarray, prim: int
) -> np.ndarray:
    """Dilated binary mask of pixels won by points flagged in `member`.

    The one-pixel dilation exists to give visible member points full bilinear
    support; where it would spill onto pixels whose front surface is a
    different object (`hit` names another primitive) the mask is cleared,
    since an ideal segmenter never claims another object's visible surface.
    """
    pre = np.zeros(widx.shape, dtype=bool)
    won = widx >= 0
    pre[won] = member[widx[won]]
    return _dilate3(pre) & ((hit == prim) | (hit < 0))


def gen_scene(spec: SynthSpec) -> tuple[SceneBundle, np.ndarray]:
    """Scene geometry (no predictions yet) plus the ground-truth point mask."""
    geo_ss, _, _, _ = _streams(spec.seed)
    rng = np.random.default_rng(geo_ss)
    positions, colors, prims = _gen_objects(spec, rng)
    cloud = PointCloud(positions=positions, colors=colors)

    views = []
    w, h = spec.image_size
    for intrinsics, w2c in _make_cameras(spec):
        probe = CameraView(
            intrinsics=intrinsics, world_to_camera=w2c,
            depth=np.zeros((h, w)), width=w, height=h,
        )
        # Point splat tightened by a solid-surface backstop: sparse clouds are
        # transparent between landed points, which would let points of an
        # object behind the target pass the depth check through the gaps. The
        # minimum keeps the splat invariant (stored depth never exceeds the
        # camera depth of any point in the pixel) while capping the gaps at
        # the deepest surface sample inside each pixel.
        zbuf = np.minimum(_splat(positions, probe)[0], _surface_backstop(prims, probe))
        depth = _f32(np.where(np.isfinite(zbuf), zbuf, 0.0))
        views.append(
            CameraView(
                intrinsics=intrinsics, world_to_camera=w2c,
                depth=depth, width=w, height=h,
            )
        )

    gt = np.zeros(len(cloud), dtype=bool)
    start = spec.target_index * spec.points_per_object
    gt[start : start + spec.points_per_object] = True
    bundle = SceneBundle(
        scene_id=f"synth-{spec.seed:05d}",
        query=f"the marked object (index {spec.target_index})",
        cloud=cloud,
        views=views,
        predictions=None,
        embed_dim=EMBED_DIM,
        feature_dim=FEATURE_DIM,
        gt_mask=gt,
    )
    return bundle, gt


def render_predictions(
    scene: SceneBundle, gt: np.ndarray, spec: SynthSpec
) -> list[ViewPrediction]:
    """Ideal per-view predictions: the ground-truth winner pixels dilated by
    one pixel as the mask, the concept vector (plus noise) as the embedding,
    and a concept-inside/distractor-outside feature map."""
    _, concept_ss, render_ss, _ = _streams(spec.seed)
    c_e, c_f, o_f = _concepts(concept_ss)
    prims = _scene_objects(spec)[2]
    preds = []
    for view, child in zip(scene.views, render_ss.spawn(len(scene.views))):
        rng = np.random.default_rng(child)
        _, widx = _splat(scene.cloud.positions, view)
        _, hit = _raycast(prims, view)
        mask = _f32(_member_mask(widx, gt, hit, spec.target_index).astype(np.float64))

        noise = rng.standard_normal(EMBED_DIM)
        penalty = rng.random()
        embedding = _f32(c_e + spec.embed_noise * noise)
        confidence = float(
            _f32(np.clip(1.0 - penalty * (0.05 + 0.5 * spec.embed_noise), 0.0, 1.0))
        )
        fmap = np.where((mask > 0.5)[:, :, None], c_f, o_f)
        if spec.embed_noise > 0:
            fmap = fmap + spec.embed_noise * rng.standard_normal(fmap.shape)
        preds.append(
            ViewPrediction(
                mask=mask, embedding=embedding, confidence=confidence, feature_map=_f32(fmap)
            )
        )
    return preds


def corrupt_predictions(
    preds: list[ViewPrediction], scene: SceneBundle, gt: np.ndarray, spec: SynthSpec
) -> list[ViewPrediction]:
    """Apply the failure modes. Per view, with probability hallucination_rate
    the mask is replaced by a fixed wrong object's rendering and the embedding
    by a vector HALLUCINATION_ANGLE_DEG away from the concept (confidence
    untouched: a confident hallucination). Otherwise, with probability
    drop_visible_rate, a nonempty target mask is zeroed. All rates 0 returns
    the input unchanged.
    """
    if spec.hallucination_rate == 0.0 and spec.drop_visible_rate == 0.0:
        return list(preds)
    _, concept_ss, _, corrupt_ss = _streams(spec.seed)
    c_e, _, _ = _concepts(concept_ss)
    c_hat = _unit(c_e)
    wrong = (spec.target_index + 1) % spec.num_objects
    member = np.zeros(len(scene.cloud), dtype=bool)
    start = wrong * spec.points_per_object
    member[start : start + spec.points_per_object] = True
    prims = _scene_objects(spec)[2]
    ang = np.deg2rad(HALLUCINATION_ANGLE_DEG)

    out = []
    for pred, view, child in zip(preds, scene.views, corrupt_ss.spawn(len(preds))):
        rng = np.random.default_rng(child)
        r_hall = rng.random()
        r_drop = rng.random()
        raw = rng.standard_normal(EMBED_DIM)
        if r_hall < spec.hallucination_rate:
            _, widx = _splat(scene.cloud.positions, view)
            _, hit = _raycast(prims, view)
            mask = _f32(_member_mask(widx, member, hit, wrong).astype(np.float64))
            ortho = _unit(raw - (raw @ c_hat) * c_hat)
            embedding = _f32(np.cos(ang) * c_hat + np.sin(ang) * ortho)
            pred = ViewPrediction(
                mask=mask,
                embedding=embedding,
                confidence=pred.confidence,
                feature_map=pred.feature_map,
            )
        elif r_drop < spec.drop_visible_rate and np.any(pred.mask > 0.5):
            pred = ViewPrediction(
                mask=np.zeros_like(pred.mask),
                embedding=pred.embedding,
                confidence=pred.confidence,
                feature_map=pred.feature_map,
            )
        out.append(pred)
    return out


def synth_bundle(spec: SynthSpec) -> SceneBundle:
    """Full bundle: geometry, rendered predictions, corruption applied."""
    scene, gt = gen_scene(spec)
    preds = render_predictions(scene, gt, spec)
    preds = corrupt_predictions(preds, scene, gt, spec)
    return dataclasses.replace(scene, predictions=preds)
