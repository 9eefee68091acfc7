"""Scene-bundle directories: read geometry in, write predictions out.

Only the documented layout is touched: manifest.json naming one tensor file
per array, views under view_NNN/. Geometry tensors are copied byte for byte
from the source bundle; this adapter adds the per-view prediction files and
a fresh manifest.
"""

import json
import os
import shutil
from dataclasses import dataclass

import numpy as np

from .errors import ExportError, MissingInput
from .tensorio import read_tensor, write_tensor

MANIFEST = "manifest.json"


@dataclass(frozen=True)
class ViewGeometry:
    width: int
    height: int
    intrinsics: str
    world_to_camera: str
    depth: str


@dataclass(frozen=True)
class SceneGeometry:
    source_dir: str
    scene_id: str
    views: list
    points: str
    colors: str | None
    gt_mask: str | None

    def depth(self, index: int) -> np.ndarray:
        return read_tensor(os.path.join(self.source_dir, self.views[index].depth))


def _require(doc: dict, key: str, path: str):
    if key not in doc:
        raise ExportError(f"manifest {path} lacks required field {key!r}")
    return doc[key]


def read_geometry(bundle_dir: str) -> SceneGeometry:
    """Load the geometry half of a bundle. Any predictions in the source are
    ignored; this adapter replaces them wholesale."""
    path = os.path.join(bundle_dir, MANIFEST)
    if not os.path.isfile(path):
        raise MissingInput(f"no scene bundle manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ExportError(f"unparseable manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ExportError(f"manifest {path} is not an object")
    views = []
    for entry in _require(doc, "views", path):
        views.append(
            ViewGeometry(
                width=int(entry["width"]),
                height=int(entry["height"]),
                intrinsics=entry["intrinsics"],
                world_to_camera=entry["world_to_camera"],
                depth=entry["depth"],
            )
        )
    if not views:
        raise ExportError(f"manifest {path} lists no views")
    return SceneGeometry(
        source_dir=bundle_dir,
        scene_id=str(_require(doc, "scene_id", path)),
        views=views,
        points=_require(doc, "points", path),
        colors=doc.get("colors"),
        gt_mask=doc.get("gt_mask"),
    )


def write_exported_bundle(
    geometry: SceneGeometry,
    predictions: list,
    query: str,
    embed_dim: int,
    feature_dim: int,
    export_meta: dict,
    out_dir: str,
) -> str:
    """Assemble the output bundle in one pass; returns the manifest path.

    The directory is built under a temporary name and renamed into place, so
    a crash mid-write never leaves a half-usable bundle at out_dir.
    """
    if len(predictions) != len(geometry.views):
        raise ExportError(
            f"{len(predictions)} predictions for {len(geometry.views)} views"
        )
    tmp = out_dir.rstrip("/\\") + ".partial"
    shutil.rmtree(tmp, ignore_errors=True)
    os.makedirs(tmp)

    def carry(rel: str) -> None:
        dst = os.path.join(tmp, rel)
        os.makedirs(os.path.dirname(dst) or dst, exist_ok=True)
        shutil.copyfile(os.path.join(geometry.source_dir, rel), dst)

    doc: dict = {
        "format": "pl3d-bundle",
        "version": 1,
        "scene_id": geometry.scene_id,
        "query": query,
        "embed_dim": int(embed_dim),
        "feature_dim": int(feature_dim),
        "points": "points.pl3d",
        "export": dict(export_meta),
    }
    carry("points.pl3d")
    if geometry.colors is not None:
        doc["colors"] = geometry.colors
        carry(geometry.colors)
    if geometry.gt_mask is not None:
        doc["gt_mask"] = geometry.gt_mask
        carry(geometry.gt_mask)

    views = []
    for i, (geo, pred) in enumerate(zip(geometry.views, predictions)):
        vdir = f"view_{i:03d}"
        for rel in (geo.intrinsics, geo.world_to_camera, geo.depth):
            carry(rel)
        entry = {
            "width": geo.width,
            "height": geo.height,
            "intrinsics": geo.intrinsics,
            "world_to_camera": geo.world_to_camera,
            "depth": geo.depth,
            "prediction": {
                "mask": f"{vdir}/mask.pl3d",
                "embedding": f"{vdir}/embedding.pl3d",
                "confidence": float(pred.confidence),
            },
        }
        write_tensor(os.path.join(tmp, entry["prediction"]["mask"]), pred.mask.astype(np.float32))
        write_tensor(
            os.path.join(tmp, entry["prediction"]["embedding"]),
            pred.embedding.astype(np.float32),
        )
        if pred.feature_map is not None:
            entry["prediction"]["feature_map"] = f"{vdir}/feature_map.pl3d"
            write_tensor(
                os.path.join(tmp, entry["prediction"]["feature_map"]),
                pred.feature_map.astype(np.float32),
            )
        views.append(entry)
    doc["views"] = views

    manifest = os.path.join(tmp, MANIFEST)
    with open(manifest, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    shutil.rmtree(out_dir, ignore_errors=True)
    os.replace(tmp, out_dir)
    return os.path.join(out_dir, MANIFEST)
