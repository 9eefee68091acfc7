"""On-disk layouts: scene bundles, fused labels, checkpoints, results, reports.

A bundle is a directory holding one JSON manifest plus one tensor file per
array. JSON is written with sorted keys and fixed indentation and floats keep
full repr precision, so identical inputs serialize byte-identically and every
report total can be recomputed exactly from its per-row values.

Float tensors are stored as float32 (the container's only float dtype);
loaders renormalize the unified query and its weights, whose unit-norm and
sum-to-one invariants are tighter than float32 rounding.
"""

from __future__ import annotations

import csv
import json
import os
from typing import Optional

import numpy as np

from .errors import CorruptHeader, MissingFile
from .evaluate import acc_at_k, miou
from .learner import FeatureModel, TrainState
from .tensorfile import read_tensor, write_tensor
from .types import (
    CameraView,
    FusedLabels,
    PointCloud,
    QueryResult,
    SceneBundle,
    UnifiedQuery,
    ViewPrediction,
    validate_scene,
)

BUNDLE_MANIFEST = "manifest.json"
FUSED_MANIFEST = "fused.json"
CHECKPOINT_MANIFEST = "checkpoint.json"
RESULT_MANIFEST = "result.json"


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path: str) -> dict:
    if not os.path.isfile(path):
        raise MissingFile(f"no manifest at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CorruptHeader(f"unparseable manifest {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CorruptHeader(f"manifest {path} is not an object")
    return doc


def _field(doc: dict, key: str, path: str):
    if key not in doc:
        raise CorruptHeader(f"manifest {path} lacks required field {key!r}")
    return doc[key]


def write_bundle(bundle: SceneBundle, out_dir: str) -> str:
    """Write a scene bundle; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    doc: dict = {
        "format": "pl3d-bundle",
        "version": 1,
        "scene_id": bundle.scene_id,
        "query": bundle.query,
        "embed_dim": bundle.embed_dim,
        "feature_dim": bundle.feature_dim,
        "points": "points.pl3d",
    }
    write_tensor(os.path.join(out_dir, "points.pl3d"), bundle.cloud.positions)
    if bundle.cloud.colors is not None:
        doc["colors"] = "colors.pl3d"
        write_tensor(os.path.join(out_dir, "colors.pl3d"), bundle.cloud.colors)
    if bundle.gt_mask is not None:
        doc["gt_mask"] = "gt_mask.pl3d"
        write_tensor(os.path.join(out_dir, "gt_mask.pl3d"), bundle.gt_mask)

    views = []
    for i, view in enumerate(bundle.views):
        vdir = f"view_{i:03d}"
        entry = {
            "width": view.width,
            "height": view.height,
            "intrinsics": f"{vdir}/intrinsics.pl3d",
            "world_to_camera": f"{vdir}/world_to_camera.pl3d",
            "depth": f"{vdir}/depth.pl3d",
        }
        write_tensor(os.path.join(out_dir, entry["intrinsics"]), view.intrinsics)
        write_tensor(os.path.join(out_dir, entry["world_to_camera"]), view.world_to_camera)
        write_tensor(os.path.join(out_dir, entry["depth"]), view.depth)
        if bundle.predictions is not None:
            pred = bundle.predictions[i]
            pentry = {
                "mask": f"{vdir}/mask.pl3d",
                "embedding": f"{vdir}/embedding.pl3d",
                "confidence": float(pred.confidence),
            }
            write_tensor(os.path.join(out_dir, pentry["mask"]), pred.mask)
            write_tensor(os.path.join(out_dir, pentry["embedding"]), pred.embedding)
            if pred.feature_map is not None:
                pentry["feature_map"] = f"{vdir}/feature_map.pl3d"
                write_tensor(os.path.join(out_dir, pentry["feature_map"]), pred.feature_map)
            entry["prediction"] = pentry
        views.append(entry)
    doc["views"] = views

    manifest = os.path.join(out_dir, BUNDLE_MANIFEST)
    _write_json(manifest, doc)
    return manifest


def read_bundle(bundle_dir: str, validate: bool = True) -> SceneBundle:
    """Load a bundle directory; inverse of `write_bundle`.

    With validate=True (the default) the loaded scene must pass every
    `validate_scene` invariant; violations raise ValueError listing them.
    """
    manifest = os.path.join(bundle_dir, BUNDLE_MANIFEST)
    doc = _read_json(manifest)

    def tensor(rel: str) -> np.ndarray:
        return read_tensor(os.path.join(bundle_dir, rel))

    positions = tensor(_field(doc, "points", manifest))
    colors = tensor(doc["colors"]) if "colors" in doc else None
    cloud = PointCloud(positions=positions, colors=colors)
    gt = None
    if "gt_mask" in doc:
        gt = tensor(doc["gt_mask"]).astype(bool)

    views, predictions = [], []
    has_preds = False
    for entry in _field(doc, "views", manifest):
        views.append(
            CameraView(
                intrinsics=tensor(entry["intrinsics"]),
                world_to_camera=tensor(entry["world_to_camera"]),
                depth=tensor(entry["depth"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
            )
        )
        if "prediction" in entry:
            has_preds = True
            p = entry["prediction"]
            fmap = tensor(p["feature_map"]) if "feature_map" in p else None
            predictions.append(
                ViewPrediction(
                    mask=tensor(p["mask"]),
                    embedding=tensor(p["embedding"]),
                    confidence=float(p["confidence"]),
                    feature_map=fmap,
                )
            )
        else:
            predictions.append(None)

    if has_preds and any(p is None for p in predictions):
        raise CorruptHeader(f"manifest {manifest} mixes views with and without predictions")
    bundle = SceneBundle(
        scene_id=str(_field(doc, "scene_id", manifest)),
        query=str(_field(doc, "query", manifest)),
        cloud=cloud,
        views=views,
        predictions=predictions if has_preds else None,
        embed_dim=int(_field(doc, "embed_dim", manifest)),
        feature_dim=int(_field(doc, "feature_dim", manifest)),
        gt_mask=gt,
    )
    if validate:
        report = validate_scene(bundle)
        if not report.ok:
            raise ValueError(
                f"bundle {bundle_dir} violates invariants: " + "; ".join(report.violations)
            )
    return bundle


def write_fused(
    fused: FusedLabels,
    unified: UnifiedQuery,
    out_dir: str,
    fused_iou_value: Optional[float] = None,
) -> str:
    """Write fused labels plus the unified query; returns the manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "format": "pl3d-fused",
        "version": 1,
        "point_indices": "point_indices.pl3d",
        "labels": "labels.pl3d",
        "coverage": "coverage.pl3d",
        "query": "query.pl3d",
        "weights": "weights.pl3d",
        "retained_views": list(unified.retained_views),
    }
    if fused_iou_value is not None:
        doc["fused_iou"] = float(fused_iou_value)
    write_tensor(os.path.join(out_dir, doc["point_indices"]), fused.point_indices)
    write_tensor(os.path.join(out_dir, doc["labels"]), fused.labels)
    write_tensor(os.path.join(out_dir, doc["coverage"]), fused.coverage)
    write_tensor(os.path.join(out_dir, doc["query"]), unified.q)
    write_tensor(os.path.join(out_dir, doc["weights"]), unified.weights)
    manifest = os.path.join(out_dir, FUSED_MANIFEST)
    _write_json(manifest, doc)
    return manifest


def read_fused(fused_dir: str) -> tuple[FusedLabels, UnifiedQuery]:
    manifest = os.path.join(fused_dir, FUSED_MANIFEST)
    doc = _read_json(manifest)

    def tensor(key: str) -> np.ndarray:
        return read_tensor(os.path.join(fused_dir, _field(doc, key, manifest)))

    fused = FusedLabels(
        point_indices=tensor("point_indices"),
        labels=tensor("labels"),
        coverage=tensor("coverage"),
    )
    # float32 storage loosens the unit-norm / sum-to-one invariants past
    # their 1e-9 tolerance; restore them exactly.
    q = tensor("query").astype(np.float64)
    w = tensor("weights").astype(np.float64)
    unified = UnifiedQuery(
        q=q / np.linalg.norm(q),
        weights=w / w.sum(),
        retained_views=tuple(int(i) for i in _field(doc, "retained_views", manifest)),
    )
    return fused, unified


def write_checkpoint(state: TrainState, q: np.ndarray, out_dir: str) -> str:
    """Write model parameters, the query, and loss history; returns manifest path."""
    os.makedirs(out_dir, exist_ok=True)
    params = {}
    for name, value in state.model.params.items():
        rel = f"params/{name}.pl3d"
        write_tensor(os.path.join(out_dir, rel), value)
        params[name] = rel
    doc = {
        "format": "pl3d-checkpoint",
        "version": 1,
        "embed_dim": state.model.embed_dim,
        "feature_dim": state.model.feature_dim,
        "hidden_widths": list(state.model.hidden_widths),
        "epoch": state.epoch,
        "params": params,
        "query": "query.pl3d",
    }
    write_tensor(os.path.join(out_dir, "query.pl3d"), np.asarray(q))
    _write_json(
        os.path.join(out_dir, "loss_history.json"),
        {
            "columns": ["epoch", "loss_mms", "loss_spatial", "loss_total"],
            "rows": [[e, lm, ls, lt] for e, lm, ls, lt in state.loss_history],
        },
    )
    manifest = os.path.join(out_dir, CHECKPOINT_MANIFEST)
    _write_json(manifest, doc)
    return manifest


def read_checkpoint(ckpt_dir: str) -> tuple[FeatureModel, np.ndarray]:
    manifest = os.path.join(ckpt_dir, CHECKPOINT_MANIFEST)
    doc = _read_json(manifest)
    params = {
        name: read_tensor(os.path.join(ckpt_dir, rel)).astype(np.float64)
        for name, rel in _field(doc, "params", manifest).items()
    }
    model = FeatureModel(
        params=params,
        hidden_widths=tuple(int(w) for w in _field(doc, "hidden_widths", manifest)),
        embed_dim=int(_field(doc, "embed_dim", manifest)),
        feature_dim=int(_field(doc, "feature_dim", manifest)),
    )
    q = read_tensor(os.path.join(ckpt_dir, _field(doc, "query", manifest)))
    return model, q.astype(np.float64)


def write_result(result: QueryResult, scene_id: str, out_dir: str) -> str:
    os.makedirs(out_dir, exist_ok=True)
    doc = {
        "format": "pl3d-result",
        "version": 1,
        "scene_id": scene_id,
        "threshold": result.threshold,
        "iou_vs_gt": result.iou_vs_gt,
        "probs": "probs.pl3d",
        "mask": "mask.pl3d",
    }
    write_tensor(os.path.join(out_dir, doc["probs"]), result.point_probs)
    write_tensor(os.path.join(out_dir, doc["mask"]), result.binary_mask)
    manifest = os.path.join(out_dir, RESULT_MANIFEST)
    _write_json(manifest, doc)
    return manifest


def read_result(result_dir: str) -> tuple[str, QueryResult]:
    manifest = os.path.join(result_dir, RESULT_MANIFEST)
    doc = _read_json(manifest)
    result = QueryResult(
        point_probs=read_tensor(os.path.join(result_dir, _field(doc, "probs", manifest))),
        binary_mask=read_tensor(os.path.join(result_dir, _field(doc, "mask", manifest))).astype(
            bool
        ),
        threshold=float(_field(doc, "threshold", manifest)),
        iou_vs_gt=doc.get("iou_vs_gt"),
    )
    return str(_field(doc, "scene_id", manifest)), result


def write_metrics_report(rows: list[tuple[str, float]], out_dir: str) -> tuple[str, str]:
    """Per-query IoUs -> report.txt (totals) + report.csv (one row per query).

    Floats keep repr precision so the totals are exactly recomputable from
    the CSV rows.
    """
    os.makedirs(out_dir, exist_ok=True)
    ious = [v for _, v in rows]
    totals = {
        "queries": len(rows),
        "acc_at_0.25": acc_at_k(ious, 0.25),
        "acc_at_0.5": acc_at_k(ious, 0.5),
        "miou_all": miou(ious, mode="all"),
        "miou_grounded_0.25": miou(ious, mode="grounded", k=0.25),
    }
    txt_path = os.path.join(out_dir, "report.txt")
    with open(txt_path, "w", encoding="utf-8") as fh:
        for key, value in totals.items():
            fh.write(f"{key}: {value!r}\n")
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id", "iou", "grounded_at_0.25", "grounded_at_0.5"])
        for scene_id, value in rows:
            writer.writerow([scene_id, repr(float(value)), value >= 0.25, value >= 0.5])
    return txt_path, csv_path


def write_ablate_report(rows: list[dict], out_dir: str) -> tuple[str, str]:
    """Comparison table from `pipeline.ablate` rows, text and CSV forms."""
    os.makedirs(out_dir, exist_ok=True)
    txt_path = os.path.join(out_dir, "ablate.txt")
    with open(txt_path, "w", encoding="utf-8") as fh:
        width = max(len(r["variant"]) for r in rows)
        fh.write(f"{'variant'.ljust(width)}  views  miou\n")
        for r in rows:
            fh.write(f"{r['variant'].ljust(width)}  {r['views']:>5}  {r['miou']!r}\n")
    csv_path = os.path.join(out_dir, "ablate.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "views", "miou", "per_seed"])
        for r in rows:
            writer.writerow(
                [
                    r["variant"],
                    r["views"],
                    repr(float(r["miou"])),
                    " ".join(repr(float(v)) for v in r["per_seed"]),
                ]
            )
    return txt_path, csv_path
