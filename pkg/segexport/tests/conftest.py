"""Shared builders: a tiny hand-written geometry bundle, frame images, jobs.

Everything here is constructed with this package's own writers so the unit
tests run without the fusion pipeline installed; only the smoke test talks
to the real consumer.
"""

import json
import os

import numpy as np
import pytest

from segexport.tensorio import write_tensor


def write_tiny_scene(root, views=2, height=16, width=16, n_points=30,
                     with_colors=True, with_gt=True) -> str:
    """A minimal geometry-only bundle directory; returns its path."""
    rng = np.random.default_rng(0)
    root = str(root)
    doc = {
        "format": "pl3d-bundle",
        "version": 1,
        "scene_id": "tiny-0",
        "query": "placeholder",
        "embed_dim": 16,
        "feature_dim": 8,
        "points": "points.pl3d",
        "views": [],
    }
    write_tensor(
        os.path.join(root, "points.pl3d"),
        rng.uniform(-1, 1, (n_points, 3)).astype(np.float32),
    )
    if with_colors:
        doc["colors"] = "colors.pl3d"
        write_tensor(
            os.path.join(root, "colors.pl3d"),
            rng.uniform(0, 1, (n_points, 3)).astype(np.float32),
        )
    if with_gt:
        doc["gt_mask"] = "gt_mask.pl3d"
        write_tensor(
            os.path.join(root, "gt_mask.pl3d"),
            (rng.random(n_points) < 0.5).astype(np.uint8),
        )
    for i in range(views):
        vdir = f"view_{i:03d}"
        entry = {
            "width": width,
            "height": height,
            "intrinsics": f"{vdir}/intrinsics.pl3d",
            "world_to_camera": f"{vdir}/world_to_camera.pl3d",
            "depth": f"{vdir}/depth.pl3d",
        }
        k = np.array([[20.0, 0, width / 2], [0, 20.0, height / 2], [0, 0, 1]], dtype=np.float32)
        write_tensor(os.path.join(root, entry["intrinsics"]), k)
        write_tensor(os.path.join(root, entry["world_to_camera"]), np.eye(4, dtype=np.float32))
        write_tensor(
            os.path.join(root, entry["depth"]),
            rng.uniform(1, 3, (height, width)).astype(np.float32),
        )
        doc["views"].append(entry)
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return root


def write_frames(dirpath, count, height=16, width=16):
    """Non-constant deterministic images, one .npy per frame."""
    paths = []
    os.makedirs(str(dirpath), exist_ok=True)
    v, u = np.mgrid[0:height, 0:width].astype(np.float64)
    for i in range(count):
        img = np.stack(
            [
                (u + i) / (width + count),
                v / height,
                0.5 + 0.5 * np.sin(u / 3 + i),
            ],
            axis=-1,
        )
        path = os.path.join(str(dirpath), f"frame_{i}.npy")
        np.save(path, np.clip(img, 0, 1))
        paths.append(path)
    return paths


def write_job(path, **fields):
    with open(str(path), "w", encoding="utf-8") as fh:
        json.dump(fields, fh)
    return str(path)


@pytest.fixture()
def tiny_scene(tmp_path):
    return write_tiny_scene(tmp_path / "scene")
