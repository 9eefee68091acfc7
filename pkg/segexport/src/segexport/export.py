"""The export operation: job in, one complete prediction bundle out."""

import os

import numpy as np

from .bundleio import read_geometry, write_exported_bundle
from .errors import ExportError, FrameDecodeError
from .job import ExportJob
from .runners import FramePrediction, load_runner
from .tensorio import read_tensor


def _decode_frame(path: str, height: int, width: int) -> np.ndarray:
    """Load one frame as (H, W, 3) float64 in [0, 1]."""
    if not os.path.isfile(path):
        raise FrameDecodeError("no such file")
    if path.endswith(".npy"):
        img = np.load(path, allow_pickle=False)
    elif path.endswith(".pl3d"):
        img = read_tensor(path)
    else:
        raise FrameDecodeError("unsupported frame format (use .npy or .pl3d)")
    img = np.asarray(img)
    if img.ndim == 2:
        img = np.stack([img, img, img], axis=-1)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FrameDecodeError(f"expected (H, W, 3) pixels, got shape {img.shape}")
    if img.shape[0] != height or img.shape[1] != width:
        raise FrameDecodeError(
            f"frame is {img.shape[0]}x{img.shape[1]}, view is {height}x{width}"
        )
    integer_input = img.dtype.kind in "ui"
    img = img.astype(np.float64)
    if not np.isfinite(img).all():
        raise FrameDecodeError("non-finite pixel values")
    if integer_input:
        img = img / 255.0
    return np.clip(img, 0.0, 1.0)


def _check_prediction(pred: FramePrediction, height: int, width: int, runner) -> FramePrediction:
    if pred.mask.shape != (height, width):
        raise FrameDecodeError(
            f"runner produced mask {pred.mask.shape}, view is ({height}, {width})"
        )
    if not np.isfinite(pred.mask).all():
        raise FrameDecodeError("runner produced non-finite mask values")
    if pred.embedding.shape != (runner.embed_dim,):
        raise FrameDecodeError(
            f"runner produced embedding {pred.embedding.shape}, "
            f"declared dim is {runner.embed_dim}"
        )
    if not np.isfinite(pred.embedding).all():
        raise FrameDecodeError("runner produced non-finite embedding")
    if not np.isfinite(pred.confidence):
        raise FrameDecodeError("runner produced non-finite confidence")
    fmap = pred.feature_map
    if fmap is not None:
        if fmap.ndim != 3 or fmap.shape[2] != runner.feature_dim:
            raise FrameDecodeError(
                f"runner produced feature map {fmap.shape}, "
                f"declared dim is {runner.feature_dim}"
            )
        if not np.isfinite(fmap).all():
            raise FrameDecodeError("runner produced non-finite feature map")
    return FramePrediction(
        mask=np.clip(pred.mask, 0.0, 1.0),
        embedding=pred.embedding,
        confidence=float(np.clip(pred.confidence, 0.0, 1.0)),
        feature_map=fmap,
    )


def export_predictions(job: ExportJob) -> str:
    """Run the model over every frame and write the bundle; returns the
    manifest path.

    Failures are collected per frame and raised together; a job with any
    failing frame writes nothing at all.
    """
    runner = load_runner(job.model, job.encoder_layer)
    geometry = read_geometry(job.scene)
    if len(job.frames) != len(geometry.views):
        raise ExportError(
            f"job lists {len(job.frames)} frames but the scene has "
            f"{len(geometry.views)} views; one frame per view, in view order"
        )

    predictions, failures = [], []
    for i, (path, geo) in enumerate(zip(job.frames, geometry.views)):
        try:
            image = _decode_frame(path, geo.height, geo.width)
            pred = runner.predict(image, job.query, i)
            predictions.append(_check_prediction(pred, geo.height, geo.width, runner))
        except FrameDecodeError as exc:
            failures.append(f"frame {i} ({path}): {exc}")
        except Exception as exc:  # a real runtime can throw anything
            failures.append(f"frame {i} ({path}): {type(exc).__name__}: {exc}")
    if failures:
        raise FrameDecodeError(
            "export aborted, no bundle written:\n  " + "\n  ".join(failures)
        )

    meta = {"model": runner.model_id, "encoder_layer": runner.encoder_layer}
    return write_exported_bundle(
        geometry,
        predictions,
        query=job.query,
        embed_dim=runner.embed_dim,
        feature_dim=runner.feature_dim,
        export_meta=meta,
        out_dir=job.out,
    )
