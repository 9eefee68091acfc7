"""Model runtimes behind one small interface.

A runner turns (image, query) into a per-frame prediction. The only built-in
is `toy`, a deterministic stand-in that exercises every contract of the
export path with zero ML dependencies: its embedding is a pure function of
(model id, query, frame index) and its mask a pure function of the pixels.
Real checkpoints need a local runtime and an entry in RUNNERS; asking for an
unregistered id fails up front, before any frame is touched.
"""

import hashlib
from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .errors import ExportError, ModelUnavailable


@dataclass(frozen=True)
class FramePrediction:
    mask: np.ndarray  # (H, W) in [0, 1]
    embedding: np.ndarray  # (embed_dim,)
    confidence: float
    feature_map: Optional[np.ndarray]  # (H', W', feature_dim) or None


class ModelRunner(Protocol):
    model_id: str
    embed_dim: int
    feature_dim: int
    encoder_layer: str

    def predict(self, image: np.ndarray, query: str, frame_index: int) -> FramePrediction: ...


def _seed(*parts: str) -> int:
    digest = hashlib.sha256("|".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class ToyRunner:
    """Deterministic stand-in for a frozen segmentation model.

    mask: sigmoid of per-pixel luminance deviation (0.5 everywhere on a flat
    image). embedding: a query-seeded direction plus a small frame-seeded
    perturbation. confidence: affine in the mask mean, so it always clears
    typical confidence filters. feature map: stride-4 block means of the
    pixels pushed through a query-seeded channel projection.
    """

    model_id = "toy"
    embed_dim = 12
    feature_dim = 6
    encoder_layer = "block-mean-stride-4"

    def predict(self, image: np.ndarray, query: str, frame_index: int) -> FramePrediction:
        lum = image @ np.array([0.299, 0.587, 0.114])
        std = float(lum.std())
        if std < 1e-9:
            mask = np.full(lum.shape, 0.5)
        else:
            mask = 1.0 / (1.0 + np.exp(-(lum - lum.mean()) / std))

        base = np.random.default_rng(_seed(self.model_id, query))
        direction = base.standard_normal(self.embed_dim)
        wobble = np.random.default_rng(
            _seed(self.model_id, query, str(frame_index))
        ).standard_normal(self.embed_dim)
        embedding = direction + 0.05 * wobble

        h4, w4 = (image.shape[0] // 4) * 4, (image.shape[1] // 4) * 4
        blocks = image[:h4, :w4].reshape(h4 // 4, 4, w4 // 4, 4, 3).mean(axis=(1, 3))
        proj = np.random.default_rng(_seed(self.model_id, query, "proj")).standard_normal(
            (3, self.feature_dim)
        )
        return FramePrediction(
            mask=mask,
            embedding=embedding,
            confidence=0.5 + 0.45 * float(mask.mean()),
            feature_map=blocks @ proj,
        )


RUNNERS = {"toy": ToyRunner}


def load_runner(model_id: str, encoder_layer: Optional[str] = None) -> ModelRunner:
    """Instantiate the runtime for a model id; the id must be registered.

    encoder_layer picks which feature tap the runner records; a runner that
    does not offer the requested tap is a configuration error, not a silent
    relabel.
    """
    factory = RUNNERS.get(model_id)
    if factory is None:
        known = ", ".join(sorted(RUNNERS))
        raise ModelUnavailable(
            f"no local runtime for model {model_id!r}; registered runners: {known}. "
            "Serving a real checkpoint needs its runtime installed and a "
            "ModelRunner entry in segexport.runners.RUNNERS."
        )
    runner = factory()
    if encoder_layer is not None and encoder_layer != runner.encoder_layer:
        raise ExportError(
            f"runner {model_id!r} has no feature tap {encoder_layer!r} "
            f"(offers {runner.encoder_layer!r})"
        )
    return runner
