"""One-way adapter: frozen 2D segmentation model outputs -> scene bundles.

Reads a job description (scene geometry, frame images, query, model id),
runs the model once per frame, and writes a complete prediction bundle in
the pipeline's on-disk format. The pipeline side never imports this package;
the bundle directory is the whole interface.
"""

from .errors import ExportError, FrameDecodeError, MissingInput, ModelUnavailable
from .export import export_predictions
from .job import ExportJob
from .runners import FramePrediction, ToyRunner, load_runner

__all__ = [
    "ExportError",
    "ExportJob",
    "FrameDecodeError",
    "FramePrediction",
    "MissingInput",
    "ModelUnavailable",
    "ToyRunner",
    "export_predictions",
    "load_runner",
]
