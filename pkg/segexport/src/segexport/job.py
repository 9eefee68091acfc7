"""Job description files.

A job is a JSON object:

    {
      "scene": "path/to/geometry_bundle",
      "frames": ["view0.npy", "view1.npy", ...],
      "query": "the red mug on the desk",
      "model": "toy",
      "out": "path/to/exported_bundle",
      "encoder_layer": "block-mean-stride-4"      # optional
    }

`scene` points at a bundle directory supplying points and posed depth views;
`frames` lists one image per view, in view order. Relative paths are resolved
against the job file's directory. `encoder_layer`, when given, overrides the
runner's default choice of which feature tap to record.
"""

import json
import os
from dataclasses import dataclass
from typing import Optional

from .errors import ExportError, MissingInput

_REQUIRED = ("scene", "frames", "query", "model", "out")
_KNOWN = set(_REQUIRED) | {"encoder_layer"}


@dataclass(frozen=True)
class ExportJob:
    scene: str
    frames: tuple
    query: str
    model: str
    out: str
    encoder_layer: Optional[str] = None

    def __post_init__(self):
        if len(self.frames) < 1:
            raise ExportError("a job needs at least one frame")
        if not self.query:
            raise ExportError("a job needs a non-empty query")
        if not self.model:
            raise ExportError("a job needs a model id")


def load_job(path: str) -> ExportJob:
    if not os.path.isfile(path):
        raise MissingInput(f"no job file at {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ExportError(f"unparseable job file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ExportError(f"job file {path} is not an object")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ExportError(f"job file {path} lacks fields: {', '.join(missing)}")
    unknown = set(doc) - _KNOWN
    if unknown:
        raise ExportError(f"job file {path} has unknown fields: {', '.join(sorted(unknown))}")
    frames = doc["frames"]
    if not isinstance(frames, list) or not all(isinstance(f, str) for f in frames):
        raise ExportError(f"job file {path}: frames must be a list of paths")
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(base, p)

    return ExportJob(
        scene=resolve(str(doc["scene"])),
        frames=tuple(resolve(f) for f in frames),
        query=str(doc["query"]),
        model=str(doc["model"]),
        out=resolve(str(doc["out"])),
        encoder_layer=(
            str(doc["encoder_layer"]) if doc.get("encoder_layer") is not None else None
        ),
    )
