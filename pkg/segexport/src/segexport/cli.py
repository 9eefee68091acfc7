"""segexport run --job job.json

Missing inputs exit 2; everything else this adapter raises on purpose
exits 1 with a diagnostic on stderr.
"""

import argparse
import sys

from .errors import ExportError, MissingInput
from .export import export_predictions
from .job import load_job


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segexport",
        description="Run a frozen 2D segmentation model over posed frames and "
        "write a scene bundle the fusion pipeline consumes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="execute one export job")
    p.add_argument("--job", required=True, help="JSON job description file")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = export_predictions(load_job(args.job))
    except MissingInput as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ExportError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
