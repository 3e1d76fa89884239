"""weightex command line: export a checkpoint to VGWC, verify an export."""

from __future__ import annotations

import argparse
import json
import sys

from .exporter import ExportError, export_weights
from .manifest import ManifestError, load_manifest
from .verify import verify_export
from .vgwc import VgwcFormatError


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="weightex", description="Convert pretrained VGG-19 checkpoints to VGWC containers."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("export", help="run one conversion described by a JSON manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--output", help="override the manifest's output path")
    p = sub.add_parser("verify", help="independently re-read a container and probe it")
    p.add_argument("--container", required=True)
    p.add_argument("--probe", required=True, help="probe PNG for the descriptor check")
    p.add_argument("--report", help="write the JSON report here (default: stdout)")
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        if args.command == "export":
            manifest = load_manifest(args.manifest)
            out = export_weights(manifest, output=args.output)
            print(f"wrote {out}")
            return 0
        report = verify_export(args.container, args.probe)
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.report:
            with open(args.report, "w") as fh:
                fh.write(text + "\n")
        else:
            print(text)
        return 0 if report["ok"] else 2
    except ManifestError as exc:
        print(f"manifest error: {exc}", file=sys.stderr)
        return 1
    except (ExportError, VgwcFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
