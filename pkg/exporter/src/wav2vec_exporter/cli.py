"""Command-line entry: export wav2vec features for a directory of WAVs."""

import argparse
import json
import sys

from .errors import ExporterError
from .export import DEFAULT_TAG, ExportJob, export_features


def build_parser():
    p = argparse.ArgumentParser(
        prog="export_wav2vec",
        description="Write frame-aligned 768-dim APEF features for "
                    "16 kHz mono WAVs.")
    p.add_argument("--in", dest="input_dir", required=True, metavar="DIR",
                   help="directory of canonical .wav files")
    p.add_argument("--out", dest="output_dir", required=True, metavar="DIR",
                   help="destination for .apef files (created if missing)")
    p.add_argument("--model", default=DEFAULT_TAG,
                   help="pretrained model tag, or 'untrained-base' for "
                        "seeded random weights (default: %(default)s)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = export_features(
            ExportJob(args.input_dir, args.output_dir, model_tag=args.model))
    except ExporterError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
