"""extract-speech: audio + window list -> per-window GSPF feature files."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionJob, JobError, extract, read_windows_csv
from .model import ModelLoadError, build_model


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="extract-speech",
        description="Extract per-layer speech features over audio windows into GSPF files.")
    parser.add_argument("--audio", required=True, help="WAV file path")
    parser.add_argument("--windows", required=True,
                        help="CSV with header start_seconds,end_seconds")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--model", default="facebook/wav2vec2-xls-r-300m",
                        help="HuggingFace model id, or 'stub[:layers[:dim]]' for the "
                             "deterministic filterbank stand-in")
    args = parser.parse_args(argv)
    try:
        model = build_model(args.model)
        windows = read_windows_csv(args.windows)
        job = ExtractionJob(args.audio, windows, args.out, model_id=args.model)
        result = extract(job, model)
    except ModelLoadError as e:
        print(f"environment error: {e}", file=sys.stderr)
        return 3
    except JobError as e:
        print(f"job error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 1
    print(f"[extract-speech] {len(result.files)} window(s), {result.layer_count} layers "
          f"-> {result.manifest_path}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())
