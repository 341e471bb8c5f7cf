"""Command line entry point.

    whisper-extract extract --model tiny --w 0.2 --out clip.sdeb clip.wav

Exit codes match the diarization toolkit's conventions: 0 success, 2 usage,
3 unreadable or invalid input audio, 4 model unavailable.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .extractor import EMBEDDING_DIMS, ExtractorConfig, extract

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_MISSING = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="whisper-extract",
        description="Extract per-window speaker embeddings from a WAV file "
                    "with the Whisper encoder and write them as an SDEB file.")
    sub = parser.add_subparsers(dest="command", required=True)
    ex = sub.add_parser("extract", help="embed one recording")
    ex.add_argument("audio", help="input PCM WAV file")
    ex.add_argument("--model", default="tiny", choices=sorted(EMBEDDING_DIMS),
                    help="encoder size (default: tiny)")
    ex.add_argument("--w", type=float, default=1.0,
                    help="window length in seconds (default: 1.0)")
    ex.add_argument("--out", required=True, help="output .sdeb path")
    ex.add_argument("--recording-id", default=None,
                    help="recording id stored in the file (default: audio stem)")
    ex.add_argument("--device", default="cpu",
                    help="torch device for the encoder (default: cpu)")
    ex.add_argument("--batch-size", type=int, default=8,
                    help="segments per encoder pass (default: 8)")
    return parser


def cmd_extract(args, parser: argparse.ArgumentParser) -> int:
    try:
        config = ExtractorConfig(model_version=args.model, window_s=args.w,
                                 device=args.device, batch_size=args.batch_size)
    except ValueError as exc:
        parser.error(str(exc))
    audio_path = Path(args.audio)
    if not audio_path.is_file():
        print(f"error: no such audio file: {audio_path}", file=sys.stderr)
        return EXIT_DATA
    try:
        result = extract(audio_path, args.out, config,
                         recording_id=args.recording_id)
    except ValueError as exc:
        print(f"error: cannot process {audio_path}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: could not load openai/whisper-{args.model}: {exc}",
              file=sys.stderr)
        print("hint: download the model into the local cache first",
              file=sys.stderr)
        return EXIT_MISSING
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    print(f"wrote {result.out_path}: n={result.n} dim={result.dim} "
          f"({result.n_speech_windows}/{result.n_windows} windows kept)")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "extract":
        return cmd_extract(args, parser)
    parser.error(f"unknown command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
