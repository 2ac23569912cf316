"""Whisper bridge process: `python -m enginebridge.whisper_bridge --model base`."""

from __future__ import annotations

import argparse
import sys

from enginebridge.protocol import serve
from enginebridge.recognizers import StubRecognizer, WhisperRecognizer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", default="base", help="whisper model size or checkpoint name")
    parser.add_argument("--stub", action="store_true", help="serve the deterministic stub instead of a real model")
    args = parser.parse_args(argv)

    if args.stub:
        recognizer = StubRecognizer(engine="whisper")
    else:
        recognizer = WhisperRecognizer(model_size=args.model)
    return serve(recognizer)


if __name__ == "__main__":
    sys.exit(main())
