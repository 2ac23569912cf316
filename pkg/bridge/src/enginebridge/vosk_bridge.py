"""Vosk bridge process: `python -m enginebridge.vosk_bridge --model /path/to/model`."""

from __future__ import annotations

import argparse
import sys

from enginebridge.protocol import serve
from enginebridge.recognizers import StubRecognizer, VoskRecognizer


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", help="path to an unpacked vosk model directory")
    parser.add_argument("--stub", action="store_true", help="serve the deterministic stub instead of a real model")
    args = parser.parse_args(argv)

    if args.stub:
        recognizer = StubRecognizer(engine="vosk")
    else:
        if not args.model:
            parser.error("--model is required unless --stub is given")
        recognizer = VoskRecognizer(model_path=args.model)
    return serve(recognizer)


if __name__ == "__main__":
    sys.exit(main())
