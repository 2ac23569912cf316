"""Scriptable JSON-lines engine child for subprocess adapter tests.

Behaviors (via --behavior, applied to the first request only unless noted):
  normal         echo responses forever
  malformed-once reply one garbage line, then behave
  wrong-id-once  reply with a mismatched id once, then behave
  slow-once      sleep --delay-s before the first reply
  error-once     reply {"error": ...} once, then behave
  crash-once     exit before replying to the first request
"""

import argparse
import json
import sys
import time
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--behavior", default="normal")
    parser.add_argument("--engine", default="fake")
    parser.add_argument("--delay-s", type=float, default=2.0)
    parser.add_argument("--flag-file", help="once the fault fired, this file suppresses it")
    args = parser.parse_args()

    print(json.dumps({"ready": True, "engine": args.engine}), flush=True)

    first = True
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        behavior = args.behavior if first else "normal"
        first = False
        if behavior != "normal" and args.flag_file:
            if Path(args.flag_file).exists():
                behavior = "normal"
            else:
                Path(args.flag_file).touch()
        if behavior == "malformed-once":
            print("this is not json", flush=True)
            continue
        if behavior == "wrong-id-once":
            print(json.dumps({"id": "bogus", "text": "x", "confidence": 0.5}), flush=True)
            continue
        if behavior == "slow-once":
            time.sleep(args.delay_s)
        if behavior == "crash-once":
            return 1
        if behavior == "error-once":
            print(json.dumps({"id": request["id"], "error": "scripted failure"}), flush=True)
            continue
        response = {
            "id": request["id"],
            "text": f"echo-{request['id']}",
            "confidence": 0.84,
        }
        print(json.dumps(response), flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
