"""The JSON-lines engine protocol loop.

Wire format, one UTF-8 JSON object per line:
    handshake  {"ready": true, "engine": <name>, "model": <provenance>}
    request    {"id": str, "audio_path": str, "sample_rate": int}
    response   {"id": str, "text": str, "confidence": float}
               {"id": str, "error": str}

A request that fails produces an error response carrying its id; the process
stays alive for the next request. Confidence is always clamped to [0, 1].
"""

from __future__ import annotations

import json
import sys
from typing import Protocol, TextIO


class Recognizer(Protocol):
    engine: str
    model_label: str

    def transcribe(self, audio_path: str, sample_rate: int | None) -> tuple[str, float]: ...


def _emit(stdout: TextIO, payload: dict) -> None:
    stdout.write(json.dumps(payload) + "\n")
    stdout.flush()


def serve(recognizer: Recognizer, stdin: TextIO | None = None, stdout: TextIO | None = None) -> int:
    """Run the request loop until stdin closes. Returns 0."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout

    _emit(stdout, {"ready": True, "engine": recognizer.engine, "model": recognizer.model_label})

    for line in stdin:
        line = line.strip()
        if not line:
            continue
        request_id = None
        try:
            request = json.loads(line)
            request_id = request["id"]
            audio_path = request["audio_path"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            _emit(stdout, {"id": request_id, "error": f"malformed request: {exc}"})
            continue
        try:
            text, confidence = recognizer.transcribe(audio_path, request.get("sample_rate"))
            confidence = min(max(float(confidence), 0.0), 1.0)
            _emit(stdout, {"id": request_id, "text": text, "confidence": confidence})
        except Exception as exc:
            _emit(stdout, {"id": request_id, "error": f"{type(exc).__name__}: {exc}"})
    return 0
