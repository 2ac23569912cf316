"""Stdin/stdout engine bridges speaking the JSON-lines transcription protocol.

Each bridge process is strictly serial: a ready handshake, then exactly one
response line per request line, matching ids. Callers get parallelism by
pooling processes.
"""

from enginebridge.protocol import serve

__version__ = "0.1.0"

__all__ = ["serve"]
