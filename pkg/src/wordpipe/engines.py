"""ASR engine adapters and confidence-weighted hybrid fusion.

The fusion rule picks the primary engine's transcript when its confidence
beats both the secondary's and the threshold tau, otherwise the secondary's.
Adapters normalize backend confidence to [0, 1]; real engines are reached
through a JSON-lines subprocess bridge, tests use the deterministic mock.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import queue
import random
import string
import subprocess
import tempfile
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, replace
from typing import Mapping, Protocol, Sequence

from wordpipe.audio_core import AudioClip, save_wav

logger = logging.getLogger(__name__)


class EngineError(RuntimeError):
    """The engine reported a failure for one request."""


class EngineUnavailable(RuntimeError):
    """No engine produced a transcription."""


class EngineContractViolation(RuntimeError):
    """An adapter broke the normalized-confidence contract."""


class UnknownClip(KeyError):
    """Mock engine has no scripted output for the clip id."""


class BridgeTimeout(EngineError):
    """Bridge child did not answer within the deadline."""


class BridgeProtocolError(EngineError):
    """Bridge child broke the JSON-lines protocol."""


class BridgeCrashed(EngineError):
    """Bridge child exited or closed its pipes."""


@dataclass(frozen=True)
class Transcription:
    """One engine's answer: text, normalized confidence, and latency."""

    text: str
    confidence: float
    engine_id: str
    latency_ms: float = 0.0
    degraded: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must be in [0, 1], got {self.confidence}")
        if self.latency_ms < 0:
            raise ValueError(f"latency_ms must be >= 0, got {self.latency_ms}")


@dataclass(frozen=True)
class FusionConfig:
    tau: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must be in [0, 1], got {self.tau}")


@dataclass(frozen=True)
class EngineCapabilities:
    max_sample_rate: int | None = None
    batch: bool = False


class EngineAdapter(Protocol):
    def transcribe(self, clip: AudioClip) -> Transcription: ...

    def id(self) -> str: ...

    @property
    def capabilities(self) -> EngineCapabilities: ...


def fuse_hybrid(t_w: Transcription, t_v: Transcription, config: FusionConfig | None = None) -> Transcription:
    """Select between two transcriptions by confidence.

    Returns the primary (t_w) exactly when its confidence is >= the
    secondary's and >= tau; both comparisons are inclusive, so an exact tie at
    the threshold goes to the primary. The winner's text/confidence/engine are
    kept; latency is the sum of both engines' latencies.
    """
    config = config or FusionConfig()
    winner = t_w if (t_w.confidence >= t_v.confidence and t_w.confidence >= config.tau) else t_v
    return replace(winner, latency_ms=t_w.latency_ms + t_v.latency_ms)


def _stable_u64(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class CorruptionModel:
    """Error model for the mock engine.

    rate is the per-utterance corruption probability; mode is one of
    char_swap (substitute one letter), drop (empty transcript), or confusable
    (emit a scripted near-neighbor, falling back to char_swap).
    """

    rate: float = 0.0
    mode: str = "char_swap"
    confusables: Mapping[str, Sequence[str]] | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.rate <= 1.0:
            raise ValueError(f"rate must be in [0, 1], got {self.rate}")
        if self.mode not in ("char_swap", "drop", "confusable"):
            raise ValueError(f"unknown corruption mode {self.mode!r}")

    def apply(self, text: str, rng: random.Random) -> str:
        if rng.random() >= self.rate or not text:
            return text
        mode = self.mode
        if mode == "confusable" and not (self.confusables and self.confusables.get(text)):
            mode = "char_swap"
        if mode == "drop":
            return ""
        if mode == "confusable":
            return rng.choice(list(self.confusables[text]))
        pos = rng.randrange(len(text))
        alternatives = [c for c in string.ascii_lowercase if c != text[pos]]
        return text[:pos] + rng.choice(alternatives) + text[pos + 1 :]


class MockEngine:
    """Table-driven engine double, deterministic per (clip id, seed)."""

    def __init__(
        self,
        lookup: Mapping[str, tuple[str, float]],
        corruption: CorruptionModel | None = None,
        seed: int = 0,
        engine_id: str = "mock",
        default: tuple[str, float] | None = None,
        latency_ms: float = 1.0,
    ):
        self._lookup = dict(lookup)
        self._corruption = corruption or CorruptionModel()
        self._seed = seed
        self._engine_id = engine_id
        self._default = default
        self._latency_ms = latency_ms

    def id(self) -> str:
        return self._engine_id

    @property
    def capabilities(self) -> EngineCapabilities:
        return EngineCapabilities()

    def transcribe(self, clip: AudioClip) -> Transcription:
        entry = self._lookup.get(clip.id, self._default)
        if entry is None:
            raise UnknownClip(f"no scripted output for clip {clip.id!r}")
        text, confidence = entry
        rng = random.Random(_stable_u64(f"{self._seed}:{self._engine_id}:{clip.id}"))
        return Transcription(
            text=self._corruption.apply(text, rng),
            confidence=confidence,
            engine_id=self._engine_id,
            latency_ms=self._latency_ms,
        )


def make_mock_engine(
    lookup: Mapping[str, tuple[str, float]],
    corruption: CorruptionModel | None = None,
    seed: int = 0,
    **kwargs,
) -> MockEngine:
    return MockEngine(lookup, corruption=corruption, seed=seed, **kwargs)


class ValidatingAdapter:
    """Wraps any adapter and rejects out-of-contract confidence values."""

    def __init__(self, inner: EngineAdapter):
        self._inner = inner

    def id(self) -> str:
        return self._inner.id()

    @property
    def capabilities(self) -> EngineCapabilities:
        return self._inner.capabilities

    def transcribe(self, clip: AudioClip) -> Transcription:
        try:
            result = self._inner.transcribe(clip)
        except ValueError as exc:
            raise EngineContractViolation(f"{self._inner.id()}: {exc}") from exc
        if not 0.0 <= result.confidence <= 1.0:
            raise EngineContractViolation(
                f"{self._inner.id()}: confidence {result.confidence} outside [0, 1]"
            )
        return result


class _BridgeChild:
    """One bridge process; strictly serial, restarted by the owner on faults."""

    def __init__(self, command: Sequence[str], timeout_ms: int):
        self._command = list(command)
        self._timeout_s = timeout_ms / 1e3
        self._proc: subprocess.Popen | None = None
        self._reader: ThreadPoolExecutor | None = None
        self.engine_name = ""
        self._start()

    def _start(self) -> None:
        if self._reader is not None:
            self._reader.shutdown(wait=False)
        self._reader = ThreadPoolExecutor(max_workers=1)
        self._proc = subprocess.Popen(
            self._command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            bufsize=1,
        )
        hello = self._read_json()
        if hello.get("ready") is not True:
            self.kill()
            raise BridgeProtocolError(f"bad handshake: {hello!r}")
        self.engine_name = str(hello.get("engine", ""))

    def _read_json(self) -> dict:
        future = self._reader.submit(self._proc.stdout.readline)
        try:
            line = future.result(timeout=self._timeout_s)
        except FutureTimeout:
            self.kill()
            raise BridgeTimeout(f"no reply within {self._timeout_s:.1f}s from {self._command[0]}")
        if line == "":
            self.kill()
            raise BridgeCrashed(f"{self._command[0]} closed stdout")
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            self.kill()
            raise BridgeProtocolError(f"malformed line from child: {line!r}") from exc
        if not isinstance(obj, dict):
            self.kill()
            raise BridgeProtocolError(f"expected JSON object, got: {line!r}")
        return obj

    def request(self, payload: dict) -> dict:
        try:
            self._proc.stdin.write(json.dumps(payload) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self.kill()
            raise BridgeCrashed(f"{self._command[0]} stdin closed") from exc
        return self._read_json()

    def kill(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.kill()
            self._proc.wait()

    def close(self) -> None:
        self.kill()
        if self._reader is not None:
            self._reader.shutdown(wait=False)


class SubprocessEngine:
    """Adapter speaking the JSON-lines protocol to a pool of bridge children.

    One request is in flight per child; a child that times out, crashes, or
    desyncs is killed and respawned before the next request.
    """

    def __init__(
        self,
        command: Sequence[str],
        timeout_ms: int = 30000,
        pool_size: int = 1,
        engine_id: str | None = None,
    ):
        if pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        self._command = list(command)
        self._timeout_ms = timeout_ms
        self._pool: queue.Queue[_BridgeChild] = queue.Queue()
        self._lock = threading.Lock()
        for _ in range(pool_size):
            self._pool.put(_BridgeChild(self._command, timeout_ms))
        self._engine_id = engine_id or self._peek_engine_name()

    def _peek_engine_name(self) -> str:
        child = self._pool.get()
        try:
            return child.engine_name or self._command[0]
        finally:
            self._pool.put(child)

    def id(self) -> str:
        return self._engine_id

    @property
    def capabilities(self) -> EngineCapabilities:
        return EngineCapabilities()

    def transcribe(self, clip: AudioClip) -> Transcription:
        request_id = clip.id or uuid.uuid4().hex
        fd, wav_path = tempfile.mkstemp(suffix=".wav", prefix="wordpipe_req_")
        os.close(fd)
        child = self._pool.get()
        t0 = time.perf_counter()
        try:
            save_wav(clip, wav_path)
            payload = {"id": request_id, "audio_path": wav_path, "sample_rate": clip.sample_rate}
            try:
                response = child.request(payload)
            except EngineError:
                child = self._respawn(child)
                raise
            if response.get("id") != request_id:
                child.kill()
                child = self._respawn(child)
                raise BridgeProtocolError(
                    f"response id {response.get('id')!r} != request id {request_id!r}"
                )
            if response.get("error"):
                raise EngineError(f"{self._engine_id}: {response['error']}")
            confidence = float(response.get("confidence", 0.0))
            if not 0.0 <= confidence <= 1.0:
                raise EngineContractViolation(
                    f"{self._engine_id}: confidence {confidence} outside [0, 1]"
                )
            return Transcription(
                text=str(response.get("text", "")),
                confidence=confidence,
                engine_id=self._engine_id,
                latency_ms=(time.perf_counter() - t0) * 1e3,
            )
        finally:
            self._pool.put(child)
            try:
                os.unlink(wav_path)
            except OSError:
                pass

    def _respawn(self, child: _BridgeChild) -> _BridgeChild:
        child.close()
        try:
            return _BridgeChild(self._command, self._timeout_ms)
        except Exception:
            logger.exception("failed to respawn bridge child %s", self._command[0])
            raise

    def close(self) -> None:
        while True:
            try:
                self._pool.get_nowait().close()
            except queue.Empty:
                return


def subprocess_adapter(command: Sequence[str], timeout_ms: int = 30000, **kwargs) -> SubprocessEngine:
    return SubprocessEngine(command, timeout_ms=timeout_ms, **kwargs)


def transcribe_hybrid(
    clip: AudioClip,
    primary: EngineAdapter,
    secondary: EngineAdapter,
    config: FusionConfig | None = None,
) -> Transcription:
    """Run both engines (primary first) and fuse by confidence.

    If one engine fails its exception is swallowed and the other's result is
    returned with the degraded flag set; if both fail, EngineUnavailable.
    """
    t_w = t_v = None
    try:
        t_w = primary.transcribe(clip)
    except Exception:
        logger.warning("primary engine %s failed on %r", primary.id(), clip.id, exc_info=True)
    try:
        t_v = secondary.transcribe(clip)
    except Exception:
        logger.warning("secondary engine %s failed on %r", secondary.id(), clip.id, exc_info=True)

    if t_w is None and t_v is None:
        raise EngineUnavailable(f"both engines failed on clip {clip.id!r}")
    if t_w is None:
        return replace(t_v, degraded=True)
    if t_v is None:
        return replace(t_w, degraded=True)
    return fuse_hybrid(t_w, t_v, config)
