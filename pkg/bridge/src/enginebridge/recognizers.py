"""Recognizer backends: a deterministic stub plus Whisper and Vosk wrappers.

The model libraries are imported lazily so the bridges (and their tests) run
without either installed.
"""

from __future__ import annotations

import json
import math
import wave
from pathlib import Path


class StubRecognizer:
    """Deterministic stand-in: transcribes a file to its stem.

    Used by the protocol-conformance tests and `--stub` runs; raises
    FileNotFoundError for missing audio so the error path is exercised.
    """

    def __init__(self, engine: str, confidence: float = 0.75):
        self.engine = engine
        self.model_label = "stub"
        self._confidence = confidence

    def transcribe(self, audio_path: str, sample_rate: int | None) -> tuple[str, float]:
        path = Path(audio_path)
        if not path.exists():
            raise FileNotFoundError(audio_path)
        return path.stem, self._confidence


class WhisperRecognizer:
    """OpenAI Whisper wrapper; confidence = exp(mean token log-probability)."""

    def __init__(self, model_size: str = "base"):
        import whisper

        self.engine = "whisper"
        self.model_label = model_size
        self._model = whisper.load_model(model_size)

    def transcribe(self, audio_path: str, sample_rate: int | None) -> tuple[str, float]:
        if not Path(audio_path).exists():
            raise FileNotFoundError(audio_path)
        result = self._model.transcribe(str(audio_path), fp16=False, temperature=0.0)
        segments = result.get("segments") or []
        text = str(result.get("text", "")).strip()
        if not segments:
            return text, 0.0
        # Token-count weighted mean of the per-segment average log-probs.
        weights = [max(len(s.get("tokens", [])), 1) for s in segments]
        logprob = sum(s["avg_logprob"] * w for s, w in zip(segments, weights)) / sum(weights)
        confidence = min(max(math.exp(logprob), 0.0), 1.0)
        return text, confidence


class VoskRecognizer:
    """Vosk wrapper; confidence = mean word-level confidence of the hypothesis."""

    CHUNK_FRAMES = 4000

    def __init__(self, model_path: str):
        import vosk

        vosk.SetLogLevel(-1)
        self.engine = "vosk"
        self.model_label = model_path
        self._vosk = vosk
        self._model = vosk.Model(model_path)

    def transcribe(self, audio_path: str, sample_rate: int | None) -> tuple[str, float]:
        with wave.open(str(audio_path), "rb") as reader:
            if reader.getnchannels() != 1 or reader.getsampwidth() != 2:
                raise ValueError("vosk bridge expects mono PCM16 WAV input")
            rate = reader.getframerate()
            recognizer = self._vosk.KaldiRecognizer(self._model, rate)
            recognizer.SetWords(True)
            words = []
            texts = []

            def collect(payload: str) -> None:
                result = json.loads(payload)
                if result.get("text"):
                    texts.append(result["text"])
                words.extend(result.get("result") or [])

            while True:
                chunk = reader.readframes(self.CHUNK_FRAMES)
                if not chunk:
                    break
                if recognizer.AcceptWaveform(chunk):
                    collect(recognizer.Result())
            collect(recognizer.FinalResult())

        text = " ".join(texts).strip()
        if not text:
            return "", 0.0
        confs = [w["conf"] for w in words if "conf" in w]
        confidence = min(max(sum(confs) / len(confs), 0.0), 1.0) if confs else 0.0
        return text, confidence
