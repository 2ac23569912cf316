"""Audio I/O and the preprocessing front end.

WAV read/write (RIFF, PCM16 or IEEE float32), RMS volume normalization and a
spectral noise gate. Every operation is a pure function of its inputs and
returns samples inside [-1, 1]; nothing here touches shared state, so the
module is safe under any amount of concurrency.
"""

from __future__ import annotations

import logging
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

SILENCE_RMS = 1e-8

# Spectral gate geometry.
FRAME_MS = 25.0
HOP_MS = 10.0
GATE_ATTENUATION_DB = 30.0
NOISE_FLOOR_PERCENTILE = 10.0
# The 10th percentile of a Rayleigh-distributed magnitude sits 9.77 dB below
# the magnitude RMS; the gate threshold is expressed relative to the
# RMS-equivalent noise level, so the raw percentile is scaled back up.
_RAYLEIGH_P10_TO_RMS = 1.0 / math.sqrt(math.log(10.0 / 9.0))


class MalformedWav(ValueError):
    """File is not a readable RIFF/WAVE container (bad header, truncation)."""


class UnsupportedEncoding(ValueError):
    """WAV container is valid but the codec is not PCM16 or float32."""


class SilentInput(ValueError):
    """Operation needs signal energy but the clip is silent."""


class TooShort(ValueError):
    """Clip is shorter than one analysis frame."""


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono buffer of real-valued samples in [-1, 1] at a fixed rate."""

    samples: np.ndarray
    sample_rate: int
    id: str = ""

    def __post_init__(self) -> None:
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError("AudioClip is mono: expected a 1-D sample buffer")
        if int(self.sample_rate) <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def rms(self) -> float:
        if self.samples.size == 0:
            return 0.0
        return float(np.sqrt(np.mean(np.square(self.samples))))

    def with_samples(self, samples: np.ndarray) -> "AudioClip":
        return AudioClip(samples=samples, sample_rate=self.sample_rate, id=self.id)

    def with_id(self, clip_id: str) -> "AudioClip":
        return AudioClip(samples=self.samples, sample_rate=self.sample_rate, id=clip_id)


@dataclass(frozen=True)
class PreprocessConfig:
    # gate_threshold_db 8.0: at 6 dB the overlap-add leakage caps white-noise
    # reduction near 9 dB; 8 dB clears 15 dB while leaving tones untouched.
    denoise_enabled: bool = True
    gate_threshold_db: float = 8.0
    target_rms_dbfs: float = -20.0
    normalize_enabled: bool = True

    def __post_init__(self) -> None:
        if self.target_rms_dbfs >= 0:
            raise ValueError("target_rms_dbfs must be negative (dBFS)")
        if self.gate_threshold_db < 0:
            raise ValueError("gate_threshold_db must be >= 0")


@dataclass(frozen=True)
class NormalizeResult:
    clip: AudioClip
    gain_db: float
    clipped: bool
    silent: bool


@dataclass(frozen=True)
class PreprocessResult:
    clip: AudioClip
    stage_latency_ms: dict
    clipped: bool = False
    silent: bool = False


def dbfs(value: float) -> float:
    """Linear amplitude (or RMS) to dB full scale."""
    return 20.0 * math.log10(max(value, 1e-12))


def load_wav(path) -> AudioClip:
    """Read a RIFF/WAVE file into an AudioClip.

    PCM16 samples are scaled by 1/32768; float32 is taken as-is. Stereo is
    downmixed by averaging the channels. Raises MalformedWav for structural
    problems and UnsupportedEncoding for compressed codecs.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: not a RIFF/WAVE file")

    fmt_chunk = None
    data_chunk = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4 : pos + 8])
        body = raw[pos + 8 : pos + 8 + size]
        if len(body) < size:
            raise MalformedWav(f"{path}: truncated {chunk_id!r} chunk")
        if chunk_id == b"fmt ":
            fmt_chunk = body
        elif chunk_id == b"data":
            data_chunk = body
        pos += 8 + size + (size & 1)  # chunks are word-aligned

    if fmt_chunk is None or data_chunk is None:
        raise MalformedWav(f"{path}: missing fmt/data chunk")
    if len(fmt_chunk) < 16:
        raise MalformedWav(f"{path}: short fmt chunk")

    format_tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt_chunk[:16])
    if format_tag == 0xFFFE and len(fmt_chunk) >= 26:
        # WAVE_FORMAT_EXTENSIBLE: the real tag leads the sub-format GUID.
        (format_tag,) = struct.unpack("<H", fmt_chunk[24:26])
    if channels < 1:
        raise MalformedWav(f"{path}: zero channels")

    if format_tag == 1 and bits == 16:
        sample_bytes = 2
        if len(data_chunk) % (sample_bytes * channels):
            raise MalformedWav(f"{path}: data chunk not frame-aligned")
        data = np.frombuffer(data_chunk, dtype="<i2").astype(np.float64) / 32768.0
    elif format_tag == 3 and bits == 32:
        sample_bytes = 4
        if len(data_chunk) % (sample_bytes * channels):
            raise MalformedWav(f"{path}: data chunk not frame-aligned")
        data = np.frombuffer(data_chunk, dtype="<f4").astype(np.float64)
    else:
        raise UnsupportedEncoding(
            f"{path}: format tag {format_tag} / {bits}-bit not supported (PCM16 or float32 only)"
        )

    if channels > 1:
        data = data.reshape(-1, channels).mean(axis=1)
    data = np.clip(data, -1.0, 1.0)
    return AudioClip(samples=data, sample_rate=rate, id=path.stem)


def save_wav(clip: AudioClip, path) -> None:
    """Write an AudioClip as 16-bit PCM WAV.

    Quantization keeps the round-trip error within 1/32768 per sample.
    """
    path = Path(path)
    pcm = np.clip(np.rint(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF",
        36 + len(payload),
        b"WAVE",
        b"fmt ",
        16,
        1,  # PCM
        1,  # mono
        clip.sample_rate,
        clip.sample_rate * 2,
        2,
        16,
        b"data",
        len(payload),
    )
    path.write_bytes(header + payload)


def normalize_rms(clip: AudioClip, target_dbfs: float = -20.0) -> NormalizeResult:
    """Scale the clip so its RMS hits target_dbfs.

    Silent input (RMS <= 1e-8) is returned unchanged with the silent flag set.
    Samples pushed past full scale by the gain are hard-clipped and reported.
    """
    if target_dbfs >= 0:
        raise ValueError("target_dbfs must be negative")
    current = clip.rms()
    if current <= SILENCE_RMS:
        logger.warning("normalize_rms: silent input %r left unchanged", clip.id)
        return NormalizeResult(clip=clip, gain_db=0.0, clipped=False, silent=True)

    gain_db = target_dbfs - dbfs(current)
    gained = clip.samples * (10.0 ** (gain_db / 20.0))
    clipped = bool(np.any(np.abs(gained) > 1.0))
    if clipped:
        logger.warning("normalize_rms: clipping %r after %+.2f dB gain", clip.id, gain_db)
        gained = np.clip(gained, -1.0, 1.0)
    return NormalizeResult(clip=clip.with_samples(gained), gain_db=gain_db, clipped=clipped, silent=False)


def _stft_params(sample_rate: int) -> tuple[int, int]:
    frame = max(int(round(FRAME_MS * 1e-3 * sample_rate)), 2)
    hop = max(int(round(HOP_MS * 1e-3 * sample_rate)), 1)
    return frame, hop


def denoise_spectral_gate(clip: AudioClip, config: PreprocessConfig | None = None) -> AudioClip:
    """Attenuate the stationary noise floor with a spectral gate.

    25 ms Hann frames on a 10 ms hop; the noise floor is estimated from the
    10th percentile of the time-frequency magnitudes (rescaled to an
    RMS-equivalent level), and cells below floor + gate_threshold_db are
    attenuated by 30 dB. Output length equals input length; a clean tone's
    band power survives within 1 dB because its cells sit far above the floor.
    """
    config = config or PreprocessConfig()
    frame, hop = _stft_params(clip.sample_rate)
    n = len(clip.samples)
    if n < frame:
        raise TooShort(f"clip {clip.id!r}: {n} samples < one {frame}-sample analysis frame")

    window = np.hanning(frame)
    pad = frame
    x = np.concatenate([np.zeros(pad), clip.samples, np.zeros(pad)])
    n_frames = 1 + (len(x) - frame) // hop

    # Analysis
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * window
    spectra = np.fft.rfft(frames, axis=1)
    mag = np.abs(spectra)

    floor = np.percentile(mag, NOISE_FLOOR_PERCENTILE) * _RAYLEIGH_P10_TO_RMS
    threshold = floor * 10.0 ** (config.gate_threshold_db / 20.0)
    gain = np.where(mag < threshold, 10.0 ** (-GATE_ATTENUATION_DB / 20.0), 1.0)

    # Weighted overlap-add resynthesis; the window-square normalization makes
    # the all-pass case reconstruct the input exactly.
    out = np.zeros(len(x))
    norm = np.zeros(len(x))
    synth = np.fft.irfft(spectra * gain, n=frame, axis=1) * window
    for t in range(n_frames):
        start = t * hop
        out[start : start + frame] += synth[t]
        norm[start : start + frame] += window**2
    out = out / np.maximum(norm, 1e-12)

    result = np.clip(out[pad : pad + n], -1.0, 1.0)
    return clip.with_samples(result)


def preprocess(clip: AudioClip, config: PreprocessConfig | None = None) -> PreprocessResult:
    """Run the front end: spectral gate, then RMS normalization.

    Disabled stages are skipped (both disabled returns the input unchanged).
    Per-stage wall-clock latency is recorded in milliseconds.
    """
    config = config or PreprocessConfig()
    stage_latency_ms: dict = {}
    out = clip
    clipped = False
    silent = False

    if config.denoise_enabled:
        t0 = time.perf_counter()
        out = denoise_spectral_gate(out, config)
        stage_latency_ms["denoise"] = (time.perf_counter() - t0) * 1e3

    if config.normalize_enabled:
        t0 = time.perf_counter()
        norm = normalize_rms(out, config.target_rms_dbfs)
        stage_latency_ms["normalize"] = (time.perf_counter() - t0) * 1e3
        out = norm.clip
        clipped = norm.clipped
        silent = norm.silent

    return PreprocessResult(clip=out, stage_latency_ms=stage_latency_ms, clipped=clipped, silent=silent)
