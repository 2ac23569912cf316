"""Telephony-channel degradation for regenerating platform-like audio.

Clean source clips are pushed through resample -> band-limit -> codec ->
additive noise, mirroring a network path with receiver-side ambience last.
Everything is deterministic: the degrade seed is mixed with the clip id, so a
batch run gives bit-identical output regardless of worker count.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.signal import firwin, resample_poly

from wordpipe.audio_core import SILENCE_RMS, AudioClip, SilentInput

CODECS = ("none", "mulaw")
NOISE_KINDS = ("white", "babble-file")

# Band-limit FIR design: Hamming-window FIR (~53 dB stopband), transition band
# folded inside the passband so the nominal edges are already in the stopband.
_TRANSITION_HZ = 100.0
_TAPS_PER_HZ = 3.3  # Hamming window: numtaps ~= 3.3 * fs / transition width


class InvalidBand(ValueError):
    """Band edges do not satisfy 0 < low < high < Nyquist."""


@dataclass(frozen=True)
class DegradeProfile:
    """One platform's channel conditions.

    snr_db = +inf disables the noise stage (sentinel).
    """

    target_rate: int = 8000
    band_low: float = 300.0
    band_high: float = 3400.0
    codec: str = "mulaw"
    snr_db: float = math.inf
    noise_kind: str = "white"
    babble_path: str | None = None
    seed: int = 0
    name: str = ""

    def __post_init__(self) -> None:
        if not (0 < self.band_low < self.band_high < self.target_rate / 2):
            raise InvalidBand(
                f"need 0 < band_low < band_high < target_rate/2, got "
                f"({self.band_low}, {self.band_high}) at {self.target_rate} Hz"
            )
        if self.codec not in CODECS:
            raise ValueError(f"codec must be one of {CODECS}, got {self.codec!r}")
        if self.noise_kind not in NOISE_KINDS:
            raise ValueError(f"noise_kind must be one of {NOISE_KINDS}, got {self.noise_kind!r}")
        if math.isnan(self.snr_db):
            raise ValueError("snr_db must be a number or +inf to disable noise")


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Polyphase resample with anti-alias filtering; identity if rates match."""
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    g = math.gcd(target_rate, clip.sample_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = resample_poly(clip.samples, up, down)
    out = np.clip(out, -1.0, 1.0)
    return AudioClip(samples=out, sample_rate=target_rate, id=clip.id)


def bandlimit(clip: AudioClip, low: float, high: float) -> AudioClip:
    """Bandpass the clip to [low, high] Hz, >= 20 dB attenuation outside."""
    nyquist = clip.sample_rate / 2
    if not (0 < low < high < nyquist):
        raise InvalidBand(f"need 0 < low < high < Nyquist ({nyquist} Hz), got ({low}, {high})")
    if clip.samples.size == 0:
        return clip

    transition = min(_TRANSITION_HZ, 0.8 * low, 0.8 * (nyquist - high), (high - low) / 4)
    f1 = low + transition / 2
    f2 = high - transition / 2
    numtaps = int(_TAPS_PER_HZ * clip.sample_rate / transition)
    numtaps += 1 - numtaps % 2  # odd taps: integer group delay for 'same' alignment
    taps = firwin(numtaps, [f1, f2], pass_zero=False, fs=clip.sample_rate)
    out = np.convolve(clip.samples, taps, mode="same")
    return clip.with_samples(np.clip(out, -1.0, 1.0))


# G.711 mu-law (mu=255): 8 segments of 16 steps over a 14-bit magnitude,
# biased by 0x84. Segment boundaries on the biased magnitude:
_MULAW_BIAS = 0x84
_MULAW_CLIP = 32635
_MULAW_SEG_ENDS = np.array([0xFF, 0x1FF, 0x3FF, 0x7FF, 0xFFF, 0x1FFF, 0x3FFF, 0x7FFF])


def mulaw_encode(samples: np.ndarray) -> np.ndarray:
    """Float samples in [-1, 1] to 8-bit mu-law codes."""
    pcm = np.clip(np.rint(np.asarray(samples) * 32768.0), -32768, 32767).astype(np.int64)
    sign = np.where(pcm < 0, 0x80, 0x00)
    mag = np.minimum(np.abs(pcm), _MULAW_CLIP) + _MULAW_BIAS
    exponent = np.searchsorted(_MULAW_SEG_ENDS, mag, side="left")
    mantissa = (mag >> (exponent + 3)) & 0x0F
    return (~(sign | (exponent << 4) | mantissa) & 0xFF).astype(np.uint8)


def mulaw_decode(codes: np.ndarray) -> np.ndarray:
    """8-bit mu-law codes back to float samples in [-1, 1]."""
    u = ~np.asarray(codes, dtype=np.int64) & 0xFF
    exponent = (u >> 4) & 0x07
    mantissa = u & 0x0F
    mag = (((mantissa << 3) + _MULAW_BIAS) << exponent) - _MULAW_BIAS
    pcm = np.where(u & 0x80, -mag, mag)
    return pcm.astype(np.float64) / 32768.0


def codec_mulaw(clip: AudioClip) -> AudioClip:
    """Round each sample through the 8-bit mu-law codec."""
    return clip.with_samples(mulaw_decode(mulaw_encode(clip.samples)))


def _load_noise_reference(profile: DegradeProfile, length: int) -> np.ndarray | None:
    if profile.noise_kind != "babble-file":
        return None
    if not profile.babble_path:
        raise ValueError("noise_kind 'babble-file' requires babble_path")
    from wordpipe.audio_core import load_wav

    ref = load_wav(profile.babble_path).samples
    if ref.size == 0:
        raise ValueError(f"babble file {profile.babble_path} is empty")
    reps = int(np.ceil(length / ref.size))
    return np.tile(ref, reps)[:length]


def add_noise(
    clip: AudioClip,
    snr_db: float,
    kind: str = "white",
    seed: int = 0,
    noise_ref: np.ndarray | None = None,
) -> AudioClip:
    """Add noise so the realized SNR equals snr_db; +inf leaves the clip alone.

    Deterministic per seed. The noise is scaled against the measured signal
    power, so signal_power / added_noise_power is exact up to clipping.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return clip
    signal_rms = clip.rms()
    if signal_rms <= SILENCE_RMS:
        raise SilentInput(f"clip {clip.id!r} is silent; SNR is undefined")

    rng = np.random.default_rng(seed)
    if kind == "white":
        noise = rng.standard_normal(len(clip.samples))
    elif kind == "babble-file":
        if noise_ref is None:
            raise ValueError("babble-file noise needs a noise_ref buffer")
        offset = int(rng.integers(0, max(len(noise_ref) - len(clip.samples), 1)))
        noise = np.resize(np.roll(noise_ref, -offset), len(clip.samples)).astype(np.float64)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")

    noise_rms = float(np.sqrt(np.mean(np.square(noise)))) or 1.0
    noise = noise * (signal_rms * 10.0 ** (-snr_db / 20.0) / noise_rms)
    out = np.clip(clip.samples + noise, -1.0, 1.0)
    return clip.with_samples(out)


def mix_seed(seed: int, clip_id: str) -> int:
    """Stable per-clip seed: profile seed mixed with the clip id hash."""
    digest = hashlib.blake2b(f"{seed}:{clip_id}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def degrade(clip: AudioClip, profile: DegradeProfile) -> AudioClip:
    """Apply the full channel: resample -> bandlimit -> codec -> noise."""
    out = resample(clip, profile.target_rate)
    out = bandlimit(out, profile.band_low, profile.band_high)
    if profile.codec == "mulaw":
        out = codec_mulaw(out)
    if not (math.isinf(profile.snr_db) and profile.snr_db > 0):
        noise_ref = _load_noise_reference(profile, len(out.samples))
        out = add_noise(
            out,
            profile.snr_db,
            kind=profile.noise_kind,
            seed=mix_seed(profile.seed, clip.id),
            noise_ref=noise_ref,
        )
    return out


def _profile_from_dict(name: str, raw: dict) -> DegradeProfile:
    known = {f for f in DegradeProfile.__dataclass_fields__}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"profile {name!r}: unknown fields {sorted(unknown)}")
    snr = raw.get("snr_db", math.inf)
    if isinstance(snr, str):
        snr = math.inf if snr in ("inf", "+inf") else float(snr)
    return DegradeProfile(**{**raw, "snr_db": snr, "name": raw.get("name", name)})


def load_profiles(path=None) -> dict[str, DegradeProfile]:
    """Named degrade presets from JSON; the built-in asset when path is None.

    The shipped presets are engineering approximations of common voice
    platforms, not measurements.
    """
    if path is None:
        text = resources.files("wordpipe").joinpath("assets/profiles.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    raw = json.loads(text)
    return {name: _profile_from_dict(name, fields) for name, fields in raw.items()}


def get_profile(name: str, path=None, seed: int | None = None) -> DegradeProfile:
    profiles = load_profiles(path)
    if name not in profiles:
        raise KeyError(f"unknown degrade profile {name!r}; have {sorted(profiles)}")
    profile = profiles[name]
    if seed is not None:
        profile = replace(profile, seed=seed)
    return profile
