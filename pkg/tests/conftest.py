import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from wordpipe.audio_core import AudioClip


def make_tone(freq: float = 440.0, rate: int = 16000, seconds: float = 1.0, amp: float = 0.3, clip_id: str = "tone") -> AudioClip:
    t = np.arange(int(rate * seconds)) / rate
    return AudioClip(samples=amp * np.sin(2 * np.pi * freq * t), sample_rate=rate, id=clip_id)


def make_noise(rate: int = 16000, seconds: float = 1.0, rms: float = 0.01, seed: int = 0, clip_id: str = "noise") -> AudioClip:
    rng = np.random.default_rng(seed)
    samples = rng.standard_normal(int(rate * seconds))
    samples *= rms / np.sqrt(np.mean(samples**2))
    return AudioClip(samples=samples, sample_rate=rate, id=clip_id)


@pytest.fixture
def tone_clip() -> AudioClip:
    return make_tone()


@pytest.fixture
def noise_clip() -> AudioClip:
    return make_noise()
