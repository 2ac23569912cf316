"""Single-word speech verification pipeline.

Audio in, one vocabulary word out: preprocess the clip, transcribe with a
confidence-fused pair of ASR engines, project the hypothesis onto a closed
vocabulary (edit distance, embedding cosine, or an LLM, each with optional
context), score the run, and route the matched word to a telephony action.
"""

from wordpipe.audio_core import AudioClip, PreprocessConfig, load_wav, preprocess, save_wav
from wordpipe.channel_sim import DegradeProfile, degrade
from wordpipe.engines import FusionConfig, Transcription, fuse_hybrid, transcribe_hybrid
from wordpipe.matchers import MatchDecision, Vocabulary

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "DegradeProfile",
    "FusionConfig",
    "MatchDecision",
    "PreprocessConfig",
    "Transcription",
    "Vocabulary",
    "degrade",
    "fuse_hybrid",
    "load_wav",
    "preprocess",
    "save_wav",
    "transcribe_hybrid",
]
