"""Informational smoke run against real Whisper/Vosk bridges (non-gating).

Needs the bridge package plus real models, and a manifest of genuine
single-word recordings supplied via REAL_ASR_MANIFEST; synthetic tones would
make the accuracy figure meaningless, so nothing is fabricated here.
"""

import importlib.util
import os
import sys

import pytest

from wordpipe.audio_core import PreprocessConfig
from wordpipe.engines import subprocess_adapter
from wordpipe.eval import compute_metrics
from wordpipe.matchers import Vocabulary
from wordpipe.pipeline import PipelineConfig, load_manifest, run_manifest

MANIFEST = os.environ.get("REAL_ASR_MANIFEST", "")
VOSK_MODEL = os.environ.get("VOSK_MODEL_PATH", "")

requirements_missing = (
    not MANIFEST
    or not VOSK_MODEL
    or importlib.util.find_spec("enginebridge") is None
    or importlib.util.find_spec("whisper") is None
    or importlib.util.find_spec("vosk") is None
)


@pytest.mark.skipif(requirements_missing, reason="real models / REAL_ASR_MANIFEST not available")
def test_hybrid_raw_accuracy_on_real_clips():
    entries = load_manifest(MANIFEST)[:20]
    vocab = Vocabulary(sorted({e.label for e in entries}))
    config = PipelineConfig(mode="hybrid-raw", vocab=vocab, preprocess=PreprocessConfig())
    whisper = subprocess_adapter(
        [sys.executable, "-m", "enginebridge.whisper_bridge", "--model", "base"], timeout_ms=120000
    )
    vosk = subprocess_adapter(
        [sys.executable, "-m", "enginebridge.vosk_bridge", "--model", VOSK_MODEL], timeout_ms=120000
    )
    try:
        results = run_manifest(entries, config, whisper, vosk, parallelism=1)
    finally:
        whisper.close()
        vosk.close()
    summary = compute_metrics(results, dataset="real", mode="hybrid-raw")
    print(f"INFORMATIONAL hybrid-raw accuracy on {summary.count} real clips: {summary.accuracy:.2f}")
    assert summary.accuracy >= 0.4
