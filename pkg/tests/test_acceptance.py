"""Acceptance suite: one test per gating criterion, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the per-criterion
lines as they complete.
"""

import itertools
import json
import math
import random
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from conftest import make_noise, make_tone
from oracles import make_levenshtein_oracle, snr_db
from wordpipe.audio_core import AudioClip, PreprocessConfig, save_wav
from wordpipe.channel_sim import add_noise, degrade, get_profile
from wordpipe.cli import main as cli_main
from wordpipe.engines import CorruptionModel, FusionConfig, Transcription, fuse_hybrid, make_mock_engine
from wordpipe.eval import compute_metrics, emit_report
from wordpipe.llm_match import MockLlmClient, PromptTemplate, load_exemplars, match_llm
from wordpipe.matchers import (
    TrigramEmbedder,
    Vocabulary,
    levenshtein,
    match_cosine,
    match_cosine_context,
    match_levenshtein,
)
from wordpipe.pipeline import ManifestEntry, PipelineConfig, run_manifest

VOCAB = Vocabulary.from_file(Path(__file__).parent.parent / "src/wordpipe/assets/speech_commands_30.txt")
FAST_PREP = PreprocessConfig(denoise_enabled=False, normalize_enabled=False)

# Calibrated so raw hybrid accuracy lands at 0.4567 on the 300-utterance corpus.
CORRUPTION_RATE = 0.55
CORRUPTION_SEED = 4


@contextmanager
def criterion(name: str):
    t0 = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"ACCEPTANCE {name}: FAIL ({time.perf_counter() - t0:.2f}s)")
        raise
    print(f"ACCEPTANCE {name}: PASS ({time.perf_counter() - t0:.2f}s)")


def test_fusion_rule_exhaustive():
    with criterion("fusion-rule-exhaustive"):
        t0 = time.perf_counter()
        mismatches = 0
        grid = [i / 20 for i in range(21)]
        for tau in (0.0, 0.25, 0.5, 0.75, 1.0):
            config = FusionConfig(tau=tau)
            for cw in grid:
                for cv in grid:
                    t_w = Transcription(text="W", confidence=cw, engine_id="w")
                    t_v = Transcription(text="V", confidence=cv, engine_id="v")
                    fused = fuse_hybrid(t_w, t_v, config)
                    # Direct evaluation of the selection rule: primary text
                    # if C_W >= C_V and C_W >= tau, otherwise secondary.
                    expected = "W" if (cw >= cv and cw >= tau) else "V"
                    if fused.text != expected:
                        mismatches += 1
        elapsed = time.perf_counter() - t0
        assert mismatches == 0
        assert elapsed < 1.0, f"fusion sweep took {elapsed:.2f}s"


def test_levenshtein_oracle_equivalence():
    with criterion("levenshtein-oracle-equivalence"):
        sys.setrecursionlimit(10000)
        t0 = time.perf_counter()
        assert levenshtein("phone", "fone") == 2
        assert levenshtein("kitten", "sitting") == 3
        oracle = make_levenshtein_oracle()
        strings = [""]
        for n in range(1, 7):
            strings.extend("".join(p) for p in itertools.product("abc", repeat=n))
        assert len(strings) == 1093
        mismatches = sum(
            1 for a in strings for b in strings if levenshtein(a, b) != oracle(a, b)
        )
        elapsed = time.perf_counter() - t0
        assert mismatches == 0
        assert elapsed < 60.0, f"exhaustive sweep took {elapsed:.2f}s"


def test_closed_vocabulary_fuzz():
    with criterion("closed-vocabulary-fuzz"):
        provider = TrigramEmbedder()
        rng = random.Random(20240809)
        garbage_rng = random.Random(77)

        def adversarial_reply(messages):
            n = garbage_rng.randrange(0, 24)
            return "".join(chr(garbage_rng.randrange(32, 0x2FF)) for _ in range(n))

        client = MockLlmClient(reply_fn=adversarial_reply)
        templates = [
            PromptTemplate(mode="naive"),
            PromptTemplate(mode="context", context="say a command"),
            PromptTemplate(mode="context_fewshot", context="say a command", exemplars=load_exemplars(k=2)),
        ]
        violations = 0
        for i in range(10000):
            length = rng.randrange(0, 20)
            transcript = "".join(chr(rng.randrange(1, 0x2FF)) for _ in range(length))
            if match_levenshtein(transcript, VOCAB).word not in VOCAB:
                violations += 1
            if match_cosine(transcript, VOCAB, provider).word not in VOCAB:
                violations += 1
            if match_cosine_context(transcript, VOCAB, "say a command", provider).word not in VOCAB:
                violations += 1
            # The three LLM prompt modes cycle across the corpus.
            if match_llm(transcript, VOCAB, templates[i % 3], client).word not in VOCAB:
                violations += 1
        assert violations == 0


def _single_word_results(correct: int, wrong: int, multiword_wrong: int = 0, mode: str = "levenshtein"):
    from wordpipe.matchers import MatchDecision
    from wordpipe.pipeline import UtteranceResult

    def result(word: str, uid: str) -> UtteranceResult:
        return UtteranceResult(
            utterance_id=uid,
            label="stop",
            decision=MatchDecision(word=word, score=0.0, mode=mode, raw_transcript=word),
            fused=None,
            stage_latency_ms={},
            total_ms=0.0,
        )

    rows = [result("stop", f"c{i}") for i in range(correct)]
    rows += [result("go", f"w{i}") for i in range(wrong)]
    rows += [result("go go", f"m{i}") for i in range(multiword_wrong)]
    return rows


def test_wer_complementarity():
    with criterion("wer-complementarity"):
        # Verified modes: single-word outputs are exact complements.
        rng = random.Random(5)
        for trial in range(50):
            correct = rng.randrange(0, 101)
            summary = compute_metrics(_single_word_results(correct, 100 - correct))
            assert abs(summary.accuracy + summary.wer - 1.0) <= 1e-9
        # The CS-row pattern: 59 correct of 100 -> 0.59 / 0.41.
        cs = compute_metrics(_single_word_results(59, 41))
        assert (cs.accuracy, cs.wer) == (pytest.approx(0.59), pytest.approx(0.41))
        # Raw hybrid with multi-word hypotheses: 49 correct, 43 one-word
        # errors, 8 two-word errors -> 0.49 / 0.59, summing past 1.
        hybrid = compute_metrics(_single_word_results(49, 43, 8, mode="hybrid-raw"))
        assert (hybrid.accuracy, hybrid.wer) == (pytest.approx(0.49), pytest.approx(0.59))
        assert hybrid.wer > 1 - hybrid.accuracy


@pytest.fixture(scope="module")
def corrupted_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("gain_corpus")
    wav = root / "clip.wav"
    save_wav(make_tone(seconds=0.05, rate=8000), wav)
    entries = [
        ManifestEntry(id=f"{word}-{i:02d}", path=str(wav), label=word)
        for word in VOCAB.words
        for i in range(10)
    ]
    primary = make_mock_engine(
        {e.id: (e.label, 0.8) for e in entries},
        corruption=CorruptionModel(rate=CORRUPTION_RATE, mode="char_swap"),
        seed=CORRUPTION_SEED,
        engine_id="alpha",
        latency_ms=2.0,
    )
    # Secondary confidence 0.5 stays below the primary's 0.8, so the
    # corrupted primary transcript always wins the fusion.
    secondary = make_mock_engine(
        {e.id: (e.label, 0.5) for e in entries},
        seed=CORRUPTION_SEED,
        engine_id="beta",
        latency_ms=1.0,
    )
    return entries, primary, secondary


def _run_mode(entries, primary, secondary, mode):
    config = PipelineConfig(mode=mode, vocab=VOCAB, preprocess=FAST_PREP)
    return run_manifest(
        entries, config, primary, secondary, provider=TrigramEmbedder(), parallelism=4
    )


def test_verification_gain_trend(corrupted_corpus):
    with criterion("verification-gain-trend"):
        t0 = time.perf_counter()
        entries, primary, secondary = corrupted_corpus
        raw = compute_metrics(_run_mode(entries, primary, secondary, "hybrid-raw")).accuracy
        ls = compute_metrics(_run_mode(entries, primary, secondary, "LS")).accuracy
        cs = compute_metrics(_run_mode(entries, primary, secondary, "CS")).accuracy
        elapsed = time.perf_counter() - t0
        assert 0.42 <= raw <= 0.48, f"raw hybrid accuracy {raw:.4f} out of calibration band"
        assert ls - raw >= 0.10, f"LS gain only {ls - raw:+.4f} (raw {raw:.4f}, LS {ls:.4f})"
        assert cs - raw >= 0.10, f"CS gain only {cs - raw:+.4f} (raw {raw:.4f}, CS {cs:.4f})"
        assert elapsed < 30.0, f"trend run took {elapsed:.2f}s"


def test_channel_sim_signal_checks():
    with criterion("channel-sim-signal-checks"):
        profile = get_profile("telephony")
        # Output rate is exactly 8000 Hz.
        tone = make_tone(freq=1000.0, rate=16000)
        assert degrade(tone, profile).sample_rate == 8000
        # Out-of-band (>3.4 kHz) attenuation >= 20 dB on a broadband clip.
        rng = np.random.default_rng(5)
        broadband = AudioClip(np.clip(rng.standard_normal(16000) * 0.08, -1, 1), 16000, "bb")
        out = degrade(broadband, profile)

        def band(x, rate, lo, hi):
            spec = np.abs(np.fft.rfft(x)) ** 2
            freqs = np.fft.rfftfreq(len(x), 1 / rate)
            return float(spec[(freqs > lo) & (freqs <= hi)].sum() / len(x))

        before = band(broadband.samples, 16000, 3400, 4000)
        after = band(out.samples, 8000, 3400, 4000)
        assert 10 * math.log10(after / before) <= -20.0
        # Realized SNR within +-1 dB of target over 100 random clips.
        for i in range(100):
            rng_i = np.random.default_rng(1000 + i)
            target = float(rng_i.uniform(0, 40))
            clip = make_noise(rms=float(rng_i.uniform(0.02, 0.2)), seed=i, clip_id=f"c{i}")
            noisy = add_noise(clip, target, seed=i)
            assert abs(snr_db(clip.samples, noisy.samples) - target) <= 1.0


def test_determinism_across_parallelism(tmp_path, capsys):
    with criterion("determinism-across-parallelism"):
        labels = {f"{w}-{i}": w for w in VOCAB.words for i in range(3)}
        wav = tmp_path / "clip.wav"
        save_wav(make_tone(seconds=0.05, rate=8000), wav)
        manifest = tmp_path / "manifest.jsonl"
        manifest.write_text(
            "\n".join(
                json.dumps({"id": cid, "path": "clip.wav", "label": label})
                for cid, label in labels.items()
            )
            + "\n"
        )
        config = tmp_path / "config.json"
        config.write_text(
            json.dumps(
                {
                    "mode": "LS",
                    "seed": 4,
                    "preprocess": {"denoise_enabled": False, "normalize_enabled": False},
                    "engines": {
                        "primary": {
                            "type": "mock",
                            "engine_id": "alpha",
                            "confidence": 0.8,
                            "lookup": "labels",
                            "corruption": {"rate": 0.55, "mode": "char_swap"},
                        },
                        "secondary": {
                            "type": "mock",
                            "engine_id": "beta",
                            "confidence": 0.5,
                            "lookup": "labels",
                        },
                    },
                }
            )
        )
        outputs = []
        for parallelism in ("1", "8"):
            out = tmp_path / f"par{parallelism}"
            code = cli_main(
                ["run", "--manifest", str(manifest), "--config", str(config),
                 "--out", str(out), "--parallelism", parallelism]
            )
            assert code == 0
            outputs.append((out / "results.jsonl").read_bytes())
        capsys.readouterr()
        assert outputs[0] == outputs[1], "results files differ across parallelism"


def test_latency_accounting(corrupted_corpus):
    with criterion("latency-accounting"):
        entries, primary, secondary = corrupted_corpus
        results = _run_mode(entries[:60], primary, secondary, "LS")
        for result in results:
            assert sum(result.stage_latency_ms.values()) <= result.total_ms, (
                f"stage latencies exceed wall clock for {result.utterance_id}"
            )
        summary = compute_metrics(results, dataset="gain", mode="LS")
        report = emit_report([summary], "markdown")
        header = report.splitlines()[0]
        for column in ("preprocess_ms", "transcribe_ms", "verify_ms", "total_ms"):
            assert column in header
        assert summary.mean_latency_ms["total"] > 0
