import sys
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from conftest import make_tone
from wordpipe.engines import (
    BridgeProtocolError,
    BridgeTimeout,
    CorruptionModel,
    EngineContractViolation,
    EngineError,
    EngineUnavailable,
    FusionConfig,
    MockEngine,
    Transcription,
    UnknownClip,
    ValidatingAdapter,
    fuse_hybrid,
    make_mock_engine,
    subprocess_adapter,
    transcribe_hybrid,
)

FAKE_ENGINE = str(Path(__file__).parent / "fake_engine.py")


def t(conf: float, text: str = "word", engine: str = "e", latency: float = 10.0) -> Transcription:
    return Transcription(text=text, confidence=conf, engine_id=engine, latency_ms=latency)


class TestFuseHybrid:
    def test_primary_wins_when_confident(self):
        fused = fuse_hybrid(t(0.9, "left", "w"), t(0.5, "right", "v"), FusionConfig(0.5))
        assert (fused.text, fused.engine_id) == ("left", "w")

    def test_secondary_wins_on_higher_confidence(self):
        fused = fuse_hybrid(t(0.6, "left", "w"), t(0.7, "right", "v"), FusionConfig(0.5))
        assert (fused.text, fused.engine_id) == ("right", "v")

    def test_secondary_wins_when_primary_below_tau(self):
        fused = fuse_hybrid(t(0.8, "left", "w"), t(0.6, "right", "v"), FusionConfig(0.9))
        assert (fused.text, fused.engine_id) == ("right", "v")

    def test_exact_tie_goes_to_primary(self):
        fused = fuse_hybrid(t(0.5, "left", "w"), t(0.5, "right", "v"), FusionConfig(0.5))
        assert (fused.text, fused.engine_id) == ("left", "w")

    def test_combined_latency(self):
        fused = fuse_hybrid(t(0.9, latency=12.5), t(0.1, latency=7.5))
        assert fused.latency_ms == pytest.approx(20.0)

    def test_output_is_a_selection_never_a_blend(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            cw, cv, tau = rng.uniform(0, 1, 3)
            fused = fuse_hybrid(t(cw, "aaa", "w"), t(cv, "bbb", "v"), FusionConfig(tau))
            assert fused.text in ("aaa", "bbb")

    def test_confidence_bounds_enforced(self):
        with pytest.raises(ValueError):
            Transcription(text="x", confidence=1.2, engine_id="e")
        with pytest.raises(ValueError):
            FusionConfig(tau=-0.1)


class TestMockEngine:
    def test_table_lookup(self):
        engine = make_mock_engine({"a1": ("stop", 0.92)})
        fused = engine.transcribe(make_tone(clip_id="a1"))
        assert (fused.text, fused.confidence) == ("stop", 0.92)

    def test_unknown_clip(self):
        engine = make_mock_engine({"a1": ("stop", 0.9)})
        with pytest.raises(UnknownClip):
            engine.transcribe(make_tone(clip_id="zz"))

    def test_default_entry(self):
        engine = make_mock_engine({}, default=("go", 0.4))
        assert engine.transcribe(make_tone(clip_id="zz")).text == "go"

    def test_corruption_deterministic(self):
        engine = make_mock_engine(
            {"a1": ("stop", 0.9)}, corruption=CorruptionModel(rate=1.0, mode="char_swap"), seed=7
        )
        first = engine.transcribe(make_tone(clip_id="a1")).text
        second = engine.transcribe(make_tone(clip_id="a1")).text
        assert first == second
        assert first != "stop" and len(first) == 4

    def test_corruption_rate_binomial_bound(self):
        engine = make_mock_engine(
            {}, corruption=CorruptionModel(rate=0.5, mode="char_swap"), seed=11, default=("stop", 0.9)
        )
        corrupted = sum(
            engine.transcribe(make_tone(clip_id=f"c{i}")).text != "stop" for i in range(10000)
        )
        assert 0.48 <= corrupted / 10000 <= 0.52  # 4 sigma around 0.5

    def test_drop_mode(self):
        engine = make_mock_engine(
            {"a1": ("stop", 0.9)}, corruption=CorruptionModel(rate=1.0, mode="drop")
        )
        assert engine.transcribe(make_tone(clip_id="a1")).text == ""

    def test_confusable_mode(self):
        model = CorruptionModel(rate=1.0, mode="confusable", confusables={"stop": ["stob"]})
        engine = make_mock_engine({"a1": ("stop", 0.9)}, corruption=model)
        assert engine.transcribe(make_tone(clip_id="a1")).text == "stob"


class TestValidatingAdapter:
    def test_out_of_range_confidence_detected(self):
        class Rogue:
            def id(self):
                return "rogue"

            @property
            def capabilities(self):
                return None

            def transcribe(self, clip):
                return SimpleNamespace(text="x", confidence=1.5, engine_id="rogue", latency_ms=0)

        with pytest.raises(EngineContractViolation):
            ValidatingAdapter(Rogue()).transcribe(make_tone())

    def test_well_behaved_adapter_passes_through(self):
        engine = make_mock_engine({"a1": ("go", 0.7)})
        result = ValidatingAdapter(engine).transcribe(make_tone(clip_id="a1"))
        assert result.text == "go"


class TestTranscribeHybrid:
    def test_agreement(self):
        a = make_mock_engine({"a1": ("stop", 0.9)}, engine_id="w")
        b = make_mock_engine({"a1": ("stop", 0.6)}, engine_id="v")
        fused = transcribe_hybrid(make_tone(clip_id="a1"), a, b)
        assert fused.text == "stop"
        assert not fused.degraded

    def test_primary_failure_degraded_fallback(self):
        a = make_mock_engine({})  # raises UnknownClip
        b = make_mock_engine({"a1": ("go", 0.7)}, engine_id="v")
        fused = transcribe_hybrid(make_tone(clip_id="a1"), a, b)
        assert (fused.text, fused.confidence) == ("go", 0.7)
        assert fused.degraded

    def test_both_fail(self):
        a = make_mock_engine({})
        b = make_mock_engine({})
        with pytest.raises(EngineUnavailable):
            transcribe_hybrid(make_tone(clip_id="a1"), a, b)


@pytest.fixture
def fake_command():
    return [sys.executable, FAKE_ENGINE]


class TestSubprocessAdapter:
    def test_protocol_echo(self, fake_command):
        adapter = subprocess_adapter(fake_command, timeout_ms=10000)
        try:
            result = adapter.transcribe(make_tone(clip_id="u1", seconds=0.05))
            assert result.text == "echo-u1"
            assert result.confidence == 0.84
            assert adapter.id() == "fake"
        finally:
            adapter.close()

    def test_malformed_line_then_recovers(self, fake_command, tmp_path):
        flag = tmp_path / "fired"
        adapter = subprocess_adapter(
            fake_command + ["--behavior", "malformed-once", "--flag-file", str(flag)],
            timeout_ms=10000,
        )
        try:
            with pytest.raises(BridgeProtocolError):
                adapter.transcribe(make_tone(clip_id="u1", seconds=0.05))
            # The child was restarted; the next request must succeed.
            result = adapter.transcribe(make_tone(clip_id="u2", seconds=0.05))
            assert result.text == "echo-u2"
        finally:
            adapter.close()

    def test_id_mismatch_rejected(self, fake_command):
        adapter = subprocess_adapter(fake_command + ["--behavior", "wrong-id-once"], timeout_ms=10000)
        try:
            with pytest.raises(BridgeProtocolError):
                adapter.transcribe(make_tone(clip_id="u1", seconds=0.05))
        finally:
            adapter.close()

    def test_timeout(self, fake_command):
        adapter = subprocess_adapter(
            fake_command + ["--behavior", "slow-once", "--delay-s", "5"], timeout_ms=300
        )
        try:
            with pytest.raises(BridgeTimeout):
                adapter.transcribe(make_tone(clip_id="u1", seconds=0.05))
        finally:
            adapter.close()

    def test_error_response_served_and_child_survives(self, fake_command):
        adapter = subprocess_adapter(fake_command + ["--behavior", "error-once"], timeout_ms=10000)
        try:
            with pytest.raises(EngineError):
                adapter.transcribe(make_tone(clip_id="u1", seconds=0.05))
            assert adapter.transcribe(make_tone(clip_id="u2", seconds=0.05)).text == "echo-u2"
        finally:
            adapter.close()

    def test_pool_of_children(self, fake_command):
        import threading

        adapter = subprocess_adapter(fake_command, timeout_ms=10000, pool_size=2)
        results = {}

        def work(n):
            results[n] = adapter.transcribe(make_tone(clip_id=f"p{n}", seconds=0.05)).text

        try:
            threads = [threading.Thread(target=work, args=(n,)) for n in range(6)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert results == {n: f"echo-p{n}" for n in range(6)}
        finally:
            adapter.close()

    def test_hybrid_over_bridges(self, fake_command):
        primary = subprocess_adapter(fake_command + ["--engine", "alpha"], timeout_ms=10000)
        secondary = subprocess_adapter(fake_command + ["--engine", "beta"], timeout_ms=10000)
        try:
            fused = transcribe_hybrid(make_tone(clip_id="u9", seconds=0.05), primary, secondary)
            assert fused.text == "echo-u9"
        finally:
            primary.close()
            secondary.close()
