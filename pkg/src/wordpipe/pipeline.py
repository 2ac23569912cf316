"""End-to-end orchestration: preprocess, transcribe, verify, time every stage.

A run is configured with one of the seven pipeline modes; hybrid-raw skips
verification and reports the fused transcript verbatim, every other mode
emits a vocabulary word. Batch runs fan utterances out to a bounded worker
pool, isolate per-utterance failures, and return results in manifest order.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from threading import Lock
from typing import Callable, Sequence

from wordpipe.audio_core import AudioClip, PreprocessConfig, load_wav, preprocess
from wordpipe.engines import (
    EngineAdapter,
    EngineUnavailable,
    FusionConfig,
    Transcription,
    transcribe_hybrid,
)
from wordpipe.llm_match import LlmClient, PromptTemplate, load_exemplars, match_llm
from wordpipe.matchers import (
    EmbeddingProvider,
    MatchDecision,
    Vocabulary,
    match_cosine,
    match_cosine_context,
    match_levenshtein,
)

logger = logging.getLogger(__name__)

MODES = ("hybrid-raw", "CS", "LS", "LLM", "CS+C", "LLM+C", "LLM+C+FS")
LLM_MODES = ("LLM", "LLM+C", "LLM+C+FS")
PROMPT_MODE_BY_PIPELINE = {"LLM": "naive", "LLM+C": "context", "LLM+C+FS": "context_fewshot"}


class ManifestInvalid(ValueError):
    """Dataset manifest is not readable JSON-lines with id/path fields."""


@dataclass
class PipelineConfig:
    mode: str
    vocab: Vocabulary
    fusion: FusionConfig = field(default_factory=FusionConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    context: str = ""
    prompt: PromptTemplate | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class UtteranceResult:
    utterance_id: str
    label: str | None
    decision: MatchDecision | None
    fused: Transcription | None
    stage_latency_ms: dict
    total_ms: float
    platform: str = ""
    error: str | None = None


@lru_cache(maxsize=8)
def _default_exemplars(path=None):
    return load_exemplars(path)


def resolve_template(config: PipelineConfig) -> PromptTemplate | None:
    """The prompt template for an LLM mode, built from the config if absent."""
    if config.mode not in LLM_MODES:
        return None
    if config.prompt is not None:
        return config.prompt
    prompt_mode = PROMPT_MODE_BY_PIPELINE[config.mode]
    exemplars = _default_exemplars() if prompt_mode == "context_fewshot" else ()
    return PromptTemplate(mode=prompt_mode, context=config.context, exemplars=exemplars)


def _verify(
    config: PipelineConfig,
    fused: Transcription,
    provider: EmbeddingProvider | None,
    llm_client: LlmClient | None,
) -> MatchDecision:
    mode = config.mode
    text = fused.text
    if mode == "hybrid-raw":
        return MatchDecision(
            word=text,
            score=fused.confidence,
            mode="hybrid-raw",
            raw_transcript=text,
            degraded=fused.degraded,
        )
    if mode == "LS":
        return match_levenshtein(text, config.vocab)
    if mode == "CS":
        if provider is None:
            raise ValueError("CS mode needs an embedding provider")
        return match_cosine(text, config.vocab, provider)
    if mode == "CS+C":
        if provider is None:
            raise ValueError("CS+C mode needs an embedding provider")
        return match_cosine_context(text, config.vocab, config.context, provider)
    if llm_client is None:
        raise ValueError(f"{mode} mode needs an LLM client")
    return match_llm(text, config.vocab, resolve_template(config), llm_client)


def run_utterance(
    clip: AudioClip,
    config: PipelineConfig,
    primary: EngineAdapter,
    secondary: EngineAdapter,
    provider: EmbeddingProvider | None = None,
    llm_client: LlmClient | None = None,
    label: str | None = None,
    platform: str = "",
) -> UtteranceResult:
    """Push one clip through preprocess -> hybrid ASR -> verification.

    Every stage is timed with the monotonic clock; the stage latencies are
    disjoint sub-intervals, so their sum never exceeds the recorded total.
    EngineUnavailable is recorded on the result rather than raised.
    """
    t_start = time.perf_counter()
    stage_latency_ms: dict = {}

    t0 = time.perf_counter()
    prepared = preprocess(clip, config.preprocess)
    stage_latency_ms["preprocess"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    try:
        fused = transcribe_hybrid(prepared.clip, primary, secondary, config.fusion)
    except EngineUnavailable as exc:
        stage_latency_ms["transcribe"] = (time.perf_counter() - t0) * 1e3
        return UtteranceResult(
            utterance_id=clip.id,
            label=label,
            decision=None,
            fused=None,
            stage_latency_ms=stage_latency_ms,
            total_ms=(time.perf_counter() - t_start) * 1e3,
            platform=platform,
            error=str(exc),
        )
    stage_latency_ms["transcribe"] = (time.perf_counter() - t0) * 1e3

    t0 = time.perf_counter()
    decision = _verify(config, fused, provider, llm_client)
    stage_latency_ms["verify"] = (time.perf_counter() - t0) * 1e3

    return UtteranceResult(
        utterance_id=clip.id,
        label=label,
        decision=decision,
        fused=fused,
        stage_latency_ms=stage_latency_ms,
        total_ms=(time.perf_counter() - t_start) * 1e3,
        platform=platform,
    )


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    label: str = ""
    platform: str = ""


def load_manifest(path) -> list[ManifestEntry]:
    """JSON-lines manifest: one {id, path, label, platform} object per line."""
    entries = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestInvalid(f"{path}:{lineno}: not valid JSON") from exc
        if not isinstance(obj, dict) or "id" not in obj or "path" not in obj:
            raise ManifestInvalid(f"{path}:{lineno}: need an object with id and path")
        entries.append(
            ManifestEntry(
                id=str(obj["id"]),
                path=str(obj["path"]),
                label=str(obj.get("label", "")),
                platform=str(obj.get("platform", "")),
            )
        )
    if not entries:
        raise ManifestInvalid(f"{path}: empty manifest")
    return entries


def run_manifest(
    manifest: Sequence[ManifestEntry] | str | Path,
    config: PipelineConfig,
    primary: EngineAdapter,
    secondary: EngineAdapter,
    provider: EmbeddingProvider | None = None,
    llm_client: LlmClient | None = None,
    parallelism: int = 1,
    audio_root: str | Path | None = None,
    progress: Callable[[int, int], None] | None = None,
) -> list[UtteranceResult]:
    """Run every manifest entry; results come back in manifest order.

    Per-utterance failures are isolated into the corresponding result's error
    field; a batch never aborts. With deterministic components the outcome is
    independent of parallelism.
    """
    if isinstance(manifest, (str, Path)):
        entries = load_manifest(manifest)
        if audio_root is None:
            audio_root = Path(manifest).parent
    else:
        entries = list(manifest)
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")

    root = Path(audio_root) if audio_root is not None else None
    total = len(entries)
    done = 0
    done_lock = Lock()

    def job(entry: ManifestEntry) -> UtteranceResult:
        nonlocal done
        try:
            wav_path = Path(entry.path)
            if root is not None and not wav_path.is_absolute():
                wav_path = root / wav_path
            clip = load_wav(wav_path).with_id(entry.id)
            result = run_utterance(
                clip,
                config,
                primary,
                secondary,
                provider=provider,
                llm_client=llm_client,
                label=entry.label,
                platform=entry.platform,
            )
        except Exception as exc:
            logger.warning("utterance %s failed: %s", entry.id, exc)
            result = UtteranceResult(
                utterance_id=entry.id,
                label=entry.label,
                decision=None,
                fused=None,
                stage_latency_ms={},
                total_ms=0.0,
                platform=entry.platform,
                error=f"{type(exc).__name__}: {exc}",
            )
        if progress is not None:
            with done_lock:
                done += 1
                progress(done, total)
        return result

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(job, entries))


def result_to_dict(result: UtteranceResult, include_timings: bool = False) -> dict:
    """JSON-ready view of a result.

    Wall-clock timings are volatile, so they are excluded unless asked for;
    the default view is byte-stable across reruns of a deterministic config.
    """
    decision = result.decision
    fused = result.fused
    out = {
        "id": result.utterance_id,
        "label": result.label,
        "platform": result.platform,
        "mode": decision.mode if decision else None,
        "word": decision.word if decision else None,
        "score": decision.score if decision else None,
        "raw_transcript": decision.raw_transcript if decision else None,
        "fallback_used": decision.fallback_used if decision else False,
        "degraded": decision.degraded if decision else False,
        "fused_text": fused.text if fused else None,
        "fused_confidence": fused.confidence if fused else None,
        "fused_engine": fused.engine_id if fused else None,
        "error": result.error,
    }
    if include_timings:
        out["stage_latency_ms"] = dict(result.stage_latency_ms)
        out["total_ms"] = result.total_ms
    return out


def results_to_jsonl(results: Sequence[UtteranceResult], include_timings: bool = False) -> str:
    lines = [
        json.dumps(result_to_dict(r, include_timings), sort_keys=True, ensure_ascii=False)
        for r in results
    ]
    return "\n".join(lines) + ("\n" if lines else "")
