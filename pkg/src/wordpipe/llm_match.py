"""LLM-backed vocabulary matching with naive, context, and few-shot prompts.

The prompt text lives in editable assets; the builder only guarantees the
structural contract (instructions, transcript, enumerated word list, and the
one-word reply constraint). Replies are parsed defensively, so the decision
is always a vocabulary member no matter what the model says, and a failing
client degrades to edit-distance matching instead of erroring out.
"""

from __future__ import annotations

import json
import logging
import string
import threading
import time
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

import httpx

from wordpipe.matchers import (
    MatchDecision,
    Vocabulary,
    fold,
    match_levenshtein,
    project_to_vocab,
    tokens_in_vocab,
)

logger = logging.getLogger(__name__)

PROMPT_MODES = ("naive", "context", "context_fewshot")
DECISION_MODE_BY_PROMPT = {
    "naive": "llm",
    "context": "llm+context",
    "context_fewshot": "llm+context+fewshot",
}

DEFAULT_TEMPERATURE = 0.0
DEFAULT_MAX_TOKENS = 16
DEFAULT_FEWSHOT_K = 5

_STRIP_CHARS = string.whitespace + string.punctuation + "\"'`“”‘’"


class TemplateInvalid(ValueError):
    """Prompt template cannot produce a prompt (e.g. few-shot without exemplars)."""


class LlmClientError(RuntimeError):
    """Base class for chat-completion client failures."""


class LlmUnavailable(LlmClientError):
    """The client gave up after exhausting its attempts."""


@dataclass(frozen=True)
class Exemplar:
    transcript: str
    context: str
    vocab: tuple[str, ...]
    word: str


@dataclass(frozen=True)
class PromptTemplate:
    mode: str = "naive"
    context: str = ""
    instructions: str | None = None
    exemplars: tuple[Exemplar, ...] = ()


@dataclass(frozen=True)
class LlmReply:
    text: str
    latency_ms: float = 0.0
    prompt_tokens: int = 0
    completion_tokens: int = 0


class LlmClient(Protocol):
    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> LlmReply: ...


def _asset_text(name: str) -> str:
    return resources.files("wordpipe").joinpath(f"assets/{name}").read_text("utf-8").strip()


def load_exemplars(path=None, k: int = DEFAULT_FEWSHOT_K) -> tuple[Exemplar, ...]:
    """First k exemplars from a held-out JSON file (built-in asset by default)."""
    if path is None:
        text = _asset_text("fewshot_exemplars.json")
    else:
        text = Path(path).read_text("utf-8")
    raw = json.loads(text)
    exemplars = tuple(
        Exemplar(
            transcript=e["transcript"],
            context=e.get("context", ""),
            vocab=tuple(e["vocab"]),
            word=e["word"],
        )
        for e in raw
    )
    return exemplars[:k]


def _user_message(transcript: str, words: Sequence[str], context: str) -> str:
    lines = []
    if context:
        lines.append(f"Context: {context}")
    lines.append(f'Transcription: "{transcript}"')
    lines.append("Word list: " + ", ".join(words))
    return "\n".join(lines)


def build_prompt(
    template: PromptTemplate, transcript: str, vocab: Vocabulary
) -> list[dict[str, str]]:
    """Assemble the chat messages for one matching request.

    naive: system instructions + one user turn carrying the transcript and the
    enumerated word list. context: the same, with context-judging instructions
    and the context line added. context_fewshot: exemplars are prepended as
    user/assistant turn pairs, so the message count is 2 + 2k.
    """
    if template.mode not in PROMPT_MODES:
        raise TemplateInvalid(f"unknown prompt mode {template.mode!r}")
    if template.mode == "context_fewshot" and not template.exemplars:
        raise TemplateInvalid("context_fewshot requires at least one exemplar")

    system = template.instructions or _asset_text("prompt_system_naive.txt")
    use_context = template.mode in ("context", "context_fewshot")
    if use_context:
        system = system + "\n" + _asset_text("prompt_system_context.txt")

    messages = [{"role": "system", "content": system}]
    if template.mode == "context_fewshot":
        for ex in template.exemplars:
            messages.append(
                {"role": "user", "content": _user_message(ex.transcript, ex.vocab, ex.context)}
            )
            messages.append({"role": "assistant", "content": ex.word})
    context = template.context if use_context else ""
    messages.append({"role": "user", "content": _user_message(transcript, vocab.words, context)})
    return messages


def parse_llm_reply(reply: str, vocab: Vocabulary) -> tuple[str, bool]:
    """Map an arbitrary reply string onto the vocabulary.

    Scan order: exact fold-match of the trimmed reply, then the first reply
    token that is a vocabulary member, then nearest-word projection (flagged
    as a fallback). Total: never fails.
    """
    trimmed = fold(reply.strip(_STRIP_CHARS))
    if trimmed in vocab:
        return trimmed, False
    hits = tokens_in_vocab(reply, vocab)
    if hits:
        return hits[0], False
    return project_to_vocab(reply, vocab), True


class MockLlmClient:
    """Scripted client: replies keyed by transcript substring, no network.

    Failures are scriptable (fail_times / fail_always) so retry and fallback
    paths can be driven deterministically.
    """

    def __init__(
        self,
        replies: Mapping[str, str] | None = None,
        default: str | None = None,
        reply_fn: Callable[[Sequence[Mapping[str, str]]], str] | None = None,
        fail_times: int = 0,
        fail_always: bool = False,
        latency_ms: float = 0.2,
    ):
        self._replies = dict(replies or {})
        self._keys = sorted(self._replies, key=len, reverse=True)
        self._default = default
        self._reply_fn = reply_fn
        self._fail_times = fail_times
        self._fail_always = fail_always
        self._latency_ms = latency_ms
        self.calls = 0

    @classmethod
    def from_fixture(cls, path) -> "MockLlmClient":
        """JSON fixture: {"replies": {transcript: reply}, "default": reply?}."""
        raw = json.loads(Path(path).read_text("utf-8"))
        return cls(replies=raw.get("replies", {}), default=raw.get("default"))

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> LlmReply:
        self.calls += 1
        if self._fail_always or self.calls <= self._fail_times:
            raise LlmUnavailable("scripted failure")
        if self._reply_fn is not None:
            return LlmReply(text=self._reply_fn(messages), latency_ms=self._latency_ms)
        user = next((m["content"] for m in reversed(messages) if m["role"] == "user"), "")
        for key in self._keys:
            if key in user:
                return LlmReply(text=self._replies[key], latency_ms=self._latency_ms)
        if self._default is not None:
            return LlmReply(text=self._default, latency_ms=self._latency_ms)
        raise LlmUnavailable("no scripted reply matches the prompt")


class HttpLlmClient:
    """Chat-completion client over HTTP JSON.

    Request: {"model", "messages", "temperature", "max_tokens"} posted to
    /chat/completions under base_url; reply text is
    choices[0].message.content. Transient failures (transport errors, 429,
    5xx) are retried with exponential backoff for at most max_attempts total
    attempts; in-flight requests are capped by max_concurrency.
    """

    RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        timeout_ms: int = 30000,
        max_attempts: int = 3,
        backoff_s: float = 0.25,
        max_concurrency: int = 4,
        transport: httpx.BaseTransport | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(
            base_url=base_url, headers=headers, timeout=timeout_ms / 1e3, transport=transport
        )
        self._model = model
        self._max_attempts = max_attempts
        self._backoff_s = backoff_s
        self._slots = threading.BoundedSemaphore(max_concurrency)

    def complete(
        self,
        messages: Sequence[Mapping[str, str]],
        temperature: float = DEFAULT_TEMPERATURE,
        max_tokens: int = DEFAULT_MAX_TOKENS,
    ) -> LlmReply:
        payload = {
            "model": self._model,
            "messages": list(messages),
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        t0 = time.perf_counter()
        last_error: Exception | None = None
        for attempt in range(self._max_attempts):
            if attempt and self._backoff_s:
                time.sleep(self._backoff_s * 2 ** (attempt - 1))
            try:
                with self._slots:
                    response = self._client.post("/chat/completions", json=payload)
            except httpx.HTTPError as exc:
                last_error = exc
                logger.warning("llm request failed (attempt %d): %s", attempt + 1, exc)
                continue
            if response.status_code in self.RETRYABLE_STATUS:
                last_error = LlmClientError(f"HTTP {response.status_code}")
                logger.warning("llm transient HTTP %d (attempt %d)", response.status_code, attempt + 1)
                continue
            if response.status_code != 200:
                raise LlmUnavailable(f"HTTP {response.status_code}: {response.text[:200]}")
            data = response.json()
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as exc:
                raise LlmUnavailable(f"malformed completion payload: {data!r}") from exc
            usage = data.get("usage") or {}
            return LlmReply(
                text=text,
                latency_ms=(time.perf_counter() - t0) * 1e3,
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
            )
        raise LlmUnavailable(f"gave up after {self._max_attempts} attempts: {last_error}")

    def close(self) -> None:
        self._client.close()


def match_llm(
    transcript: str,
    vocab: Vocabulary,
    template: PromptTemplate,
    client: LlmClient,
    temperature: float = DEFAULT_TEMPERATURE,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> MatchDecision:
    """Prompt the client and project its reply onto the vocabulary.

    The decision word is always a vocabulary member. A client that fails
    (after its own retries) triggers an edit-distance fallback carrying the
    degraded flag; latency always includes the client round-trip.
    """
    t0 = time.perf_counter()
    messages = build_prompt(template, transcript, vocab)
    mode = DECISION_MODE_BY_PROMPT[template.mode]
    try:
        reply = client.complete(messages, temperature=temperature, max_tokens=max_tokens)
    except LlmClientError as exc:
        logger.warning("llm client failed, falling back to edit distance: %s", exc)
        fallback = match_levenshtein(transcript, vocab)
        return replace(
            fallback,
            mode=mode,
            degraded=True,
            latency_ms=(time.perf_counter() - t0) * 1e3,
        )
    word, fallback_used = parse_llm_reply(reply.text, vocab)
    return MatchDecision(
        word=word,
        score=0.0 if fallback_used else 1.0,
        mode=mode,
        raw_transcript=transcript,
        latency_ms=(time.perf_counter() - t0) * 1e3,
        fallback_used=fallback_used,
    )
