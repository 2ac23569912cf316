"""Non-LLM verification: project a transcript onto a closed vocabulary.

Two routes: minimal edit distance over folded strings, and cosine similarity
over hashed character-trigram embeddings (optionally with a shared context
string prepended to both sides). Every matcher returns a word that is a
member of the vocabulary, for any input string whatsoever.
"""

from __future__ import annotations

import hashlib
import re
import time
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np

DECISION_MODES = (
    "hybrid-raw",
    "cosine",
    "levenshtein",
    "llm",
    "cosine+context",
    "llm+context",
    "llm+context+fewshot",
)

_WORD_RE = re.compile(r"\w+", re.UNICODE)


class ZeroVector(ValueError):
    """Cosine similarity is undefined for a zero-length vector."""


def fold(text: str) -> str:
    """Casefold and NFC-normalize; applied before any matching."""
    return unicodedata.normalize("NFC", text.casefold())


class Vocabulary:
    """Ordered set of unique, folded target words.

    Original order is preserved and is the tie-break authority: every matcher
    resolves equal scores in favor of the lowest index.
    """

    def __init__(self, words: Iterable[str]):
        seen: dict[str, None] = {}
        for word in words:
            folded = fold(word.strip())
            if folded:
                seen.setdefault(folded, None)
        if not seen:
            raise ValueError("vocabulary must contain at least one word")
        self.words: tuple[str, ...] = tuple(seen)
        self._index = {w: i for i, w in enumerate(self.words)}

    @classmethod
    def from_file(cls, path) -> "Vocabulary":
        """One word per line, UTF-8; blank lines and '#' comments ignored."""
        words = []
        for line in Path(path).read_text("utf-8").splitlines():
            line = line.split("#", 1)[0].strip()
            if line:
                words.append(line)
        return cls(words)

    def index(self, word: str) -> int:
        return self._index[word]

    def __contains__(self, word: str) -> bool:
        return fold(word) in self._index

    def __iter__(self):
        return iter(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __repr__(self) -> str:
        return f"Vocabulary({len(self.words)} words)"


@dataclass(frozen=True)
class MatchDecision:
    """The pipeline's answer: a vocabulary word plus how it was chosen.

    score is mode-specific: edit distance (lower is better) for levenshtein,
    cosine similarity for the embedding modes, and an in-vocabulary indicator
    for LLM modes. In hybrid-raw mode `word` carries the fused transcript
    verbatim; the closed-vocabulary guarantee applies to the verified modes.
    """

    word: str
    score: float
    mode: str
    raw_transcript: str
    latency_ms: float = 0.0
    fallback_used: bool = False
    degraded: bool = False


class EmbeddingProvider(Protocol):
    def embed(self, text: str) -> np.ndarray: ...


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Minimal number of single-element insertions/deletions/substitutions."""
    if a == b:
        return 0
    la, lb = len(a), len(b)
    if not la:
        return lb
    if not lb:
        return la
    if lb > la:
        a, b, la, lb = b, a, lb, la
    previous = list(range(lb + 1))
    for i in range(la):
        ca = a[i]
        current = [i + 1]
        append = current.append
        for j in range(lb):
            cost = previous[j] if ca == b[j] else previous[j] + 1
            deletion = previous[j + 1] + 1
            insertion = current[j] + 1
            if deletion < cost:
                cost = deletion
            if insertion < cost:
                cost = insertion
            append(cost)
        previous = current
    return previous[-1]


def levenshtein(a: str, b: str) -> int:
    """Exact unit-cost edit distance on Unicode scalar values after NFC."""
    if not (a.isascii() and b.isascii()):
        a = unicodedata.normalize("NFC", a)
        b = unicodedata.normalize("NFC", b)
    return edit_distance(a, b)


def match_levenshtein(transcript: str, vocab: Vocabulary) -> MatchDecision:
    """Vocabulary word at minimal edit distance from the folded transcript."""
    t0 = time.perf_counter()
    folded = fold(transcript)
    best_word = vocab.words[0]
    best = edit_distance(folded, best_word)
    for word in vocab.words[1:]:
        d = edit_distance(folded, word)
        if d < best:
            best, best_word = d, word
    return MatchDecision(
        word=best_word,
        score=float(best),
        mode="levenshtein",
        raw_transcript=transcript,
        latency_ms=(time.perf_counter() - t0) * 1e3,
    )


def embed_char_ngrams(text: str, dim: int = 256) -> np.ndarray:
    """Hashed character-trigram bag embedding, L2-normalized.

    The folded text is wrapped in boundary markers and each trigram is
    signed-hashed into one of `dim` buckets (blake2b, so the vector is stable
    across processes). Empty text maps to the canonical first basis vector.
    """
    folded = fold(text)
    vec = np.zeros(dim)
    if folded:
        padded = f"^{folded}$"
        grams = [padded[i : i + 3] for i in range(len(padded) - 2)] or [padded]
        for gram in grams:
            h = int.from_bytes(hashlib.blake2b(gram.encode("utf-8"), digest_size=8).digest(), "big")
            vec[(h >> 1) % dim] += 1.0 if h & 1 else -1.0
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        vec[0] = 1.0
        return vec
    return vec / norm


class TrigramEmbedder:
    """Default EmbeddingProvider: deterministic, offline, orthographic."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is None:
            cached = self._cache[text] = embed_char_ngrams(text, self.dim)
        return cached


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine needs two non-zero vectors")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def _argmax_cosine(
    query: str, candidates: Sequence[str], provider: EmbeddingProvider
) -> tuple[int, float]:
    q = provider.embed(query)
    best_i, best_s = 0, -2.0
    for i, cand in enumerate(candidates):
        s = cosine(q, provider.embed(cand))
        if s > best_s:
            best_i, best_s = i, s
    return best_i, best_s


def match_cosine(transcript: str, vocab: Vocabulary, provider: EmbeddingProvider) -> MatchDecision:
    """Vocabulary word whose embedding is most similar to the transcript's."""
    t0 = time.perf_counter()
    i, score = _argmax_cosine(transcript, vocab.words, provider)
    return MatchDecision(
        word=vocab.words[i],
        score=score,
        mode="cosine",
        raw_transcript=transcript,
        latency_ms=(time.perf_counter() - t0) * 1e3,
    )


def match_cosine_context(
    transcript: str, vocab: Vocabulary, context: str, provider: EmbeddingProvider
) -> MatchDecision:
    """Cosine matching with the context prepended to both sides.

    The composition is plain concatenation with one space; an empty context
    reduces exactly to match_cosine.
    """
    t0 = time.perf_counter()
    compose = (lambda t: t) if not context else (lambda t: f"{context} {t}")
    i, score = _argmax_cosine(compose(transcript), [compose(w) for w in vocab.words], provider)
    return MatchDecision(
        word=vocab.words[i],
        score=score,
        mode="cosine+context",
        raw_transcript=transcript,
        latency_ms=(time.perf_counter() - t0) * 1e3,
    )


def project_to_vocab(text: str, vocab: Vocabulary) -> str:
    """Closure guarantee: exact fold-match if present, else nearest by edits."""
    folded = fold(text)
    if folded in vocab:
        return folded
    return match_levenshtein(text, vocab).word


def tokens_in_vocab(text: str, vocab: Vocabulary) -> list[str]:
    """Folded word tokens of `text` that are vocabulary members, in order."""
    return [t for t in _WORD_RE.findall(fold(text)) if t in vocab]
