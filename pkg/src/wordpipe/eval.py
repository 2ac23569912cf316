"""Scoring and reporting: accuracy, word error rate, mean stage latency.

Accuracy counts exact fold-matches of the decision word against the label;
WER is total word-level edits over total reference words, unclamped. With
single-word hypotheses the two are exact complements; multi-word or empty
hypotheses (hybrid-raw mode) can push WER above 1 - accuracy via insertions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

from wordpipe.matchers import edit_distance, fold

MODE_ORDER = ("hybrid-raw", "CS", "LS", "LLM", "CS+C", "LLM+C", "LLM+C+FS")
LATENCY_STAGES = ("preprocess", "transcribe", "verify", "total")


class EmptyResults(ValueError):
    """Metrics need at least one scored utterance."""


@dataclass(frozen=True)
class MetricsSummary:
    dataset: str
    mode: str
    accuracy: float
    wer: float
    count: int
    mean_latency_ms: dict = field(default_factory=dict)


def word_edit_distance(hyp: Sequence[str], ref: Sequence[str]) -> int:
    """Minimal word-level substitutions/insertions/deletions (unit cost)."""
    return edit_distance(tuple(hyp), tuple(ref))


def tokenize(text: str) -> list[str]:
    """Whitespace tokens of the folded text."""
    return fold(text).split()


def _hypothesis(result) -> str:
    if result.decision is None:
        return ""
    return result.decision.word


def compute_metrics(results: Sequence, dataset: str = "", mode: str = "") -> MetricsSummary:
    """Aggregate a batch of utterance results into one summary row."""
    if not results:
        raise EmptyResults("cannot score an empty result list")
    if not mode:
        first = next((r.decision.mode for r in results if r.decision is not None), "")
        mode = first

    correct = 0
    edits = 0
    ref_words = 0
    latency_sums = {stage: 0.0 for stage in LATENCY_STAGES}
    for result in results:
        if result.label is None:
            raise EmptyResults(f"utterance {result.utterance_id!r} has no reference label")
        hyp = tokenize(_hypothesis(result))
        ref = tokenize(result.label)
        if fold(_hypothesis(result)) == fold(result.label):
            correct += 1
        edits += word_edit_distance(hyp, ref)
        ref_words += len(ref)
        for stage in ("preprocess", "transcribe", "verify"):
            latency_sums[stage] += result.stage_latency_ms.get(stage, 0.0)
        latency_sums["total"] += result.total_ms
    if ref_words == 0:
        raise EmptyResults("reference labels contain no words")

    n = len(results)
    return MetricsSummary(
        dataset=dataset,
        mode=mode,
        accuracy=correct / n,
        wer=edits / ref_words,
        count=n,
        mean_latency_ms={stage: latency_sums[stage] / n for stage in LATENCY_STAGES},
    )


def _sort_key(summary: MetricsSummary):
    mode_rank = MODE_ORDER.index(summary.mode) if summary.mode in MODE_ORDER else len(MODE_ORDER)
    return (summary.dataset, mode_rank, summary.mode)


def _columns() -> list[str]:
    return ["dataset", "mode", "count", "accuracy", "wer"] + [f"{s}_ms" for s in LATENCY_STAGES]


def _row(summary: MetricsSummary) -> list:
    return [
        summary.dataset,
        summary.mode,
        summary.count,
        summary.accuracy,
        summary.wer,
        *(summary.mean_latency_ms.get(stage, 0.0) for stage in LATENCY_STAGES),
    ]


def emit_report(summaries: Sequence[MetricsSummary], format: str = "markdown") -> str:
    """Render one row per (dataset, mode), modes in the canonical order.

    CSV output uses repr-precision floats and round-trips losslessly through
    parse_report_csv; markdown is for humans.
    """
    rows = [_row(s) for s in sorted(summaries, key=_sort_key)]
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_columns())
        for row in rows:
            writer.writerow([cell if isinstance(cell, str) else repr(cell) for cell in row])
        return buf.getvalue()
    if format == "markdown":
        header = _columns()
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
        for row in rows:
            cells = [
                cell if isinstance(cell, str) else (str(cell) if isinstance(cell, int) else f"{cell:.4f}")
                for cell in row
            ]
            lines.append("| " + " | ".join(cells) + " |")
        return "\n".join(lines) + "\n"
    if format == "json":
        payload = [
            {
                "dataset": s.dataset,
                "mode": s.mode,
                "count": s.count,
                "accuracy": s.accuracy,
                "wer": s.wer,
                "mean_latency_ms": {k: s.mean_latency_ms.get(k, 0.0) for k in LATENCY_STAGES},
            }
            for s in sorted(summaries, key=_sort_key)
        ]
        return json.dumps(payload, indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown report format {format!r}")


def parse_report_csv(text: str) -> list[MetricsSummary]:
    """Inverse of emit_report(..., format='csv')."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != _columns():
        raise ValueError(f"unexpected report header: {header}")
    out = []
    for row in reader:
        dataset, mode, count, accuracy, wer, *latencies = row
        out.append(
            MetricsSummary(
                dataset=dataset,
                mode=mode,
                count=int(count),
                accuracy=float(accuracy),
                wer=float(wer),
                mean_latency_ms={
                    stage: float(value) for stage, value in zip(LATENCY_STAGES, latencies)
                },
            )
        )
    return out
