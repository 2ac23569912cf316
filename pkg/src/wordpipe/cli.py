"""Operator command line for batch experiments.

Subcommands: preprocess, degrade, transcribe, match, run, report,
dispatch-sim. Configuration precedence: built-in defaults < config file <
--set overrides; the LLM API key comes from the environment. Exit codes:
0 success, 1 user error, 2 runtime error. Every subcommand ends with one
machine-parsable JSON status line on stdout.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from wordpipe.audio_core import PreprocessConfig, load_wav, preprocess, save_wav
from wordpipe.channel_sim import degrade, get_profile
from wordpipe.dispatch import CallSession, apply_action, export_log_jsonl, load_rules, route
from wordpipe.engines import (
    CorruptionModel,
    FusionConfig,
    MockEngine,
    SubprocessEngine,
    transcribe_hybrid,
)
from wordpipe.eval import compute_metrics, emit_report
from wordpipe.llm_match import (
    HttpLlmClient,
    MockLlmClient,
    PromptTemplate,
    load_exemplars,
)
from wordpipe.matchers import MatchDecision, TrigramEmbedder, Vocabulary
from wordpipe.pipeline import (
    LLM_MODES,
    MODES,
    PROMPT_MODE_BY_PIPELINE,
    PipelineConfig,
    load_manifest,
    results_to_jsonl,
    run_manifest,
)

logger = logging.getLogger(__name__)


class UserError(Exception):
    """Operator mistake: bad flags, config, or paths. Exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # reject unknown flags with exit code 1, not 2
        raise UserError(message)


DEFAULT_CONFIG = {
    "mode": "LS",
    "vocab": None,
    "context": "",
    "seed": 0,
    "dataset": "",
    "fusion": {"tau": 0.5},
    "preprocess": {
        "denoise_enabled": True,
        "gate_threshold_db": 8.0,
        "target_rms_dbfs": -20.0,
        "normalize_enabled": True,
    },
    "engines": {
        "primary": {
            "type": "mock",
            "engine_id": "primary-mock",
            "confidence": 0.8,
            "latency_ms": 5.0,
            "lookup": "labels",
            "corruption": {"rate": 0.0, "mode": "char_swap"},
        },
        "secondary": {
            "type": "mock",
            "engine_id": "secondary-mock",
            "confidence": 0.5,
            "latency_ms": 3.0,
            "lookup": "labels",
            "corruption": {"rate": 0.0, "mode": "char_swap"},
        },
    },
    "llm": {"type": "mock", "fixture": None, "replies": {}, "default": None},
    "prompt": {"exemplars_path": None, "k": 5, "instructions": None},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _set_dotted(config: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = config
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise UserError(f"override {dotted!r}: {key!r} is not an object")
    node[keys[-1]] = value


def load_config(path: str | None, overrides: list[str]) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            raw = json.loads(Path(path).read_text("utf-8"))
        except FileNotFoundError as exc:
            raise UserError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise UserError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise UserError(f"config {path} must be a JSON object")
        config = _deep_merge(config, raw)
    for item in overrides or []:
        if "=" not in item:
            raise UserError(f"--set expects key=value, got {item!r}")
        key, raw_value = item.split("=", 1)
        try:
            value = json.loads(raw_value)
        except json.JSONDecodeError:
            value = raw_value
        _set_dotted(config, key, value)
    if config["mode"] not in MODES:
        raise UserError(f"mode must be one of {MODES}, got {config['mode']!r}")
    return config


def build_vocab(config: dict) -> Vocabulary:
    spec = config.get("vocab")
    if spec is None:
        with resources.as_file(
            resources.files("wordpipe").joinpath("assets/speech_commands_30.txt")
        ) as path:
            return Vocabulary.from_file(path)
    if isinstance(spec, str):
        if not Path(spec).exists():
            raise UserError(f"vocabulary file not found: {spec}")
        return Vocabulary.from_file(spec)
    if isinstance(spec, list):
        return Vocabulary(spec)
    raise UserError("vocab must be a path or a list of words")


def _mock_lookup(spec, entries) -> dict:
    if spec == "labels":
        if entries is None:
            raise UserError("mock engine lookup 'labels' needs a manifest")
        return {e.id: e.label for e in entries}
    if isinstance(spec, str):
        if not Path(spec).exists():
            raise UserError(f"mock lookup file not found: {spec}")
        return json.loads(Path(spec).read_text("utf-8"))
    if isinstance(spec, dict):
        return spec
    raise UserError("mock engine lookup must be 'labels', a path, or an object")


def build_engine(spec: dict, entries, seed: int):
    kind = spec.get("type", "mock")
    if kind == "mock":
        confidence = float(spec.get("confidence", 0.8))
        table = {}
        for clip_id, value in _mock_lookup(spec.get("lookup", "labels"), entries).items():
            if isinstance(value, str):
                table[clip_id] = (value, confidence)
            else:
                table[clip_id] = (str(value[0]), float(value[1]))
        corruption = CorruptionModel(**spec.get("corruption", {}))
        return MockEngine(
            table,
            corruption=corruption,
            seed=seed,
            engine_id=spec.get("engine_id", "mock"),
            latency_ms=float(spec.get("latency_ms", 1.0)),
        )
    if kind == "subprocess":
        command = spec.get("command")
        if not command:
            raise UserError("subprocess engine needs a command list")
        return SubprocessEngine(
            command,
            timeout_ms=int(spec.get("timeout_ms", 30000)),
            pool_size=int(spec.get("pool_size", 1)),
            engine_id=spec.get("engine_id"),
        )
    raise UserError(f"unknown engine type {kind!r}")


def build_llm_client(config: dict):
    spec = config.get("llm", {})
    kind = spec.get("type", "mock")
    if kind == "mock":
        if spec.get("fixture"):
            return MockLlmClient.from_fixture(spec["fixture"])
        return MockLlmClient(replies=spec.get("replies") or {}, default=spec.get("default"))
    if kind == "http":
        env_name = spec.get("api_key_env", "LLM_API_KEY")
        api_key = os.environ.get(env_name) or spec.get("api_key")
        base_url = spec.get("base_url")
        model = spec.get("model")
        if not base_url or not model:
            raise UserError("http llm client needs base_url and model")
        return HttpLlmClient(
            base_url=base_url,
            model=model,
            api_key=api_key,
            timeout_ms=int(spec.get("timeout_ms", 30000)),
            max_attempts=int(spec.get("max_attempts", 3)),
            max_concurrency=int(spec.get("max_concurrency", 4)),
        )
    raise UserError(f"unknown llm client type {kind!r}")


def build_prompt_template(config: dict) -> PromptTemplate | None:
    mode = config["mode"]
    if mode not in LLM_MODES:
        return None
    prompt_mode = PROMPT_MODE_BY_PIPELINE[mode]
    spec = config.get("prompt", {})
    exemplars = ()
    if prompt_mode == "context_fewshot":
        exemplars = load_exemplars(spec.get("exemplars_path"), k=int(spec.get("k", 5)))
    return PromptTemplate(
        mode=prompt_mode,
        context=config.get("context", ""),
        instructions=spec.get("instructions"),
        exemplars=exemplars,
    )


def build_pipeline_config(config: dict, vocab: Vocabulary) -> PipelineConfig:
    try:
        fusion = FusionConfig(**config.get("fusion", {}))
        prep = PreprocessConfig(**config.get("preprocess", {}))
    except (TypeError, ValueError) as exc:
        raise UserError(f"bad config: {exc}") from exc
    return PipelineConfig(
        mode=config["mode"],
        vocab=vocab,
        fusion=fusion,
        preprocess=prep,
        context=config.get("context", ""),
        prompt=build_prompt_template(config),
    )


def _status(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True, ensure_ascii=False))


def _default_parallelism(mode: str) -> int:
    cores = os.cpu_count() or 1
    return min(cores, 8) if mode in LLM_MODES else cores


def cmd_run(args) -> int:
    config = load_config(args.config, args.set)
    if args.mode:
        config["mode"] = args.mode
    if args.seed is not None:
        config["seed"] = args.seed
    if config["mode"] not in MODES:
        raise UserError(f"mode must be one of {MODES}")
    if not args.manifest:
        raise UserError("run needs --manifest")

    entries = load_manifest(args.manifest)
    vocab = build_vocab(config)
    pipe_config = build_pipeline_config(config, vocab)
    seed = int(config.get("seed", 0))
    primary = build_engine(config["engines"]["primary"], entries, seed)
    secondary = build_engine(config["engines"]["secondary"], entries, seed)
    provider = TrigramEmbedder()
    llm_client = build_llm_client(config) if pipe_config.mode in LLM_MODES else None
    parallelism = args.parallelism or _default_parallelism(pipe_config.mode)

    results = run_manifest(
        entries,
        pipe_config,
        primary,
        secondary,
        provider=provider,
        llm_client=llm_client,
        parallelism=parallelism,
        audio_root=Path(args.manifest).parent,
    )
    errors = sum(1 for r in results if r.error)
    if errors == len(results):
        raise RuntimeError(f"all {errors} utterances failed; first: {results[0].error}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = args.dataset or config.get("dataset") or Path(args.manifest).stem
    (out_dir / "results.jsonl").write_text(results_to_jsonl(results), "utf-8")
    (out_dir / "timings.jsonl").write_text(results_to_jsonl(results, include_timings=True), "utf-8")
    summary = compute_metrics(results, dataset=dataset, mode=pipe_config.mode)
    (out_dir / "summary.csv").write_text(emit_report([summary], "csv"), "utf-8")
    (out_dir / "summary.md").write_text(emit_report([summary], "markdown"), "utf-8")

    _status(
        {
            "status": "ok",
            "command": "run",
            "mode": pipe_config.mode,
            "dataset": dataset,
            "utterances": len(results),
            "errors": errors,
            "accuracy": summary.accuracy,
            "wer": summary.wer,
            "results": str(out_dir / "results.jsonl"),
            "summary_csv": str(out_dir / "summary.csv"),
        }
    )
    return 0


def cmd_degrade(args) -> int:
    profile = get_profile(args.profile, path=args.profiles_file, seed=args.seed)
    entries = load_manifest(args.manifest)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    root = Path(args.manifest).parent

    manifest_lines = []
    platform = profile.name or args.profile
    for entry in entries:
        src = Path(entry.path)
        if not src.is_absolute():
            src = root / src
        clip = load_wav(src).with_id(entry.id)
        degraded = degrade(clip, profile)
        wav_name = f"{entry.id}.wav"
        save_wav(degraded, out_dir / wav_name)
        manifest_lines.append(
            json.dumps(
                {"id": entry.id, "path": wav_name, "label": entry.label, "platform": platform},
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    (out_dir / "manifest.jsonl").write_text("\n".join(manifest_lines) + "\n", "utf-8")
    _status(
        {
            "status": "ok",
            "command": "degrade",
            "profile": platform,
            "clips": len(entries),
            "manifest": str(out_dir / "manifest.jsonl"),
        }
    )
    return 0


def cmd_preprocess(args) -> int:
    config = load_config(args.config, args.set)
    prep = PreprocessConfig(**config.get("preprocess", {}))
    out = Path(args.out)
    if args.manifest:
        entries = load_manifest(args.manifest)
        root = Path(args.manifest).parent
        out.mkdir(parents=True, exist_ok=True)
        lines = []
        for entry in entries:
            src = Path(entry.path)
            if not src.is_absolute():
                src = root / src
            clip = load_wav(src)
            result = preprocess(clip, prep)
            save_wav(result.clip, out / f"{entry.id}.wav")
            lines.append(
                json.dumps(
                    {
                        "id": entry.id,
                        "path": f"{entry.id}.wav",
                        "label": entry.label,
                        "platform": entry.platform,
                    },
                    sort_keys=True,
                    ensure_ascii=False,
                )
            )
        (out / "manifest.jsonl").write_text("\n".join(lines) + "\n", "utf-8")
        _status({"status": "ok", "command": "preprocess", "clips": len(entries), "out": str(out)})
        return 0
    if not args.input:
        raise UserError("preprocess needs --in FILE or --manifest")
    clip = load_wav(args.input)
    result = preprocess(clip, prep)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_wav(result.clip, out)
    _status(
        {
            "status": "ok",
            "command": "preprocess",
            "clips": 1,
            "out": str(out),
            "clipped": result.clipped,
            "silent": result.silent,
        }
    )
    return 0


def cmd_transcribe(args) -> int:
    config = load_config(args.config, args.set)
    if args.seed is not None:
        config["seed"] = args.seed
    entries = load_manifest(args.manifest)
    seed = int(config.get("seed", 0))
    primary = build_engine(config["engines"]["primary"], entries, seed)
    secondary = build_engine(config["engines"]["secondary"], entries, seed)
    prep = PreprocessConfig(**config.get("preprocess", {}))
    fusion = FusionConfig(**config.get("fusion", {}))
    root = Path(args.manifest).parent

    lines = []
    for entry in entries:
        src = Path(entry.path)
        if not src.is_absolute():
            src = root / src
        clip = load_wav(src).with_id(entry.id)
        fused = transcribe_hybrid(preprocess(clip, prep).clip, primary, secondary, fusion)
        lines.append(
            json.dumps(
                {
                    "id": entry.id,
                    "label": entry.label,
                    "text": fused.text,
                    "confidence": fused.confidence,
                    "engine": fused.engine_id,
                    "degraded": fused.degraded,
                },
                sort_keys=True,
                ensure_ascii=False,
            )
        )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", "utf-8")
    _status({"status": "ok", "command": "transcribe", "utterances": len(lines), "out": str(out)})
    return 0


def cmd_match(args) -> int:
    config = load_config(args.config, args.set)
    if args.mode:
        config["mode"] = args.mode
    mode = config["mode"]
    if mode == "hybrid-raw":
        raise UserError("match needs a verification mode (CS, LS, LLM, CS+C, LLM+C, LLM+C+FS)")
    vocab = build_vocab(config)
    pipe_config = build_pipeline_config(config, vocab)
    from wordpipe.pipeline import _verify  # same dispatch as the full pipeline
    from wordpipe.engines import Transcription

    fused = Transcription(text=args.transcript, confidence=1.0, engine_id="cli")
    llm_client = build_llm_client(config) if mode in LLM_MODES else None
    decision = _verify(pipe_config, fused, TrigramEmbedder(), llm_client)
    _status(
        {
            "status": "ok",
            "command": "match",
            "mode": mode,
            "transcript": args.transcript,
            "word": decision.word,
            "score": decision.score,
            "fallback_used": decision.fallback_used,
        }
    )
    return 0


@dataclass
class _LoadedResult:
    utterance_id: str
    label: str | None
    decision: MatchDecision | None
    stage_latency_ms: dict
    total_ms: float
    error: str | None
    platform: str = ""


def _load_results_jsonl(path) -> list[_LoadedResult]:
    results = []
    for lineno, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise UserError(f"{path}:{lineno}: not valid JSON") from exc
        decision = None
        if obj.get("word") is not None:
            decision = MatchDecision(
                word=obj["word"],
                score=float(obj.get("score") or 0.0),
                mode=obj.get("mode") or "",
                raw_transcript=obj.get("raw_transcript") or "",
                fallback_used=bool(obj.get("fallback_used")),
                degraded=bool(obj.get("degraded")),
            )
        results.append(
            _LoadedResult(
                utterance_id=str(obj.get("id", lineno)),
                label=obj.get("label"),
                decision=decision,
                stage_latency_ms=obj.get("stage_latency_ms") or {},
                total_ms=float(obj.get("total_ms") or 0.0),
                error=obj.get("error"),
                platform=str(obj.get("platform") or ""),
            )
        )
    if not results:
        raise UserError(f"{path}: no results")
    return results


# Decision-mode strings back to the pipeline's canonical mode labels.
_MODE_LABELS = {
    "hybrid-raw": "hybrid-raw",
    "cosine": "CS",
    "levenshtein": "LS",
    "llm": "LLM",
    "cosine+context": "CS+C",
    "llm+context": "LLM+C",
    "llm+context+fewshot": "LLM+C+FS",
}


def _dataset_label(path: Path, rows: list) -> str:
    platforms = {r.platform for r in rows if getattr(r, "platform", "")}
    if len(platforms) == 1:
        return platforms.pop()
    stem = path.stem
    if stem in ("results", "timings") and path.parent.name:
        return path.parent.name
    return stem


def cmd_report(args) -> int:
    summaries = []
    for raw_path in args.results:
        path = Path(raw_path)
        loaded = _load_results_jsonl(path)
        by_mode: dict[str, list[_LoadedResult]] = {}
        for row in loaded:
            mode = row.decision.mode if row.decision else ""
            by_mode.setdefault(mode, []).append(row)
        dataset = _dataset_label(path, loaded)
        for mode, rows in sorted(by_mode.items()):
            summaries.append(
                compute_metrics(rows, dataset=dataset, mode=_MODE_LABELS.get(mode, mode))
            )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    md_path = out_dir / "report.md"
    csv_path.write_text(emit_report(summaries, "csv"), "utf-8")
    md_path.write_text(emit_report(summaries, "markdown"), "utf-8")
    if args.format == "json":
        (out_dir / "report.json").write_text(emit_report(summaries, "json"), "utf-8")
    _status(
        {
            "status": "ok",
            "command": "report",
            "rows": len(summaries),
            "csv": str(csv_path),
            "markdown": str(md_path),
        }
    )
    return 0


def cmd_dispatch_sim(args) -> int:
    rules = load_rules(args.rules)
    loaded = _load_results_jsonl(args.results)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    action_counts = {"blind_transfer": 0, "alert": 0, "none": 0}
    chunks = []
    for row in loaded:
        if row.decision is None:
            continue
        session = CallSession(f"sess-{row.utterance_id}")
        session.ring()
        session.answer()
        action = route(row.decision, rules)
        apply_action(session, action)
        if session.state in ("transferred", "alerted"):
            session.end()
        if action is None:
            action_counts["none"] += 1
        elif action.__class__.__name__ == "BlindTransfer":
            action_counts["blind_transfer"] += 1
        else:
            action_counts["alert"] += 1
        chunks.append(export_log_jsonl(session))
    out.write_text("".join(chunks), "utf-8")
    _status(
        {
            "status": "ok",
            "command": "dispatch-sim",
            "sessions": len(chunks),
            "actions": action_counts,
            "out": str(out),
        }
    )
    return 0


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")


def build_parser() -> _Parser:
    parser = _Parser(prog="wordpipe", description=__doc__)
    parser.add_argument("--verbose", "-v", action="store_true")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run = subparsers.add_parser("run", parents=[], help="run one dataset x mode experiment")
    _add_common(run)
    run.add_argument("--manifest", required=True)
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--out", required=True)
    run.add_argument("--dataset", default="")
    run.add_argument("--seed", type=int)
    run.add_argument("--parallelism", type=int)
    run.set_defaults(handler=cmd_run)

    deg = subparsers.add_parser("degrade", help="simulate a platform channel over a manifest")
    deg.add_argument("--manifest", required=True)
    deg.add_argument("--profile", required=True)
    deg.add_argument("--profiles-file", dest="profiles_file")
    deg.add_argument("--out", required=True)
    deg.add_argument("--seed", type=int, default=0)
    deg.set_defaults(handler=cmd_degrade)

    pre = subparsers.add_parser("preprocess", help="denoise + normalize wav files")
    _add_common(pre)
    pre.add_argument("--in", dest="input")
    pre.add_argument("--manifest")
    pre.add_argument("--out", required=True)
    pre.set_defaults(handler=cmd_preprocess)

    trans = subparsers.add_parser("transcribe", help="hybrid transcription without verification")
    _add_common(trans)
    trans.add_argument("--manifest", required=True)
    trans.add_argument("--out", required=True)
    trans.add_argument("--seed", type=int)
    trans.set_defaults(handler=cmd_transcribe)

    match = subparsers.add_parser("match", help="match one transcript against the vocabulary")
    _add_common(match)
    match.add_argument("--transcript", required=True)
    match.add_argument("--mode", choices=[m for m in MODES if m != "hybrid-raw"])
    match.set_defaults(handler=cmd_match)

    rep = subparsers.add_parser("report", help="aggregate results files into summary tables")
    rep.add_argument("--results", nargs="+", required=True)
    rep.add_argument("--out", required=True)
    rep.add_argument("--format", choices=["tables", "json"], default="tables")
    rep.set_defaults(handler=cmd_report)

    disp = subparsers.add_parser("dispatch-sim", help="route decisions through call sessions")
    disp.add_argument("--results", required=True)
    disp.add_argument("--rules", required=True)
    disp.add_argument("--out", required=True)
    disp.set_defaults(handler=cmd_dispatch_sim)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            stream=sys.stderr,
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.handler(args)
    except UserError as exc:
        _status({"status": "error", "error": str(exc), "kind": "user"})
        return 1
    except Exception as exc:  # runtime failure
        logger.exception("runtime failure")
        _status({"status": "error", "error": f"{type(exc).__name__}: {exc}", "kind": "runtime"})
        return 2


if __name__ == "__main__":
    sys.exit(main())
