"""Intent routing: matched words to telephony-style actions.

A rule table maps vocabulary words to blind transfers or alerts, optionally
gated on the match score. Call signaling is simulated by a small session
state machine with an append-only event log; a real SIP stack would attach
at the apply_action seam.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Union

from wordpipe.matchers import MatchDecision, fold

STATES = ("idle", "ringing", "connected", "transferring", "transferred", "alerted", "ended")

# event -> (from_state, to_state); the only legal moves.
TRANSITIONS: dict[str, tuple[str, str]] = {
    "ring": ("idle", "ringing"),
    "answer": ("ringing", "connected"),
    "transfer_initiated": ("connected", "transferring"),
    "transfer_completed": ("transferring", "transferred"),
    "alert_raised": ("connected", "alerted"),
    "end_after_transfer": ("transferred", "ended"),
    "end_after_alert": ("alerted", "ended"),
}

ALERT_LEVELS = ("emergency", "routine")


class IllegalTransition(RuntimeError):
    """Requested state change is not an edge of the session state machine."""


@dataclass(frozen=True)
class BlindTransfer:
    target: str

    def __post_init__(self) -> None:
        if not self.target:
            raise ValueError("blind transfer needs a non-empty target extension")


@dataclass(frozen=True)
class Alert:
    level: str

    def __post_init__(self) -> None:
        if self.level not in ALERT_LEVELS:
            raise ValueError(f"alert level must be one of {ALERT_LEVELS}, got {self.level!r}")


Action = Union[BlindTransfer, Alert, None]


@dataclass(frozen=True)
class IntentRule:
    word: str
    action: Action
    min_score: float | None = None


def load_rules(path) -> dict[str, IntentRule]:
    """Rules from a JSON array of {word, action, target?, level?, min_score?}."""
    raw = json.loads(Path(path).read_text("utf-8"))
    rules: dict[str, IntentRule] = {}
    for entry in raw:
        word = fold(entry["word"])
        if word in rules:
            raise ValueError(f"duplicate rule for word {word!r}")
        kind = entry.get("action", "none")
        if kind == "blind_transfer":
            action: Action = BlindTransfer(target=entry["target"])
        elif kind == "alert":
            action = Alert(level=entry.get("level", "routine"))
        elif kind == "none":
            action = None
        else:
            raise ValueError(f"unknown action {kind!r} for word {word!r}")
        rules[word] = IntentRule(word=word, action=action, min_score=entry.get("min_score"))
    return rules


def _gate_passes(decision: MatchDecision, threshold: float | None) -> bool:
    if threshold is None:
        return True
    if decision.mode == "levenshtein":
        return decision.score <= threshold  # edit distance: lower is better
    return decision.score >= threshold


def route(decision: MatchDecision, rules: Mapping[str, IntentRule]) -> Action:
    """Exact word lookup with an optional per-rule score gate; None otherwise."""
    rule = rules.get(fold(decision.word))
    if rule is None or rule.action is None:
        return None
    if not _gate_passes(decision, rule.min_score):
        return None
    return rule.action


class CallSession:
    """Simulated call leg: idle -> ringing -> connected -> action -> ended.

    The event log is append-only; replaying it reconstructs the final state.
    """

    def __init__(self, session_id: str, clock=time.time):
        self.session_id = session_id
        self.state = "idle"
        self.events: list[tuple[float, str]] = []
        self._clock = clock

    def _log(self, event: str) -> None:
        self.events.append((self._clock(), event))

    def advance(self, event: str) -> "CallSession":
        """Apply one named transition; raises IllegalTransition otherwise."""
        edge = TRANSITIONS.get(event)
        if edge is None:
            raise IllegalTransition(f"unknown event {event!r}")
        src, dst = edge
        if self.state != src:
            raise IllegalTransition(f"event {event!r} needs state {src!r}, session is {self.state!r}")
        self.state = dst
        self._log(event)
        return self

    def ring(self) -> "CallSession":
        return self.advance("ring")

    def answer(self) -> "CallSession":
        return self.advance("answer")

    def end(self) -> "CallSession":
        if self.state == "transferred":
            return self.advance("end_after_transfer")
        if self.state == "alerted":
            return self.advance("end_after_alert")
        raise IllegalTransition(f"cannot end a session in state {self.state!r}")


def apply_action(session: CallSession, action: Action) -> CallSession:
    """Drive the session through one routed action.

    Transfers and alerts require a connected session; None logs a no-op and
    leaves the state unchanged.
    """
    if action is None:
        session._log("noop")
        return session
    if session.state != "connected":
        raise IllegalTransition(
            f"action {action!r} needs a connected session, got {session.state!r}"
        )
    if isinstance(action, BlindTransfer):
        session.advance("transfer_initiated")
        session.advance("transfer_completed")
        return session
    if isinstance(action, Alert):
        session.advance("alert_raised")
        return session
    raise TypeError(f"unknown action type {type(action)!r}")


def replay(session_id: str, events: Iterable[str]) -> CallSession:
    """Rebuild a session from logged event names."""
    session = CallSession(session_id)
    for event in events:
        if event == "noop":
            session._log(event)
        else:
            session.advance(event)
    return session


def export_log_jsonl(session: CallSession) -> str:
    """Event log as JSON-lines: one {ts, session_id, event} object per line."""
    lines = [
        json.dumps({"ts": ts, "session_id": session.session_id, "event": event}, sort_keys=True)
        for ts, event in session.events
    ]
    return "\n".join(lines) + ("\n" if lines else "")
