"""Belief-state prediction: prompt construction and response parsing.

The prompt concatenates the retrieved examples, extends the slot vocabulary
to the target domain with per-slot descriptions, and ends with the test
turn's one-exchange history and a trailing "label:" for the model to fill.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Collection, Sequence

from .corpus import (
    KNOWN_SLOTS,
    BeliefState,
    SlotDescription,
    SlotName,
    TestInstance,
    domain_slots,
    normalize_value,
)
from .errors import MissingDescriptionError, ParseError, PromptTooLongError
from .llmclient import DEFAULT_TOKEN_BUDGET, LlmClient, estimate_tokens
from .retriever import RetrievedSet

_EXAMPLE_SEPARATOR = "-" * 78
_ANSWER_SEPARATOR = "-" * 20


@dataclass(frozen=True)
class Prediction:
    dialogue_id: str
    turn_index: int
    predicted_turn_state: BeliefState
    raw_response: str
    retrieved_method: str
    latency_ms: int = 0
    failed: bool = False
    dropped_slots: tuple[str, ...] = ()


def _history_line(prev_user: str | None, prev_system: str | None) -> str:
    if prev_user is None:
        return "None"
    return f"[user] {prev_user} [system] {prev_system or ''}".rstrip()


def build_dst_prompt(
    examples: RetrievedSet,
    descriptions: Sequence[SlotDescription],
    instance: TestInstance,
    target_domain: str,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> str:
    described = {d.slot for d in descriptions}
    missing = [s for s in domain_slots(target_domain) if s not in described]
    if missing:
        raise MissingDescriptionError(
            "no description for " + ", ".join(s.render() for s in missing)
        )
    example_slots = " ".join(
        s.render() for s in sorted(KNOWN_SLOTS) if s.domain != target_domain
    )
    lines = [
        "> This is example of dialogue state tracking, which extract useful information "
        "from user's dailgoue.",
        "> Don't guessing not mentioned information from user",
        "> example's slots are",
        f"> {example_slots}",
        "",
        _EXAMPLE_SEPARATOR,
    ]
    for position, cand in enumerate(examples.chosen, start=1):
        lines.append(f"# example {position}")
        lines.append("dialogue:")
        lines.append(f"prev : {_history_line(cand.prev_user, cand.prev_system)}")
        lines.append(f"curr : [user] {cand.utterance}")
        lines.append(f"label: {cand.label.render()}")
        lines.append("")
    if lines[-1] == "":
        lines.pop()
    lines += [
        _EXAMPLE_SEPARATOR,
        f"> End of Example. In this time, the slots are extended to {target_domain}.",
        "",
        "slots to be inference is",
        "",
    ]
    lines += [f"{d.slot.render()}: {d.description}" for d in descriptions]
    lines += [
        "",
        _ANSWER_SEPARATOR,
        "",
        "> now make the dialogue state tracking result",
        "> The answer must be in JSON format with brace, so that it can be parsed",
        "> if there is nothing to inference, the output shuold be not_mentioned",
        "> The answer can be don'tcare",
        "",
        f"prev : {_history_line(instance.prev_user, instance.prev_system)}",
        f"curr : [user] {instance.current_user}",
        "label:",
    ]
    prompt = "\n".join(lines)
    estimated = estimate_tokens(prompt)
    if estimated > token_budget:
        raise PromptTooLongError(estimated, token_budget)
    return prompt


def _split_brace_block(text: str) -> str:
    """Return the first balanced brace-delimited block, or raise ParseError."""
    start = text.find("{")
    if start < 0:
        raise ParseError("no brace-delimited object in response")
    depth = 0
    for position in range(start, len(text)):
        if text[position] == "{":
            depth += 1
        elif text[position] == "}":
            depth -= 1
            if depth == 0:
                return text[start + 1:position]
    raise ParseError("unbalanced braces in response")


def _split_pairs(body: str) -> list[str]:
    """Split on commas outside quotes. A quote ends only at a syntactic boundary,
    so apostrophes inside values (don'tcare) stay literal."""
    parts: list[str] = []
    buf: list[str] = []
    quote: str | None = None
    for position, ch in enumerate(body):
        if quote:
            if ch == quote:
                rest = body[position + 1:].lstrip()
                if not rest or rest[0] in ",:}":
                    quote = None
            buf.append(ch)
        elif ch in "\"'":
            quote = ch
            buf.append(ch)
        elif ch == ",":
            parts.append("".join(buf))
            buf = []
        else:
            buf.append(ch)
    if buf:
        parts.append("".join(buf))
    return [p for p in (part.strip() for part in parts) if p]


def _strip_quotes(text: str) -> str:
    text = text.strip()
    if len(text) >= 2 and text[0] in "\"'" and text[-1] == text[0]:
        return text[1:-1]
    return text


def extract_belief_state(
    text: str, vocabulary: Collection[SlotName] | None = None
) -> tuple[BeliefState, list[str]]:
    """Parse a predicted state plus the list of dropped (unknown/malformed) keys."""
    if vocabulary is None:
        vocabulary = KNOWN_SLOTS
    vocab = set(vocabulary)
    body = _split_brace_block(text)
    entries: dict[SlotName, object] = {}
    dropped: list[str] = []
    for pair in _split_pairs(body):
        key_part, sep, value_part = pair.partition(":")
        if not sep:
            dropped.append(pair.strip())
            continue
        key = _strip_quotes(key_part)
        try:
            name = SlotName.parse(key)
        except ValueError:
            dropped.append(key)
            continue
        if name not in vocab:
            dropped.append(name.render())
            continue
        value = normalize_value(name, _strip_quotes(value_part))
        if value is not None:
            entries[name] = value
    return BeliefState(entries), dropped


def parse_dst_response(text: str, vocabulary: Collection[SlotName] | None = None) -> BeliefState:
    """Extract the predicted turn-level state; not-mentioned slots are omitted."""
    state, _ = extract_belief_state(text, vocabulary)
    return state


def predict_turn(
    instance: TestInstance,
    examples: RetrievedSet,
    descriptions: Sequence[SlotDescription],
    target_domain: str,
    llm: LlmClient,
    retries: int = 2,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> Prediction:
    """Predict one turn's state. Exhausted retries yield an empty state flagged
    failed rather than aborting the run."""
    prompt = build_dst_prompt(examples, descriptions, instance, target_domain,
                              token_budget=token_budget)
    started = time.monotonic()
    last_response = ""
    for _ in range(retries + 1):
        response = llm.complete_text(prompt)
        last_response = response.text
        try:
            state, dropped = extract_belief_state(response.text)
        except ParseError:
            continue
        return Prediction(
            dialogue_id=instance.dialogue_id,
            turn_index=instance.turn_index,
            predicted_turn_state=state,
            raw_response=response.text,
            retrieved_method=examples.method,
            latency_ms=int((time.monotonic() - started) * 1000),
            dropped_slots=tuple(dropped),
        )
    return Prediction(
        dialogue_id=instance.dialogue_id,
        turn_index=instance.turn_index,
        predicted_turn_state=BeliefState.empty(),
        raw_response=last_response,
        retrieved_method=examples.method,
        latency_ms=int((time.monotonic() - started) * 1000),
        failed=True,
    )
