"""Dialogue corpora: domain types, normalization, loading, and slicing.

A corpus is immutable after load; every operation here is a pure function
over it. Belief states are maps from "domain-slot" names to canonical value
strings, where "dontcare" is a reserved value and absence means the slot was
never mentioned.
"""

from __future__ import annotations

import json
import os
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    EmptySelectionError,
    SchemaError,
    UnknownDomainError,
    ValidationError,
)

KNOWN_DOMAINS = ("attraction", "hotel", "restaurant", "taxi", "train")

# Canonical slot vocabulary, 30 slots over the five domains.
_SLOT_TOKENS = {
    "attraction": ("area", "name", "type"),
    "hotel": ("area", "day", "internet", "name", "parking", "people",
              "pricerange", "stars", "stay", "type"),
    "restaurant": ("area", "day", "food", "name", "people", "pricerange", "time"),
    "taxi": ("arrive", "departure", "destination", "leave"),
    "train": ("arrive", "day", "departure", "destination", "leave", "people"),
}

DONTCARE = "dontcare"

_NOT_MENTIONED = frozenset({"", "none", "not_mentioned", "not mentioned"})
_DONTCARE_FORMS = frozenset({"dontcare", "don'tcare", "don't care"})

CANONICAL_TABLE_ENV = "ICLDST_CANONICAL_TABLE"


@dataclass(frozen=True, order=True)
class SlotName:
    """A slot identifier, rendered as "domain-slot" (e.g. "taxi-leave")."""

    domain: str
    slot: str

    def __post_init__(self):
        if not self.domain or not self.slot:
            raise ValueError(f"empty domain or slot in {self.domain!r}-{self.slot!r}")

    def render(self) -> str:
        return f"{self.domain}-{self.slot}"

    @classmethod
    def parse(cls, text: str) -> "SlotName":
        """Parse "domain-slot". Splits on the first hyphen; raises ValueError if malformed."""
        domain, sep, slot = text.strip().lower().partition("-")
        if not sep or not domain.strip() or not slot.strip():
            raise ValueError(f"malformed slot name {text!r}")
        return cls(domain.strip(), slot.strip())

    def is_known(self) -> bool:
        return self in KNOWN_SLOTS


KNOWN_SLOTS: tuple[SlotName, ...] = tuple(
    SlotName(d, s) for d in KNOWN_DOMAINS for s in _SLOT_TOKENS[d]
)
_KNOWN_SLOT_SET = frozenset(KNOWN_SLOTS)


def domain_slots(domain: str) -> tuple[SlotName, ...]:
    """Vocabulary slots belonging to one domain, sorted by slot token."""
    return tuple(s for s in KNOWN_SLOTS if s.domain == domain)


@dataclass(frozen=True, order=True)
class SlotValue:
    """A slot filler: a canonical string, with "dontcare" reserved."""

    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("SlotValue text must be non-empty")

    @classmethod
    def dontcare(cls) -> "SlotValue":
        return cls(DONTCARE)

    @property
    def is_dontcare(self) -> bool:
        return self.text == DONTCARE


@dataclass(frozen=True)
class BeliefState:
    """Slot -> value map. Absent slot means "not mentioned"."""

    entries: Mapping[SlotName, SlotValue] = field(default_factory=dict)

    @classmethod
    def empty(cls) -> "BeliefState":
        return cls({})

    @classmethod
    def of(cls, pairs: Mapping[str, str]) -> "BeliefState":
        """Build from raw {"domain-slot": "value"} strings, normalizing values."""
        entries: dict[SlotName, SlotValue] = {}
        for raw_name, raw_value in pairs.items():
            name = SlotName.parse(raw_name)
            value = normalize_value(name, raw_value)
            if value is not None:
                entries[name] = value
        return cls(entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __bool__(self) -> bool:
        return bool(self.entries)

    def __iter__(self) -> Iterator[SlotName]:
        return iter(self.entries)

    def get(self, name: SlotName) -> SlotValue | None:
        return self.entries.get(name)

    def domains(self) -> frozenset[str]:
        return frozenset(name.domain for name in self.entries)

    def restrict(self, domain: str) -> "BeliefState":
        return BeliefState({n: v for n, v in self.entries.items() if n.domain == domain})

    def render(self) -> str:
        """Comma-joined "slot : value" pairs sorted by slot name; "None" when empty."""
        if not self.entries:
            return "None"
        parts = [f"{n.render()} : {v.text}" for n, v in sorted(self.entries.items())]
        return ", ".join(parts)

    def to_dict(self) -> dict[str, str]:
        return {n.render(): v.text for n, v in sorted(self.entries.items())}


@dataclass(frozen=True)
class Turn:
    index: int
    user_utterance: str
    system_utterance: str
    gold_turn_state: BeliefState
    gold_accumulated: BeliefState


@dataclass(frozen=True)
class Dialogue:
    id: str
    turns: tuple[Turn, ...]
    domains: frozenset[str]


@dataclass(frozen=True)
class TestInstance:
    """One evaluation unit: a turn with its single-exchange history."""

    __test__ = False  # domain type, not a pytest class

    dialogue_id: str
    turn_index: int
    current_user: str
    prev_user: str | None
    prev_system: str | None
    gold_turn_state: BeliefState
    gold_accumulated: BeliefState


@dataclass(frozen=True)
class Corpus:
    dialogues: tuple[Dialogue, ...]
    domain_set: frozenset[str]
    normalization_table_version: str


@dataclass(frozen=True)
class PoolEntry:
    """A candidate-able turn from the held-out pool, with its history and label."""

    doc_id: tuple[str, int]
    utterance: str
    label: BeliefState
    prev_user: str | None
    prev_system: str | None


# ---------------------------------------------------------------------------
# value normalization
# ---------------------------------------------------------------------------

_WS_RE = re.compile(r"\s+")
_EDGE_PUNCT = string.punctuation + string.whitespace


class CanonicalTable:
    """variant -> canonical value mapping loaded from a versioned TSV file."""

    def __init__(self, mapping: Mapping[str, str], version: str):
        self.mapping = dict(mapping)
        self.version = version

    @classmethod
    def load(cls, path: str | Path | None = None) -> "CanonicalTable":
        """Load from `path`, the env override, or the shipped default, in that order."""
        if path is None:
            path = os.environ.get(CANONICAL_TABLE_ENV)
        if path is None:
            text = resources.files("icldst.data").joinpath("canonical.tsv").read_text("utf-8")
        else:
            text = Path(path).read_text("utf-8")
        mapping: dict[str, str] = {}
        version = "unversioned"
        for line in text.splitlines():
            if line.startswith("#"):
                m = re.search(r"version\s*:\s*(\S+)", line)
                if m:
                    version = m.group(1)
                continue
            if not line.strip():
                continue
            variant, sep, canonical = line.partition("\t")
            if not sep:
                raise SchemaError(f"canonicalization table line is not tab-separated: {line!r}")
            mapping[variant.strip()] = canonical.strip()
        return cls(mapping, version)


_DEFAULT_TABLE: CanonicalTable | None = None


def default_table() -> CanonicalTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = CanonicalTable.load()
    return _DEFAULT_TABLE


def normalize_value(slot: SlotName, raw: str, table: CanonicalTable | None = None) -> SlotValue | None:
    """Canonicalize a raw value string.

    Returns None for the "not mentioned" forms, SlotValue.dontcare() for the
    dontcare forms, otherwise a Concrete canonical value. Total: never raises.
    The slot is accepted so callers can pass context; the shipped table is global.
    """
    del slot
    if table is None:
        table = default_table()
    text = _WS_RE.sub(" ", str(raw).casefold()).strip().strip(_EDGE_PUNCT)
    # Table lookup to a fixed point; bounded to survive accidental cycles.
    for _ in range(10):
        mapped = table.mapping.get(text)
        if mapped is None or mapped == text:
            break
        text = mapped
    if text in _NOT_MENTIONED:
        return None
    if text in _DONTCARE_FORMS:
        return SlotValue.dontcare()
    return SlotValue(text)


# ---------------------------------------------------------------------------
# state accumulation
# ---------------------------------------------------------------------------

def accumulate_states(turn_states: Sequence[BeliefState]) -> BeliefState:
    """Union of turn-level states; a later value for a slot overwrites an earlier one."""
    merged: dict[SlotName, SlotValue] = {}
    for state in turn_states:
        merged.update(state.entries)
    return BeliefState(merged)


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------

def load_corpus(
    path: str | Path,
    format: str,
    table: CanonicalTable | None = None,
    include_ids: Iterable[str] | None = None,
) -> Corpus:
    """Load and validate a corpus file.

    `format` is "jsonl-simple" or "multiwoz-2.1". `include_ids`, when given,
    restricts loading to those dialogue ids (e.g. a split list).
    """
    if table is None:
        table = default_table()
    wanted = set(include_ids) if include_ids is not None else None
    if format == "jsonl-simple":
        dialogues = _load_jsonl_simple(Path(path), table, wanted)
    elif format == "multiwoz-2.1":
        dialogues = _load_multiwoz(Path(path), table, wanted)
    else:
        raise SchemaError(f"unknown corpus format {format!r}")
    seen: set[str] = set()
    for d in dialogues:
        if d.id in seen:
            raise SchemaError("duplicate dialogue id", dialogue_id=d.id)
        seen.add(d.id)
    domain_set = frozenset(dom for d in dialogues for dom in d.domains)
    return Corpus(tuple(dialogues), domain_set, table.version)


def _finish_dialogue(
    dialogue_id: str,
    rows: Sequence[tuple[str, str, BeliefState, BeliefState | None]],
    table: CanonicalTable,
) -> Dialogue:
    """Assemble turns, computing accumulated states and checking any declared ones."""
    del table
    turns: list[Turn] = []
    running: list[BeliefState] = []
    for i, (user, system, turn_state, declared_acc) in enumerate(rows, start=1):
        running.append(turn_state)
        accumulated = accumulate_states(running)
        if declared_acc is not None and declared_acc.entries != accumulated.entries:
            raise ValidationError(
                "declared accumulated state does not match accumulation of turn states",
                dialogue_id=dialogue_id,
                turn_index=i,
            )
        turns.append(Turn(i, user, system, turn_state, accumulated))
    if not turns:
        raise SchemaError("dialogue has no turns", dialogue_id=dialogue_id)
    domains = frozenset(dom for t in turns for dom in t.gold_turn_state.domains())
    return Dialogue(dialogue_id, tuple(turns), domains)


def _load_jsonl_simple(path: Path, table: CanonicalTable, wanted: set[str] | None) -> list[Dialogue]:
    dialogues = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"line {lineno} is not valid JSON: {exc}") from exc
            if not isinstance(record, dict) or "id" not in record or "turns" not in record:
                raise SchemaError(f"line {lineno} must be an object with 'id' and 'turns'")
            dialogue_id = str(record["id"])
            if wanted is not None and dialogue_id not in wanted:
                continue
            rows = []
            for t, turn in enumerate(record["turns"], start=1):
                if not isinstance(turn, dict) or "user" not in turn:
                    raise SchemaError("turn must be an object with 'user'",
                                      dialogue_id=dialogue_id, turn_index=t)
                try:
                    state = BeliefState.of(turn.get("state", {}) or {})
                    declared = turn.get("accumulated")
                    declared_state = BeliefState.of(declared) if declared is not None else None
                except ValueError as exc:
                    raise SchemaError(str(exc), dialogue_id=dialogue_id, turn_index=t) from exc
                rows.append((str(turn["user"]), str(turn.get("system", "")), state, declared_state))
            dialogues.append(_finish_dialogue(dialogue_id, rows, table))
    return dialogues


# Raw MultiWOZ slot names -> canonical tokens.
_MULTIWOZ_SLOT_MAP = {
    "leaveat": "leave",
    "arriveby": "arrive",
    "book day": "day",
    "book people": "people",
    "book stay": "stay",
    "book time": "time",
}


def _multiwoz_state(metadata: Mapping, table: CanonicalTable) -> BeliefState:
    """Flatten one turn's metadata into a canonical belief state over the known domains."""
    entries: dict[SlotName, SlotValue] = {}
    for domain in KNOWN_DOMAINS:
        section = metadata.get(domain)
        if not isinstance(section, Mapping):
            continue
        flat: dict[str, object] = {}
        for raw_slot, raw_value in (section.get("semi") or {}).items():
            flat[str(raw_slot).lower()] = raw_value
        for raw_slot, raw_value in (section.get("book") or {}).items():
            if str(raw_slot).lower() == "booked":
                continue
            flat[f"book {str(raw_slot).lower()}"] = raw_value
        for raw_slot, raw_value in flat.items():
            token = _MULTIWOZ_SLOT_MAP.get(raw_slot, raw_slot)
            name = SlotName(domain, token)
            if name not in _KNOWN_SLOT_SET:
                continue
            if isinstance(raw_value, list):
                raw_value = raw_value[0] if raw_value else ""
            value = normalize_value(name, str(raw_value), table)
            if value is not None:
                entries[name] = value
    return BeliefState(entries)


def _load_multiwoz(path: Path, table: CanonicalTable, wanted: set[str] | None) -> list[Dialogue]:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SchemaError("multiwoz-2.1 file must be a JSON object keyed by dialogue id")
    dialogues = []
    for dialogue_id, payload in data.items():
        if wanted is not None and dialogue_id not in wanted:
            continue
        log = payload.get("log")
        if not isinstance(log, list) or not log:
            raise SchemaError("missing or empty 'log'", dialogue_id=dialogue_id)
        if len(log) % 2 != 0:
            raise SchemaError("log does not alternate user/system entries",
                              dialogue_id=dialogue_id)
        rows = []
        prev_acc = BeliefState.empty()
        for t in range(len(log) // 2):
            user_entry, system_entry = log[2 * t], log[2 * t + 1]
            try:
                user, system = str(user_entry["text"]), str(system_entry["text"])
            except (KeyError, TypeError) as exc:
                raise SchemaError("log entry lacks 'text'",
                                  dialogue_id=dialogue_id, turn_index=t + 1) from exc
            # Cumulative annotation rides on the system entry; diff it to get b_t.
            accumulated = _multiwoz_state(system_entry.get("metadata") or {}, table)
            turn_state = BeliefState({
                n: v for n, v in accumulated.entries.items() if prev_acc.get(n) != v
            })
            rebuilt = accumulate_states([prev_acc, turn_state])
            if rebuilt.entries != accumulated.entries:
                raise ValidationError(
                    "cumulative annotation removes a slot; turn states cannot express deletion",
                    dialogue_id=dialogue_id,
                    turn_index=t + 1,
                )
            rows.append((user, system, turn_state, None))
            prev_acc = accumulated
        dialogues.append(_finish_dialogue(dialogue_id, rows, table))
    return dialogues


# ---------------------------------------------------------------------------
# slicing
# ---------------------------------------------------------------------------

def _check_domain(corpus: Corpus, target: str) -> None:
    if target not in KNOWN_DOMAINS and target not in corpus.domain_set:
        raise UnknownDomainError(f"unknown domain {target!r}")


def exclude_domain(corpus: Corpus, target: str) -> Corpus:
    """Drop every dialogue that touches the target domain (dialogue-level exclusion)."""
    _check_domain(corpus, target)
    kept = tuple(d for d in corpus.dialogues if target not in d.domains)
    domain_set = frozenset(dom for d in kept for dom in d.domains)
    return Corpus(kept, domain_set, corpus.normalization_table_version)


def build_test_instances(corpus: Corpus, target: str) -> list[TestInstance]:
    """One instance per turn of every dialogue whose domains include the target."""
    _check_domain(corpus, target)
    instances: list[TestInstance] = []
    for dialogue in corpus.dialogues:
        if target not in dialogue.domains:
            continue
        for turn in dialogue.turns:
            prev = dialogue.turns[turn.index - 2] if turn.index > 1 else None
            instances.append(TestInstance(
                dialogue_id=dialogue.id,
                turn_index=turn.index,
                current_user=turn.user_utterance,
                prev_user=prev.user_utterance if prev else None,
                prev_system=prev.system_utterance if prev else None,
                gold_turn_state=turn.gold_turn_state,
                gold_accumulated=turn.gold_accumulated,
            ))
    if not instances:
        raise EmptySelectionError(f"no dialogue contains domain {target!r}")
    return instances


def build_candidate_pool(corpus: Corpus) -> list[PoolEntry]:
    """Every turn of every dialogue as a retrievable example with its history."""
    pool: list[PoolEntry] = []
    for dialogue in corpus.dialogues:
        for turn in dialogue.turns:
            prev = dialogue.turns[turn.index - 2] if turn.index > 1 else None
            pool.append(PoolEntry(
                doc_id=(dialogue.id, turn.index),
                utterance=turn.user_utterance,
                label=turn.gold_turn_state,
                prev_user=prev.user_utterance if prev else None,
                prev_system=prev.system_utterance if prev else None,
            ))
    return pool


# ---------------------------------------------------------------------------
# slot descriptions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SlotDescription:
    slot: SlotName
    description: str

    def __post_init__(self):
        if not self.description:
            raise ValueError(f"empty description for {self.slot.render()}")


def load_slot_descriptions(path: str | Path | None = None) -> list[SlotDescription]:
    """Parse "domain-slot: description" lines; defaults to the shipped set."""
    if path is None:
        text = resources.files("icldst.data").joinpath("slot_descriptions.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    out: list[SlotDescription] = []
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        name_part, sep, description = line.partition(":")
        if not sep:
            raise SchemaError(f"slot description line lacks a colon: {line!r}")
        out.append(SlotDescription(SlotName.parse(name_part), description.strip()))
    return out
