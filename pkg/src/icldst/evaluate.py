"""Domain-restricted joint goal accuracy, error taxonomy, and report export.

A turn is correct when its accumulated predicted state, restricted to the
target domain, exactly matches the restricted gold accumulated state. Every
mismatched slot is classified exactly once: missed gold slot (ignore),
predicted slot absent from gold (spurious), or right slot wrong value (wrong).
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import BeliefState, SlotName, SlotValue, accumulate_states
from .dst import Prediction
from .errors import (
    EmptyEvaluationError,
    NonContiguousTurnsError,
    UnsupportedFormatError,
)
from .retriever import RetrievedSet

REPORT_SCHEMA_VERSION = "1"
COMPARISON_MODE = "accumulated-target-restricted"


class ErrorKind(enum.Enum):
    IGNORE = "ignore"
    SPURIOUS = "spurious"
    WRONG = "wrong"


@dataclass(frozen=True)
class SlotError:
    slot: SlotName
    kind: ErrorKind
    predicted: SlotValue | None
    gold: SlotValue | None


@dataclass(frozen=True)
class TurnJudgement:
    dialogue_id: str
    turn_index: int
    correct: bool
    errors: tuple[SlotError, ...]


@dataclass(frozen=True)
class EvalReport:
    target_domain: str
    n_turns: int
    domain_jga: float
    error_counts: Mapping[str, int]
    domain_influence: Mapping[str, int]
    config: Mapping
    judgements: tuple[TurnJudgement, ...]
    n_failed_predictions: int = 0
    n_dropped_slots: int = 0
    schema_version: str = REPORT_SCHEMA_VERSION
    comparison_mode: str = COMPARISON_MODE


def judge_turn(pred_accumulated: BeliefState, gold_accumulated: BeliefState,
               target: str, dialogue_id: str = "", turn_index: int = 0) -> TurnJudgement:
    """Compare target-restricted accumulated states as exact sets."""
    pred = pred_accumulated.restrict(target).entries
    gold = gold_accumulated.restrict(target).entries
    errors: list[SlotError] = []
    for slot in sorted(set(pred) | set(gold)):
        p, g = pred.get(slot), gold.get(slot)
        if p == g:
            continue
        if p is None:
            errors.append(SlotError(slot, ErrorKind.IGNORE, None, g))
        elif g is None:
            errors.append(SlotError(slot, ErrorKind.SPURIOUS, p, None))
        else:
            errors.append(SlotError(slot, ErrorKind.WRONG, p, g))
    return TurnJudgement(dialogue_id, turn_index, correct=not errors, errors=tuple(errors))


def domain_jga(judgements: Sequence[TurnJudgement]) -> float:
    if not judgements:
        raise EmptyEvaluationError("no judgements to aggregate")
    return sum(1 for j in judgements if j.correct) / len(judgements)


def error_counts(judgements: Iterable[TurnJudgement]) -> dict[str, int]:
    counts = {kind.value: 0 for kind in ErrorKind}
    for judgement in judgements:
        for err in judgement.errors:
            counts[err.kind.value] += 1
    return counts


def accumulate_predictions(preds: Sequence[Prediction]) -> list[tuple[int, BeliefState]]:
    """Running accumulation of one dialogue's predicted turn states."""
    indices = [p.turn_index for p in preds]
    if indices and indices != list(range(indices[0], indices[0] + len(indices))):
        raise NonContiguousTurnsError(f"turn indices {indices} are not contiguous ascending")
    out: list[tuple[int, BeliefState]] = []
    running: list[BeliefState] = []
    for pred in preds:
        running.append(pred.predicted_turn_state)
        out.append((pred.turn_index, accumulate_states(running)))
    return out


def domain_influence(retrieved: Iterable[RetrievedSet]) -> dict[str, int]:
    """Count, per domain, how many chosen examples carry that domain in their label."""
    counts: dict[str, int] = {}
    for retrieved_set in retrieved:
        for cand in retrieved_set.chosen:
            for domain in sorted(cand.label.domains()):
                counts[domain] = counts.get(domain, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _judgement_to_dict(j: TurnJudgement) -> dict:
    return {
        "dialogue_id": j.dialogue_id,
        "turn_index": j.turn_index,
        "correct": j.correct,
        "errors": [
            {
                "slot": e.slot.render(),
                "kind": e.kind.value,
                "predicted": e.predicted.text if e.predicted else None,
                "gold": e.gold.text if e.gold else None,
            }
            for e in j.errors
        ],
    }


def _judgement_from_dict(d: Mapping) -> TurnJudgement:
    errors = tuple(
        SlotError(
            SlotName.parse(e["slot"]),
            ErrorKind(e["kind"]),
            SlotValue(e["predicted"]) if e.get("predicted") else None,
            SlotValue(e["gold"]) if e.get("gold") else None,
        )
        for e in d["errors"]
    )
    return TurnJudgement(d["dialogue_id"], d["turn_index"], d["correct"], errors)


def report_to_dict(report: EvalReport) -> dict:
    return {
        "schema_version": report.schema_version,
        "comparison_mode": report.comparison_mode,
        "target_domain": report.target_domain,
        "n_turns": report.n_turns,
        "domain_jga": report.domain_jga,
        "error_counts": dict(report.error_counts),
        "domain_influence": dict(report.domain_influence),
        "n_failed_predictions": report.n_failed_predictions,
        "n_dropped_slots": report.n_dropped_slots,
        "config": dict(report.config),
        "judgements": [_judgement_to_dict(j) for j in report.judgements],
    }


def report_from_dict(d: Mapping) -> EvalReport:
    return EvalReport(
        target_domain=d["target_domain"],
        n_turns=d["n_turns"],
        domain_jga=d["domain_jga"],
        error_counts=dict(d["error_counts"]),
        domain_influence=dict(d["domain_influence"]),
        config=dict(d["config"]),
        judgements=tuple(_judgement_from_dict(j) for j in d["judgements"]),
        n_failed_predictions=d.get("n_failed_predictions", 0),
        n_dropped_slots=d.get("n_dropped_slots", 0),
        schema_version=d.get("schema_version", REPORT_SCHEMA_VERSION),
        comparison_mode=d.get("comparison_mode", COMPARISON_MODE),
    )


def _markdown_summary(report: EvalReport) -> str:
    header = f"| method | {report.target_domain} | avg |"
    rule = "|---|---|---|"
    method = report.config.get("method", "run")
    value = f"{100 * report.domain_jga:.1f}"
    lines = [
        f"# Evaluation report: {report.target_domain}",
        "",
        f"- turns: {report.n_turns}",
        f"- domain JGA: {report.domain_jga:.4f}",
        f"- errors: ignore={report.error_counts.get('ignore', 0)} "
        f"spurious={report.error_counts.get('spurious', 0)} "
        f"wrong={report.error_counts.get('wrong', 0)}",
        f"- failed predictions: {report.n_failed_predictions}",
        "",
        header,
        rule,
        f"| {method} | {value} | {value} |",
        "",
    ]
    return "\n".join(lines)


def export_report(report: EvalReport, format: str) -> bytes:
    """Serialize to "json", "markdown-summary", or "csv-judgements"."""
    if format == "json":
        text = json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"
        return text.encode("utf-8")
    if format == "markdown-summary":
        return _markdown_summary(report).encode("utf-8")
    if format == "csv-judgements":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["dialogue_id", "turn_index", "correct", "n_ignore", "n_spurious", "n_wrong"])
        for j in report.judgements:
            kinds = [e.kind for e in j.errors]
            writer.writerow([
                j.dialogue_id, j.turn_index, int(j.correct),
                kinds.count(ErrorKind.IGNORE),
                kinds.count(ErrorKind.SPURIOUS),
                kinds.count(ErrorKind.WRONG),
            ])
        return buf.getvalue().encode("utf-8")
    raise UnsupportedFormatError(f"unknown report format {format!r}")
