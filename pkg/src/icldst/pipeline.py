"""End-to-end run orchestration: retrieval, prediction, judging, artifacts.

A run directory holds config.json, retrievals.jsonl, predictions.jsonl,
report.json/.md, judgements.csv, and figures. JSONL rows are checkpoints
keyed by (dialogue_id, turn_index): re-running with the same config resumes
and skips completed instances, and the report is always rebuilt from rows.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Mapping, Sequence

from . import corpus as corpus_mod
from . import evaluate, plots
from .config import RunConfig
from .corpus import BeliefState, Corpus, TestInstance, domain_slots
from .dst import Prediction, predict_turn
from .errors import ConfigError, MissingArtifactsError, RetrievalFailedError
from .llmclient import (
    CachingBackend,
    CompletionBackend,
    GoldOracleBackend,
    LiveBackend,
    LlmClient,
    MockBackend,
)
from .retriever import (
    METHOD_RANDOM,
    METHOD_SELF,
    RetrievalRequest,
    RetrievedSet,
    random_baseline,
    retrieve_examples,
)
from .similarity import Candidate, build_index, top_k

log = logging.getLogger(__name__)

RETRIEVALS_FILE = "retrievals.jsonl"
PREDICTIONS_FILE = "predictions.jsonl"
REPORT_JSON = "report.json"
REPORT_MD = "report.md"
JUDGEMENTS_CSV = "judgements.csv"
CONFIG_JSON = "config.json"


# ---------------------------------------------------------------------------
# artifact records
# ---------------------------------------------------------------------------

def _candidate_to_record(cand: Candidate) -> dict:
    return {
        "index": cand.index,
        "doc_id": list(cand.doc_id),
        "utterance": cand.utterance,
        "label": cand.label.to_dict(),
        "score": cand.score,
        "prev_user": cand.prev_user,
        "prev_system": cand.prev_system,
    }


def _candidate_from_record(record: Mapping) -> Candidate:
    return Candidate(
        index=record["index"],
        doc_id=(record["doc_id"][0], record["doc_id"][1]),
        utterance=record["utterance"],
        label=BeliefState.of(record["label"]),
        score=record["score"],
        prev_user=record.get("prev_user"),
        prev_system=record.get("prev_system"),
    )


def _retrieved_to_record(instance: TestInstance, retrieved: RetrievedSet,
                         request_digest: str, failed: bool = False) -> dict:
    return {
        "dialogue_id": instance.dialogue_id,
        "turn_index": instance.turn_index,
        "request_digest": request_digest,
        "method": retrieved.method,
        "indices": [c.index for c in retrieved.chosen],
        "explanations": list(retrieved.explanations),
        "chosen": [_candidate_to_record(c) for c in retrieved.chosen],
        "raw_response": retrieved.raw_response,
        "failed": failed,
    }


def _retrieved_from_record(record: Mapping) -> RetrievedSet:
    return RetrievedSet(
        chosen=tuple(_candidate_from_record(c) for c in record["chosen"]),
        explanations=tuple(record.get("explanations", [])),
        method=record["method"],
        raw_response=record.get("raw_response", ""),
    )


def _prediction_to_record(pred: Prediction) -> dict:
    return {
        "dialogue_id": pred.dialogue_id,
        "turn_index": pred.turn_index,
        "state": pred.predicted_turn_state.to_dict(),
        "raw_response": pred.raw_response,
        "method": pred.retrieved_method,
        "failed": pred.failed,
        "latency_ms": pred.latency_ms,
        "dropped_slots": list(pred.dropped_slots),
    }


def _prediction_from_record(record: Mapping) -> Prediction:
    return Prediction(
        dialogue_id=record["dialogue_id"],
        turn_index=record["turn_index"],
        predicted_turn_state=BeliefState.of(record["state"]),
        raw_response=record.get("raw_response", ""),
        retrieved_method=record.get("method", ""),
        latency_ms=record.get("latency_ms", 0),
        failed=record.get("failed", False),
        dropped_slots=tuple(record.get("dropped_slots", [])),
    )


def _read_jsonl(path: Path) -> dict[tuple[str, int], dict]:
    """Load checkpoint rows keyed by (dialogue_id, turn_index); ignores a torn tail line."""
    rows: dict[tuple[str, int], dict] = {}
    if not path.exists():
        return rows
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                log.warning("skipping corrupt checkpoint line in %s", path)
                continue
            rows[(record["dialogue_id"], record["turn_index"])] = record
    return rows


class _Appender:
    """Serialized line appender for one artifact file."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()

    def append(self, record: dict) -> None:
        line = json.dumps(record, sort_keys=True)
        with self._lock:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()


# ---------------------------------------------------------------------------
# backend wiring
# ---------------------------------------------------------------------------

def build_backend(config: RunConfig, corpus: Corpus) -> CompletionBackend:
    if config.backend == "live":
        inner: CompletionBackend | None = LiveBackend()
    elif config.backend == "mock":
        if config.mock_gold:
            inner = GoldOracleBackend(corpus)
        else:
            inner = MockBackend.from_script(config.mock_script)
    elif config.backend == "cache-only":
        inner = None
    else:
        raise ConfigError(f"unknown backend {config.backend!r}")
    if config.cache_path or config.backend == "cache-only":
        if not config.cache_path:
            raise ConfigError("cache-only backend requires a cache path")
        return CachingBackend(inner, config.cache_path)
    return inner


def _instance_seed(seed: int, instance: TestInstance) -> int:
    tag = f"{seed}|{instance.dialogue_id}|{instance.turn_index}"
    return int.from_bytes(hashlib.sha256(tag.encode("utf-8")).digest()[:4], "big")


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def _check_config_snapshot(outdir: Path, config: RunConfig) -> None:
    snapshot_path = outdir / CONFIG_JSON
    snapshot = json.dumps(config.to_dict(), sort_keys=True, indent=2) + "\n"
    if snapshot_path.exists():
        existing = snapshot_path.read_text("utf-8")
        if existing != snapshot:
            raise ConfigError(
                f"output dir {outdir} holds a different config; "
                "use a fresh directory or delete it"
            )
    else:
        snapshot_path.write_text(snapshot, encoding="utf-8")


def select_instances(corpus: Corpus, config: RunConfig) -> list[TestInstance]:
    instances = corpus_mod.build_test_instances(corpus, config.target_domain)
    if config.active_turns_only:
        instances = [
            i for i in instances
            if i.gold_accumulated.restrict(config.target_domain)
        ]
    if config.limit is not None:
        instances = instances[: config.limit]
    return instances


def run(config: RunConfig, backend: CompletionBackend | None = None) -> evaluate.EvalReport:
    """Execute one full evaluation run; returns the report after writing artifacts."""
    config.validate()
    outdir = Path(config.output_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    _check_config_snapshot(outdir, config)

    table = corpus_mod.CanonicalTable.load(config.canonical_table_path)
    include_ids = None
    if config.include_ids_path:
        include_ids = [
            line.strip()
            for line in Path(config.include_ids_path).read_text("utf-8").splitlines()
            if line.strip()
        ]
    corpus = corpus_mod.load_corpus(config.corpus_path, config.corpus_format,
                                    table=table, include_ids=include_ids)
    instances = select_instances(corpus, config)

    held_out = corpus_mod.exclude_domain(corpus, config.target_domain)
    pool = corpus_mod.build_candidate_pool(held_out)
    index = build_index([(e.doc_id, e.utterance) for e in pool],
                        k1=config.bm25_k1, b=config.bm25_b)
    meta = {e.doc_id: e for e in pool}
    descriptions = corpus_mod.load_slot_descriptions(config.descriptions_path)
    target_slots = domain_slots(config.target_domain)

    if backend is None:
        backend = build_backend(config, corpus)
    llm = LlmClient(backend, model_id=config.model_id, temperature=config.temperature,
                    max_output_tokens=config.max_output_tokens)

    retrieval_rows = _read_jsonl(outdir / RETRIEVALS_FILE)
    prediction_rows = _read_jsonl(outdir / PREDICTIONS_FILE)
    retrieval_out = _Appender(outdir / RETRIEVALS_FILE)
    prediction_out = _Appender(outdir / PREDICTIONS_FILE)

    def process(instance: TestInstance) -> None:
        key = (instance.dialogue_id, instance.turn_index)
        if key in prediction_rows and key in retrieval_rows:
            return
        candidates = top_k(index, instance.current_user, config.k, meta=meta)
        retrieval_failed = False
        if key in retrieval_rows:
            retrieved = _retrieved_from_record(retrieval_rows[key])
            retrieval_failed = retrieval_rows[key].get("failed", False)
        else:
            m_eff = min(config.m, len(candidates))
            digest = hashlib.sha256(instance.current_user.encode("utf-8")).hexdigest()
            if m_eff == 0:
                retrieved = RetrievedSet((), (), method=config.method)
            elif config.method == METHOD_RANDOM:
                retrieved = random_baseline(
                    candidates, m_eff, _instance_seed(config.seed, instance)
                )
            else:
                request = RetrievalRequest(
                    test_instance=instance,
                    candidates=tuple(candidates),
                    target_domain=config.target_domain,
                    target_slots=target_slots,
                    m=m_eff,
                    with_explanations=config.method == METHOD_SELF,
                )
                try:
                    retrieved = retrieve_examples(request, llm, retries=config.retries,
                                                  token_budget=config.token_budget)
                except RetrievalFailedError as exc:
                    log.warning("retrieval failed for %s turn %s: %s",
                                instance.dialogue_id, instance.turn_index, exc)
                    retrieved = RetrievedSet((), (), method=config.method,
                                             raw_response=exc.last_response)
                    retrieval_failed = True
            record = _retrieved_to_record(instance, retrieved, digest, failed=retrieval_failed)
            retrieval_rows[key] = record
            retrieval_out.append(record)
        if key not in prediction_rows:
            if retrieval_failed:
                pred = Prediction(
                    dialogue_id=instance.dialogue_id,
                    turn_index=instance.turn_index,
                    predicted_turn_state=BeliefState.empty(),
                    raw_response=retrieved.raw_response,
                    retrieved_method=retrieved.method,
                    failed=True,
                )
            else:
                pred = predict_turn(instance, retrieved, descriptions,
                                    config.target_domain, llm, retries=config.retries,
                                    token_budget=config.token_budget)
            record = _prediction_to_record(pred)
            prediction_rows[key] = record
            prediction_out.append(record)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool_exec:
            for done in pool_exec.map(process, instances):
                del done
    else:
        for instance in instances:
            process(instance)

    report = assemble_report(config, instances, retrieval_rows, prediction_rows)
    write_report_artifacts(report, outdir, figures=config.figures)
    return report


def assemble_report(
    config: RunConfig,
    instances: Sequence[TestInstance],
    retrieval_rows: Mapping[tuple[str, int], dict],
    prediction_rows: Mapping[tuple[str, int], dict],
) -> evaluate.EvalReport:
    keys = {(i.dialogue_id, i.turn_index) for i in instances}
    missing = sorted(k for k in keys if k not in prediction_rows)
    if missing:
        raise MissingArtifactsError(f"no prediction rows for {missing[:5]} (run incomplete?)")

    by_dialogue: dict[str, list[Prediction]] = {}
    for instance in instances:
        record = prediction_rows[(instance.dialogue_id, instance.turn_index)]
        by_dialogue.setdefault(instance.dialogue_id, []).append(_prediction_from_record(record))
    accumulated: dict[tuple[str, int], BeliefState] = {}
    for dialogue_id, preds in by_dialogue.items():
        preds.sort(key=lambda p: p.turn_index)
        for turn_index, state in evaluate.accumulate_predictions(preds):
            accumulated[(dialogue_id, turn_index)] = state

    judgements = []
    for instance in sorted(instances, key=lambda i: (i.dialogue_id, i.turn_index)):
        pred_acc = accumulated[(instance.dialogue_id, instance.turn_index)]
        judgements.append(evaluate.judge_turn(
            pred_acc, instance.gold_accumulated, config.target_domain,
            dialogue_id=instance.dialogue_id, turn_index=instance.turn_index,
        ))

    retrieved_sets = [
        _retrieved_from_record(retrieval_rows[k]) for k in sorted(keys) if k in retrieval_rows
    ]
    n_failed = sum(1 for k in keys if prediction_rows[k].get("failed"))
    n_dropped = sum(len(prediction_rows[k].get("dropped_slots", [])) for k in keys)
    return evaluate.EvalReport(
        target_domain=config.target_domain,
        n_turns=len(judgements),
        domain_jga=evaluate.domain_jga(judgements),
        error_counts=evaluate.error_counts(judgements),
        domain_influence=evaluate.domain_influence(retrieved_sets),
        config=config.to_dict(),
        judgements=tuple(judgements),
        n_failed_predictions=n_failed,
        n_dropped_slots=n_dropped,
    )


def write_report_artifacts(report: evaluate.EvalReport, outdir: Path, figures: bool = True) -> None:
    (outdir / REPORT_JSON).write_bytes(evaluate.export_report(report, "json"))
    (outdir / REPORT_MD).write_bytes(evaluate.export_report(report, "markdown-summary"))
    (outdir / JUDGEMENTS_CSV).write_bytes(evaluate.export_report(report, "csv-judgements"))
    if figures:
        plots.save_report_figures(report, outdir)


# ---------------------------------------------------------------------------
# verify / export
# ---------------------------------------------------------------------------

def load_run_config(run_dir: str | Path) -> RunConfig:
    path = Path(run_dir) / CONFIG_JSON
    if not path.exists():
        raise MissingArtifactsError(f"{path} not found")
    return RunConfig.from_dict(json.loads(path.read_text("utf-8")))


def verify_run(run_dir: str | Path) -> list[str]:
    """Recompute the report from the JSONL artifacts and diff against report.json.

    Returns a list of human-readable mismatches (empty when the report checks out).
    """
    run_dir = Path(run_dir)
    config = load_run_config(run_dir)
    report_path = run_dir / REPORT_JSON
    if not report_path.exists():
        raise MissingArtifactsError(f"{report_path} not found")
    stored = evaluate.report_from_dict(json.loads(report_path.read_text("utf-8")))

    table = corpus_mod.CanonicalTable.load(config.canonical_table_path)
    include_ids = None
    if config.include_ids_path:
        include_ids = [
            line.strip()
            for line in Path(config.include_ids_path).read_text("utf-8").splitlines()
            if line.strip()
        ]
    corpus = corpus_mod.load_corpus(config.corpus_path, config.corpus_format,
                                    table=table, include_ids=include_ids)
    instances = select_instances(corpus, config)
    retrieval_rows = _read_jsonl(run_dir / RETRIEVALS_FILE)
    prediction_rows = _read_jsonl(run_dir / PREDICTIONS_FILE)
    recomputed = assemble_report(config, instances, retrieval_rows, prediction_rows)

    problems = []
    if recomputed.n_turns != stored.n_turns:
        problems.append(f"n_turns: recomputed {recomputed.n_turns} != stored {stored.n_turns}")
    if recomputed.domain_jga != stored.domain_jga:
        problems.append(
            f"domain_jga: recomputed {recomputed.domain_jga} != stored {stored.domain_jga}"
        )
    if dict(recomputed.error_counts) != dict(stored.error_counts):
        problems.append(
            f"error_counts: recomputed {dict(recomputed.error_counts)} "
            f"!= stored {dict(stored.error_counts)}"
        )
    if dict(recomputed.domain_influence) != dict(stored.domain_influence):
        problems.append(
            f"domain_influence: recomputed {dict(recomputed.domain_influence)} "
            f"!= stored {dict(stored.domain_influence)}"
        )
    return problems


def export_explanations(run_dir: str | Path) -> list[dict]:
    """One row per (instance, chosen example) for runs with self-retrieval."""
    run_dir = Path(run_dir)
    path = run_dir / RETRIEVALS_FILE
    if not path.exists():
        raise MissingArtifactsError(f"{path} not found")
    rows: list[dict] = []
    records = _read_jsonl(path)
    for key in sorted(records):
        record = records[key]
        if record["method"] != METHOD_SELF:
            continue
        explanations = list(record.get("explanations", []))
        for position, chosen in enumerate(record.get("chosen", [])):
            rows.append({
                "dialogue_id": record["dialogue_id"],
                "turn_index": record["turn_index"],
                "example_index": chosen["index"],
                "example_utterance": chosen["utterance"],
                "example_label": json.dumps(chosen["label"], sort_keys=True),
                "explanation": explanations[position] if position < len(explanations) else "",
            })
    return rows


# ---------------------------------------------------------------------------
# ablation
# ---------------------------------------------------------------------------

ABLATION_GRID = (
    ("random_3", METHOD_RANDOM, 3),
    ("self_top_1", METHOD_SELF, 1),
    ("self_top_2", METHOD_SELF, 2),
    ("self_top_3", METHOD_SELF, 3),
    ("self_no_explain_3", "self_no_explain", 3),
)


def config_label(config: RunConfig) -> str:
    if config.method == METHOD_RANDOM:
        return f"random_{config.m}"
    if config.method == METHOD_SELF:
        return f"self_top_{config.m}"
    return f"self_no_explain_{config.m}"


def ablation_configs(base: RunConfig, domains: Sequence[str], output_dir: str | Path) -> list[RunConfig]:
    """The five standard retrieval configurations crossed with the target domains."""
    configs = []
    for label, method, m in ABLATION_GRID:
        for domain in domains:
            cfg = dataclasses.replace(
                base,
                method=method,
                m=m,
                target_domain=domain,
                output_dir=str(Path(output_dir) / "runs" / label / domain),
                seed=base.seed if base.seed is not None else 0,
            )
            configs.append(cfg)
    return configs


def run_ablation(
    configs: Sequence[RunConfig],
    output_dir: str | Path,
    backend: CompletionBackend | None = None,
) -> dict:
    """Run every config and emit the comparative grid (per-domain columns + avg)."""
    if not configs:
        raise ConfigError("no ablation configs given")
    corpora = {(c.corpus_path, c.corpus_format) for c in configs}
    if len(corpora) != 1:
        raise ConfigError("ablation configs must share one corpus")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)

    domains: list[str] = []
    cells: dict[str, dict[str, float]] = {}
    for config in configs:
        if config.target_domain not in domains:
            domains.append(config.target_domain)
        label = config_label(config)
        report = run(config, backend=backend)
        cells.setdefault(label, {})[config.target_domain] = report.domain_jga

    rows = []
    for label, per_domain in cells.items():
        values = [per_domain[d] for d in domains if d in per_domain]
        rows.append({
            "label": label,
            "cells": {d: per_domain[d] for d in domains if d in per_domain},
            "avg": sum(values) / len(values),
        })
    table = {"domains": domains, "rows": rows}

    (output_dir / "ablation.json").write_text(
        json.dumps(table, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    md = ["| method | " + " | ".join(domains) + " | avg |",
          "|" + "---|" * (len(domains) + 2)]
    for row in rows:
        md.append(
            f"| {row['label']} | "
            + " | ".join(f"{100 * row['cells'][d]:.1f}" for d in domains)
            + f" | {100 * row['avg']:.2f} |"
        )
    (output_dir / "ablation.md").write_text("\n".join(md) + "\n", encoding="utf-8")
    csv_lines = ["method," + ",".join(domains) + ",avg"]
    for row in rows:
        csv_lines.append(
            row["label"] + ","
            + ",".join(repr(row["cells"][d]) for d in domains)
            + f",{row['avg']!r}"
        )
    (output_dir / "ablation.csv").write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    if configs[0].figures:
        plots.save_ablation_figure(cells, domains, output_dir / "ablation_jga.png")
    return table
