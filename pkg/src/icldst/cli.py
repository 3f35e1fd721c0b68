"""Command-line driver.

Subcommands: run, ablate, export-explanations, verify, cache-stats.
Exit codes: 0 success, 1 config/IO error, 2 backend failure, 3 verification
mismatch. Failures emit a machine-readable JSON error record on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import BACKENDS, METHODS, RunConfig, load_config
from .errors import (
    BackendError,
    ConfigError,
    IcldstError,
    MissingArtifactsError,
    MockMissError,
    SchemaError,
    ValidationError,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_BACKEND = 2
EXIT_VERIFY = 3


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file (flags override it)")
    parser.add_argument("--corpus", dest="corpus_path", help="corpus file path")
    parser.add_argument("--format", dest="corpus_format",
                        choices=["jsonl-simple", "multiwoz-2.1"], help="corpus format")
    parser.add_argument("--out", dest="output_dir", help="output directory")
    parser.add_argument("--k", type=int, help="candidate pool size per instance (default 20)")
    parser.add_argument("--m", type=int, help="examples to retrieve (default 3)")
    parser.add_argument("--method", choices=list(METHODS), help="retrieval method")
    parser.add_argument("--seed", type=int, help="seed for the random baseline")
    parser.add_argument("--backend", choices=list(BACKENDS), help="completion backend")
    parser.add_argument("--bm25-k1", dest="bm25_k1", type=float, help="BM25 k1 (default 1.5)")
    parser.add_argument("--bm25-b", dest="bm25_b", type=float, help="BM25 b (default 0.75)")
    parser.add_argument("--retries", type=int, help="parse-failure retries (default 2)")
    parser.add_argument("--limit", type=int, help="max test instances")
    parser.add_argument("--temperature", type=float, help="decoding temperature (default 0)")
    parser.add_argument("--model-id", dest="model_id", help="model identifier")
    parser.add_argument("--max-output-tokens", dest="max_output_tokens", type=int)
    parser.add_argument("--token-budget", dest="token_budget", type=int,
                        help="prompt token budget")
    parser.add_argument("--cache", dest="cache_path", help="response cache JSONL path")
    parser.add_argument("--mock-script", dest="mock_script", help="scripted mock JSONL path")
    parser.add_argument("--mock-gold", dest="mock_gold", action="store_const", const=True,
                        help="mock backend that answers with gold states")
    parser.add_argument("--descriptions", dest="descriptions_path",
                        help="slot description file")
    parser.add_argument("--include-ids", dest="include_ids_path",
                        help="file of dialogue ids to load (one per line)")
    parser.add_argument("--canonical-table", dest="canonical_table_path",
                        help="value canonicalization table")
    parser.add_argument("--active-turns-only", dest="active_turns_only",
                        action="store_const", const=True,
                        help="evaluate only turns whose gold state touches the target domain")
    parser.add_argument("--workers", type=int, help="instance worker pool size (default 1)")
    parser.add_argument("--no-figures", dest="figures", action="store_const", const=False,
                        help="skip figure rendering")


_CONFIG_FIELDS = [
    "corpus_path", "corpus_format", "target_domain", "output_dir", "k", "m", "method",
    "seed", "backend", "bm25_k1", "bm25_b", "retries", "limit", "temperature",
    "model_id", "max_output_tokens", "token_budget", "cache_path", "mock_script",
    "mock_gold", "descriptions_path", "include_ids_path", "canonical_table_path",
    "active_turns_only", "workers", "figures",
]


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in _CONFIG_FIELDS}
    return load_config(args.config, overrides)


def _emit_error(exc: Exception, output_dir: str | None = None) -> None:
    record = {
        "error": type(exc).__name__,
        "category": getattr(exc, "category", None),
        "message": str(exc),
    }
    line = json.dumps(record)
    print(line, file=sys.stderr)
    if output_dir:
        try:
            Path(output_dir).mkdir(parents=True, exist_ok=True)
            (Path(output_dir) / "error.json").write_text(line + "\n", encoding="utf-8")
        except OSError:
            pass


def _cmd_run(args: argparse.Namespace) -> int:
    config = _config_from_args(args)
    report = pipeline.run(config)
    print(f"target={report.target_domain} turns={report.n_turns} "
          f"domain_jga={report.domain_jga:.4f} "
          f"errors={dict(report.error_counts)} failed={report.n_failed_predictions}")
    print(f"artifacts in {config.output_dir}")
    return EXIT_OK


def _cmd_ablate(args: argparse.Namespace) -> int:
    base = _config_from_args(args)
    domains = [d.strip() for d in args.domains.split(",") if d.strip()]
    if not domains:
        raise ConfigError("--domains must name at least one target domain")
    configs = pipeline.ablation_configs(base, domains, base.output_dir)
    table = pipeline.run_ablation(configs, base.output_dir)
    for row in table["rows"]:
        cells = " ".join(f"{d}={100 * row['cells'][d]:.1f}" for d in table["domains"])
        print(f"{row['label']}: {cells} avg={100 * row['avg']:.2f}")
    print(f"ablation artifacts in {base.output_dir}")
    return EXIT_OK


def _cmd_export_explanations(args: argparse.Namespace) -> int:
    rows = pipeline.export_explanations(args.run)
    if not rows:
        print("warning: no self-retrieval explanations in this run "
              "(random and no-explanation runs carry none)", file=sys.stderr)
    columns = ["dialogue_id", "turn_index", "example_index", "example_utterance",
               "example_label", "explanation"]
    out = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        writer = csv.DictWriter(out, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _cmd_verify(args: argparse.Namespace) -> int:
    problems = pipeline.verify_run(args.run)
    if problems:
        for problem in problems:
            print(f"MISMATCH: {problem}", file=sys.stderr)
        return EXIT_VERIFY
    print("report matches artifacts")
    return EXIT_OK


def _cmd_cache_stats(args: argparse.Namespace) -> int:
    path = Path(args.cache)
    if not path.exists():
        print(f"cache {path}: entries=0 unique=0 size_bytes=0")
        return EXIT_OK
    entries = 0
    digests = set()
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            entries += 1
            try:
                digests.add(json.loads(line)["digest"])
            except (json.JSONDecodeError, KeyError):
                pass
    print(f"cache {path}: entries={entries} unique={len(digests)} "
          f"size_bytes={path.stat().st_size}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icldst",
        description="Cross-domain dialogue state tracking with self-retrieved "
                    "in-context examples",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    run_parser = sub.add_parser("run", help="run one evaluation")
    _add_run_flags(run_parser)
    run_parser.add_argument("--target", dest="target_domain", help="target domain")
    run_parser.set_defaults(handler=_cmd_run)

    ablate_parser = sub.add_parser("ablate", help="run the five-config retrieval ablation")
    _add_run_flags(ablate_parser)
    ablate_parser.add_argument("--domains", required=True,
                               help="comma-separated target domains")
    ablate_parser.set_defaults(handler=_cmd_ablate, target_domain=None)

    export_parser = sub.add_parser("export-explanations",
                                   help="dump (instance, example, explanation) rows")
    export_parser.add_argument("--run", required=True, help="run directory")
    export_parser.add_argument("--out", help="CSV output path (default stdout)")
    export_parser.set_defaults(handler=_cmd_export_explanations)

    verify_parser = sub.add_parser("verify", help="recompute the report from artifacts")
    verify_parser.add_argument("--run", required=True, help="run directory")
    verify_parser.set_defaults(handler=_cmd_verify)

    stats_parser = sub.add_parser("cache-stats", help="summarize a response cache file")
    stats_parser.add_argument("--cache", required=True, help="cache JSONL path")
    stats_parser.set_defaults(handler=_cmd_cache_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    output_dir = getattr(args, "output_dir", None)
    try:
        return args.handler(args)
    except (BackendError, MockMissError) as exc:
        _emit_error(exc, output_dir)
        return EXIT_BACKEND
    except (ConfigError, SchemaError, ValidationError, MissingArtifactsError,
            IcldstError, OSError) as exc:
        _emit_error(exc, output_dir)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
