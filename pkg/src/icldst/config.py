"""Run configuration with CLI > config file > defaults precedence."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .errors import ConfigError
from .llmclient import (
    DEFAULT_MAX_OUTPUT_TOKENS,
    DEFAULT_MODEL_ID,
    DEFAULT_TEMPERATURE,
    DEFAULT_TOKEN_BUDGET,
)
from .retriever import METHOD_RANDOM, METHOD_SELF, METHOD_SELF_NO_EXPLAIN
from .similarity import DEFAULT_B, DEFAULT_K1

METHODS = (METHOD_SELF, METHOD_SELF_NO_EXPLAIN, METHOD_RANDOM)
BACKENDS = ("live", "mock", "cache-only")


@dataclass
class RunConfig:
    corpus_path: str = ""
    corpus_format: str = "jsonl-simple"
    target_domain: str = ""
    output_dir: str = ""
    k: int = 20
    m: int = 3
    method: str = METHOD_SELF
    seed: int | None = None
    backend: str = "mock"
    bm25_k1: float = DEFAULT_K1
    bm25_b: float = DEFAULT_B
    retries: int = 2
    limit: int | None = None
    temperature: float = DEFAULT_TEMPERATURE
    model_id: str = DEFAULT_MODEL_ID
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    token_budget: int = DEFAULT_TOKEN_BUDGET
    cache_path: str | None = None
    mock_script: str | None = None
    mock_gold: bool = False
    descriptions_path: str | None = None
    include_ids_path: str | None = None
    canonical_table_path: str | None = None
    active_turns_only: bool = False
    workers: int = 1
    figures: bool = True

    def validate(self) -> None:
        if not self.corpus_path:
            raise ConfigError("corpus path is required")
        if not self.target_domain:
            raise ConfigError("target domain is required")
        if not self.output_dir:
            raise ConfigError("output directory is required")
        if not 1 <= self.m <= self.k:
            raise ConfigError(f"need 1 <= m <= k, got m={self.m}, k={self.k}")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method == METHOD_RANDOM and self.seed is None:
            raise ConfigError("method=random requires a seed")
        if self.backend not in BACKENDS:
            raise ConfigError(f"backend must be one of {BACKENDS}, got {self.backend!r}")
        if self.backend == "cache-only" and not self.cache_path:
            raise ConfigError("backend=cache-only requires a cache path")
        if self.backend == "mock" and not (self.mock_script or self.mock_gold):
            raise ConfigError("backend=mock requires --mock-script or --mock-gold")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.limit is not None and self.limit < 1:
            raise ConfigError("limit must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


# Nested config-file sections -> flat RunConfig field names.
_SECTION_KEYS = {
    ("bm25", "k1"): "bm25_k1",
    ("bm25", "b"): "bm25_b",
    ("retrieval", "k"): "k",
    ("retrieval", "m"): "m",
    ("retrieval", "method"): "method",
    ("prompt", "token_budget"): "token_budget",
    ("llm", "model_id"): "model_id",
    ("llm", "temperature"): "temperature",
    ("llm", "max_output_tokens"): "max_output_tokens",
}


def _flatten_file_config(data: Mapping) -> dict:
    flat: dict = {}
    for key, value in data.items():
        if isinstance(value, Mapping):
            for sub, subvalue in value.items():
                target = _SECTION_KEYS.get((key, sub))
                if target is None:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                flat[target] = subvalue
        else:
            flat[key] = value
    return flat


def load_config(
    config_file: str | Path | None = None,
    overrides: Mapping | None = None,
) -> RunConfig:
    """Merge built-in defaults, an optional JSON config file, and CLI overrides."""
    merged: dict = {}
    if config_file is not None:
        try:
            data = json.loads(Path(config_file).read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {config_file}: {exc}") from exc
        if not isinstance(data, Mapping):
            raise ConfigError("config file must hold a JSON object")
        merged.update(_flatten_file_config(data))
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value
    return RunConfig.from_dict(merged)
