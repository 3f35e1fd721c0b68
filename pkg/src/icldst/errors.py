"""Exception types shared across the pipeline."""

from __future__ import annotations


class IcldstError(Exception):
    """Base class for all package-specific errors."""


class SchemaError(IcldstError):
    """Corpus file is structurally malformed (missing fields, bad turn layout)."""

    def __init__(self, message: str, dialogue_id: str | None = None, turn_index: int | None = None):
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index
        super().__init__(_with_context(message, dialogue_id, turn_index))


class ValidationError(IcldstError):
    """Corpus content violates an invariant (e.g. accumulated state mismatch)."""

    def __init__(self, message: str, dialogue_id: str | None = None, turn_index: int | None = None):
        self.dialogue_id = dialogue_id
        self.turn_index = turn_index
        super().__init__(_with_context(message, dialogue_id, turn_index))


class UnknownDomainError(IcldstError):
    """Requested domain is not in the known domain vocabulary."""


class EmptySelectionError(IcldstError):
    """No dialogue in the corpus contains the requested target domain."""


class UnknownDocumentError(IcldstError):
    """doc_id not present in the similarity index."""


class PromptTooLongError(IcldstError):
    """Rendered prompt exceeds the configured token budget."""

    def __init__(self, estimated_tokens: int, budget: int):
        self.estimated_tokens = estimated_tokens
        self.budget = budget
        super().__init__(f"prompt is ~{estimated_tokens} tokens, budget is {budget}; reduce k")


class ParseError(IcldstError):
    """Model response carries no recoverable payload; caller may retry."""


class IndexOutOfRangeError(IcldstError):
    """Retrieval response names a candidate index outside 0..n-1."""


class RetrievalFailedError(IcldstError):
    """Retries exhausted while parsing retrieval responses."""

    def __init__(self, message: str, last_response: str = ""):
        self.last_response = last_response
        super().__init__(message)


class BackendError(IcldstError):
    """Completion backend failure (network, auth, exhausted retries)."""

    def __init__(self, message: str, category: str = "unknown"):
        self.category = category
        super().__init__(f"[{category}] {message}")


class MockMissError(IcldstError):
    """Scripted mock has no entry for this request (a test-harness bug, not a model failure)."""


class MissingDescriptionError(IcldstError):
    """A slot to be inferred has no natural-language description."""


class NotEnoughCandidatesError(IcldstError):
    """Fewer candidates available than the requested sample size."""


class EmptyEvaluationError(IcldstError):
    """No judgements to aggregate."""


class NonContiguousTurnsError(IcldstError):
    """Per-dialogue predictions are not a contiguous ascending turn range."""


class UnsupportedFormatError(IcldstError):
    """Unknown export format tag."""


class MissingArtifactsError(IcldstError):
    """Expected run artifacts are absent from the run directory."""


class ConfigError(IcldstError):
    """Invalid or inconsistent run configuration."""


def _with_context(message: str, dialogue_id: str | None, turn_index: int | None) -> str:
    where = []
    if dialogue_id is not None:
        where.append(f"dialogue={dialogue_id}")
    if turn_index is not None:
        where.append(f"turn={turn_index}")
    return f"{message} ({', '.join(where)})" if where else message
