"""Example selection: prompt construction, response parsing, random baseline.

The selection prompt shows the test utterance, the target slots, and the
indexed candidate list, and asks the model for the m most useful example
indices (with a one-line explanation each unless disabled). The parser is
deliberately lenient: the requested output format is itself malformed
pseudo-JSON, so real responses vary in quoting and framing.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass

from .corpus import SlotName, TestInstance
from .errors import (
    IndexOutOfRangeError,
    NotEnoughCandidatesError,
    ParseError,
    PromptTooLongError,
    RetrievalFailedError,
)
from .llmclient import DEFAULT_TOKEN_BUDGET, LlmClient, estimate_tokens
from .similarity import Candidate

METHOD_SELF = "self"
METHOD_SELF_NO_EXPLAIN = "self_no_explain"
METHOD_RANDOM = "random"


@dataclass(frozen=True)
class RetrievalRequest:
    test_instance: TestInstance
    candidates: tuple[Candidate, ...]
    target_domain: str
    target_slots: tuple[SlotName, ...]
    m: int
    with_explanations: bool = True

    def __post_init__(self):
        if not 1 <= self.m <= len(self.candidates):
            raise ValueError(f"m={self.m} not in 1..{len(self.candidates)}")
        for position, cand in enumerate(self.candidates):
            if cand.index != position:
                raise ValueError("candidates must carry contiguous 0-based indices")
        for slot in self.target_slots:
            if slot.domain != self.target_domain:
                raise ValueError(f"slot {slot.render()} is not in domain {self.target_domain}")

    @property
    def method(self) -> str:
        return METHOD_SELF if self.with_explanations else METHOD_SELF_NO_EXPLAIN


@dataclass(frozen=True)
class RetrievedSet:
    chosen: tuple[Candidate, ...]
    explanations: tuple[str, ...]
    method: str
    raw_response: str = ""


def build_retrieval_prompt(req: RetrievalRequest, token_budget: int = DEFAULT_TOKEN_BUDGET) -> str:
    slot_list = "[" + ", ".join(f"'-{s.slot}'" for s in req.target_slots) + "]"
    if req.with_explanations:
        ask = (f"please return the most useful {req.m} example's from below, with simple "
               f"explanation why it is helpful than others for domain transfer {req.target_domain}")
        output_format = "Output format must be '{answer : [], explanation : ), to be parsed easily."
    else:
        ask = f"please return the most useful {req.m} example's from below"
        output_format = "Output format must be '{answer : []}', to be parsed easily."
    lines = [
        "I'm finding helpful exampels to solve following dialgoue state tracking problem "
        "in domain transfer enviroment",
        f"curr : [user] {req.test_instance.current_user}",
        f"slots to be inference : {slot_list}",
        f"for {req.target_domain} domain",
        ask,
        "",
    ]
    for cand in req.candidates:
        lines.append(f"Example Number : {cand.index}")
        lines.append(f"curr : [user] {cand.utterance}")
        lines.append(f"label: {cand.label.render()}")
        lines.append("")
    lines.append(output_format)
    prompt = "\n".join(lines)
    estimated = estimate_tokens(prompt)
    if estimated > token_budget:
        raise PromptTooLongError(estimated, token_budget)
    return prompt


_ANSWER_BRACKET_RE = re.compile(r"answer\s*['\"]?\s*[:=]\s*\[([^\]]*)\]", re.IGNORECASE)
_ANSWER_BARE_RE = re.compile(r"answer\s*['\"]?\s*[:=]\s*([0-9][0-9,\s]*)", re.IGNORECASE)
_EXPLANATION_BLOCK_RE = re.compile(
    r"explanations?\s*['\"]?\s*[:=]\s*\[(.*?)\]", re.IGNORECASE | re.DOTALL
)
_EXPLANATION_TAIL_RE = re.compile(
    r"explanations?\s*['\"]?\s*[:=]\s*(.+)", re.IGNORECASE | re.DOTALL
)
_QUOTED_RE = re.compile(r'"([^"]*)"|\'([^\']*)\'')
_INT_RE = re.compile(r"-?\d+")


def parse_retrieval_response(text: str, n_candidates: int, m: int) -> tuple[list[int], list[str]]:
    """Extract (indices, explanations) from a model response.

    Indices are validated against 0..n_candidates-1, deduplicated preserving
    order, and truncated to m. Raises ParseError when no usable answer list is
    found and IndexOutOfRangeError when any index is out of range.
    """
    match = _ANSWER_BRACKET_RE.search(text)
    payload = match.group(1) if match else None
    if payload is None:
        bare = _ANSWER_BARE_RE.search(text)
        payload = bare.group(1) if bare else None
    if payload is None:
        raise ParseError("no answer list found in response")
    raw_indices = [int(tok) for tok in _INT_RE.findall(payload)]
    if not raw_indices:
        raise ParseError("answer list contains no indices")
    for idx in raw_indices:
        if idx < 0 or idx >= n_candidates:
            raise IndexOutOfRangeError(f"index {idx} outside 0..{n_candidates - 1}")
    indices: list[int] = []
    for idx in raw_indices:
        if idx not in indices:
            indices.append(idx)
    indices = indices[:m]

    explanations: list[str] = []
    block = _EXPLANATION_BLOCK_RE.search(text)
    if block:
        for double, single in _QUOTED_RE.findall(block.group(1)):
            explanations.append(double or single)
    else:
        tail = _EXPLANATION_TAIL_RE.search(text)
        if tail:
            blob = tail.group(1).strip().strip("\"'{}()").strip()
            if blob:
                explanations.append(blob)
    return indices, explanations


def retrieve_examples(
    req: RetrievalRequest,
    llm: LlmClient,
    retries: int = 2,
    token_budget: int = DEFAULT_TOKEN_BUDGET,
) -> RetrievedSet:
    """Ask the model to choose examples; retries the identical prompt on parse failures."""
    prompt = build_retrieval_prompt(req, token_budget=token_budget)
    last_response = ""
    last_error: Exception | None = None
    for _ in range(retries + 1):
        response = llm.complete_text(prompt)
        last_response = response.text
        try:
            indices, explanations = parse_retrieval_response(
                response.text, n_candidates=len(req.candidates), m=req.m
            )
        except (ParseError, IndexOutOfRangeError) as exc:
            last_error = exc
            continue
        chosen = tuple(req.candidates[i] for i in indices)
        return RetrievedSet(
            chosen=chosen,
            explanations=tuple(explanations),
            method=req.method,
            raw_response=response.text,
        )
    raise RetrievalFailedError(
        f"retries exhausted: {last_error}", last_response=last_response
    )


def random_baseline(candidates, m: int, seed: int) -> RetrievedSet:
    """Seeded uniform sample without replacement; no explanations."""
    candidates = list(candidates)
    if m > len(candidates):
        raise NotEnoughCandidatesError(f"need {m} candidates, have {len(candidates)}")
    rng = random.Random(seed)
    chosen = tuple(rng.sample(candidates, m))
    return RetrievedSet(chosen=chosen, explanations=(), method=METHOD_RANDOM, raw_response="")
