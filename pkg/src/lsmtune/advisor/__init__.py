"""Prompt building, advisor backends, and response extraction."""

from .backends import (
    API_KEY_ENV,
    RemoteAdvisor,
    ReplayAdvisor,
    ScriptedAdvisor,
    call_advisor,
    prompt_digest,
)
from .extract import (
    AdvisorResponse,
    delta_to_document,
    extract_options,
    merge_responses,
)
from .prompts import (
    CHARS_PER_TOKEN,
    FULL_HISTORY,
    LATEST_ONLY,
    OUTPUT_INSTRUCTION,
    PROMPT_TEMPLATE_VERSION,
    RESOURCE_GROUPED,
    SLICE_SIZE,
    STRATEGIES,
    SUBSET_SPLIT,
    TOKEN_BUDGET,
    Prompt,
    PromptContext,
    build_prompts,
    estimate_tokens,
    result_summary,
)

__all__ = [
    "API_KEY_ENV",
    "RemoteAdvisor",
    "ReplayAdvisor",
    "ScriptedAdvisor",
    "call_advisor",
    "prompt_digest",
    "AdvisorResponse",
    "delta_to_document",
    "extract_options",
    "merge_responses",
    "CHARS_PER_TOKEN",
    "FULL_HISTORY",
    "LATEST_ONLY",
    "OUTPUT_INSTRUCTION",
    "PROMPT_TEMPLATE_VERSION",
    "RESOURCE_GROUPED",
    "SLICE_SIZE",
    "STRATEGIES",
    "SUBSET_SPLIT",
    "TOKEN_BUDGET",
    "Prompt",
    "PromptContext",
    "build_prompts",
    "estimate_tokens",
    "result_summary",
]
