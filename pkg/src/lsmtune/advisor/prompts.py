"""Prompt construction for configuration tuning.

Four strategies trade context volume against focus: the full history,
bounded slices of the options file, only the latest run, or one prompt
per resource group. Templates are versioned; fixture tests pin the
rendered output so accidental wording drift fails loudly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..bench import BenchmarkResult
from ..characterize import WorkloadCharacterization
from ..engine import OptionsDocument, by_group, load_catalog, section_base
from ..errors import ContextIncomplete

FULL_HISTORY = "FullHistory"
SUBSET_SPLIT = "SubsetSplit"
LATEST_ONLY = "LatestOnly"
RESOURCE_GROUPED = "ResourceGrouped"
STRATEGIES = (FULL_HISTORY, SUBSET_SPLIT, LATEST_ONLY, RESOURCE_GROUPED)

PROMPT_TEMPLATE_VERSION = 1
TOKEN_BUDGET = 24_000
CHARS_PER_TOKEN = 4  # crude but stable approximation, documented in README
SLICE_SIZE = 20

OUTPUT_INSTRUCTION = (
    "Reply with exactly one fenced code block (```) containing an options\n"
    "file in the same [Section] / key=value format, listing only the\n"
    "options you want changed and their new values. No prose inside the\n"
    "block. Omit options you want left alone."
)

_GROUP_GAUGES = {
    "CPU": ("cpu_percent", "throughput_ops_s"),
    "Memory": ("rss_bytes", "block_cache_hit_ratio"),
    "Storage": ("write_stall_us", "pending_compaction_bytes"),
    "Neutral": ("throughput_ops_s", "p99_us"),
}


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text) / CHARS_PER_TOKEN)


@dataclass
class Prompt:
    text: str
    meta: dict

    @property
    def tokens(self) -> int:
        return estimate_tokens(self.text)


@dataclass
class PromptContext:
    """Everything a strategy may draw on when writing its prompts."""

    current_options: OptionsDocument
    history: list = field(default_factory=list)
    latest_result: Optional[dict] = None
    characterization: Optional[WorkloadCharacterization] = None
    limits: dict = field(default_factory=dict)
    extra_directives: Optional[str] = None


def result_summary(result: BenchmarkResult) -> dict:
    """Flatten a benchmark result to the gauges prompts care about."""
    last = result.timeline[-1] if result.timeline else None
    engine = last.engine if last else None
    return {
        "throughput_ops_s": result.overall_throughput_ops_s,
        "p99_us": result.overall_p99_us,
        "duration_s": result.duration_s,
        "write_stall_us": engine.write_stall_micros if engine else 0,
        "pending_compaction_bytes":
            engine.pending_compaction_bytes if engine else 0,
        "block_cache_hit_ratio":
            engine.block_cache_hit_ratio if engine else 0.0,
        "cpu_percent": last.cpu_percent if last else None,
        "rss_bytes": last.rss_bytes if last else None,
        "realized_op_ratios": dict(last.realized_op_ratios) if last else {},
        "aborted": result.aborted,
    }


def _render_gauge(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def _render_result(summary: dict) -> list[str]:
    lines = ["[Latest benchmark]"]
    for key in ("throughput_ops_s", "p99_us", "duration_s", "write_stall_us",
                "pending_compaction_bytes", "block_cache_hit_ratio",
                "cpu_percent", "rss_bytes"):
        lines.append(f"{key}={_render_gauge(summary.get(key))}")
    ratios = summary.get("realized_op_ratios") or {}
    if ratios:
        mix = " ".join(f"{op}={frac:.3f}" for op, frac in sorted(ratios.items()))
        lines.append(f"op_mix: {mix}")
    if summary.get("aborted"):
        lines.append("note: run aborted early on engine failure")
    return lines


def _render_characterization(ch: WorkloadCharacterization) -> list[str]:
    def fam(fit) -> str:
        params = " ".join(f"{k}={v:.4g}" for k, v in sorted(fit.family.params.items()))
        r2 = "n/a" if fit.r_squared != fit.r_squared or fit.r_squared == float("-inf") \
            else f"{fit.r_squared:.4f}"
        return f"{fit.family.tag}({params}) r2={r2}"

    lines = ["[Workload]"]
    ratios = " ".join(f"{op}={frac:.3f}"
                      for op, frac in sorted(ch.query_ratios.items()))
    lines.append(f"query_ratios: {ratios}")
    lines.append(f"key_size: {fam(ch.key_size)}")
    lines.append(f"value_size: {fam(ch.value_size)}")
    lines.append(f"key_access: {fam(ch.key_access)}")
    if ch.periodic_hint:
        hint = " ".join(f"{k}={v}" for k, v in sorted(ch.periodic_hint.items()))
        lines.append(f"periodicity: {hint}")
    return lines


def _render_history_entry(entry: dict) -> str:
    changes = entry.get("changes") or {}
    if changes:
        body = ", ".join(f"{name}={value}"
                         for name, value in sorted(changes.items()))
    else:
        body = "none"
    return (f"iteration {entry.get('iteration')}: "
            f"throughput={_render_gauge(entry.get('throughput_ops_s'))} ops/s "
            f"p99={_render_gauge(entry.get('p99_us'))} us "
            f"accepted={entry.get('accepted')} changes: {body}")


def _render_options(doc: OptionsDocument,
                    only: Optional[set] = None) -> list[str]:
    lines = []
    for section, opts in doc.sections.items():
        picked = [(n, v) for n, v in opts.items()
                  if only is None or n in only]
        if not picked:
            continue
        lines.append(f"[{section}]")
        for name, value in picked:
            lines.append(f"  {name}={value}")
    return lines


def _render_limits(limits: dict) -> list[str]:
    if not limits:
        return []
    lines = ["[Resource limits]"]
    for key in sorted(limits):
        lines.append(f"{key}={limits[key]}")
    return lines


_HEADER = (
    "You are tuning the configuration of an LSM-tree key-value store.\n"
    "Goal: maximize sustained throughput without raising p99 latency.\n"
    f"(template v{PROMPT_TEMPLATE_VERSION})"
)


def _assemble(blocks: list[list[str]], scope_note: Optional[str]) -> str:
    parts = [_HEADER]
    for block in blocks:
        if block:
            parts.append("\n".join(block))
    if scope_note:
        parts.append(scope_note)
    parts.append(OUTPUT_INSTRUCTION)
    return "\n\n".join(parts)


def _flat_options(doc: OptionsDocument) -> list[tuple[str, str, str]]:
    return [(section, name, value)
            for section, opts in doc.sections.items()
            for name, value in opts.items()]


def _fit_budget(make_text, history: list, characterization,
                budget_tokens: int):
    """Drop oldest history entries, then characterization detail, until
    the rendered prompt fits. Current options are never sacrificed."""
    kept = list(history)
    text = make_text(kept, characterization)
    while estimate_tokens(text) > budget_tokens and kept:
        kept = kept[1:]
        text = make_text(kept, characterization)
    if estimate_tokens(text) > budget_tokens and characterization is not None:
        text = make_text(kept, None)
    return text, kept


def build_prompts(strategy: str, ctx: PromptContext,
                  budget_tokens: int = TOKEN_BUDGET) -> list[Prompt]:
    """Render the prompt set for one advisor round."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown prompt strategy {strategy!r}")
    if ctx.current_options is None or not ctx.current_options.sections:
        raise ContextIncomplete("current options are required")
    if ctx.history and ctx.latest_result is None:
        raise ContextIncomplete("history without a latest result")

    latest = _render_result(ctx.latest_result) if ctx.latest_result else []
    limits = _render_limits(ctx.limits)
    notice = ["[Directive]", ctx.extra_directives] \
        if ctx.extra_directives else []

    def base_meta() -> dict:
        return {
            "kind": "tune",
            "strategy": strategy,
            "template_version": PROMPT_TEMPLATE_VERSION,
            "telemetry": dict(ctx.latest_result) if ctx.latest_result else {},
            "degradation": bool(ctx.extra_directives),
        }

    if strategy == FULL_HISTORY:
        def make_text(history, characterization):
            blocks = [limits]
            if characterization is not None:
                blocks.append(_render_characterization(characterization))
            blocks.append(latest)
            if history:
                blocks.append(["[History, oldest first]"]
                              + [_render_history_entry(e) for e in history])
            blocks.append(["[Current options]"]
                          + _render_options(ctx.current_options))
            blocks.append(notice)
            return _assemble(blocks, None)

        text, kept = _fit_budget(make_text, ctx.history,
                                 ctx.characterization, budget_tokens)
        meta = base_meta()
        meta["options"] = {n: v for _, n, v
                           in _flat_options(ctx.current_options)}
        meta["history_kept"] = len(kept)
        return [Prompt(text, meta)]

    if strategy == LATEST_ONLY:
        def make_text(history, characterization):
            blocks = [limits]
            if characterization is not None:
                blocks.append(_render_characterization(characterization))
            blocks.append(latest)
            blocks.append(["[Current options]"]
                          + _render_options(ctx.current_options))
            blocks.append(notice)
            return _assemble(blocks, None)

        text, _ = _fit_budget(make_text, [], ctx.characterization,
                              budget_tokens)
        meta = base_meta()
        meta["options"] = {n: v for _, n, v
                           in _flat_options(ctx.current_options)}
        return [Prompt(text, meta)]

    if strategy == SUBSET_SPLIT:
        flat = _flat_options(ctx.current_options)
        if not flat:
            raise ContextIncomplete("options document is empty")
        slices = [flat[i:i + SLICE_SIZE]
                  for i in range(0, len(flat), SLICE_SIZE)]
        prompts = []
        for index, chunk in enumerate(slices):
            allowed = {name for _, name, _ in chunk}
            scope = (f"This is slice {index + 1} of {len(slices)}. Change "
                     "only options listed above; other slices are handled "
                     "separately.")

            def make_text(history, characterization, chunk=chunk):
                section_lines = ["[Options slice]"]
                current_section = None
                for section, name, value in chunk:
                    if section != current_section:
                        section_lines.append(f"[{section}]")
                        current_section = section
                    section_lines.append(f"  {name}={value}")
                blocks = [limits]
                if characterization is not None:
                    blocks.append(_render_characterization(characterization))
                blocks.append(latest)
                blocks.append(section_lines)
                blocks.append(notice)
                return _assemble(blocks, scope)

            text, _ = _fit_budget(make_text, [], ctx.characterization,
                                  budget_tokens)
            meta = base_meta()
            meta.update(slice_index=index, slice_count=len(slices),
                        allowed=sorted(allowed),
                        options={name: value for _, name, value in chunk})
            prompts.append(Prompt(text, meta))
        return prompts

    # ResourceGrouped
    groups = by_group(load_catalog())
    doc_names = {name for _, name, _ in _flat_options(ctx.current_options)}
    prompts = []
    for group_name in ("CPU", "Memory", "Storage", "Neutral"):
        members = [m.name for m in groups[group_name]
                   if m.name in doc_names]
        if not members:
            continue
        member_set = set(members)
        gauges = _GROUP_GAUGES[group_name]
        telemetry_lines = [f"[{group_name} telemetry]"]
        source = ctx.latest_result or {}
        for gauge in gauges:
            telemetry_lines.append(f"{gauge}={_render_gauge(source.get(gauge))}")
        scope = (f"These are the {group_name}-related options. Change only "
                 "options listed above; other groups are handled separately.")

        def make_text(history, characterization, member_set=member_set,
                      telemetry_lines=telemetry_lines, scope=scope,
                      group_name=group_name):
            blocks = [limits]
            if characterization is not None:
                blocks.append(_render_characterization(characterization))
            blocks.append(latest)
            blocks.append(telemetry_lines)
            blocks.append([f"[{group_name} options]"]
                          + _render_options(ctx.current_options, member_set))
            blocks.append(notice)
            return _assemble(blocks, scope)

        text, _ = _fit_budget(make_text, [], ctx.characterization,
                              budget_tokens)
        meta = base_meta()
        meta.update(group=group_name, allowed=sorted(member_set),
                    options={name: value for section, name, value
                             in _flat_options(ctx.current_options)
                             if name in member_set})
        prompts.append(Prompt(text, meta))
    if not prompts:
        raise ContextIncomplete("no catalog options present in the document")
    return prompts
