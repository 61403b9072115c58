"""Turn free-text advisor replies into validated option deltas.

Nothing in a reply is trusted: the candidate block is parsed leniently,
diffed against the base document, then pushed through catalog
validation. Anything unknown, mistyped, or out of range is dropped and
recorded; the engine only ever sees the surviving entries.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..engine import (
    OptionMeta,
    OptionsDocument,
    OptionViolation,
    by_name,
    load_catalog,
    section_base,
    validate_options,
)

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)
_SECTION_LINE_RE = re.compile(
    r'^\s*\[([A-Za-z0-9_/.-]+)(?:\s+"([^"]*)")?\]\s*$')
_KV_LINE_RE = re.compile(
    r"^\s*([A-Za-z_][A-Za-z0-9_.]*)\s*=\s*(\S[^#]*?)\s*(?:#.*)?$")


@dataclass
class AdvisorResponse:
    raw_text: str
    extracted_delta: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    usable: bool = False


def _candidate_text(raw_text: str) -> Optional[str]:
    """The last fenced block, or the densest run of key=value lines."""
    fenced = _FENCE_RE.findall(raw_text)
    if fenced:
        return fenced[-1]
    lines = raw_text.splitlines()
    best: list[str] = []
    run: list[str] = []
    for line in lines:
        if _KV_LINE_RE.match(line) or _SECTION_LINE_RE.match(line):
            run.append(line)
        else:
            if len(run) > len(best):
                best = run
            run = []
    if len(run) > len(best):
        best = run
    return "\n".join(best) if best else None


def _parse_loose(text: str,
                 catalog_index: dict[str, OptionMeta],
                 ) -> OptionsDocument:
    """Parse a candidate block, inferring sections for bare options.

    Free-text replies often skip section headers; a known option is
    placed in its catalog section so validation can see it. Later
    duplicates overwrite earlier ones rather than erroring.
    """
    doc = OptionsDocument()
    current: Optional[str] = None
    for line in text.splitlines():
        stripped = line.strip()
        if not stripped or stripped.startswith(("#", ";", "//")):
            continue
        m = _SECTION_LINE_RE.match(line)
        if m:
            name, qualifier = m.group(1), m.group(2)
            current = f'{name} "{qualifier}"' if qualifier is not None \
                else name
            doc.sections.setdefault(current, {})
            continue
        m = _KV_LINE_RE.match(line)
        if not m:
            continue
        name, value = m.group(1), m.group(2).strip()
        meta = catalog_index.get(name)
        if current is not None and (meta is None
                                    or section_base(current) == meta.section):
            doc.sections.setdefault(current, {})[name] = value
        elif meta is not None:
            section = meta.section if meta.section == "DBOptions" \
                or meta.section == "Version" else f'{meta.section} "default"'
            doc.sections.setdefault(section, {})[name] = value
        elif current is not None:
            doc.sections.setdefault(current, {})[name] = value
        # bare unknown option with no section in sight: drop silently;
        # validation could only reject it anyway
    return doc


def extract_options(raw_text: str,
                    base: OptionsDocument,
                    catalog: Optional[Sequence[OptionMeta]] = None,
                    ) -> AdvisorResponse:
    """Parse, diff against base, validate. All failure is data."""
    if catalog is None:
        catalog = load_catalog()
    candidate = _candidate_text(raw_text)
    if candidate is None:
        return AdvisorResponse(raw_text=raw_text)
    proposed = _parse_loose(candidate, by_name(catalog))
    report = validate_options(proposed, catalog)

    base_values = {}
    home_section = {}
    for section, opts in base.sections.items():
        home_section.setdefault(section_base(section), section)
        for name, value in opts.items():
            base_values[(section_base(section), name)] = value

    delta: dict[tuple[str, str], str] = {}
    for section, opts in report.doc.sections.items():
        for name, value in opts.items():
            key = (section_base(section), name)
            if base_values.get(key) != value:
                # address the base document's own section spelling so a
                # later apply lands in place instead of forking a section
                target = section if section in base.sections \
                    else home_section.get(section_base(section), section)
                delta[(target, name)] = value

    return AdvisorResponse(
        raw_text=raw_text,
        extracted_delta=delta,
        violations=list(report.violations),
        usable=bool(delta),
    )


def merge_responses(responses: Sequence[AdvisorResponse],
                    ) -> tuple[dict, list[tuple[str, str]]]:
    """Combine slice responses in order; the first writer of an option
    wins and later conflicting writes are recorded, not applied."""
    merged: dict[tuple[str, str], str] = {}
    claimed: dict[str, tuple[str, str]] = {}
    conflicts: list[tuple[str, str]] = []
    for response in responses:
        if not response.usable:
            continue
        for (section, name), value in response.extracted_delta.items():
            if name in claimed and claimed[name][1] != value:
                conflicts.append((name, value))
                continue
            if name in claimed:
                continue
            merged[(section, name)] = value
            claimed[name] = (section, value)
    return merged, conflicts


def delta_to_document(delta: dict) -> OptionsDocument:
    """Materialize a delta mapping back into a sectioned document."""
    doc = OptionsDocument()
    for (section, name), value in delta.items():
        doc.set(section, name, value)
    return doc
