"""Sectioned options documents: parse, emit, diff, validate.

The text format is the INI-style options file used by production LSM
stores: `[Section]` or `[Section "qualifier"]` headers, `key=value`
lines, `#` comments. Values stay verbatim strings; typing lives in the
option catalog, applied only during validation.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Sequence

from ..errors import DuplicateOption, OptionsParseError
from .catalog import OptionMeta, coerce_value, load_catalog

SECTION_RE = re.compile(r'^\[([A-Za-z0-9_/.-]+)(?:\s+"([^"]*)")?\]$')


@dataclass
class OptionsDocument:
    """Ordered sections of ordered key→value string pairs."""

    sections: dict[str, dict[str, str]] = field(default_factory=dict)

    def get(self, section: str, name: str) -> Optional[str]:
        return self.sections.get(section, {}).get(name)

    def set(self, section: str, name: str, value: str) -> None:
        self.sections.setdefault(section, {})[name] = value

    def copy(self) -> "OptionsDocument":
        return OptionsDocument(
            {sec: dict(opts) for sec, opts in self.sections.items()})


def section_base(section: str) -> str:
    """Section identity without the quoted qualifier."""
    return section.split(" ", 1)[0]


def parse_options(text: str) -> OptionsDocument:
    doc = OptionsDocument()
    current: Optional[str] = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("["):
            m = SECTION_RE.match(line)
            if not m:
                raise OptionsParseError(line_no,
                                        f"malformed section header {line!r}")
            name, qualifier = m.group(1), m.group(2)
            section = f'{name} "{qualifier}"' if qualifier is not None \
                else name
            if section in doc.sections:
                raise OptionsParseError(line_no,
                                        f"duplicate section {section!r}")
            doc.sections[section] = {}
            current = section
            continue
        if "=" not in line:
            raise OptionsParseError(line_no,
                                    f"expected key=value, got {line!r}")
        if current is None:
            raise OptionsParseError(line_no,
                                    "option appears before any section")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise OptionsParseError(line_no, "empty option name")
        if key in doc.sections[current]:
            raise DuplicateOption(
                line_no, f"option {key!r} repeated in section {current!r}")
        doc.sections[current][key] = value
    return doc


def emit_options(doc: OptionsDocument) -> str:
    lines: list[str] = []
    for section, opts in doc.sections.items():
        if lines:
            lines.append("")
        base, _, qualifier = section.partition(" ")
        lines.append(f"[{base} {qualifier}]" if qualifier else f"[{base}]")
        for key, value in opts.items():
            lines.append(f"  {key}={value}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class OptionDelta:
    section: str
    name: str
    old: Optional[str]
    new: Optional[str]


def diff_options(a: OptionsDocument, b: OptionsDocument) -> list[OptionDelta]:
    """Exactly the options whose values differ or exist on one side only."""
    out: list[OptionDelta] = []
    seen_sections = list(a.sections)
    seen_sections += [s for s in b.sections if s not in a.sections]
    for section in seen_sections:
        opts_a = a.sections.get(section, {})
        opts_b = b.sections.get(section, {})
        names = list(opts_a) + [n for n in opts_b if n not in opts_a]
        for name in names:
            old = opts_a.get(name)
            new = opts_b.get(name)
            if old != new:
                out.append(OptionDelta(section, name, old, new))
    return out


@dataclass(frozen=True)
class OptionViolation:
    section: str
    name: str
    value: str
    action: str  # removed_unknown | removed_invalid | clamped
    detail: str


@dataclass
class ValidationReport:
    doc: OptionsDocument
    violations: list[OptionViolation]


def _catalog_index(catalog: Sequence[OptionMeta],
                   ) -> dict[tuple[str, str], OptionMeta]:
    return {(meta.section, meta.name): meta for meta in catalog}


def validate_options(doc: OptionsDocument,
                     catalog: Optional[Sequence[OptionMeta]] = None,
                     ) -> ValidationReport:
    """Whitelist, type-check, and clamp a document against the catalog.

    Unknown options are removed, values that do not parse as their
    declared type are removed, and out-of-range values are clamped to
    the nearer bound. The repaired document always re-validates clean.
    """
    if catalog is None:
        catalog = load_catalog()
    index = _catalog_index(catalog)
    repaired = OptionsDocument()
    violations: list[OptionViolation] = []
    for section, opts in doc.sections.items():
        base = section_base(section)
        kept: dict[str, str] = {}
        for name, value in opts.items():
            meta = index.get((base, name))
            if meta is None:
                violations.append(OptionViolation(
                    section, name, value, "removed_unknown",
                    f"{base}.{name} is not in the option catalog"))
                continue
            ok, canonical, clamped = coerce_value(meta, value)
            if not ok:
                violations.append(OptionViolation(
                    section, name, value, "removed_invalid",
                    f"value {value!r} is not a valid {meta.value_type}"))
                continue
            if clamped:
                violations.append(OptionViolation(
                    section, name, value, "clamped",
                    f"value {value!r} clamped to {canonical}"))
            kept[name] = canonical
        repaired.sections[section] = kept
    return ValidationReport(repaired, violations)
