"""Typed metadata for tunable options.

The catalog ships as a versioned JSON data file. Every entry carries a
value type, an optional numeric range, runtime mutability, and the
resource group used to slice prompts by hardware pressure.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

VALUE_TYPES = ("int", "bool", "enum", "size_bytes", "string")
RESOURCE_GROUPS = ("CPU", "Memory", "Storage", "Neutral")

_SIZE_RE = re.compile(r"^(\d+)\s*([KMGT])?I?B?$", re.IGNORECASE)
_SIZE_MULT = {"K": 1024, "M": 1024 ** 2, "G": 1024 ** 3, "T": 1024 ** 4}

_TRUE_WORDS = ("true", "1", "yes", "on")
_FALSE_WORDS = ("false", "0", "no", "off")


@dataclass(frozen=True)
class OptionMeta:
    name: str
    section: str
    value_type: str
    range: Optional[tuple[float, float]] = None
    mutable_at_runtime: bool = False
    resource_group: str = "Neutral"
    choices: Optional[tuple[str, ...]] = None


def parse_size_bytes(value: str) -> Optional[int]:
    m = _SIZE_RE.match(value.strip())
    if not m:
        return None
    n = int(m.group(1))
    suffix = m.group(2)
    return n * _SIZE_MULT[suffix.upper()] if suffix else n


def coerce_value(meta: OptionMeta, value: str) -> tuple[bool, str, bool]:
    """Normalize a raw string for one option.

    Returns (valid, canonical_value, was_clamped). Canonical forms are
    stable so a second validation pass reports nothing.
    """
    raw = value.strip()
    t = meta.value_type
    if t == "string":
        return True, raw, False
    if t == "bool":
        low = raw.lower()
        if low in _TRUE_WORDS:
            return True, "true", False
        if low in _FALSE_WORDS:
            return True, "false", False
        return False, raw, False
    if t == "enum":
        if meta.choices and raw in meta.choices:
            return True, raw, False
        return False, raw, False
    if t == "int":
        try:
            n = int(raw, 10)
        except ValueError:
            return False, raw, False
    elif t == "size_bytes":
        parsed = parse_size_bytes(raw)
        if parsed is None:
            return False, raw, False
        n = parsed
    else:
        return False, raw, False
    clamped = False
    if meta.range is not None:
        lo, hi = meta.range
        if n < lo:
            n, clamped = int(lo), True
        elif n > hi:
            n, clamped = int(hi), True
    return True, str(n), clamped


@lru_cache(maxsize=1)
def load_catalog() -> tuple[OptionMeta, ...]:
    text = resources.files("lsmtune.data").joinpath(
        "options_catalog.json").read_text(encoding="utf-8")
    doc = json.loads(text)
    out = []
    for entry in doc["options"]:
        rng = entry.get("range")
        choices = entry.get("choices")
        meta = OptionMeta(
            name=entry["name"],
            section=entry["section"],
            value_type=entry["value_type"],
            range=tuple(rng) if rng else None,
            mutable_at_runtime=bool(entry.get("mutable_at_runtime", False)),
            resource_group=entry["resource_group"],
            choices=tuple(choices) if choices else None,
        )
        if meta.value_type not in VALUE_TYPES:
            raise ValueError(f"catalog entry {meta.name}: bad type")
        if meta.resource_group not in RESOURCE_GROUPS:
            raise ValueError(f"catalog entry {meta.name}: bad group")
        out.append(meta)
    return tuple(out)


def mutable_options(catalog: Optional[Sequence[OptionMeta]] = None,
                    ) -> tuple[OptionMeta, ...]:
    if catalog is None:
        catalog = load_catalog()
    return tuple(m for m in catalog if m.mutable_at_runtime)


def by_name(catalog: Optional[Sequence[OptionMeta]] = None,
            ) -> dict[str, OptionMeta]:
    if catalog is None:
        catalog = load_catalog()
    return {m.name: m for m in catalog}


def by_group(catalog: Optional[Sequence[OptionMeta]] = None,
             ) -> dict[str, tuple[OptionMeta, ...]]:
    if catalog is None:
        catalog = load_catalog()
    out: dict[str, list[OptionMeta]] = {g: [] for g in RESOURCE_GROUPS}
    for m in catalog:
        out[m.resource_group].append(m)
    return {g: tuple(ms) for g, ms in out.items()}
