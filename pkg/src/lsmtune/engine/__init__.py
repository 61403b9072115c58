"""Storage engine adapters and the options-file toolchain.

The options format, catalog-backed validation, and the Engine interface
live here.  `open_engine` picks the concrete adapter: "simulated" is the
deterministic in-memory model used by tests and offline tuning runs;
"external" binds to a real store when its driver is installed.
"""

from .base import ENGINE_KINDS, EXTERNAL, SIMULATED, Engine, EngineStats, open_engine
from .catalog import (
    RESOURCE_GROUPS,
    VALUE_TYPES,
    OptionMeta,
    by_group,
    by_name,
    coerce_value,
    load_catalog,
    mutable_options,
    parse_size_bytes,
)
from .options import (
    OptionDelta,
    OptionsDocument,
    OptionViolation,
    ValidationReport,
    diff_options,
    emit_options,
    parse_options,
    section_base,
    validate_options,
)

__all__ = [
    "ENGINE_KINDS",
    "EXTERNAL",
    "SIMULATED",
    "Engine",
    "EngineStats",
    "open_engine",
    "RESOURCE_GROUPS",
    "VALUE_TYPES",
    "OptionMeta",
    "by_group",
    "by_name",
    "coerce_value",
    "load_catalog",
    "mutable_options",
    "parse_size_bytes",
    "OptionDelta",
    "OptionsDocument",
    "OptionViolation",
    "ValidationReport",
    "diff_options",
    "emit_options",
    "parse_options",
    "section_base",
    "validate_options",
]
