"""Uniform engine interface and the factory that opens implementations."""

from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

from ..errors import EngineOpenError
from .options import OptionsDocument

SIMULATED = "simulated"
EXTERNAL = "external"
ENGINE_KINDS = (SIMULATED, EXTERNAL)


@dataclass
class EngineStats:
    """Monotone counters and gauges exported by an engine."""

    ops_completed: dict[str, int] = field(default_factory=dict)
    write_stall_micros: int = 0
    pending_compaction_bytes: int = 0
    level_file_counts: list[int] = field(default_factory=list)
    block_cache_hit_ratio: float = 0.0


class Engine(ABC):
    """Key-value engine handle shared by all client threads."""

    @abstractmethod
    def put(self, key: bytes, value: bytes) -> float:
        """Store a pair; returns the op latency in microseconds."""

    @abstractmethod
    def get(self, key: bytes) -> tuple[Optional[bytes], float]:
        """Look up a key; returns (value or None, latency_us)."""

    @abstractmethod
    def delete(self, key: bytes) -> float: ...

    @abstractmethod
    def merge(self, key: bytes, value: bytes) -> float: ...

    @abstractmethod
    def seek(self, prefix: bytes, n: int) -> tuple[list[bytes], float]:
        """Keys >= prefix in order, at most n; returns (keys, latency_us)."""

    @abstractmethod
    def set_mutable_options(self, changes: dict[str, str]) -> list[str]:
        """Apply runtime-mutable options; returns the applied names."""

    @abstractmethod
    def stats(self) -> EngineStats: ...

    @abstractmethod
    def close(self) -> None: ...

    @property
    @abstractmethod
    def options_doc(self) -> OptionsDocument: ...


def open_engine(kind: str, doc: OptionsDocument,
                data_dir: Optional[str] = None) -> Engine:
    """Open an engine of the requested kind with the given options."""
    if not isinstance(doc, OptionsDocument):
        raise EngineOpenError("options must be an OptionsDocument")
    lowered = (kind or "").lower()
    if lowered == SIMULATED:
        from .simulated import SimulatedEngine
        return SimulatedEngine(doc, data_dir)
    if lowered == EXTERNAL:
        from .external import ExternalEngine
        return ExternalEngine(doc, data_dir)
    raise EngineOpenError(
        f"unknown engine kind {kind!r}, expected one of {ENGINE_KINDS}")
