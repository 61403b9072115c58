"""Deterministic in-memory engine driven by the analytic cost model.

Correctness of get/put/delete/seek comes from an ordinary sorted map;
latency, stalls, and compaction behavior come from the shared kernel
cost model, so identical (options, op stream) inputs give bit-identical
timings on every platform.
"""

from __future__ import annotations

import bisect
import threading
from array import array
from typing import Optional

from .. import kernels
from ..errors import ImmutableOptionError
from .base import Engine, EngineStats
from .catalog import by_name, load_catalog, parse_size_bytes
from .options import OptionsDocument, section_base

_OP_CODE = {
    "Put": kernels.OP_PUT,
    "Get": kernels.OP_GET,
    "Delete": kernels.OP_DELETE,
    "Seek": kernels.OP_SEEK,
    "Merge": kernels.OP_MERGE,
}

# option name -> (config slot, converter)
_CONFIG_MAP = {
    "write_buffer_size": kernels.CFG_WRITE_BUFFER,
    "max_write_buffer_number": kernels.CFG_MAX_WRITE_BUFFERS,
    "level0_slowdown_writes_trigger": kernels.CFG_L0_SLOWDOWN,
    "level0_stop_writes_trigger": kernels.CFG_L0_STOP,
    "max_background_jobs": kernels.CFG_JOBS,
    "block_cache": kernels.CFG_BLOCK_CACHE,
    "block_size": kernels.CFG_BLOCK_SIZE,
}

_CONFIG_DEFAULTS = {
    kernels.CFG_WRITE_BUFFER: 64.0 * 1024 * 1024,
    kernels.CFG_MAX_WRITE_BUFFERS: 2.0,
    kernels.CFG_L0_SLOWDOWN: 20.0,
    kernels.CFG_L0_STOP: 36.0,
    kernels.CFG_JOBS: 2.0,
    kernels.CFG_BLOCK_CACHE: 32.0 * 1024 * 1024,
    kernels.CFG_BLOCK_SIZE: 4096.0,
    kernels.CFG_COMPRESSION: 1.0,
}


def _config_vector(doc: OptionsDocument):
    cfg = array("d", [0.0] * kernels.CFG_LEN)
    for slot, default in _CONFIG_DEFAULTS.items():
        cfg[slot] = default
    for section, opts in doc.sections.items():
        base = section_base(section)
        for name, value in opts.items():
            slot = _CONFIG_MAP.get(name)
            if slot is not None and base in ("DBOptions", "CFOptions",
                                             "TableOptions/BlockBasedTable"):
                parsed = parse_size_bytes(value)
                if parsed is not None:
                    cfg[slot] = float(parsed)
            elif name == "compression" and base == "CFOptions":
                cfg[kernels.CFG_COMPRESSION] = \
                    0.0 if value == "kNoCompression" else 1.0
    return cfg


class SimulatedEngine(Engine):
    def __init__(self, doc: OptionsDocument, data_dir: Optional[str] = None):
        self._doc = doc.copy()
        self._data_dir = data_dir
        self._cfg = _config_vector(doc)
        self._state = kernels.sim_init_state()
        self._store: dict[bytes, bytes] = {}
        self._sorted_keys: list[bytes] = []
        self._ops: dict[str, int] = {}
        self._now_us = 0.0
        self._lock = threading.Lock()
        self._catalog_by_name = by_name(load_catalog())
        self._closed = False

    # -- time ---------------------------------------------------------------

    @property
    def now_us(self) -> float:
        return self._now_us

    def advance_idle(self, idle_us: float) -> None:
        """Let virtual time pass without traffic (background work catches
        up lazily at the next operation)."""
        with self._lock:
            if idle_us > 0:
                self._now_us += idle_us

    def inject_slowdown(self, factor: float) -> None:
        """Fault hook: multiply every subsequent latency by factor."""
        with self._lock:
            self._state[kernels.ST_SLOW_FACTOR] = float(factor)

    # -- kv ops ---------------------------------------------------------------

    def _run_op(self, op_name: str, key_size: float,
                value_size: float) -> float:
        lat = kernels.sim_op(self._state, self._cfg, _OP_CODE[op_name],
                             key_size, value_size, self._now_us)
        self._now_us += lat
        self._ops[op_name] = self._ops.get(op_name, 0) + 1
        return lat

    def put(self, key: bytes, value: bytes) -> float:
        with self._lock:
            if key not in self._store:
                bisect.insort(self._sorted_keys, key)
            self._store[key] = value
            return self._run_op("Put", len(key), len(value))

    def get(self, key: bytes) -> tuple[Optional[bytes], float]:
        with self._lock:
            value = self._store.get(key)
            lat = self._run_op("Get", len(key),
                               len(value) if value is not None else 0.0)
            return value, lat

    def delete(self, key: bytes) -> float:
        with self._lock:
            if key in self._store:
                del self._store[key]
                idx = bisect.bisect_left(self._sorted_keys, key)
                del self._sorted_keys[idx]
            return self._run_op("Delete", len(key), 0.0)

    def merge(self, key: bytes, value: bytes) -> float:
        with self._lock:
            prev = self._store.get(key, b"")
            merged = prev + b"," + value if prev else value
            if key not in self._store:
                bisect.insort(self._sorted_keys, key)
            self._store[key] = merged
            return self._run_op("Merge", len(key), len(value))

    def seek(self, prefix: bytes, n: int) -> tuple[list[bytes], float]:
        with self._lock:
            start = bisect.bisect_left(self._sorted_keys, prefix)
            keys = self._sorted_keys[start:start + n]
            lat = self._run_op("Seek", len(prefix), float(len(keys)))
            return keys, lat

    # -- control ------------------------------------------------------------

    def set_mutable_options(self, changes: dict[str, str]) -> list[str]:
        applied: list[str] = []
        with self._lock:
            for name, value in changes.items():
                value = str(value)
                meta = self._catalog_by_name.get(name)
                if meta is None:
                    raise ImmutableOptionError(
                        f"{name!r} is not a known option")
                if not meta.mutable_at_runtime:
                    raise ImmutableOptionError(
                        f"{name!r} cannot change while the engine is open")
                for section in self._doc.sections:
                    if section_base(section) == meta.section \
                            and name in self._doc.sections[section]:
                        self._doc.sections[section][name] = value
                        break
                else:
                    qualified = meta.section if meta.section == "DBOptions" \
                        else f'{meta.section} "default"'
                    self._doc.set(qualified, name, value)
                slot = _CONFIG_MAP.get(name)
                if slot is not None:
                    parsed = parse_size_bytes(value)
                    if parsed is not None:
                        self._cfg[slot] = float(parsed)
                elif name == "compression":
                    self._cfg[kernels.CFG_COMPRESSION] = \
                        0.0 if value == "kNoCompression" else 1.0
                applied.append(name)
        return applied

    def stats(self) -> EngineStats:
        with self._lock:
            st = self._state
            live = st[kernels.ST_LIVE]
            cache = self._cfg[kernels.CFG_BLOCK_CACHE]
            hit = 1.0 if live <= cache else (cache / live if live else 1.0)
            l0 = int(st[kernels.ST_L0_FILES])
            deep_files = int(st[kernels.ST_COMPACTED]
                             // max(self._cfg[kernels.CFG_WRITE_BUFFER], 1.0))
            levels = [l0] + [0] * 6
            for lvl in range(1, 7):
                capacity = 4 * 10 ** (lvl - 1)
                take = min(deep_files, capacity)
                levels[lvl] = take
                deep_files -= take
                if deep_files <= 0:
                    break
            return EngineStats(
                ops_completed=dict(self._ops),
                write_stall_micros=int(st[kernels.ST_STALL_US]),
                pending_compaction_bytes=int(st[kernels.ST_PENDING]),
                level_file_counts=levels,
                block_cache_hit_ratio=hit,
            )

    def close(self) -> None:
        self._closed = True

    @property
    def options_doc(self) -> OptionsDocument:
        return self._doc
