"""Adapter for a real store via the optional rocksdict driver.

Latencies are wall-clock here, so nothing in this module is
deterministic; the simulated engine is the one tests rely on.
"""

from __future__ import annotations

import time
from typing import Optional

from ..errors import EngineIoError, EngineOpenError, ImmutableOptionError
from .base import Engine, EngineStats
from .catalog import by_name
from .options import OptionsDocument, section_base


def _now_us() -> float:
    return time.perf_counter() * 1e6


class ExternalEngine(Engine):
    """Wraps a rocksdict.Rdict opened at data_dir.

    Options outside the small set rocksdict exposes programmatically are
    carried in the document only; they still validate and diff, they just
    do not reach the store.
    """

    def __init__(self, doc: OptionsDocument, data_dir: str) -> None:
        try:
            import rocksdict
        except ImportError as exc:
            raise EngineOpenError(
                "external engine requires the rocksdict package") from exc
        if not data_dir:
            raise EngineOpenError("external engine requires a data_dir")
        self._doc = doc.copy()
        opts = rocksdict.Options()
        opts.create_if_missing(True)
        for section, items in doc.sections.items():
            base = section_base(section)
            if base != "DBOptions":
                continue
            jobs = items.get("max_background_jobs")
            if jobs is not None:
                try:
                    opts.set_max_background_jobs(int(jobs))
                except (ValueError, AttributeError):
                    pass
        try:
            self._db = rocksdict.Rdict(data_dir, opts)
        except Exception as exc:
            raise EngineOpenError(f"cannot open store at {data_dir}: {exc}") from exc
        self._ops: dict[str, int] = {}

    def _timed(self, op: str, fn):
        t0 = _now_us()
        try:
            out = fn()
        except Exception as exc:
            raise EngineIoError(str(exc)) from exc
        self._ops[op] = self._ops.get(op, 0) + 1
        return out, _now_us() - t0

    def put(self, key: bytes, value: bytes) -> float:
        _, lat = self._timed("Put", lambda: self._db.put(key, value))
        return lat

    def get(self, key: bytes) -> tuple[Optional[bytes], float]:
        out, lat = self._timed("Get", lambda: self._db.get(key))
        return out, lat

    def delete(self, key: bytes) -> float:
        _, lat = self._timed("Delete", lambda: self._db.delete(key))
        return lat

    def merge(self, key: bytes, value: bytes) -> float:
        # rocksdict has no merge operator configured by default; emulate
        # with append-on-read so the op is still meaningful
        def do() -> None:
            old = self._db.get(key)
            self._db.put(key, (old or b"") + value)
        _, lat = self._timed("Merge", do)
        return lat

    def seek(self, prefix: bytes, max_results: int) -> tuple[list, float]:
        def do() -> list:
            it = self._db.iter()
            it.seek(prefix)
            found = []
            while it.valid() and len(found) < max_results:
                k = it.key()
                if not isinstance(k, bytes) or not k.startswith(prefix):
                    break
                found.append(k)
                it.next()
            return found
        out, lat = self._timed("Seek", do)
        return out, lat

    def set_mutable_options(self, changes: dict) -> list:
        applied = []
        catalog = by_name()
        for name, value in changes.items():
            meta = catalog.get(name)
            if meta is None or not meta.mutable_at_runtime:
                raise ImmutableOptionError(name)
            try:
                self._db.set_options({name: str(value)})
            except Exception:
                continue
            for section in list(self._doc.sections):
                if section_base(section) == meta.section and \
                        name in self._doc.sections[section]:
                    self._doc.sections[section][name] = str(value)
                    break
            else:
                self._doc.set(meta.section, name, str(value))
            applied.append(name)
        return applied

    def stats(self) -> EngineStats:
        def prop(name: str) -> int:
            try:
                raw = self._db.property_value(name)
            except Exception:
                return 0
            try:
                return int(raw)
            except (TypeError, ValueError):
                return 0

        levels = []
        for lvl in range(7):
            levels.append(prop(f"rocksdb.num-files-at-level{lvl}"))
        return EngineStats(
            ops_completed=dict(self._ops),
            write_stall_micros=prop("rocksdb.stall-micros"),
            pending_compaction_bytes=prop(
                "rocksdb.estimate-pending-compaction-bytes"),
            level_file_counts=levels,
            block_cache_hit_ratio=0.0,
        )

    def close(self) -> None:
        try:
            self._db.close()
        except Exception:
            pass

    @property
    def options_doc(self) -> OptionsDocument:
        return self._doc.copy()
