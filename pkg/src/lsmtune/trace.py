"""Query-level trace ingestion.

Traces are CSV files, one operation per line:

    timestamp_us,OP,hexkey,value_size,column_family

`OP` is one of PUT/GET/DELETE/SEEK/MERGE, keys are hex-encoded bytes, and
the column family defaults to "default" when the field is omitted. Files
ending in ``.gz`` are transparently decompressed. Parsing is streaming and
tolerates isolated malformed lines; more than 1% malformed is an error.
"""

from __future__ import annotations

import gzip
import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, Union

from .errors import (
    EmptyTrace,
    FormatError,
    InvalidWindow,
    UnreadableSource,
)
from . import kernels

OP_PUT = "Put"
OP_GET = "Get"
OP_DELETE = "Delete"
OP_SEEK = "Seek"
OP_MERGE = "Merge"

OP_NAMES = (OP_PUT, OP_GET, OP_DELETE, OP_SEEK, OP_MERGE)

_TOKEN_TO_OP = {
    "PUT": OP_PUT,
    "GET": OP_GET,
    "DELETE": OP_DELETE,
    "SEEK": OP_SEEK,
    "MERGE": OP_MERGE,
}
_OP_TO_TOKEN = {v: k for k, v in _TOKEN_TO_OP.items()}

# ops that carry a payload; all others must report value_size == 0
VALUE_OPS = frozenset((OP_PUT, OP_MERGE))

MALFORMED_LINE_TOLERANCE = 0.01
DEFAULT_WINDOW_US = 10_000_000


@dataclass(frozen=True)
class TraceRecord:
    timestamp_us: int
    op: str
    key: bytes
    value_size: int = 0
    column_family: str = "default"


@dataclass
class TimeWindowSummary:
    """Condensed statistics for one fixed-length slice of the trace."""

    window_start_us: int
    window_len_us: int
    op_counts: dict[str, int] = field(default_factory=dict)
    key_size_stats: dict[str, float] = field(default_factory=dict)
    value_size_stats: dict[str, float] = field(default_factory=dict)
    total_accesses: int = 0
    distinct_keys: int = 0


@dataclass
class TraceStats:
    key_size_histogram: dict[int, int]
    value_size_histogram: dict[int, int]
    per_key_access_counts: dict[int, int]
    op_ratios: dict[str, float]
    duration_us: int


def hash_key(key: bytes) -> int:
    """Stable 64-bit key digest; folds 8-byte chunks through the mixer."""
    h = kernels.mix64(len(key) + 1)
    for i in range(0, len(key), 8):
        chunk = int.from_bytes(key[i:i + 8], "little")
        h = kernels.mix64(h ^ chunk)
    return h


PathOrStream = Union[str, Path, IO[bytes], IO[str]]


def _open_source(source: PathOrStream) -> Iterator[str]:
    if isinstance(source, (str, Path)):
        path = Path(source)
        try:
            if path.suffix == ".gz":
                return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8")
            return open(path, "r", encoding="utf-8")
        except OSError as exc:
            raise UnreadableSource(f"cannot open trace {path}: {exc}") from exc
    if isinstance(source, io.TextIOBase):
        return source
    try:
        return io.TextIOWrapper(source, encoding="utf-8")  # type: ignore[arg-type]
    except Exception as exc:  # pragma: no cover - exotic stream types
        raise UnreadableSource(f"unsupported trace source: {exc}") from exc


def _parse_line(line: str, prev_ts: int) -> TraceRecord:
    parts = line.split(",")
    if len(parts) == 4:
        parts.append("default")
    if len(parts) != 5:
        raise ValueError("expected 4 or 5 comma-separated fields")
    ts = int(parts[0])
    if ts < prev_ts:
        raise ValueError("timestamp decreased")
    op = _TOKEN_TO_OP.get(parts[1].strip().upper())
    if op is None:
        raise ValueError(f"unknown op {parts[1]!r}")
    key = bytes.fromhex(parts[2].strip())
    value_size = int(parts[3])
    if value_size < 0:
        raise ValueError("negative value_size")
    if op not in VALUE_OPS and value_size != 0:
        raise ValueError(f"{op} carries value_size {value_size}")
    cf = parts[4].strip() or "default"
    return TraceRecord(ts, op, key, value_size, cf)


def parse_trace(source: PathOrStream) -> Iterator[TraceRecord]:
    """Yield records lazily; skips malformed lines up to a 1% budget.

    Raises FormatError once the stream ends if more than 1% of
    non-comment lines failed to parse, and UnreadableSource when the
    file cannot be opened or read.
    """
    fh = _open_source(source)
    total = 0
    malformed = 0
    prev_ts = 0
    try:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            total += 1
            try:
                rec = _parse_line(line, prev_ts)
            except ValueError:
                malformed += 1
                continue
            prev_ts = rec.timestamp_us
            yield rec
    except OSError as exc:
        raise UnreadableSource(f"trace read failed: {exc}") from exc
    finally:
        fh.close()
    if total and malformed / total > MALFORMED_LINE_TOLERANCE:
        raise FormatError(
            f"{malformed} of {total} lines malformed "
            f"(tolerance {MALFORMED_LINE_TOLERANCE:.0%})")


def write_trace(path: Union[str, Path], records: Iterable[TraceRecord]) -> int:
    """Serialize records to the CSV format; returns lines written."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    n = 0
    with opener(path, "wt", encoding="utf-8") as fh:  # type: ignore[operator]
        for rec in records:
            fh.write(f"{rec.timestamp_us},{_OP_TO_TOKEN[rec.op]},"
                     f"{rec.key.hex()},{rec.value_size},{rec.column_family}\n")
            n += 1
    return n


def _size_stats(sizes: list[int]) -> dict[str, float]:
    if not sizes:
        return {"mean": 0.0, "median": 0.0, "mode": 0.0}
    sizes.sort()
    n = len(sizes)
    mid = n // 2
    median = float(sizes[mid]) if n % 2 else (sizes[mid - 1] + sizes[mid]) / 2.0
    counts = Counter(sizes)
    top = max(counts.values())
    mode = min(s for s, c in counts.items() if c == top)
    return {"mean": sum(sizes) / n, "median": median, "mode": float(mode)}


def summarize_windows(records: Iterable[TraceRecord],
                      window_len_us: int = DEFAULT_WINDOW_US,
                      ) -> list[TimeWindowSummary]:
    """Tile [0, duration] into fixed windows and summarize each.

    Empty windows inside the span are kept (zero counts) so that
    downstream consumers see a contiguous timeline.
    """
    if window_len_us <= 0:
        raise InvalidWindow(f"window_len_us must be > 0, got {window_len_us}")

    windows: list[TimeWindowSummary] = []
    cur: list[TraceRecord] = []
    cur_idx = 0

    def _flush(idx: int, batch: list[TraceRecord]) -> TimeWindowSummary:
        counts: dict[str, int] = {}
        key_sizes: list[int] = []
        value_sizes: list[int] = []
        keys = set()
        for r in batch:
            counts[r.op] = counts.get(r.op, 0) + 1
            key_sizes.append(len(r.key))
            if r.op in VALUE_OPS:
                value_sizes.append(r.value_size)
            keys.add(hash_key(r.key))
        return TimeWindowSummary(
            window_start_us=idx * window_len_us,
            window_len_us=window_len_us,
            op_counts=counts,
            key_size_stats=_size_stats(key_sizes),
            value_size_stats=_size_stats(value_sizes),
            total_accesses=len(batch),
            distinct_keys=len(keys),
        )

    for rec in records:
        idx = rec.timestamp_us // window_len_us
        if idx < cur_idx:
            raise InvalidWindow("records not sorted by timestamp")
        while idx > cur_idx:
            windows.append(_flush(cur_idx, cur))
            cur = []
            cur_idx += 1
        cur.append(rec)
    windows.append(_flush(cur_idx, cur))
    if len(windows) == 1 and windows[0].total_accesses == 0:
        return []
    return windows


def aggregate_stats(records: Iterable[TraceRecord]) -> TraceStats:
    """Exact whole-trace histograms, per-key access counts and op mix."""
    key_hist: Counter[int] = Counter()
    value_hist: Counter[int] = Counter()
    per_key: Counter[int] = Counter()
    op_counts: Counter[str] = Counter()
    first_ts = None
    last_ts = 0
    for rec in records:
        if first_ts is None:
            first_ts = rec.timestamp_us
        last_ts = rec.timestamp_us
        key_hist[len(rec.key)] += 1
        if rec.op in VALUE_OPS:
            value_hist[rec.value_size] += 1
        per_key[hash_key(rec.key)] += 1
        op_counts[rec.op] += 1
    if first_ts is None:
        raise EmptyTrace("aggregate_stats needs at least one record")
    total = sum(op_counts.values())
    return TraceStats(
        key_size_histogram=dict(key_hist),
        value_size_histogram=dict(value_hist),
        per_key_access_counts=dict(per_key),
        op_ratios={op: c / total for op, c in op_counts.items()},
        duration_us=last_ts,
    )
