"""Run a workload spec against an engine and collect windowed telemetry.

The load loop drives N logical clients round-robin over one clock: the
engine's virtual clock when it has one, wall time otherwise. Each client
owns an independent RNG stream, so a (spec, options, seed) triple yields
a bit-identical timeline on the simulated engine, cpu/rss aside.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from array import array
from dataclasses import asdict, dataclass, field
from typing import Optional

from . import kernels
from .engine import Engine, EngineStats, emit_options
from .errors import (
    EmptyHistogram,
    EngineFailure,
    EngineIoError,
    IntrospectionUnavailable,
)
from .trace import OP_PUT, OP_MERGE
from .workload import (
    WorkloadSpec,
    derive_rng,
    key_bytes,
    op_chooser,
    sample_key_index,
    sample_size,
    validate_spec,
)

DEFAULT_SAMPLER_PERIOD_S = 1.0
SEEK_SCAN_KEYS = 10

_PAYLOAD = b"0123456789abcdef" * 4096


def _payload(size: int) -> bytes:
    if size <= len(_PAYLOAD):
        return _PAYLOAD[:size]
    reps = -(-size // len(_PAYLOAD))
    return (_PAYLOAD * reps)[:size]


class LatencyHistogram:
    """Log-spaced latency counters, 1 us to 100 s at 2% resolution."""

    __slots__ = ("counts", "total")

    def __init__(self) -> None:
        self.counts = array("Q", bytes(8 * kernels.HIST_NBUCKETS))
        self.total = 0

    def record(self, latency_us: float) -> None:
        self.counts[kernels.hist_bucket(latency_us)] += 1
        self.total += 1

    def merge(self, other: "LatencyHistogram") -> None:
        for i, c in enumerate(other.counts):
            if c:
                self.counts[i] += c
        self.total += other.total

    def clear(self) -> None:
        for i in range(len(self.counts)):
            self.counts[i] = 0
        self.total = 0

    def copy(self) -> "LatencyHistogram":
        out = LatencyHistogram()
        out.counts = array("Q", self.counts)
        out.total = self.total
        return out


def percentile(hist: LatencyHistogram, p: float) -> float:
    """Smallest bucket upper bound covering at least p% of samples."""
    if not 0.0 < p <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {p}")
    if hist.total == 0:
        raise EmptyHistogram("no latency samples recorded")
    need = p / 100.0 * hist.total - 1e-9
    cum = 0
    for bucket, count in enumerate(hist.counts):
        cum += count
        if cum >= need:
            return kernels.hist_bucket_upper(bucket)
    return kernels.hist_bucket_upper(kernels.HIST_NBUCKETS - 1)


@dataclass
class TelemetrySnapshot:
    """One sampler window: throughput, tail latency, process and engine
    gauges, and the op mix actually realized in the window."""

    ts_s: float
    throughput_ops_s: float
    p99_latency_us: float
    cpu_percent: Optional[float]
    rss_bytes: Optional[int]
    engine: EngineStats
    realized_op_ratios: dict[str, float]
    window_ops: int


@dataclass
class BenchmarkResult:
    spec_name: str
    options_digest: str
    timeline: list[TelemetrySnapshot]
    overall_throughput_ops_s: float
    overall_p99_us: float
    duration_s: float
    limits: dict[str, int]
    total_ops: int
    aborted: bool = False


class ProcessIntrospection:
    """cpu/rss reader for the process doing the engine work."""

    def __init__(self, pid: Optional[int] = None) -> None:
        try:
            import psutil
        except ImportError as exc:
            raise IntrospectionUnavailable("psutil is not installed") from exc
        try:
            self._proc = psutil.Process(pid)
            self._proc.cpu_percent(None)  # prime the interval counter
        except Exception as exc:
            raise IntrospectionUnavailable(str(exc)) from exc

    def read(self) -> tuple[float, int]:
        try:
            cpu = self._proc.cpu_percent(None)
            rss = self._proc.memory_info().rss
        except Exception as exc:
            raise IntrospectionUnavailable(str(exc)) from exc
        cores = os.cpu_count() or 1
        return min(max(cpu, 0.0), 100.0 * cores), int(rss)


def sample_telemetry(engine: Engine,
                     introspection: Optional[ProcessIntrospection],
                     *,
                     ts_s: float,
                     window_s: float,
                     window_hist: LatencyHistogram,
                     window_op_counts: dict[str, int]) -> TelemetrySnapshot:
    """Combine process gauges, windowed rates, and engine stats.

    cpu/rss stay null when introspection is absent or fails; everything
    else is populated regardless.
    """
    cpu: Optional[float] = None
    rss: Optional[int] = None
    if introspection is not None:
        try:
            cpu, rss = introspection.read()
        except IntrospectionUnavailable:
            pass
    ops = window_hist.total
    throughput = ops / window_s if window_s > 0 else 0.0
    p99 = percentile(window_hist, 99.0) if ops else 0.0
    total = sum(window_op_counts.values())
    ratios = {op: c / total for op, c in window_op_counts.items()} \
        if total else {}
    return TelemetrySnapshot(
        ts_s=ts_s,
        throughput_ops_s=throughput,
        p99_latency_us=p99,
        cpu_percent=cpu,
        rss_bytes=rss,
        engine=engine.stats(),
        realized_op_ratios=ratios,
        window_ops=ops,
    )


def options_digest(engine: Engine) -> str:
    text = emit_options(engine.options_doc)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class _VirtualClock:
    """Bench time rides the engine's own microsecond clock."""

    def __init__(self, engine) -> None:
        self._engine = engine

    def now(self) -> float:
        return self._engine.now_us / 1e6

    def wait_until(self, t_s: float) -> None:
        gap_us = t_s * 1e6 - self._engine.now_us
        if gap_us > 0:
            self._engine.advance_idle(gap_us)


class _WallClock:
    def now(self) -> float:
        return time.monotonic()

    def wait_until(self, t_s: float) -> None:
        gap = t_s - time.monotonic()
        if gap > 0:
            time.sleep(gap)


def _default_limits() -> dict[str, int]:
    mem = 0
    try:
        mem = os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        pass
    return {"cpu_cores": os.cpu_count() or 1, "mem_bytes": int(mem)}


def run_benchmark(spec: WorkloadSpec,
                  engine: Engine,
                  sampler_period_s: float = DEFAULT_SAMPLER_PERIOD_S,
                  limits: Optional[dict[str, int]] = None,
                  introspection: Optional[ProcessIntrospection] = None,
                  ) -> BenchmarkResult:
    """Execute every phase in order and aggregate the full timeline.

    Open-loop phases (target_ops_per_s set) pace ops on a token schedule;
    closed-loop phases issue back to back. An engine failure stops the
    run and flags the partial result instead of raising.
    """
    problems = validate_spec(spec)
    if problems:
        raise ValueError("invalid workload spec: " + "; ".join(problems))
    if sampler_period_s <= 0:
        raise ValueError("sampler_period_s must be positive")

    virtual = hasattr(engine, "now_us")
    clock = _VirtualClock(engine) if virtual else _WallClock()
    if introspection is None and not virtual:
        try:
            introspection = ProcessIntrospection()
        except IntrospectionUnavailable:
            introspection = None

    digest = options_digest(engine)
    t0 = clock.now()
    overall_hist = LatencyHistogram()
    timeline: list[TelemetrySnapshot] = []
    window_hist = LatencyHistogram()
    window_counts: dict[str, int] = {}
    next_sample = t0 + sampler_period_s
    last_boundary = t0
    total_ops = 0
    aborted = False

    def flush_window(boundary_s: float) -> None:
        nonlocal window_hist, window_counts, last_boundary
        snap = sample_telemetry(
            engine, introspection,
            ts_s=boundary_s - t0,
            window_s=boundary_s - last_boundary,
            window_hist=window_hist,
            window_op_counts=window_counts,
        )
        timeline.append(snap)
        window_hist = LatencyHistogram()
        window_counts = {}
        last_boundary = boundary_s

    def advance_time(target_s: float) -> None:
        # move the clock forward, emitting every sampler window crossed
        nonlocal next_sample
        while next_sample <= target_s:
            clock.wait_until(next_sample)
            flush_window(next_sample)
            next_sample += sampler_period_s
        clock.wait_until(target_s)

    def drain_samples() -> None:
        nonlocal next_sample
        now = clock.now()
        while next_sample <= now:
            flush_window(next_sample)
            next_sample += sampler_period_s

    for phase_index, phase in enumerate(spec.phases):
        phase_start = t0 + phase.start_time_s
        if phase_start > clock.now():
            advance_time(phase_start)
        effective_start = max(clock.now(), phase_start)
        phase_end = effective_start + phase.duration_s

        nclients = max(1, phase.client_threads)
        # Separate streams per purpose so a small change in one phase knob
        # (say the op mix) cannot desynchronize every other draw; replays
        # of near-identical specs then stay key-aligned.
        clients = [(derive_rng(spec.seed, ci, phase_index, lane=0),
                    derive_rng(spec.seed, ci, phase_index, lane=1),
                    derive_rng(spec.seed, ci, phase_index, lane=2))
                   for ci in range(nclients)]
        choose = op_chooser(phase.query_ratios)
        rate = phase.target_ops_per_s
        issued = 0
        client_index = 0

        while not aborted:
            if rate:
                slot = effective_start + issued / rate
                if slot >= phase_end:
                    break
                if slot > clock.now():
                    advance_time(slot)
            elif clock.now() >= phase_end:
                break

            op_rng, key_rng, size_rng = clients[client_index]
            client_index += 1
            if client_index == nclients:
                client_index = 0

            op = choose(op_rng)
            key_width = sample_size(phase.key_size, 0.0, key_rng)
            index = sample_key_index(phase.access_dist, phase.key_space,
                                     key_rng)
            key = key_bytes(index, key_width)
            try:
                if op == OP_PUT:
                    vs = sample_size(phase.value_size,
                                     phase.value_size_stddev, size_rng)
                    lat = engine.put(key, _payload(vs))
                elif op == OP_MERGE:
                    vs = sample_size(phase.value_size,
                                     phase.value_size_stddev, size_rng)
                    lat = engine.merge(key, _payload(vs))
                elif op == "Get":
                    lat = engine.get(key)[1]
                elif op == "Delete":
                    lat = engine.delete(key)
                else:
                    lat = engine.seek(key, SEEK_SCAN_KEYS)[1]
            except (EngineFailure, EngineIoError):
                aborted = True
                break

            overall_hist.record(lat)
            window_hist.record(lat)
            window_counts[op] = window_counts.get(op, 0) + 1
            total_ops += 1
            issued += 1
            drain_samples()

        if aborted:
            break
        advance_time(phase_end)

    end = clock.now()
    if window_hist.total or end > last_boundary + 1e-9:
        flush_window(end)

    duration = end - t0
    throughput = total_ops / duration if duration > 0 else 0.0
    overall_p99 = percentile(overall_hist, 99.0) if overall_hist.total else 0.0
    return BenchmarkResult(
        spec_name=spec.name,
        options_digest=digest,
        timeline=timeline,
        overall_throughput_ops_s=throughput,
        overall_p99_us=overall_p99,
        duration_s=duration,
        limits=dict(limits) if limits else _default_limits(),
        total_ops=total_ops,
        aborted=aborted,
    )


def result_to_json(result: BenchmarkResult) -> str:
    return json.dumps(asdict(result), indent=2, sort_keys=True,
                      allow_nan=False) + "\n"


def timeline_to_csv(result: BenchmarkResult) -> str:
    lines = ["ts,throughput,p99_us,cpu,rss"]
    for snap in result.timeline:
        cpu = "" if snap.cpu_percent is None else f"{snap.cpu_percent:.2f}"
        rss = "" if snap.rss_bytes is None else str(snap.rss_bytes)
        lines.append(f"{snap.ts_s:.6f},{snap.throughput_ops_s:.3f},"
                     f"{snap.p99_latency_us:.3f},{cpu},{rss}")
    return "\n".join(lines) + "\n"
