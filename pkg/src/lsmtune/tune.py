"""Tuning orchestration: outer loop, fine-tuning, flagger, realtime.

The outer loop benchmarks a candidate, asks the advisor for a delta,
validates it, optionally fine-tunes the touched subset, and repeats
until the budget runs out or throughput stabilizes. Alongside it run
two guards: a degradation flagger that rejects iterations whose
windowed throughput falls below the rolling baseline, and a realtime
ticker that reacts to workload drift by adjusting only options that are
mutable on a live engine.
"""

from __future__ import annotations

import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from .advisor import (
    OUTPUT_INSTRUCTION,
    PromptContext,
    build_prompts,
    call_advisor,
    extract_options,
    merge_responses,
    prompt_digest,
    result_summary,
)
from .bench import BenchmarkResult, TelemetrySnapshot, run_benchmark
from .characterize import WorkloadCharacterization
from .engine import (
    Engine,
    OptionDelta,
    OptionsDocument,
    diff_options,
    emit_options,
    load_catalog,
    mutable_options,
    parse_options,
    validate_options,
)
from .errors import AdvisorUnavailable, EngineFailure, EngineOpenError
from .workload import WorkloadSpec, WorkloadPhase

DEGRADATION_THRESHOLD_FRAC = 0.10
FLAGGER_WINDOW_LIMIT = 30
FLAGGER_WARMUP_WINDOWS = 5
CONVERGENCE_FRAC = 0.02
CONVERGENCE_RUNS = 3
FINE_TUNE_MAX_INNER = 3
FINE_TUNE_DURATION_FRAC = 0.25


# ---------------------------------------------------------------------------
# degradation flagger


@dataclass
class FlaggerState:
    """Rolling window of recent throughputs and the derived baseline."""

    rolling_throughput: list = field(default_factory=list)
    baseline: float = 0.0
    degradation_threshold_frac: float = DEGRADATION_THRESHOLD_FRAC
    window_limit: int = FLAGGER_WINDOW_LIMIT
    warmup_windows: int = FLAGGER_WARMUP_WINDOWS


@dataclass
class DegradationEvent:
    baseline: float
    observed: float
    drop_frac: float
    diff: list = field(default_factory=list)


def throughput_flagger(state: FlaggerState,
                       window_throughput: float,
                       diff: Optional[list] = None,
                       ) -> Optional[DegradationEvent]:
    """Feed one completed window; fire when it sits below baseline.

    The incoming window joins the rolling history only after the
    comparison, so the baseline is always computed from previously
    completed windows.
    """
    event = None
    if len(state.rolling_throughput) >= state.warmup_windows:
        state.baseline = statistics.median(state.rolling_throughput)
        floor = (1.0 - state.degradation_threshold_frac) * state.baseline
        if window_throughput < floor and state.baseline > 0:
            drop = 1.0 - window_throughput / state.baseline
            event = DegradationEvent(
                baseline=state.baseline,
                observed=window_throughput,
                drop_frac=drop,
                diff=list(diff) if diff else [],
            )
    state.rolling_throughput.append(window_throughput)
    if len(state.rolling_throughput) > state.window_limit:
        del state.rolling_throughput[:len(state.rolling_throughput)
                                     - state.window_limit]
    return event


# ---------------------------------------------------------------------------
# workload drift detection


@dataclass
class RealtimeTunerConfig:
    tick_period_s: float = 90.0
    ratio_shift_threshold: float = 0.15
    size_shift_threshold_frac: float = 0.25

    def __post_init__(self) -> None:
        if self.tick_period_s <= 0:
            raise ValueError("tick_period_s must be positive")


@dataclass
class ShiftEvent:
    observed_ratios: dict
    ratio_deltas: dict
    observed_mean_value_size: Optional[float]
    size_shift_frac: float
    reason: str


def _family_mean(family) -> Optional[float]:
    tag, p = family.tag, family.params
    if tag == "Fixed":
        return float(p["value"])
    if tag == "Uniform":
        return (p["low"] + p["high"]) / 2.0
    if tag == "Normal":
        return float(p["mu"])
    if tag == "Exponential":
        return 1.0 / p["rate"] if p["rate"] > 0 else None
    if tag == "Pareto":
        shape, scale = p["shape"], p["scale"]
        return shape * scale / (shape - 1.0) if shape > 1.0 else None
    if tag == "Empirical":
        support = p.get("support") or []
        weights = p.get("weights") or []
        total = sum(weights)
        if not support or total <= 0:
            return None
        return sum(v * w for v, w in zip(support, weights)) / total
    return None


def drift_detect(recent: Sequence[TelemetrySnapshot],
                 baseline: WorkloadCharacterization,
                 cfg: RealtimeTunerConfig,
                 observed_mean_value_size: Optional[float] = None,
                 ) -> Optional[ShiftEvent]:
    """Compare one tick's realized traffic against the characterization.

    Fires when any op fraction moves more than the ratio threshold, or
    when the caller-supplied mean value size moves more than the size
    threshold relative to the baseline family's mean.
    """
    if not recent:
        return None
    counts: dict[str, float] = {}
    total = 0.0
    for snap in recent:
        for op, frac in snap.realized_op_ratios.items():
            counts[op] = counts.get(op, 0.0) + frac * snap.window_ops
        total += snap.window_ops
    if total <= 0:
        return None
    observed = {op: c / total for op, c in counts.items()}

    deltas: dict[str, float] = {}
    ops = set(observed) | set(baseline.query_ratios)
    for op in ops:
        deltas[op] = observed.get(op, 0.0) - baseline.query_ratios.get(op, 0.0)
    worst_op = max(deltas, key=lambda op: abs(deltas[op]))
    ratio_shifted = abs(deltas[worst_op]) > cfg.ratio_shift_threshold

    size_shift = 0.0
    size_shifted = False
    if observed_mean_value_size is not None:
        base_mean = _family_mean(baseline.value_size.family)
        if base_mean and base_mean > 0:
            size_shift = abs(observed_mean_value_size - base_mean) / base_mean
            size_shifted = size_shift > cfg.size_shift_threshold_frac

    if not ratio_shifted and not size_shifted:
        return None
    reasons = []
    if ratio_shifted:
        reasons.append(
            f"op ratio shift: {worst_op} moved {deltas[worst_op]:+.3f}")
    if size_shifted:
        reasons.append(f"mean value size moved {size_shift:+.1%}")
    return ShiftEvent(
        observed_ratios=observed,
        ratio_deltas=deltas,
        observed_mean_value_size=observed_mean_value_size,
        size_shift_frac=size_shift,
        reason="; ".join(reasons),
    )


def tick_windows(timeline: Sequence[TelemetrySnapshot],
                 tick_period_s: float) -> list[list[TelemetrySnapshot]]:
    """Group sampler snapshots into consecutive tick-sized buckets."""
    if tick_period_s <= 0:
        raise ValueError("tick_period_s must be positive")
    buckets: dict[int, list[TelemetrySnapshot]] = {}
    for snap in timeline:
        buckets.setdefault(int(snap.ts_s / tick_period_s - 1e-9), []).append(snap)
    return [buckets[k] for k in sorted(buckets)]


# ---------------------------------------------------------------------------
# realtime adjustment


@dataclass
class RealtimeAdjustment:
    ts_s: float
    applied: dict = field(default_factory=dict)
    filtered: list = field(default_factory=list)
    prompt_digests: list = field(default_factory=list)
    skipped: bool = False
    note: str = ""


def _mutable_snapshot(doc: OptionsDocument, mutable_names: set,
                      ) -> dict[str, str]:
    out = {}
    for section, opts in doc.sections.items():
        for name, value in opts.items():
            if name in mutable_names:
                out[name] = value
    return out


def realtime_tick(event: Optional[ShiftEvent],
                  advisor,
                  engine: Engine,
                  catalog=None,
                  telemetry: Optional[dict] = None,
                  now_s: float = 0.0) -> RealtimeAdjustment:
    """React to one drift event by adjusting runtime-mutable options.

    Without an event this is a no-op gate: no advisor call, no delta.
    An advisor outage skips the tick; the next tick simply retries.
    """
    if event is None:
        return RealtimeAdjustment(ts_s=now_s, note="no event")
    if catalog is None:
        catalog = load_catalog()
    mutable = {m.name for m in mutable_options(catalog)}
    doc = engine.options_doc
    current = _mutable_snapshot(doc, mutable)

    gauges = dict(telemetry or {})
    gauges["realized_op_ratios"] = dict(event.observed_ratios)

    lines = [
        "A live workload shift was detected on a running store.",
        f"shift: {event.reason}",
        "observed op mix: " + " ".join(
            f"{op}={frac:.3f}"
            for op, frac in sorted(event.observed_ratios.items())),
    ]
    if event.observed_mean_value_size is not None:
        lines.append(
            f"observed mean value size: {event.observed_mean_value_size:.1f}")
    if telemetry:
        for key in ("throughput_ops_s", "p99_us", "write_stall_us",
                    "block_cache_hit_ratio"):
            if key in telemetry and telemetry[key] is not None:
                lines.append(f"{key}={telemetry[key]}")
    lines.append("")
    lines.append("[Runtime-mutable options]")
    for name in sorted(current):
        lines.append(f"  {name}={current[name]}")
    lines.append("")
    lines.append("Propose small, incremental changes to the options above "
                 "only; the store stays online, so immutable options are "
                 "off the table.")
    text = "\n".join(lines) + "\n\n" + OUTPUT_INSTRUCTION
    meta = {
        "kind": "realtime",
        "telemetry": gauges,
        "options": current,
        "allowed": sorted(mutable),
    }
    try:
        reply = advisor.complete(text, meta)
    except AdvisorUnavailable as exc:
        return RealtimeAdjustment(ts_s=now_s, skipped=True,
                                  note=f"advisor unavailable: {exc}")

    response = extract_options(reply, doc, catalog)
    applied: dict[str, str] = {}
    filtered: list[str] = []
    for (section, name), value in response.extracted_delta.items():
        if name in mutable:
            applied[name] = value
        else:
            filtered.append(name)
    if applied:
        engine.set_mutable_options(applied)
    return RealtimeAdjustment(
        ts_s=now_s,
        applied=applied,
        filtered=filtered,
        prompt_digests=[prompt_digest(text)],
        note=event.reason,
    )


# ---------------------------------------------------------------------------
# iteration records and the journal


@dataclass
class TuningIteration:
    index: int
    options: OptionsDocument
    result: Optional[BenchmarkResult]
    delta_from_prev: list = field(default_factory=list)
    advisor_prompt_digests: list = field(default_factory=list)
    accepted: bool = False
    notes: list = field(default_factory=list)


@dataclass
class TuningOutcome:
    best_options: OptionsDocument
    best_index: Optional[int]
    history: list
    halt_reason: str


def _result_brief(result: Optional[BenchmarkResult]) -> Optional[dict]:
    if result is None:
        return None
    return {
        "throughput_ops_s": result.overall_throughput_ops_s,
        "p99_us": result.overall_p99_us,
        "duration_s": result.duration_s,
        "total_ops": result.total_ops,
        "aborted": result.aborted,
        "options_digest": result.options_digest,
    }


def iteration_to_json(iteration: TuningIteration) -> str:
    doc = {
        "index": iteration.index,
        "options": emit_options(iteration.options),
        "result": _result_brief(iteration.result),
        "delta_from_prev": [[d.section, d.name, d.old, d.new]
                            for d in iteration.delta_from_prev],
        "advisor_prompt_digests": list(iteration.advisor_prompt_digests),
        "accepted": iteration.accepted,
        "notes": list(iteration.notes),
    }
    return json.dumps(doc, sort_keys=True, allow_nan=False)


def iteration_from_json(line: str) -> dict:
    """Parse one journal line back into a resume-ready record.

    The benchmark result comes back as the recorded brief (a dict), not
    a live BenchmarkResult; resume only needs the headline numbers.
    """
    doc = json.loads(line)
    return {
        "index": doc["index"],
        "options": parse_options(doc["options"]),
        "result": doc.get("result"),
        "delta_from_prev": [OptionDelta(s, n, old, new)
                            for s, n, old, new in doc["delta_from_prev"]],
        "advisor_prompt_digests": list(doc["advisor_prompt_digests"]),
        "accepted": doc["accepted"],
        "notes": list(doc["notes"]),
    }


def journal_append(path, iteration: TuningIteration) -> None:
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(iteration_to_json(iteration) + "\n")


def journal_read(path) -> list[dict]:
    entries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                entries.append(iteration_from_json(line))
    return entries


def _history_summary_entry(index: int, result_brief: Optional[dict],
                           accepted: bool, delta: list) -> dict:
    changes = {d.name: d.new for d in delta if d.new is not None}
    entry = {
        "iteration": index,
        "throughput_ops_s": result_brief["throughput_ops_s"]
        if result_brief else None,
        "p99_us": result_brief["p99_us"] if result_brief else None,
        "accepted": accepted,
        "changes": changes,
    }
    return entry


# ---------------------------------------------------------------------------
# fine-tuning inner loop


def _scaled_spec(spec: WorkloadSpec, frac: float) -> WorkloadSpec:
    phases = []
    for p in spec.phases:
        phases.append(WorkloadPhase(
            start_time_s=p.start_time_s * frac,
            duration_s=max(p.duration_s * frac, 1e-3),
            workload_type=p.workload_type,
            query_ratios=dict(p.query_ratios),
            key_size=p.key_size,
            value_size=p.value_size,
            value_size_stddev=p.value_size_stddev,
            access_dist=p.access_dist,
            key_space=p.key_space,
            client_threads=p.client_threads,
            target_ops_per_s=p.target_ops_per_s,
        ))
    return WorkloadSpec(name=f"{spec.name}-inner",
                        seed=spec.seed, phases=phases)


def _measure(spec: WorkloadSpec, options: OptionsDocument,
             engine_factory, sampler_period_s: float) -> BenchmarkResult:
    engine = engine_factory(options)
    try:
        return run_benchmark(spec, engine, sampler_period_s=sampler_period_s)
    finally:
        engine.close()


def fine_tune(changed_subset: Sequence[OptionDelta],
              ctx: PromptContext,
              advisor,
              engine_factory,
              spec: WorkloadSpec,
              max_inner: int = FINE_TUNE_MAX_INNER,
              duration_frac: float = FINE_TUNE_DURATION_FRAC,
              sampler_period_s: float = 1.0) -> OptionsDocument:
    """Refine only the freshly changed options on shortened runs.

    A candidate replaces the incumbent only when its measured throughput
    is strictly higher, so the incumbent never gets worse by its own
    yardstick.
    """
    if not changed_subset:
        raise ValueError("changed_subset must be non-empty")
    incumbent = ctx.current_options.copy()
    if max_inner <= 0:
        return incumbent

    subset_names = sorted({d.name for d in changed_subset})
    short_spec = _scaled_spec(spec, duration_frac)
    try:
        incumbent_result = _measure(short_spec, incumbent, engine_factory,
                                    sampler_period_s)
    except (EngineFailure, EngineOpenError):
        return incumbent
    incumbent_thr = incumbent_result.overall_throughput_ops_s

    catalog = load_catalog()
    for _ in range(max_inner):
        current = {name: value
                   for _, opts in incumbent.sections.items()
                   for name, value in opts.items()
                   if name in subset_names}
        lines = [
            "Fine-tuning pass: refine only the options listed below with",
            "small incremental value changes (steps of roughly 25%).",
            "",
            "[Options under refinement]",
        ]
        lines += [f"  {name}={value}" for name, value in sorted(current.items())]
        lines.append("")
        lines.append(f"Last measured throughput: {incumbent_thr:.2f} ops/s")
        text = "\n".join(lines) + "\n\n" + OUTPUT_INSTRUCTION
        meta = {
            "kind": "fine_tune",
            "telemetry": dict(ctx.latest_result or {}),
            "options": current,
            "allowed": subset_names,
            "incumbent_throughput": incumbent_thr,
        }
        try:
            reply = advisor.complete(text, meta)
        except AdvisorUnavailable:
            break
        response = extract_options(reply, incumbent, catalog)
        delta = {(section, name): value
                 for (section, name), value in response.extracted_delta.items()
                 if name in subset_names}
        if not delta:
            break
        candidate = incumbent.copy()
        for (section, name), value in delta.items():
            candidate.set(section, name, value)
        candidate = validate_options(candidate, catalog).doc
        try:
            result = _measure(short_spec, candidate, engine_factory,
                              sampler_period_s)
        except (EngineFailure, EngineOpenError):
            continue
        if result.aborted:
            continue
        if result.overall_throughput_ops_s > incumbent_thr:
            incumbent = candidate
            incumbent_thr = result.overall_throughput_ops_s
    return incumbent


# ---------------------------------------------------------------------------
# outer loop


def _advise_once(advisor, prompts) -> tuple[list, list]:
    responses = []
    digests = []
    for prompt in prompts:
        digests.append(prompt_digest(prompt.text))
        reply = call_advisor(advisor, prompt)
        responses.append(reply)
    return responses, digests


def tuning_loop(spec: WorkloadSpec,
                initial_options: OptionsDocument,
                advisor,
                engine_factory: Callable[[OptionsDocument], Engine],
                strategy: str = "FullHistory",
                max_iterations: int = 10,
                max_wall_s: Optional[float] = None,
                characterization: Optional[WorkloadCharacterization] = None,
                limits: Optional[dict] = None,
                journal_path=None,
                sampler_period_s: float = 1.0,
                enable_fine_tune: bool = True,
                fine_tune_max_inner: int = FINE_TUNE_MAX_INNER,
                resume_from=None) -> TuningOutcome:
    """Iterative benchmark-advise-apply loop returning the best options.

    Halts on budget exhaustion, on throughput stability (<2% change over
    three consecutive accepted iterations), or after a repeated advisor
    outage; the measured best is returned in every case.
    """
    if max_iterations < 1:
        raise ValueError("max_iterations must be >= 1")
    catalog = load_catalog()
    t_start = time.monotonic()

    history: list[TuningIteration] = []
    history_summaries: list[dict] = []
    flagger = FlaggerState()
    best_doc: Optional[OptionsDocument] = None
    best_index: Optional[int] = None
    best_thr = float("-inf")
    best_p99 = float("inf")
    incumbent = validate_options(initial_options, catalog).doc
    pending_digests: list[str] = []
    pending_delta: list[OptionDelta] = []
    extra_directives: Optional[str] = None
    start_index = 0
    halt_reason = "max_iterations reached"

    if resume_from is not None:
        for entry in journal_read(resume_from):
            history_summaries.append(_history_summary_entry(
                entry["index"], entry["result"], entry["accepted"],
                entry["delta_from_prev"]))
            brief = entry["result"]
            if entry["accepted"] and brief:
                thr = brief["throughput_ops_s"]
                p99 = brief["p99_us"]
                if thr > best_thr or (thr == best_thr and p99 < best_p99):
                    best_thr, best_p99 = thr, p99
                    best_doc = entry["options"].copy()
                    best_index = entry["index"]
                incumbent = entry["options"].copy()
            start_index = entry["index"] + 1

    candidate = incumbent.copy()
    stable_runs = 0
    prev_accepted_thr: Optional[float] = None
    index = start_index

    while index < start_index + max_iterations:
        if max_wall_s is not None \
                and time.monotonic() - t_start > max_wall_s:
            halt_reason = "wall budget exhausted"
            break

        engine = None
        try:
            engine = engine_factory(candidate)
            result = run_benchmark(spec, engine,
                                   sampler_period_s=sampler_period_s)
        except (EngineFailure, EngineOpenError) as exc:
            if engine is not None:
                engine.close()
            iteration = TuningIteration(
                index=index, options=candidate.copy(), result=None,
                delta_from_prev=pending_delta,
                advisor_prompt_digests=pending_digests,
                accepted=False, notes=[f"engine failure: {exc}"])
            history.append(iteration)
            history_summaries.append(_history_summary_entry(
                index, None, False, pending_delta))
            if journal_path:
                journal_append(journal_path, iteration)
            candidate = incumbent.copy()
            pending_delta, pending_digests = [], []
            extra_directives = "The last candidate crashed the engine; " \
                               "it was rolled back."
            index += 1
            continue
        engine.close()

        notes: list[str] = []
        degradation: Optional[DegradationEvent] = None
        diff_for_flagger = diff_options(incumbent, candidate)
        for snap in result.timeline:
            event = throughput_flagger(flagger, snap.throughput_ops_s,
                                       diff=diff_for_flagger)
            if event is not None and degradation is None:
                degradation = event
        accepted = not result.aborted and degradation is None
        if result.aborted:
            notes.append("benchmark aborted on engine failure")
        if degradation is not None:
            notes.append(
                f"degradation: window {degradation.observed:.1f} ops/s fell "
                f"{degradation.drop_frac:.1%} below baseline "
                f"{degradation.baseline:.1f}")

        iteration = TuningIteration(
            index=index, options=candidate.copy(), result=result,
            delta_from_prev=pending_delta,
            advisor_prompt_digests=pending_digests,
            accepted=accepted, notes=notes)
        history.append(iteration)
        history_summaries.append(_history_summary_entry(
            index, _result_brief(result), accepted, pending_delta))
        if journal_path:
            journal_append(journal_path, iteration)

        if accepted:
            thr = result.overall_throughput_ops_s
            p99 = result.overall_p99_us
            if thr > best_thr or (thr == best_thr and p99 < best_p99):
                best_thr, best_p99 = thr, p99
                best_doc = candidate.copy()
                best_index = index
            if prev_accepted_thr is not None and prev_accepted_thr > 0:
                if abs(thr - prev_accepted_thr) / prev_accepted_thr \
                        < CONVERGENCE_FRAC:
                    stable_runs += 1
                else:
                    stable_runs = 0
            prev_accepted_thr = thr
            incumbent = candidate.copy()
            extra_directives = None
            if stable_runs >= CONVERGENCE_RUNS:
                halt_reason = "throughput stable"
                index += 1
                break
        else:
            candidate = incumbent.copy()
            if degradation is not None:
                changed = ", ".join(
                    f"{d.name}: {d.old} -> {d.new}"
                    for d in degradation.diff) or "none"
                extra_directives = (
                    f"Performance degradation: throughput fell "
                    f"{degradation.drop_frac:.0%} below the rolling baseline "
                    f"({degradation.baseline:.1f} ops/s). Options changed in "
                    f"the offending iteration: {changed}. Consider reverting "
                    f"or softening these.")

        index += 1
        if index >= start_index + max_iterations:
            halt_reason = "max_iterations reached"
            break

        ctx = PromptContext(
            current_options=incumbent,
            history=list(history_summaries),
            latest_result=result_summary(result),
            characterization=characterization,
            limits=limits or {},
            extra_directives=extra_directives,
        )
        try:
            prompts = build_prompts(strategy, ctx)
            replies, digests = _advise_once(advisor, prompts)
        except AdvisorUnavailable:
            try:
                prompts = build_prompts(strategy, ctx)
                replies, digests = _advise_once(advisor, prompts)
            except AdvisorUnavailable:
                halt_reason = "advisor unavailable"
                break

        responses = [extract_options(reply, incumbent, catalog)
                     for reply in replies]
        merged, conflicts = merge_responses(responses)
        conflict_notes = [f"conflict dropped: {name}={value}"
                          for name, value in conflicts]

        if not merged:
            iteration = TuningIteration(
                index=index, options=incumbent.copy(), result=None,
                delta_from_prev=[], advisor_prompt_digests=digests,
                accepted=False,
                notes=["advisor produced no usable delta"] + conflict_notes)
            history.append(iteration)
            history_summaries.append(_history_summary_entry(
                index, None, False, []))
            if journal_path:
                journal_append(journal_path, iteration)
            candidate = incumbent.copy()
            pending_delta, pending_digests = [], []
            index += 1
            continue

        next_doc = incumbent.copy()
        for (section, name), value in merged.items():
            next_doc.set(section, name, value)
        next_doc = validate_options(next_doc, catalog).doc
        delta = diff_options(incumbent, next_doc)

        if enable_fine_tune and delta and fine_tune_max_inner > 0:
            inner_ctx = PromptContext(
                current_options=next_doc,
                history=list(history_summaries),
                latest_result=result_summary(result),
                characterization=characterization,
                limits=limits or {},
            )
            next_doc = fine_tune(delta, inner_ctx, advisor, engine_factory,
                                 spec, max_inner=fine_tune_max_inner,
                                 sampler_period_s=sampler_period_s)
            delta = diff_options(incumbent, next_doc)

        candidate = next_doc
        pending_delta = delta
        pending_digests = digests

    if best_doc is None:
        best_doc = incumbent.copy()
    return TuningOutcome(
        best_options=best_doc,
        best_index=best_index,
        history=history,
        halt_reason=halt_reason,
    )
