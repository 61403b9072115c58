"""JSON workload specifications and deterministic stream generation.

A workload is an ordered list of phases, each naming an op mix, key/value
size distributions, an access-popularity distribution, and a key space.
Specs serialize to a versioned JSON document; generation is reproducible
because every random stream derives from (seed, thread, phase).
"""

from __future__ import annotations

import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Optional, Sequence

from . import kernels
from .characterize import (
    EMPIRICAL,
    EXPONENTIAL,
    FIXED,
    NORMAL,
    PARETO,
    TWO_TERM_EXPONENTIAL,
    UNIFORM,
    ZIPFIAN,
    DistributionFamily,
    WorkloadCharacterization,
    empirical_support,
    popularity_cdf,
)
from .errors import SchemaError, UnsupportedFamily
from .trace import OP_NAMES

SPEC_VERSION = 1

FILL_RANDOM = "FillRandom"
READ_RANDOM = "ReadRandom"
READ_WRITE_MIX = "ReadWriteMix"
SEEK_SCAN_MIX = "SeekScanMix"
WORKLOAD_TYPES = (FILL_RANDOM, READ_RANDOM, READ_WRITE_MIX, SEEK_SCAN_MIX)

ACCESS_FAMILIES = (UNIFORM, ZIPFIAN, PARETO, TWO_TERM_EXPONENTIAL, EMPIRICAL)
SIZE_FAMILIES = (FIXED, UNIFORM, NORMAL, EXPONENTIAL, PARETO, ZIPFIAN,
                 EMPIRICAL)

RATIO_SUM_TOLERANCE = 1e-9

DEFAULT_PHASE_DURATION_S = 60.0
DEFAULT_CLIENT_THREADS = 4

# fixed salt so the hot-key scramble is identical across runs and machines
_SCRAMBLE_SALT = 0x5CA1AB1E0DDBA11
_TTE_KNOTS = 65536


@dataclass
class WorkloadPhase:
    start_time_s: float
    duration_s: float
    workload_type: str
    query_ratios: dict[str, float]
    key_size: DistributionFamily
    value_size: DistributionFamily
    value_size_stddev: float
    access_dist: DistributionFamily
    key_space: int
    client_threads: int
    target_ops_per_s: Optional[int] = None


@dataclass
class WorkloadSpec:
    name: str
    seed: int
    phases: list[WorkloadPhase] = field(default_factory=list)


# ---------------------------------------------------------------------------
# validation


def validate_spec(spec: WorkloadSpec) -> list[str]:
    """Check every spec invariant; violations come back as readable strings."""
    out: list[str] = []
    if not spec.phases:
        out.append("spec has no phases")
    prev_start = -math.inf
    for i, ph in enumerate(spec.phases):
        where = f"phase {i} ({ph.workload_type})"
        if ph.start_time_s <= prev_start:
            out.append(f"{where}: start_time_s {ph.start_time_s} does not "
                       f"increase past {prev_start}")
        prev_start = ph.start_time_s
        if ph.duration_s <= 0:
            out.append(f"{where}: duration_s must be > 0")
        if ph.workload_type not in WORKLOAD_TYPES:
            out.append(f"{where}: unknown workload_type {ph.workload_type!r}")
        total = sum(ph.query_ratios.values())
        if abs(total - 1.0) > RATIO_SUM_TOLERANCE:
            out.append(f"{where}: query_ratios sum to {total}, expected 1.0")
        for op, frac in ph.query_ratios.items():
            if op not in OP_NAMES:
                out.append(f"{where}: unknown op {op!r} in query_ratios")
            if frac < 0:
                out.append(f"{where}: negative ratio for {op}")
        if ph.client_threads < 1:
            out.append(f"{where}: client_threads must be >= 1")
        if ph.key_space < 1:
            out.append(f"{where}: key_space must be >= 1")
        if ph.value_size_stddev < 0:
            out.append(f"{where}: value_size_stddev must be >= 0")
        if ph.target_ops_per_s is not None and ph.target_ops_per_s < 1:
            out.append(f"{where}: target_ops_per_s must be >= 1 when set")
        if ph.access_dist.tag not in ACCESS_FAMILIES:
            out.append(f"{where}: access_dist family "
                       f"{ph.access_dist.tag} cannot model key popularity")
        for label, fam in (("key_size", ph.key_size),
                           ("value_size", ph.value_size)):
            if fam.tag not in SIZE_FAMILIES:
                out.append(f"{where}: {label} family {fam.tag} cannot "
                           f"model a byte size")
    return out


# ---------------------------------------------------------------------------
# JSON schema


def _expect(cond: bool, path: str, reason: str) -> None:
    if not cond:
        raise SchemaError(path, reason)


def _num(obj, path: str) -> float:
    _expect(isinstance(obj, (int, float)) and not isinstance(obj, bool),
            path, "expected a number")
    return float(obj)


def _int(obj, path: str) -> int:
    _expect(isinstance(obj, int) and not isinstance(obj, bool),
            path, "expected an integer")
    return obj


def _parse_family(obj, path: str) -> DistributionFamily:
    _expect(isinstance(obj, dict), path, "expected an object")
    unknown = set(obj) - {"tag", "params"}
    _expect(not unknown, f"{path}.{sorted(unknown)[0]}" if unknown else path,
            "unknown field")
    _expect("tag" in obj, f"{path}.tag", "missing required field")
    _expect("params" in obj, f"{path}.params", "missing required field")
    _expect(isinstance(obj["tag"], str), f"{path}.tag", "expected a string")
    _expect(isinstance(obj["params"], dict), f"{path}.params",
            "expected an object")
    params = {}
    for k, v in obj["params"].items():
        params[k] = _num(v, f"{path}.params.{k}")
    try:
        return DistributionFamily(obj["tag"], params)
    except ValueError as exc:
        raise SchemaError(path, str(exc)) from exc


_PHASE_REQUIRED = ("start_time_s", "duration_s", "workload_type",
                   "query_ratios", "key_size", "value_size",
                   "value_size_stddev", "access_dist", "key_space",
                   "client_threads")
_PHASE_OPTIONAL = ("target_ops_per_s",)


def _parse_phase(obj, path: str) -> WorkloadPhase:
    _expect(isinstance(obj, dict), path, "expected an object")
    unknown = set(obj) - set(_PHASE_REQUIRED) - set(_PHASE_OPTIONAL)
    if unknown:
        raise SchemaError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    for name in _PHASE_REQUIRED:
        _expect(name in obj, f"{path}.{name}", "missing required field")
    _expect(isinstance(obj["workload_type"], str), f"{path}.workload_type",
            "expected a string")
    _expect(obj["workload_type"] in WORKLOAD_TYPES, f"{path}.workload_type",
            f"must be one of {', '.join(WORKLOAD_TYPES)}")
    ratios_obj = obj["query_ratios"]
    _expect(isinstance(ratios_obj, dict), f"{path}.query_ratios",
            "expected an object")
    ratios = {}
    for op, frac in ratios_obj.items():
        _expect(op in OP_NAMES, f"{path}.query_ratios.{op}",
                f"unknown op, expected one of {', '.join(OP_NAMES)}")
        ratios[op] = _num(frac, f"{path}.query_ratios.{op}")
    target = obj.get("target_ops_per_s")
    if target is not None:
        target = _int(target, f"{path}.target_ops_per_s")
    return WorkloadPhase(
        start_time_s=_num(obj["start_time_s"], f"{path}.start_time_s"),
        duration_s=_num(obj["duration_s"], f"{path}.duration_s"),
        workload_type=obj["workload_type"],
        query_ratios=ratios,
        key_size=_parse_family(obj["key_size"], f"{path}.key_size"),
        value_size=_parse_family(obj["value_size"], f"{path}.value_size"),
        value_size_stddev=_num(obj["value_size_stddev"],
                               f"{path}.value_size_stddev"),
        access_dist=_parse_family(obj["access_dist"], f"{path}.access_dist"),
        key_space=_int(obj["key_space"], f"{path}.key_space"),
        client_threads=_int(obj["client_threads"], f"{path}.client_threads"),
        target_ops_per_s=target,
    )


def parse_spec(text: str) -> WorkloadSpec:
    """Parse a versioned JSON workload document, rejecting unknown fields."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"not valid JSON ({exc})") from exc
    _expect(isinstance(obj, dict), "$", "expected a JSON object")
    unknown = set(obj) - {"spec_version", "name", "seed", "phases"}
    if unknown:
        raise SchemaError(f"$.{sorted(unknown)[0]}", "unknown field")
    for name in ("spec_version", "name", "seed", "phases"):
        _expect(name in obj, f"$.{name}", "missing required field")
    _expect(obj["spec_version"] == SPEC_VERSION, "$.spec_version",
            f"unsupported version {obj['spec_version']!r}, "
            f"expected {SPEC_VERSION}")
    _expect(isinstance(obj["name"], str), "$.name", "expected a string")
    seed = _int(obj["seed"], "$.seed")
    _expect(isinstance(obj["phases"], list), "$.phases", "expected an array")
    _expect(len(obj["phases"]) > 0, "$.phases", "must be non-empty")
    phases = [_parse_phase(ph, f"$.phases[{i}]")
              for i, ph in enumerate(obj["phases"])]
    return WorkloadSpec(name=obj["name"], seed=seed, phases=phases)


def _family_to_json(fam: DistributionFamily) -> dict:
    return {"tag": fam.tag, "params": dict(fam.params)}


def emit_spec(spec: WorkloadSpec) -> str:
    doc = {
        "spec_version": SPEC_VERSION,
        "name": spec.name,
        "seed": spec.seed,
        "phases": [
            {
                "start_time_s": ph.start_time_s,
                "duration_s": ph.duration_s,
                "workload_type": ph.workload_type,
                "query_ratios": dict(ph.query_ratios),
                "key_size": _family_to_json(ph.key_size),
                "value_size": _family_to_json(ph.value_size),
                "value_size_stddev": ph.value_size_stddev,
                "access_dist": _family_to_json(ph.access_dist),
                "key_space": ph.key_space,
                "client_threads": ph.client_threads,
                "target_ops_per_s": ph.target_ops_per_s,
            }
            for ph in spec.phases
        ],
    }
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# synthesis from a characterization


def _classify_workload(ratios: dict[str, float]) -> str:
    seeks = ratios.get("Seek", 0.0)
    reads = ratios.get("Get", 0.0) + seeks
    writes = (ratios.get("Put", 0.0) + ratios.get("Delete", 0.0)
              + ratios.get("Merge", 0.0))
    if seeks > 0.0:
        return SEEK_SCAN_MIX
    if writes > 0.0 and reads == 0.0:
        return FILL_RANDOM
    if reads > 0.0 and writes == 0.0:
        return READ_RANDOM
    return READ_WRITE_MIX


def _derive_key_space(ch: WorkloadCharacterization,
                      target_records: Optional[int]) -> int:
    if target_records is not None:
        return max(1, int(target_records))
    params = ch.key_access.family.params
    base = int(params.get("n", 0) or params.get("high", 0))
    if base < 1:
        base = max((w.distinct_keys for w in ch.source_windows), default=1000)
    return max(1, base)


def _access_family_for(ch: WorkloadCharacterization) -> DistributionFamily:
    fam = ch.key_access.family
    if fam.tag in ACCESS_FAMILIES:
        return fam
    # popularity fitting can hand back a size-style family on degenerate
    # traces; fall back to uniform access over the key space
    return DistributionFamily(UNIFORM, {"low": 1.0, "high": 1.0})


def synthesize_spec(ch: WorkloadCharacterization, *,
                    name: str = "synthesized",
                    seed: int = 1234,
                    duration_s: float = DEFAULT_PHASE_DURATION_S,
                    client_threads: int = DEFAULT_CLIENT_THREADS,
                    target_ops_per_s: Optional[int] = None,
                    target_records: Optional[int] = None) -> WorkloadSpec:
    """Build a replayable spec from fitted distributions and the op mix.

    Without a periodic hint the whole characterization maps onto a single
    phase. A hint with `period_s` produces two phases split at the period
    boundary so regime shifts land where the trace showed them.
    """
    key_space = _derive_key_space(ch, target_records)
    phase = WorkloadPhase(
        start_time_s=0.0,
        duration_s=duration_s,
        workload_type=_classify_workload(ch.query_ratios),
        query_ratios=dict(ch.query_ratios),
        key_size=ch.key_size.family,
        value_size=ch.value_size.family,
        value_size_stddev=0.0,
        access_dist=_access_family_for(ch),
        key_space=key_space,
        client_threads=client_threads,
        target_ops_per_s=target_ops_per_s,
    )
    phases = [phase]
    hint = ch.periodic_hint or {}
    period = float(hint.get("period_s", 0.0) or 0.0)
    if period > 0.0:
        phase.duration_s = period
        second = WorkloadPhase(
            start_time_s=period,
            duration_s=period,
            workload_type=phase.workload_type,
            query_ratios=dict(phase.query_ratios),
            key_size=phase.key_size,
            value_size=phase.value_size,
            value_size_stddev=phase.value_size_stddev,
            access_dist=phase.access_dist,
            key_space=phase.key_space,
            client_threads=phase.client_threads,
            target_ops_per_s=phase.target_ops_per_s,
        )
        phases.append(second)
    return WorkloadSpec(name=name, seed=seed, phases=phases)


# ---------------------------------------------------------------------------
# deterministic stream generation


def derive_rng(seed: int, thread_index: int, phase_index: int,
               lane: int = 0) -> kernels.Rng:
    """Independent stream for one (thread, phase, lane) combination."""
    return kernels.Rng(kernels.stream_seed(seed, thread_index,
                                           phase_index, lane))


_sampler_cache: dict[tuple, object] = {}


def _cache_key(fam: DistributionFamily, extra) -> tuple:
    return (fam.tag, tuple(sorted(fam.params.items())), extra)


def _tte_rank_table(fam: DistributionFamily, key_space: int) -> list[int]:
    """Inverse of the normalized rank CDF, tabulated at fixed knots."""
    table: list[int] = []
    prev = 1
    for j in range(_TTE_KNOTS):
        t = (j + 0.5) / _TTE_KNOTS
        lo, hi = 1, key_space
        while lo < hi:
            mid = (lo + hi) // 2
            if popularity_cdf(fam, [mid], key_space)[0] >= t:
                hi = mid
            else:
                lo = mid + 1
        rank = max(lo, prev)  # monotone even if the fitted CDF wobbles
        table.append(rank)
        prev = rank
    return table


def _empirical_sampler(fam: DistributionFamily):
    pairs = empirical_support(fam)
    if not pairs:
        raise UnsupportedFamily("empirical family without support points")
    cum: list[float] = []
    acc = 0.0
    for _, w in pairs:
        acc += w
        cum.append(acc)
    total = cum[-1]
    values = [v for v, _ in pairs]

    def draw(rng: kernels.Rng) -> float:
        u = rng.next_double() * total
        return values[min(bisect_left(cum, u), len(values) - 1)]

    return draw


def sample_key_index(dist: DistributionFamily, key_space: int,
                     rng: kernels.Rng) -> int:
    """Draw a key index in [0, key_space) under the access distribution.

    Zipfian ranks are scrambled through a keyed bijection so the hottest
    keys are spread across the space instead of clustering at low indexes.
    """
    tag = dist.tag
    if tag == UNIFORM:
        return rng.uniform_index(key_space)
    if tag == ZIPFIAN:
        ck = _cache_key(dist, ("zipf", key_space))
        zp = _sampler_cache.get(ck)
        if zp is None:
            zp = kernels.zipf_setup(key_space, dist.params["s"])
            _sampler_cache[ck] = zp
        rank = rng.zipf(zp)
        return kernels.permute_index(rank - 1, key_space, _SCRAMBLE_SALT)
    if tag == PARETO:
        x = rng.pareto(dist.params["shape"], dist.params["scale"])
        rank = int(x / dist.params["scale"])
        if rank < 1:
            rank = 1
        elif rank > key_space:
            rank = key_space
        return rank - 1
    if tag == TWO_TERM_EXPONENTIAL:
        ck = _cache_key(dist, ("tte", key_space))
        table = _sampler_cache.get(ck)
        if table is None:
            table = _tte_rank_table(dist, key_space)
            _sampler_cache[ck] = table
        rank = table[rng.uniform_index(_TTE_KNOTS)]
        return min(rank, key_space) - 1
    if tag == EMPIRICAL:
        ck = _cache_key(dist, ("emp", key_space))
        draw = _sampler_cache.get(ck)
        if draw is None:
            draw = _empirical_sampler(dist)
            _sampler_cache[ck] = draw
        rank = int(draw(rng))
        if rank < 1:
            rank = 1
        elif rank > key_space:
            rank = key_space
        return rank - 1
    raise UnsupportedFamily(f"{tag} cannot model key popularity")


def sample_size(dist: DistributionFamily, stddev: float,
                rng: kernels.Rng) -> int:
    """Draw a byte size >= 1; extra normal jitter applies when stddev > 0."""
    tag = dist.tag
    p = dist.params
    if tag == FIXED:
        base = p["value"]
    elif tag == UNIFORM:
        base = p["low"] + (p["high"] - p["low"]) * rng.next_double()
    elif tag == NORMAL:
        base = rng.normal(p["mu"], p["sigma"])
    elif tag == EXPONENTIAL:
        base = rng.exponential(p["rate"])
    elif tag == PARETO:
        base = rng.pareto(p["shape"], p["scale"])
    elif tag == ZIPFIAN:
        ck = _cache_key(dist, "size-zipf")
        zp = _sampler_cache.get(ck)
        if zp is None:
            zp = kernels.zipf_setup(max(int(p["n"]), 1), p["s"])
            _sampler_cache[ck] = zp
        base = float(rng.zipf(zp))
    elif tag == EMPIRICAL:
        ck = _cache_key(dist, "size-emp")
        draw = _sampler_cache.get(ck)
        if draw is None:
            draw = _empirical_sampler(dist)
            _sampler_cache[ck] = draw
        base = draw(rng)
    else:
        raise UnsupportedFamily(f"{tag} cannot model a byte size")
    if stddev > 0.0:
        base += rng.normal(0.0, stddev)
    size = int(round(base))
    return size if size >= 1 else 1


def key_bytes(index: int, width: int) -> bytes:
    """Fixed-width decimal key for an index, hashed so order is shuffled."""
    if width < 1:
        width = 1
    digits = []
    need = width
    h = index + 1  # mix64(0) == 0; offset keeps index 0 nontrivial
    while need > 0:
        h = kernels.mix64(h)
        chunk = str(h).zfill(20)
        digits.append(chunk)
        need -= len(chunk)
    return "".join(digits)[:width].encode("ascii")


def op_chooser(query_ratios: dict[str, float]):
    """Cumulative-threshold op selector; canonical op order fixes ties."""
    ops = [op for op in OP_NAMES if query_ratios.get(op, 0.0) > 0.0]
    if not ops:
        raise ValueError("query_ratios has no positive entries")
    cum: list[float] = []
    acc = 0.0
    for op in ops:
        acc += query_ratios[op]
        cum.append(acc)
    total = cum[-1]

    def choose(rng: kernels.Rng) -> str:
        u = rng.next_double() * total
        return ops[min(bisect_left(cum, u), len(ops) - 1)]

    return choose
