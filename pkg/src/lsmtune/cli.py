"""Operator command line: characterize, synthesize, bench, tune, report.

Exit codes are a stable contract: 0 success, 1 internal error, 2 input
error, 3 advisor unavailable. Settings come from a flat key-value config
file (`section.key = value`); credentials never live there, only the
NAME of the environment variable holding the API key does.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .advisor import (STRATEGIES, RemoteAdvisor, ReplayAdvisor,
                      ScriptedAdvisor)
from .bench import (DEFAULT_SAMPLER_PERIOD_S, result_to_json, run_benchmark,
                    timeline_to_csv)
from .characterize import (characterization_from_json,
                           characterization_to_json, characterize)
from .engine import (emit_options, open_engine, parse_options,
                     validate_options)
from .errors import (AdvisorUnavailable, EmptyTrace, EngineOpenError,
                     FitFailure, FormatError, InvalidWindow, LengthMismatch,
                     LsmTuneError, OptionsParseError, SchemaError,
                     TooFewSamples, UnreadableSource, UnsupportedFamily)
from .trace import aggregate_stats, parse_trace, summarize_windows
from .tune import RealtimeTunerConfig, journal_read, tuning_loop
from .workload import emit_spec, parse_spec, synthesize_spec

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2
EXIT_ADVISOR = 3

DEFAULT_SEED = 1234
DEFAULT_API_KEY_ENV = "LSMTUNE_API_KEY"

ENGINE_KINDS = ("simulated", "external")
ADVISOR_KINDS = ("scripted", "replay", "remote")

_INPUT_ERRORS = (UnreadableSource, FormatError, InvalidWindow, EmptyTrace,
                 TooFewSamples, FitFailure, LengthMismatch, SchemaError,
                 UnsupportedFamily, OptionsParseError, EngineOpenError,
                 FileNotFoundError, IsADirectoryError, PermissionError,
                 json.JSONDecodeError, ValueError)


class ConfigError(LsmTuneError):
    pass


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class AdvisorConfig:
    kind: str = "scripted"
    endpoint: str = ""
    model: str = ""
    temperature: float = 0.2
    fixture_dir: str = ""
    api_key_env: str = DEFAULT_API_KEY_ENV


@dataclass
class RunConfig:
    engine_kind: str = "simulated"
    data_dir: str = ""
    advisor: AdvisorConfig = field(default_factory=AdvisorConfig)
    strategy: str = "FullHistory"
    max_iterations: int = 10
    max_wall_s: Optional[float] = None
    realtime: RealtimeTunerConfig = field(default_factory=RealtimeTunerConfig)
    limits: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED


def _to_int(raw: str, key: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {raw!r}")


def _to_float(raw: str, key: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {raw!r}")


def parse_run_config(text: str) -> RunConfig:
    """Parse the flat `section.key = value` configuration format.

    Unknown keys are rejected outright; a typo silently ignored would
    mean a run with settings the operator never chose.
    """
    cfg = RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")

        if key == "engine.kind":
            if value.lower() not in ENGINE_KINDS:
                raise ConfigError(
                    f"{key}: must be one of {', '.join(ENGINE_KINDS)}")
            cfg.engine_kind = value.lower()
        elif key == "engine.data_dir":
            cfg.data_dir = value
        elif key == "advisor.kind":
            if value.lower() not in ADVISOR_KINDS:
                raise ConfigError(
                    f"{key}: must be one of {', '.join(ADVISOR_KINDS)}")
            cfg.advisor.kind = value.lower()
        elif key == "advisor.endpoint":
            cfg.advisor.endpoint = value
        elif key == "advisor.model":
            cfg.advisor.model = value
        elif key == "advisor.temperature":
            cfg.advisor.temperature = _to_float(value, key)
        elif key == "advisor.fixture_dir":
            cfg.advisor.fixture_dir = value
        elif key == "advisor.api_key_env":
            cfg.advisor.api_key_env = value
        elif key == "strategy":
            if value not in STRATEGIES:
                raise ConfigError(
                    f"{key}: must be one of {', '.join(STRATEGIES)}")
            cfg.strategy = value
        elif key == "budget.max_iterations":
            cfg.max_iterations = _to_int(value, key)
        elif key == "budget.max_wall_s":
            cfg.max_wall_s = _to_float(value, key)
        elif key == "realtime.tick_period_s":
            cfg.realtime = dataclasses.replace(
                cfg.realtime, tick_period_s=_to_float(value, key))
        elif key == "realtime.ratio_shift_threshold":
            cfg.realtime = dataclasses.replace(
                cfg.realtime, ratio_shift_threshold=_to_float(value, key))
        elif key == "realtime.size_shift_threshold_frac":
            cfg.realtime = dataclasses.replace(
                cfg.realtime, size_shift_threshold_frac=_to_float(value, key))
        elif key == "limits.cpu_cores":
            cfg.limits["cpu_cores"] = _to_int(value, key)
        elif key == "limits.mem_bytes":
            cfg.limits["mem_bytes"] = _to_int(value, key)
        elif key == "seed":
            cfg.seed = _to_int(value, key)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    return cfg


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    text = Path(path).read_text(encoding="utf-8")
    return parse_run_config(text)


def make_advisor(cfg: RunConfig):
    kind = cfg.advisor.kind
    if kind == "scripted":
        return ScriptedAdvisor()
    if kind == "replay":
        if not cfg.advisor.fixture_dir:
            raise ConfigError("advisor.fixture_dir is required for the "
                              "replay advisor")
        return ReplayAdvisor(cfg.advisor.fixture_dir)
    if kind == "remote":
        if not cfg.advisor.endpoint or not cfg.advisor.model:
            raise ConfigError("advisor.endpoint and advisor.model are "
                              "required for the remote advisor")
        return RemoteAdvisor(endpoint=cfg.advisor.endpoint,
                             model=cfg.advisor.model,
                             temperature=cfg.advisor.temperature,
                             api_key_env=cfg.advisor.api_key_env)
    raise ConfigError(f"unknown advisor kind {kind!r}")


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "strategy", None) is not None:
        if args.strategy not in STRATEGIES:
            raise ConfigError(
                f"--strategy: must be one of {', '.join(STRATEGIES)}")
        cfg.strategy = args.strategy
    if getattr(args, "advisor", None) is not None:
        if args.advisor not in ADVISOR_KINDS:
            raise ConfigError(
                f"--advisor: must be one of {', '.join(ADVISOR_KINDS)}")
        cfg.advisor.kind = args.advisor
    if getattr(args, "max_iterations", None) is not None:
        cfg.max_iterations = args.max_iterations
    return cfg


# ---------------------------------------------------------------------------
# shared loading helpers


def _read_text(path) -> str:
    return Path(path).read_text(encoding="utf-8")


def _load_spec(path, seed_override: Optional[int]):
    spec = parse_spec(_read_text(path))
    if seed_override is not None:
        spec = dataclasses.replace(spec, seed=seed_override)
    return spec


def _load_options(path, quiet=False):
    doc = parse_options(_read_text(path))
    report = validate_options(doc)
    if report.violations and not quiet:
        for v in report.violations:
            print(f"options: {v.action} {v.section}.{v.name}: {v.detail}",
                  file=sys.stderr)
    return report.doc


# ---------------------------------------------------------------------------
# subcommands


def cmd_characterize(args: argparse.Namespace) -> int:
    records = list(parse_trace(args.trace))
    stats = aggregate_stats(records)
    windows = summarize_windows(records)
    ch = characterize(stats, windows)
    payload = json.dumps(characterization_to_json(ch), indent=2,
                         sort_keys=True, allow_nan=False)
    Path(args.out).write_text(payload + "\n", encoding="utf-8")
    print(f"characterization written to {args.out}")
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace) -> int:
    obj = json.loads(_read_text(args.characterization))
    ch = characterization_from_json(obj)
    kwargs = {}
    if args.seed is not None:
        kwargs["seed"] = args.seed
    if args.duration_s is not None:
        kwargs["duration_s"] = args.duration_s
    if args.target_ops is not None:
        kwargs["target_ops_per_s"] = args.target_ops
    spec = synthesize_spec(ch, name=args.name, **kwargs)
    Path(args.out).write_text(emit_spec(spec), encoding="utf-8")
    print(f"workload spec written to {args.out}")
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    spec = _load_spec(args.spec, cfg.seed if args.seed is not None else None)
    doc = _load_options(args.options)
    engine = open_engine(cfg.engine_kind, doc, cfg.data_dir or None)
    try:
        result = run_benchmark(spec, engine,
                               sampler_period_s=args.sampler_period_s,
                               limits=cfg.limits or None)
    finally:
        engine.close()
    Path(args.out).write_text(result_to_json(result) + "\n",
                              encoding="utf-8")
    if args.csv:
        Path(args.csv).write_text(timeline_to_csv(result),
                                  encoding="utf-8")
    print(f"throughput {result.overall_throughput_ops_s:.1f} ops/s, "
          f"p99 {result.overall_p99_us:.1f} us, "
          f"{result.total_ops} ops in {result.duration_s:.1f} s"
          + (" [aborted]" if result.aborted else ""))
    return EXIT_INTERNAL if result.aborted else EXIT_OK


def cmd_tune(args: argparse.Namespace) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    spec = _load_spec(args.spec, cfg.seed if args.seed is not None else None)
    doc = _load_options(args.options)
    advisor = make_advisor(cfg)
    characterization = None
    if args.characterization:
        characterization = characterization_from_json(
            json.loads(_read_text(args.characterization)))

    def factory(options_doc):
        return open_engine(cfg.engine_kind, options_doc.copy(),
                           cfg.data_dir or None)

    try:
        outcome = tuning_loop(
            spec, doc, advisor, factory,
            strategy=cfg.strategy,
            max_iterations=cfg.max_iterations,
            max_wall_s=cfg.max_wall_s,
            characterization=characterization,
            limits=cfg.limits or None,
            journal_path=args.journal,
            sampler_period_s=args.sampler_period_s,
            resume_from=args.resume,
        )
    except KeyboardInterrupt:
        print(f"interrupted; journal at {args.journal} is resumable "
              f"with --resume", file=sys.stderr)
        return EXIT_INTERNAL
    Path(args.best_out).write_text(emit_options(outcome.best_options),
                                   encoding="utf-8")
    print(f"halt: {outcome.halt_reason}; best iteration: "
          f"{outcome.best_index}; best options written to {args.best_out}")
    if outcome.halt_reason == "advisor unavailable":
        # best-so-far was still written; the exit code flags the outage
        return EXIT_ADVISOR
    return EXIT_OK


_REPORT_COLUMNS = ("iteration", "accepted", "throughput_ops_s", "p99_us",
                   "duration_s", "total_ops")


def _report_rows(entries) -> list[list[str]]:
    rows = []
    for entry in entries:
        brief = entry["result"] or {}

        def cell(key):
            value = brief.get(key)
            return "" if value is None else json.dumps(value)

        rows.append([
            str(entry["index"]),
            "yes" if entry["accepted"] else "no",
            cell("throughput_ops_s"),
            cell("p99_us"),
            cell("duration_s"),
            cell("total_ops"),
        ])
    return rows


def cmd_report(args: argparse.Namespace) -> int:
    entries = journal_read(args.journal)
    rows = _report_rows(entries)
    csv_lines = [",".join(_REPORT_COLUMNS)]
    csv_lines += [",".join(row) for row in rows]
    csv_text = "\n".join(csv_lines) + "\n"
    if args.csv:
        Path(args.csv).write_text(csv_text, encoding="utf-8")

    widths = [len(col) for col in _REPORT_COLUMNS]
    for row in rows:
        widths = [max(w, len(cell)) for w, cell in zip(widths, row)]
    header = "  ".join(col.ljust(w)
                       for col, w in zip(_REPORT_COLUMNS, widths))
    print(header)
    print("  ".join("-" * w for w in widths))
    for row in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lsmtune",
        description="Workload-aware configuration tuning for LSM-tree "
                    "key-value stores.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("characterize",
                       help="fit distributions and the op mix from a trace")
    p.add_argument("trace", help="query-level trace file (.txt or .gz)")
    p.add_argument("-o", "--out", required=True,
                   help="output characterization JSON path")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("synthesize",
                       help="turn a characterization into a workload spec")
    p.add_argument("characterization", help="characterization JSON path")
    p.add_argument("-o", "--out", required=True,
                   help="output workload spec JSON path")
    p.add_argument("--name", default="synthesized")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--duration-s", type=float, default=None)
    p.add_argument("--target-ops", type=int, default=None)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("bench", help="run one benchmark against an engine")
    p.add_argument("spec", help="workload spec JSON path")
    p.add_argument("--options", required=True, help="options file path")
    p.add_argument("--config", default=None, help="run config path")
    p.add_argument("-o", "--out", default="bench_result.json")
    p.add_argument("--csv", default=None, help="timeline CSV output path")
    p.add_argument("--seed", type=int, default=None,
                   help="override the spec's seed")
    p.add_argument("--sampler-period-s", type=float,
                   default=DEFAULT_SAMPLER_PERIOD_S)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tune", help="run the iterative tuning loop")
    p.add_argument("spec", help="workload spec JSON path")
    p.add_argument("--options", required=True,
                   help="initial options file path")
    p.add_argument("--config", default=None, help="run config path")
    p.add_argument("--journal", default="tune_journal.jsonl")
    p.add_argument("--best-out", default="best_options.ini")
    p.add_argument("--characterization", default=None,
                   help="characterization JSON to include in prompts")
    p.add_argument("--resume", default=None,
                   help="journal to resume from")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--strategy", default=None,
                   help="prompt strategy override")
    p.add_argument("--advisor", default=None,
                   help="advisor kind override")
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--sampler-period-s", type=float,
                   default=DEFAULT_SAMPLER_PERIOD_S)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("report",
                       help="render a journal as a throughput/p99 table")
    p.add_argument("journal", help="tuning journal path (JSON lines)")
    p.add_argument("--csv", default=None, help="CSV output path")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except AdvisorUnavailable as exc:
        print(f"advisor unavailable: {exc}", file=sys.stderr)
        return EXIT_ADVISOR
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except LsmTuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort exit code mapping
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
