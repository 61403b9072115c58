"""Prompt strategies, advisor backends, and response extraction.

Oracles: slice arithmetic by ceil division; rule table outputs checked
against their trigger telemetry; extraction fuzz checked against the
catalog whitelist; the FullHistory template pinned to a stored snapshot.
"""

import json
import math
import random
from pathlib import Path

import pytest

from importlib import resources

from lsmtune.advisor import (
    OUTPUT_INSTRUCTION,
    PROMPT_TEMPLATE_VERSION,
    SLICE_SIZE,
    STRATEGIES,
    TOKEN_BUDGET,
    AdvisorResponse,
    Prompt,
    PromptContext,
    RemoteAdvisor,
    ReplayAdvisor,
    ScriptedAdvisor,
    build_prompts,
    call_advisor,
    delta_to_document,
    estimate_tokens,
    extract_options,
    merge_responses,
    prompt_digest,
    result_summary,
)
from lsmtune.bench import BenchmarkResult, TelemetrySnapshot
from lsmtune.characterize import (
    DistributionFamily,
    DistributionFit,
    WorkloadCharacterization,
)
from lsmtune.engine import EngineStats, OptionsDocument, load_catalog, parse_options
from lsmtune.errors import AdvisorUnavailable, AuthError, ContextIncomplete

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_doc() -> OptionsDocument:
    text = resources.files("lsmtune.data").joinpath(
        "default_options.ini").read_text(encoding="utf-8")
    return parse_options(text)


def make_latest(**overrides) -> dict:
    latest = {
        "throughput_ops_s": 51234.5,
        "p99_us": 820.0,
        "duration_s": 60.0,
        "write_stall_us": 1_500_000,
        "pending_compaction_bytes": 200 << 20,
        "block_cache_hit_ratio": 0.72,
        "cpu_percent": None,
        "rss_bytes": None,
        "realized_op_ratios": {"Put": 0.6, "Get": 0.4},
        "aborted": False,
    }
    latest.update(overrides)
    return latest


def make_history() -> list:
    return [
        {"iteration": 1, "throughput_ops_s": 40_000.0, "p99_us": 900.0,
         "accepted": True, "changes": {"max_background_jobs": "4"}},
        {"iteration": 2, "throughput_ops_s": 51_234.5, "p99_us": 820.0,
         "accepted": True, "changes": {"write_buffer_size": "134217728"}},
    ]


def make_characterization() -> WorkloadCharacterization:
    return WorkloadCharacterization(
        key_size=DistributionFit(
            DistributionFamily("Fixed", {"value": 16.0}), 1.0, 1000),
        value_size=DistributionFit(
            DistributionFamily("Normal", {"mu": 100.0, "sigma": 10.0}),
            0.97, 1000),
        key_access=DistributionFit(
            DistributionFamily("Zipfian", {"s": 0.99, "n": 10000.0}),
            0.95, 1000),
        query_ratios={"Put": 0.25, "Get": 0.75},
        periodic_hint={"period_s": 300.0},
        source_windows=[],
    )


def make_snapshot_context() -> PromptContext:
    """Deterministic context behind the pinned template snapshot."""
    return PromptContext(
        current_options=fixture_doc(),
        history=make_history(),
        latest_result=make_latest(),
        characterization=make_characterization(),
        limits={"cpu_cores": 8, "mem_bytes": 16 << 30},
    )


def make_ctx(**overrides) -> PromptContext:
    ctx = make_snapshot_context()
    for key, value in overrides.items():
        setattr(ctx, key, value)
    return ctx


class TestBuildPrompts:
    def test_prompt_counts_per_strategy(self):
        ctx = make_ctx()
        n_options = sum(len(o) for o in ctx.current_options.sections.values())
        expected = {
            "FullHistory": 1,
            "SubsetSplit": math.ceil(n_options / SLICE_SIZE),
            "LatestOnly": 1,
            "ResourceGrouped": 4,
        }
        for strategy in STRATEGIES:
            assert len(build_prompts(strategy, ctx)) == expected[strategy]

    def test_every_prompt_carries_output_instruction(self):
        ctx = make_ctx()
        for strategy in STRATEGIES:
            for prompt in build_prompts(strategy, ctx):
                assert prompt.text.endswith(OUTPUT_INSTRUCTION)

    def test_every_prompt_within_budget(self):
        ctx = make_ctx()
        for strategy in STRATEGIES:
            for prompt in build_prompts(strategy, ctx):
                assert prompt.tokens <= TOKEN_BUDGET

    def test_full_history_chronological(self):
        text = build_prompts("FullHistory", make_ctx())[0].text
        first = text.index("iteration 1")
        second = text.index("iteration 2")
        assert first < second
        assert "[History, oldest first]" in text

    def test_latest_only_has_no_history(self):
        text = build_prompts("LatestOnly", make_ctx())[0].text
        assert "History" not in text
        assert "iteration 1" not in text
        assert "[Current options]" in text
        assert "query_ratios" in text  # characterization retained

    def test_subset_ceil_division_contract(self):
        doc = OptionsDocument()
        for i in range(55):
            doc.set("DBOptions", f"opt_{i:02d}", str(i))
        ctx = make_ctx(current_options=doc)
        prompts = build_prompts("SubsetSplit", ctx)
        assert len(prompts) == 3
        sizes = [len(p.meta["allowed"]) for p in prompts]
        assert sizes == [20, 20, 15]

    def test_subset_slices_partition_options(self):
        ctx = make_ctx()
        prompts = build_prompts("SubsetSplit", ctx)
        seen = []
        for p in prompts:
            assert len(p.meta["allowed"]) <= SLICE_SIZE
            seen.extend(p.meta["allowed"])
        everything = [name for opts in ctx.current_options.sections.values()
                      for name in opts]
        assert sorted(seen) == sorted(everything)

    def test_subset_scope_note(self):
        prompts = build_prompts("SubsetSplit", make_ctx())
        assert "slice 1 of" in prompts[0].text
        assert "Change only options listed above" in prompts[0].text

    def test_resource_grouped_prompts(self):
        prompts = build_prompts("ResourceGrouped", make_ctx())
        groups = {p.meta["group"] for p in prompts}
        assert groups == {"CPU", "Memory", "Storage", "Neutral"}
        storage = next(p for p in prompts if p.meta["group"] == "Storage")
        assert "write_stall_us=1500000" in storage.text
        memory = next(p for p in prompts if p.meta["group"] == "Memory")
        assert "block_cache_hit_ratio=0.72" in memory.text

    def test_resource_grouped_allowed_subsets(self):
        catalog = load_catalog()
        group_of = {m.name: m.resource_group for m in catalog}
        for p in build_prompts("ResourceGrouped", make_ctx()):
            for name in p.meta["allowed"]:
                assert group_of[name] == p.meta["group"]

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            build_prompts("Telepathy", make_ctx())

    def test_missing_options_rejected(self):
        with pytest.raises(ContextIncomplete):
            build_prompts("FullHistory",
                          make_ctx(current_options=OptionsDocument()))

    def test_history_without_latest_rejected(self):
        with pytest.raises(ContextIncomplete):
            build_prompts("FullHistory", make_ctx(latest_result=None))

    def test_budget_drops_oldest_history_first(self):
        history = [
            {"iteration": i, "throughput_ops_s": 1000.0 + i, "p99_us": 500.0,
             "accepted": True, "changes": {"note": "x" * 300}}
            for i in range(1, 101)
        ]
        ctx = make_ctx(history=history)
        prompt = build_prompts("FullHistory", ctx, budget_tokens=4000)[0]
        assert prompt.tokens <= 4000
        kept = prompt.meta["history_kept"]
        assert 0 < kept < 100
        assert "iteration 100:" in prompt.text  # newest survives
        assert "iteration 1:" not in prompt.text  # oldest dropped
        assert "[Current options]" in prompt.text

    def test_budget_never_drops_current_options(self):
        ctx = make_ctx(history=[])
        prompt = build_prompts("FullHistory", ctx, budget_tokens=100)[0]
        assert "[Current options]" in prompt.text
        assert "max_background_jobs" in prompt.text

    def test_degradation_directive_rendered(self):
        ctx = make_ctx(extra_directives="Throughput dropped 50% after the "
                                        "last change; consider reverting.")
        text = build_prompts("LatestOnly", ctx)[0].text
        assert "[Directive]" in text
        assert "dropped 50%" in text


class TestTemplateSnapshot:
    def test_full_history_template_pinned(self):
        rendered = build_prompts("FullHistory", make_snapshot_context())[0].text
        path = FIXTURES / f"prompt_full_history_v{PROMPT_TEMPLATE_VERSION}.txt"
        stored = path.read_text(encoding="utf-8")
        assert rendered == stored, (
            "prompt template drifted; bump PROMPT_TEMPLATE_VERSION and "
            "regenerate the snapshot fixture")


class TestResultSummary:
    def test_maps_fields(self):
        snap = TelemetrySnapshot(
            ts_s=1.0, throughput_ops_s=1000.0, p99_latency_us=50.0,
            cpu_percent=12.5, rss_bytes=1 << 20,
            engine=EngineStats(ops_completed={"Put": 1000},
                               write_stall_micros=7,
                               pending_compaction_bytes=9,
                               level_file_counts=[1, 0, 0, 0, 0, 0, 0],
                               block_cache_hit_ratio=0.5),
            realized_op_ratios={"Put": 1.0}, window_ops=1000)
        result = BenchmarkResult(
            spec_name="s", options_digest="d", timeline=[snap],
            overall_throughput_ops_s=1000.0, overall_p99_us=55.0,
            duration_s=1.0, limits={}, total_ops=1000)
        summary = result_summary(result)
        assert summary["throughput_ops_s"] == 1000.0
        assert summary["p99_us"] == 55.0
        assert summary["write_stall_us"] == 7
        assert summary["pending_compaction_bytes"] == 9
        assert summary["block_cache_hit_ratio"] == 0.5
        assert summary["realized_op_ratios"] == {"Put": 1.0}
        assert summary["aborted"] is False

    def test_empty_timeline(self):
        result = BenchmarkResult(
            spec_name="s", options_digest="d", timeline=[],
            overall_throughput_ops_s=0.0, overall_p99_us=0.0,
            duration_s=0.0, limits={}, total_ops=0)
        summary = result_summary(result)
        assert summary["write_stall_us"] == 0
        assert summary["realized_op_ratios"] == {}


class TestScriptedAdvisor:
    def run_round(self, strategy="FullHistory", **latest_overrides):
        ctx = make_ctx(latest_result=make_latest(**latest_overrides))
        prompts = build_prompts(strategy, ctx)
        advisor = ScriptedAdvisor()
        return [call_advisor(advisor, p) for p in prompts], ctx

    def test_stalls_raise_background_jobs(self):
        replies, ctx = self.run_round(write_stall_us=10_000_000)
        response = extract_options(replies[0], ctx.current_options)
        assert response.usable
        proposed = {name: value for (_, name), value
                    in response.extracted_delta.items()}
        assert int(proposed["max_background_jobs"]) > 2

    def test_quiet_telemetry_proposes_nothing(self):
        replies, ctx = self.run_round(
            write_stall_us=0, pending_compaction_bytes=0,
            block_cache_hit_ratio=0.999,
            realized_op_ratios={"Get": 0.4, "Put": 0.3, "Seek": 0.1})
        response = extract_options(replies[0], ctx.current_options)
        assert not response.usable

    def test_low_hit_ratio_grows_cache(self):
        replies, ctx = self.run_round(
            write_stall_us=0, pending_compaction_bytes=0,
            block_cache_hit_ratio=0.5,
            realized_op_ratios={"Get": 0.9, "Put": 0.1})
        response = extract_options(replies[0], ctx.current_options)
        proposed = {name: value for (_, name), value
                    in response.extracted_delta.items()}
        assert int(proposed["block_cache"]) > 33554432

    def test_allowed_filter_respected(self):
        replies, ctx = self.run_round("ResourceGrouped",
                                      write_stall_us=10_000_000)
        advisor = ScriptedAdvisor()
        prompts = build_prompts("ResourceGrouped", ctx)
        memory = next(p for p in prompts if p.meta["group"] == "Memory")
        reply = call_advisor(advisor, memory)
        response = extract_options(reply, ctx.current_options)
        for (_, name) in response.extracted_delta:
            assert name in memory.meta["allowed"]

    def test_deterministic(self):
        a, _ = self.run_round()
        b, _ = self.run_round()
        assert a == b

    def test_degradation_rule(self):
        ctx = make_ctx(extra_directives="throughput collapsed")
        prompt = build_prompts("FullHistory", ctx)[0]
        reply = call_advisor(ScriptedAdvisor(), prompt)
        response = extract_options(reply, ctx.current_options)
        proposed = {name: value for (_, name), value
                    in response.extracted_delta.items()}
        assert "delayed_write_rate" in proposed


class TestReplayAdvisor:
    def test_record_then_replay(self, tmp_path):
        advisor = ReplayAdvisor(tmp_path)
        digest = advisor.record("prompt text", "recorded reply")
        assert advisor.complete("prompt text", {}) == "recorded reply"
        assert (tmp_path / f"{digest}.txt").is_file()

    def test_missing_digest_unavailable(self, tmp_path):
        advisor = ReplayAdvisor(tmp_path)
        with pytest.raises(AdvisorUnavailable):
            advisor.complete("never recorded", {})

    def test_digest_stable(self):
        assert prompt_digest("abc") == prompt_digest("abc")
        assert prompt_digest("abc") != prompt_digest("abd")


class _FakeResponse:
    def __init__(self, status_code, body=None):
        self.status_code = status_code
        self._body = body or {}

    def json(self):
        if isinstance(self._body, Exception):
            raise self._body
        return self._body


class _FakeSession:
    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.calls.append({"url": url, "json": json, "headers": headers,
                           "timeout": timeout})
        step = self.script.pop(0)
        if isinstance(step, Exception):
            raise step
        return step


def _ok_body(content="fine"):
    return {"choices": [{"message": {"content": content}}]}


class TestRemoteAdvisor:
    def make(self, script, monkeypatch, key="sk-test"):
        if key is None:
            monkeypatch.delenv("LSMTUNE_API_KEY", raising=False)
        else:
            monkeypatch.setenv("LSMTUNE_API_KEY", key)
        session = _FakeSession(script)
        advisor = RemoteAdvisor("https://advisor.local/v1/chat", "tuner-1",
                                backoff_s=0.0, session=session)
        return advisor, session

    def test_success_wire_format(self, monkeypatch):
        advisor, session = self.make(
            [_FakeResponse(200, _ok_body("reply!"))], monkeypatch)
        out = advisor.complete("hello", {})
        assert out == "reply!"
        call = session.calls[0]
        assert call["url"] == "https://advisor.local/v1/chat"
        assert call["json"]["model"] == "tuner-1"
        assert call["json"]["temperature"] == 0.2
        assert call["json"]["messages"] == [
            {"role": "user", "content": "hello"}]
        assert call["headers"]["Authorization"] == "Bearer sk-test"
        assert call["timeout"] == 120.0

    def test_missing_credential(self, monkeypatch):
        advisor, session = self.make([], monkeypatch, key=None)
        with pytest.raises(AuthError):
            advisor.complete("hello", {})
        assert session.calls == []

    def test_auth_rejection_not_retried(self, monkeypatch):
        advisor, session = self.make(
            [_FakeResponse(401), _FakeResponse(200, _ok_body())], monkeypatch)
        with pytest.raises(AuthError):
            advisor.complete("hello", {})
        assert len(session.calls) == 1

    def test_retry_then_success(self, monkeypatch):
        advisor, session = self.make(
            [ConnectionError("boom"), _FakeResponse(500),
             _FakeResponse(200, _ok_body("ok"))],
            monkeypatch)
        assert advisor.complete("hello", {}) == "ok"
        assert len(session.calls) == 3

    def test_unavailable_after_retries(self, monkeypatch):
        advisor, session = self.make(
            [_FakeResponse(500)] * 4, monkeypatch)
        with pytest.raises(AdvisorUnavailable):
            advisor.complete("hello", {})
        assert len(session.calls) == 4  # initial + 3 retries

    def test_malformed_body_retried(self, monkeypatch):
        advisor, session = self.make(
            [_FakeResponse(200, {"nope": True}),
             _FakeResponse(200, _ok_body("fixed"))],
            monkeypatch)
        assert advisor.complete("hello", {}) == "fixed"


class TestExtractOptions:
    def test_single_change_fenced(self):
        base = fixture_doc()
        reply = ("Raise the buffer.\n```\n[CFOptions \"default\"]\n"
                 "  write_buffer_size=134217728\n```\n")
        response = extract_options(reply, base)
        assert response.usable
        assert response.extracted_delta == {
            ('CFOptions "default"', "write_buffer_size"): "134217728"}

    def test_prose_only_unusable(self):
        response = extract_options(
            "I would consider increasing parallelism generally.",
            fixture_doc())
        assert not response.usable
        assert response.extracted_delta == {}

    def test_empty_fenced_block_unusable(self):
        response = extract_options("```\n```", fixture_doc())
        assert not response.usable

    def test_last_fenced_block_wins(self):
        base = fixture_doc()
        reply = ("First idea:\n```\n[DBOptions]\nmax_background_jobs=4\n```\n"
                 "On reflection:\n```\n[DBOptions]\nmax_background_jobs=8\n```")
        response = extract_options(reply, base)
        assert response.extracted_delta == {
            ("DBOptions", "max_background_jobs"): "8"}

    def test_unfenced_key_value_run(self):
        base = fixture_doc()
        reply = ("Suggested changes:\n"
                 "max_background_jobs=6\n"
                 "write_buffer_size=134217728\n"
                 "Those should help.")
        response = extract_options(reply, base)
        proposed = {name: value for (_, name), value
                    in response.extracted_delta.items()}
        assert proposed == {"max_background_jobs": "6",
                            "write_buffer_size": "134217728"}

    def test_bare_option_lands_in_catalog_section(self):
        base = fixture_doc()
        reply = "```\nblock_cache=67108864\n```"
        response = extract_options(reply, base)
        assert response.extracted_delta == {
            ('TableOptions/BlockBasedTable "default"', "block_cache"):
                "67108864"}

    def test_invented_options_never_survive(self):
        base = fixture_doc()
        reply = ("```\n[DBOptions]\nmax_background_jobs=4\n"
                 "quantum_flux_capacitor=11\n```")
        response = extract_options(reply, base)
        names = {name for (_, name) in response.extracted_delta}
        assert "quantum_flux_capacitor" not in names
        assert "max_background_jobs" in names
        assert any(v.action == "removed_unknown"
                   for v in response.violations)

    def test_out_of_range_clamped(self):
        base = fixture_doc()
        reply = "```\n[DBOptions]\nmax_background_jobs=100000\n```"
        response = extract_options(reply, base)
        assert response.extracted_delta == {
            ("DBOptions", "max_background_jobs"): "64"}
        assert any(v.action == "clamped" for v in response.violations)

    def test_noop_values_dropped(self):
        base = fixture_doc()
        current = base.get("DBOptions", "max_background_jobs")
        reply = f"```\n[DBOptions]\nmax_background_jobs={current}\n```"
        response = extract_options(reply, base)
        assert not response.usable

    def test_usable_implies_nonempty_delta(self):
        rng = random.Random(13)
        base = fixture_doc()
        catalog_names = [m.name for m in load_catalog()]
        junk_names = ["warp_drive", "x", "foo_bar", "cache_vibes"]
        values = ["1", "64MB", "true", "banana", "99999999999999", "kZSTD",
                  "-3", "0", "enolc"]
        for _ in range(300):
            lines = []
            for _ in range(rng.randint(1, 6)):
                name = rng.choice(catalog_names + junk_names)
                lines.append(f"{name}={rng.choice(values)}")
            reply = "```\n" + "\n".join(lines) + "\n```"
            response = extract_options(reply, base)
            assert response.usable == bool(response.extracted_delta)

    def test_fuzzed_deltas_stay_inside_catalog(self):
        # the safety net the loop depends on: nothing unknown, nothing
        # out of range, ever
        rng = random.Random(31337)
        base = fixture_doc()
        index = {m.name: m for m in load_catalog()}
        catalog_names = list(index)
        for _ in range(300):
            parts = []
            for _ in range(rng.randint(1, 8)):
                roll = rng.random()
                if roll < 0.4:
                    parts.append(f"{rng.choice(catalog_names)}="
                                 f"{rng.randint(-10, 10 ** 12)}")
                elif roll < 0.6:
                    parts.append(f"fake_{rng.randint(0, 99)}=1")
                elif roll < 0.8:
                    parts.append(rng.choice([
                        "lorem ipsum", "[DBOptions]", "```", "x==y",
                        "= no key", "#comment"]))
                else:
                    parts.append(f"{rng.choice(catalog_names)}=banana")
            reply = "\n".join(parts)
            response = extract_options(reply, base)
            for (section, name), value in response.extracted_delta.items():
                meta = index[name]  # KeyError would fail the test
                if meta.value_type in ("int", "size_bytes") and meta.range:
                    lo, hi = meta.range
                    assert lo <= int(value) <= hi


class TestMergeResponses:
    def make_response(self, delta):
        return AdvisorResponse(raw_text="", extracted_delta=delta,
                               violations=[], usable=bool(delta))

    def test_first_writer_wins(self):
        a = self.make_response({("DBOptions", "max_background_jobs"): "4"})
        b = self.make_response({("DBOptions", "max_background_jobs"): "8"})
        merged, conflicts = merge_responses([a, b])
        assert merged == {("DBOptions", "max_background_jobs"): "4"}
        assert conflicts == [("max_background_jobs", "8")]

    def test_disjoint_slices_union(self):
        a = self.make_response({("DBOptions", "max_background_jobs"): "4"})
        b = self.make_response(
            {('CFOptions "default"', "write_buffer_size"): "134217728"})
        merged, conflicts = merge_responses([a, b])
        assert len(merged) == 2 and conflicts == []

    def test_duplicate_same_value_not_conflict(self):
        a = self.make_response({("DBOptions", "max_background_jobs"): "4"})
        b = self.make_response({("DBOptions", "max_background_jobs"): "4"})
        merged, conflicts = merge_responses([a, b])
        assert merged == {("DBOptions", "max_background_jobs"): "4"}
        assert conflicts == []

    def test_unusable_responses_skipped(self):
        a = AdvisorResponse(raw_text="prose", usable=False)
        b = self.make_response({("DBOptions", "max_background_jobs"): "6"})
        merged, _ = merge_responses([a, b])
        assert merged == {("DBOptions", "max_background_jobs"): "6"}

    def test_delta_to_document(self):
        doc = delta_to_document({
            ("DBOptions", "max_background_jobs"): "4",
            ('CFOptions "default"', "ttl"): "0",
        })
        assert doc.get("DBOptions", "max_background_jobs") == "4"
        assert doc.get('CFOptions "default"', "ttl") == "0"
