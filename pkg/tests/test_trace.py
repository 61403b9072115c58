"""Trace parsing, windowing, and aggregation tests."""

from __future__ import annotations

import gzip
import statistics

import pytest

from lsmtune import trace
from lsmtune.errors import EmptyTrace, FormatError, InvalidWindow, UnreadableSource
from lsmtune.trace import TraceRecord


def _mk_records(n, op="Put", vsize=100, key_fn=None, ts_step=1000):
    key_fn = key_fn or (lambda i: f"key{i:06d}".encode())
    return [TraceRecord(i * ts_step, op, key_fn(i),
                        vsize if op in trace.VALUE_OPS else 0)
            for i in range(n)]


class TestParse:
    def test_documented_line(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1000,GET,6b657931,0,default\n")
        recs = list(trace.parse_trace(p))
        assert recs == [TraceRecord(1000, "Get", b"key1", 0, "default")]

    def test_empty_file(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("")
        assert list(trace.parse_trace(p)) == []

    def test_write_then_read_round_trip(self, tmp_path):
        recs = _mk_records(10_000)
        p = tmp_path / "t.csv"
        assert trace.write_trace(p, recs) == 10_000
        assert list(trace.parse_trace(p)) == recs

    def test_gzip_round_trip_by_suffix(self, tmp_path):
        recs = _mk_records(500)
        p = tmp_path / "t.csv.gz"
        trace.write_trace(p, recs)
        with gzip.open(p, "rt") as fh:
            assert fh.readline().startswith("0,PUT,")
        assert list(trace.parse_trace(p)) == recs

    def test_comments_and_blank_lines_skipped(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("# header\n\n1000,PUT,61,5,default\n\n")
        assert len(list(trace.parse_trace(p))) == 1

    def test_malformed_below_tolerance_skipped(self, tmp_path):
        lines = [f"{i * 10},PUT,6162,8,default" for i in range(1000)]
        lines[500] = "not,a,valid,line,at,all"
        p = tmp_path / "t.csv"
        p.write_text("\n".join(lines) + "\n")
        recs = list(trace.parse_trace(p))
        assert len(recs) == 999

    def test_malformed_above_tolerance_raises(self, tmp_path):
        lines = [f"{i * 10},PUT,6162,8,default" for i in range(100)]
        for i in range(0, 100, 25):
            lines[i] = "garbage line"
        p = tmp_path / "t.csv"
        p.write_text("\n".join(lines) + "\n")
        with pytest.raises(FormatError):
            list(trace.parse_trace(p))

    def test_timestamp_regression_is_malformed(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("1000,PUT,61,5,default\n"
                     "500,PUT,61,5,default\n"
                     "1500,PUT,61,5,default\n")
        # middle line dropped, but 1 of 3 malformed exceeds 1%
        with pytest.raises(FormatError):
            list(trace.parse_trace(p))

    def test_read_op_with_payload_is_malformed(self, tmp_path):
        p = tmp_path / "t.csv"
        good = "\n".join(f"{i},PUT,61,5,default" for i in range(200))
        p.write_text(good + "\n999999,GET,61,5,default\n")
        recs = list(trace.parse_trace(p))
        assert all(r.op == "Put" for r in recs)

    def test_missing_cf_defaults(self, tmp_path):
        p = tmp_path / "t.csv"
        p.write_text("0,PUT,61,5\n")
        assert list(trace.parse_trace(p))[0].column_family == "default"

    def test_missing_file_raises_unreadable(self, tmp_path):
        with pytest.raises(UnreadableSource):
            list(trace.parse_trace(tmp_path / "nope.csv"))

    def test_deterministic(self, tmp_path):
        p = tmp_path / "t.csv"
        trace.write_trace(p, _mk_records(300))
        assert list(trace.parse_trace(p)) == list(trace.parse_trace(p))


class TestWindows:
    def test_single_window_all_at_zero(self):
        recs = _mk_records(100, ts_step=0)
        ws = trace.summarize_windows(recs, 1_000_000)
        assert len(ws) == 1
        assert ws[0].op_counts == {"Put": 100}
        assert ws[0].total_accesses == 100

    def test_boundary_tiling(self):
        recs = [TraceRecord(500_000, "Put", b"a", 1),
                TraceRecord(1_500_000, "Put", b"b", 1)]
        ws = trace.summarize_windows(recs, 1_000_000)
        assert [w.total_accesses for w in ws] == [1, 1]
        assert ws[0].window_start_us == 0
        assert ws[1].window_start_us == 1_000_000

    def test_empty_windows_kept(self):
        recs = [TraceRecord(0, "Put", b"a", 1),
                TraceRecord(25_000_000, "Put", b"b", 1)]
        ws = trace.summarize_windows(recs, 10_000_000)
        assert [w.total_accesses for w in ws] == [1, 0, 1]

    def test_conservation_over_large_trace(self):
        recs = _mk_records(100_000, ts_step=137)
        ws = trace.summarize_windows(recs, 1_000_000)
        assert sum(w.total_accesses for w in ws) == 100_000
        stats = trace.aggregate_stats(recs)
        assert sum(stats.per_key_access_counts.values()) == 100_000

    def test_invalid_window_len(self):
        with pytest.raises(InvalidWindow):
            trace.summarize_windows(_mk_records(3), 0)
        with pytest.raises(InvalidWindow):
            trace.summarize_windows(_mk_records(3), -5)

    def test_windows_disjoint_and_contiguous(self):
        recs = _mk_records(5000, ts_step=997)
        ws = trace.summarize_windows(recs, 250_000)
        for i, w in enumerate(ws):
            assert w.window_start_us == i * 250_000
            assert w.window_len_us == 250_000

    def test_stats_against_statistics_module(self):
        sizes = [10, 20, 20, 30, 90]
        recs = [TraceRecord(i, "Put", b"k" * s, s) for i, s in enumerate(sizes)]
        w = trace.summarize_windows(recs, 1_000_000)[0]
        assert w.key_size_stats["mean"] == pytest.approx(statistics.mean(sizes))
        assert w.key_size_stats["median"] == statistics.median(sizes)
        assert w.key_size_stats["mode"] == statistics.mode(sizes)
        assert w.value_size_stats["mode"] == 20.0

    def test_mode_tie_breaks_small(self):
        recs = [TraceRecord(0, "Put", b"aa", 7), TraceRecord(1, "Put", b"bb", 9),
                TraceRecord(2, "Put", b"cc", 9), TraceRecord(3, "Put", b"dd", 7)]
        w = trace.summarize_windows(recs, 1_000)[0]
        assert w.value_size_stats["mode"] == 7.0

    def test_value_stats_ignore_reads(self):
        recs = [TraceRecord(0, "Put", b"a", 500), TraceRecord(1, "Get", b"a", 0)]
        w = trace.summarize_windows(recs, 1_000)[0]
        assert w.value_size_stats["mean"] == 500.0

    def test_distinct_keys_bounded(self):
        recs = [TraceRecord(i, "Get", b"same", 0) for i in range(50)]
        w = trace.summarize_windows(recs, 1_000)[0]
        assert w.distinct_keys == 1
        assert w.distinct_keys <= w.total_accesses


class TestAggregate:
    def test_single_put(self):
        stats = trace.aggregate_stats([TraceRecord(0, "Put", b"a", 100)])
        assert stats.op_ratios == {"Put": 1.0}
        assert stats.value_size_histogram == {100: 1}

    def test_fixed_sizes_half_write_half_read(self):
        # 16-byte keys, 128-byte values, 50% Put / 50% Get
        recs = []
        for i in range(2000):
            key = f"{i % 500:016d}".encode()
            if i % 2 == 0:
                recs.append(TraceRecord(i, "Put", key, 128))
            else:
                recs.append(TraceRecord(i, "Get", key, 0))
        stats = trace.aggregate_stats(recs)
        assert set(stats.key_size_histogram) == {16}
        assert set(stats.value_size_histogram) == {128}
        assert stats.op_ratios["Put"] == pytest.approx(0.5)
        assert stats.op_ratios["Get"] == pytest.approx(0.5)

    def test_ratios_sum_to_one(self):
        recs = _mk_records(997) + [TraceRecord(10 ** 9, "Get", b"x", 0)]
        stats = trace.aggregate_stats(recs)
        assert sum(stats.op_ratios.values()) == pytest.approx(1.0, abs=1e-9)

    def test_per_key_counts_sum_to_total(self):
        recs = _mk_records(5000, key_fn=lambda i: f"k{i % 37}".encode())
        stats = trace.aggregate_stats(recs)
        assert sum(stats.per_key_access_counts.values()) == 5000
        assert len(stats.per_key_access_counts) == 37

    def test_empty_raises(self):
        with pytest.raises(EmptyTrace):
            trace.aggregate_stats([])

    def test_hash_key_stable_and_wide(self):
        h1 = trace.hash_key(b"alpha")
        assert h1 == trace.hash_key(b"alpha")
        assert h1 != trace.hash_key(b"alphb")
        hashes = {trace.hash_key(f"key{i}".encode()) for i in range(10000)}
        assert len(hashes) == 10000
