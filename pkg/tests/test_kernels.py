"""Kernel backend tests: cross-backend bit-parity, determinism, and the
properties each sampler must hold regardless of backend."""

from __future__ import annotations

import math
import os
import subprocess
import sys
from array import array

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lsmtune import kernels
from lsmtune.kernels import _pykernels as pk

try:
    from lsmtune.kernels import _ckernels as ck

    HAVE_COMPILED = True
except ImportError:
    ck = None
    HAVE_COMPILED = False

needs_compiled = pytest.mark.skipif(
    not HAVE_COMPILED, reason="compiled kernels not built")


def _default_cfg(jobs: float = 4.0) -> array:
    return array("d", [
        64 * 2 ** 20,  # write buffer
        2.0,           # max write buffers
        20.0,          # l0 slowdown
        36.0,          # l0 stop
        jobs,
        32 * 2 ** 20,  # block cache
        4096.0,        # block size
        0.0,           # compression off
    ])


class TestParity:
    """The compiled twin must be bit-identical to the reference."""

    @needs_compiled
    def test_stream_seed_and_u64(self):
        for seed in (0, 1, 42, 2 ** 63, 2 ** 64 - 1):
            assert pk.stream_seed(seed, 5, 6, 7) == ck.stream_seed(seed, 5, 6, 7)
            r1 = pk.Rng(pk.stream_seed(seed))
            r2 = ck.Rng(ck.stream_seed(seed))
            for _ in range(500):
                assert r1.next_u64() == r2.next_u64()

    @needs_compiled
    def test_doubles(self):
        r1, r2 = pk.Rng(pk.stream_seed(7)), ck.Rng(ck.stream_seed(7))
        for _ in range(2000):
            assert r1.next_double() == r2.next_double()

    @needs_compiled
    def test_samplers(self):
        r1, r2 = pk.Rng(pk.stream_seed(9)), ck.Rng(ck.stream_seed(9))
        zp1, zp2 = pk.zipf_setup(100000, 0.87), ck.zipf_setup(100000, 0.87)
        assert zp1 == zp2
        for _ in range(5000):
            assert r1.zipf(zp1) == r2.zipf(zp2)
        for _ in range(2000):
            assert r1.normal(5.0, 2.0) == r2.normal(5.0, 2.0)
            assert r1.exponential(0.13) == r2.exponential(0.13)
            assert r1.pareto(2.0, 50.0) == r2.pareto(2.0, 50.0)
            assert r1.uniform_index(977) == r2.uniform_index(977)
        tb = array("d", [i / 100 for i in range(101)])
        for _ in range(1000):
            assert r1.table_sample(tb) == r2.table_sample(tb)

    @needs_compiled
    def test_permute(self):
        for n in (1, 2, 3, 10, 1000, 10 ** 6):
            for i in range(min(n, 300)):
                assert pk.permute_index(i, n, 777) == ck.permute_index(i, n, 777)
        idx = list(range(200))
        assert pk.permute_batch(idx, 10 ** 6, 31) == ck.permute_batch(idx, 10 ** 6, 31)

    @needs_compiled
    def test_sim_op_trajectory(self):
        st1, st2 = pk.sim_init_state(), ck.sim_init_state()
        cfg = _default_cfg()
        t = 0.0
        for i in range(20000):
            t += 2.0
            op = i % 5
            l1 = pk.sim_op(st1, cfg, op, 16.0, 100.0, t)
            l2 = ck.sim_op(st2, cfg, op, 16.0, 100.0, t)
            assert l1 == l2
        assert list(st1) == list(st2)

    @needs_compiled
    def test_hist_bucket(self):
        for v in (0.0, 0.5, 1.0, 1.0000001, 1.5, 2.0, 99.9, 1e6, 1e8, 1e12):
            assert pk.hist_bucket(v) == ck.hist_bucket(v)

    @needs_compiled
    def test_zipf_batch(self):
        r1, r2 = pk.Rng(3), ck.Rng(3)
        zp1, zp2 = pk.zipf_setup(5000, 1.1), ck.zipf_setup(5000, 1.1)
        assert r1.zipf_batch(zp1, 4000) == r2.zipf_batch(zp2, 4000)


class TestDeterminism:
    def test_same_seed_same_stream(self):
        a = kernels.Rng(kernels.stream_seed(123, 1, 2, 3))
        b = kernels.Rng(kernels.stream_seed(123, 1, 2, 3))
        assert [a.next_u64() for _ in range(100)] == [b.next_u64() for _ in range(100)]

    def test_distinct_streams_diverge(self):
        base = kernels.stream_seed(123)
        others = {kernels.stream_seed(123, a, b, c)
                  for a in range(3) for b in range(3) for c in range(3)}
        assert len(others) == 27
        assert base == kernels.stream_seed(123, 0, 0, 0)

    def test_pure_python_env_override(self):
        env = dict(os.environ, LSMTUNE_PURE_PYTHON="1")
        out = subprocess.run(
            [sys.executable, "-c", "from lsmtune import kernels; print(kernels.BACKEND)"],
            capture_output=True, text=True, env=env, check=True)
        assert out.stdout.strip() == "python"


class TestSamplerProperties:
    def test_doubles_in_unit_interval(self):
        r = kernels.Rng(kernels.stream_seed(5))
        for _ in range(10000):
            d = r.next_double()
            assert 0.0 <= d < 1.0

    def test_zipf_in_range_and_skewed(self):
        r = kernels.Rng(kernels.stream_seed(6))
        zp = kernels.zipf_setup(1000, 1.0)
        draws = r.zipf_batch(zp, 30000)
        assert min(draws) >= 1 and max(draws) <= 1000
        counts = [0] * 1001
        for d in draws:
            counts[d] += 1
        # head must dominate: rank 1 clearly above rank 10 above rank 100
        assert counts[1] > counts[10] > counts[100]

    def test_zipf_rank1_mass_close_to_analytic(self):
        n, s = 100, 1.2
        r = kernels.Rng(kernels.stream_seed(8))
        zp = kernels.zipf_setup(n, s)
        draws = r.zipf_batch(zp, 200000)
        h = sum(k ** -s for k in range(1, n + 1))
        p1 = draws.count(1) / len(draws)
        assert abs(p1 - 1.0 / h) / (1.0 / h) < 0.03

    def test_exponential_mean(self):
        r = kernels.Rng(kernels.stream_seed(10))
        xs = [r.exponential(0.25) for _ in range(50000)]
        assert abs(sum(xs) / len(xs) - 4.0) < 0.1

    def test_normal_moments(self):
        r = kernels.Rng(kernels.stream_seed(11))
        xs = [r.normal(10.0, 3.0) for _ in range(50000)]
        m = sum(xs) / len(xs)
        var = sum((x - m) ** 2 for x in xs) / len(xs)
        assert abs(m - 10.0) < 0.1
        assert abs(math.sqrt(var) - 3.0) < 0.1

    def test_pareto_minimum_is_scale(self):
        r = kernels.Rng(kernels.stream_seed(12))
        xs = [r.pareto(2.0, 50.0) for _ in range(20000)]
        assert min(xs) >= 50.0

    def test_table_sample_interpolates_range(self):
        r = kernels.Rng(kernels.stream_seed(13))
        tb = array("d", [10.0, 20.0, 40.0])
        for _ in range(2000):
            v = r.table_sample(tb)
            assert 10.0 <= v <= 40.0

    @given(n=st.integers(min_value=1, max_value=4096),
           salt=st.integers(min_value=0, max_value=2 ** 64 - 1))
    @settings(max_examples=60, deadline=None)
    def test_permute_is_bijective(self, n, salt):
        image = {kernels.permute_index(i, n, salt) for i in range(n)}
        assert image == set(range(n))

    @given(x=st.integers(min_value=0, max_value=2 ** 64 - 1))
    @settings(max_examples=200, deadline=None)
    def test_mix64_stays_in_u64(self, x):
        assert 0 <= kernels.mix64(x) < 2 ** 64


class TestHistogramBuckets:
    def test_monotone_and_bounded(self):
        prev = -1
        v = 0.5
        while v < 2e8:
            b = kernels.hist_bucket(v)
            assert 0 <= b < kernels.HIST_NBUCKETS
            assert b >= prev
            prev = b
            v *= 1.7

    def test_resolution_within_two_percent(self):
        # consecutive bucket bounds differ by exactly the ratio
        for b in (1, 10, 100, 500, 900):
            lo = kernels.hist_bucket_upper(b - 1)
            hi = kernels.hist_bucket_upper(b)
            assert hi / lo == pytest.approx(kernels.HIST_RATIO, rel=1e-12)

    def test_value_falls_at_or_below_upper_bound(self):
        for v in (1.5, 3.0, 47.0, 999.0, 123456.0):
            b = kernels.hist_bucket(v)
            assert v <= kernels.hist_bucket_upper(b) * (1 + 1e-9)


class TestSimOp:
    def test_write_latency_positive_and_state_advances(self):
        st_ = kernels.sim_init_state()
        cfg = _default_cfg()
        lat = kernels.sim_op(st_, cfg, kernels.OP_PUT, 16.0, 100.0, 1.0)
        assert lat > 0
        assert st_[kernels.ST_MEMTABLE] == 140.0
        assert st_[kernels.ST_LIVE] == 140.0

    def test_delete_adds_tombstone_not_live_bytes(self):
        st_ = kernels.sim_init_state()
        cfg = _default_cfg()
        kernels.sim_op(st_, cfg, kernels.OP_DELETE, 16.0, 0.0, 1.0)
        assert st_[kernels.ST_LIVE] == 0.0
        assert st_[kernels.ST_MEMTABLE] > 0.0

    def test_memtable_rotates_into_backlog(self):
        st_ = kernels.sim_init_state()
        cfg = _default_cfg()
        cfg[kernels.CFG_WRITE_BUFFER] = 1000.0
        kernels.sim_op(st_, cfg, kernels.OP_PUT, 16.0, 1000.0, 1.0)
        assert st_[kernels.ST_MEMTABLE] == 0.0
        assert st_[kernels.ST_BACKLOG] == 1040.0

    def test_backlog_beyond_headroom_stalls_writes(self):
        st_ = kernels.sim_init_state()
        cfg = _default_cfg()
        cfg[kernels.CFG_WRITE_BUFFER] = 1000.0
        cfg[kernels.CFG_MAX_WRITE_BUFFERS] = 2.0
        # same virtual instant: no background drain between ops
        for _ in range(5):
            kernels.sim_op(st_, cfg, kernels.OP_PUT, 16.0, 900.0, 1.0)
        assert st_[kernels.ST_STALL_US] > 0.0

    def test_cache_hit_makes_reads_cheaper(self):
        st_ = kernels.sim_init_state()
        cfg = _default_cfg()
        st_[kernels.ST_LIVE] = 100 * 2 ** 20
        cfg[kernels.CFG_BLOCK_CACHE] = 1 * 2 ** 20
        cold = kernels.sim_op(st_, cfg, kernels.OP_GET, 16.0, 100.0, 1.0)
        cfg[kernels.CFG_BLOCK_CACHE] = 200 * 2 ** 20
        warm = kernels.sim_op(st_, cfg, kernels.OP_GET, 16.0, 100.0, 1.0)
        assert warm < cold

    def test_fault_multiplier_scales_latency(self):
        st_ = kernels.sim_init_state()
        cfg = _default_cfg()
        base = kernels.sim_op(st_, cfg, kernels.OP_GET, 16.0, 100.0, 1.0)
        st_[kernels.ST_SLOW_FACTOR] = 3.0
        slowed = kernels.sim_op(st_, cfg, kernels.OP_GET, 16.0, 100.0, 1.0)
        assert slowed == pytest.approx(3.0 * base, rel=1e-9)

    def test_background_drain_clears_backlog(self):
        st_ = kernels.sim_init_state()
        cfg = _default_cfg(jobs=8.0)
        cfg[kernels.CFG_WRITE_BUFFER] = 1000.0
        kernels.sim_op(st_, cfg, kernels.OP_PUT, 16.0, 1000.0, 1.0)
        assert st_[kernels.ST_BACKLOG] > 0
        kernels.sim_op(st_, cfg, kernels.OP_GET, 16.0, 0.0, 5_000_000.0)
        assert st_[kernels.ST_BACKLOG] == 0.0
