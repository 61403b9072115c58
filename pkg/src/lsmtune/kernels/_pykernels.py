"""Pure-Python kernels: deterministic RNG, samplers, histogram bucketing,
and the simulated-engine per-op cost model.

This is the reference implementation; `_ckernels.pyx` mirrors it operation
for operation so both backends produce bit-identical streams. Any change
here must be applied to the compiled twin as well (the cross-backend
equality tests pin them together).
"""

from __future__ import annotations

import math
from array import array

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB
_SEED_SALT = 0x8BADF00D5EEDC0DE
_SEED_P1 = 0xD6E8FEB86659FD93
_SEED_P2 = 0xA5A5B9E3779B97F5
_SEED_P3 = 0xC2B2AE3D27D4EB4F

_INV_2_53 = 1.0 / (1 << 53)


def mix64(x: int) -> int:
    """splitmix64 finalizer; bijective on 64-bit ints."""
    z = x & MASK64
    z ^= z >> 30
    z = (z * _MIX_A) & MASK64
    z ^= z >> 27
    z = (z * _MIX_B) & MASK64
    z ^= z >> 31
    return z


def stream_seed(seed: int, a: int = 0, b: int = 0, c: int = 0) -> int:
    """Derive an independent stream state from (seed, a, b, c)."""
    z = mix64((seed & MASK64) ^ _SEED_SALT)
    z = mix64(z ^ ((a & MASK64) * _SEED_P1 & MASK64))
    z = mix64(z ^ ((b & MASK64) * _SEED_P2 & MASK64))
    z = mix64(z ^ ((c & MASK64) * _SEED_P3 & MASK64))
    return z


class Rng:
    """splitmix64 sequence with distribution samplers.

    State advances by the golden-ratio increment; every draw is a pure
    function of the state, so streams are reproducible from `stream_seed`
    inputs alone.
    """

    __slots__ = ("state",)

    def __init__(self, state: int):
        self.state = state & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GOLDEN) & MASK64
        return mix64(self.state)

    def next_double(self) -> float:
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform_index(self, n: int) -> int:
        # floor(u * n); modulo bias is irrelevant next to determinism here
        i = int(self.next_double() * n)
        return n - 1 if i >= n else i

    def normal(self, mu: float, sigma: float) -> float:
        # Marsaglia polar method; second deviate discarded to stay stateless
        while True:
            v1 = 2.0 * self.next_double() - 1.0
            v2 = 2.0 * self.next_double() - 1.0
            s = v1 * v1 + v2 * v2
            if 0.0 < s < 1.0:
                return mu + sigma * (v1 * math.sqrt(-2.0 * math.log(s) / s))

    def exponential(self, rate: float) -> float:
        return -math.log(1.0 - self.next_double()) / rate

    def pareto(self, shape: float, scale: float) -> float:
        u = self.next_double()
        if u <= 0.0:
            u = _INV_2_53
        return scale * math.pow(u, -1.0 / shape)

    def zipf(self, zp: tuple) -> int:
        """Draw a 1-based rank from a bounded Zipfian via rejection-inversion."""
        n, s, hx1, hn, sconst = zp
        while True:
            u = hn + self.next_double() * (hx1 - hn)
            x = _h_integral_inv(u, s)
            k = math.floor(x + 0.5)
            if k < 1.0:
                k = 1.0
            elif k > n:
                k = n
            if (k - x <= sconst) or (u >= _h_integral(k + 0.5, s) - _h(k, s)):
                return int(k)

    def zipf_batch(self, zp: tuple, count: int) -> list[int]:
        return [self.zipf(zp) for _ in range(count)]

    def table_sample(self, table) -> float:
        """Linear-interpolated draw from a tabulated inverse CDF."""
        m = len(table) - 1
        t = self.next_double() * m
        i = int(t)
        if i >= m:
            return table[m]
        frac = t - i
        return table[i] + (table[i + 1] - table[i]) * frac


def _helper1(x: float) -> float:
    return math.log1p(x) / x if x != 0.0 else 1.0


def _helper2(x: float) -> float:
    return math.expm1(x) / x if x != 0.0 else 1.0


def _h(x: float, s: float) -> float:
    return math.exp(-s * math.log(x))


def _h_integral(x: float, s: float) -> float:
    lx = math.log(x)
    return _helper2((1.0 - s) * lx) * lx


def _h_integral_inv(x: float, s: float) -> float:
    t = x * (1.0 - s)
    if t < -1.0:
        t = -1.0
    return math.exp(_helper1(t) * x)


def zipf_setup(n: int, s: float) -> tuple:
    """Precompute rejection-inversion constants for Zipf(s) over {1..n}."""
    if n < 1 or s <= 0.0:
        raise ValueError("zipf requires n >= 1 and s > 0")
    hx1 = _h_integral(1.5, s) - 1.0
    hn = _h_integral(n + 0.5, s)
    sconst = 2.0 - _h_integral_inv(_h_integral(2.5, s) - _h(2.0, s), s)
    return (float(n), s, hx1, hn, sconst)


def permute_index(i: int, n: int, salt: int) -> int:
    """Bijective scramble of [0, n) via a 4-round Feistel with cycle walking."""
    if n <= 1:
        return 0
    bits = (n - 1).bit_length()
    if bits & 1:
        bits += 1
    half = bits >> 1
    mask = (1 << half) - 1
    x = i
    while True:
        left = x >> half
        right = x & mask
        for rnd in range(4):
            f = mix64(right ^ salt ^ ((rnd * _GOLDEN) & MASK64)) & mask
            left, right = right, left ^ f
        x = (left << half) | right
        if x < n:
            return x


def permute_batch(indices, n: int, salt: int) -> list[int]:
    return [permute_index(i, n, salt) for i in indices]


# Latency histogram: geometric buckets, ~2% resolution, 1 us .. >100 s.
# Bucket k covers (1.02**(k-1), 1.02**k] microseconds; bucket 0 covers <= 1 us.
HIST_RATIO = 1.02
HIST_LOG_RATIO = math.log(HIST_RATIO)
HIST_NBUCKETS = 932


def hist_bucket(latency_us: float) -> int:
    if latency_us <= 1.0:
        return 0
    b = int(math.log(latency_us) / HIST_LOG_RATIO) + 1
    return b if b < HIST_NBUCKETS else HIST_NBUCKETS - 1


def hist_bucket_upper(bucket: int) -> float:
    return math.pow(HIST_RATIO, bucket)


# ---------------------------------------------------------------------------
# Simulated-engine cost model.
#
# State and config travel as flat double vectors so the compiled twin can
# operate on raw memory. Indexes below are the layout contract.

ST_MEMTABLE = 0      # bytes in the active memtable
ST_BACKLOG = 1       # bytes queued in immutable memtables awaiting flush
ST_L0_FILES = 2      # L0 file count (fractional while flushing)
ST_PENDING = 3       # compaction debt in bytes
ST_LIVE = 4          # approximate working-set bytes
ST_STALL_US = 5      # accumulated write-stall microseconds
ST_LAST_T = 6        # virtual time of the previous op (us)
ST_SLOW_FACTOR = 7   # fault-injection latency multiplier
ST_COMPACTED = 8     # lifetime compacted bytes
ST_LEN = 9

CFG_WRITE_BUFFER = 0        # write_buffer_size, bytes
CFG_MAX_WRITE_BUFFERS = 1   # max_write_buffer_number
CFG_L0_SLOWDOWN = 2         # level0_slowdown_writes_trigger
CFG_L0_STOP = 3             # level0_stop_writes_trigger
CFG_JOBS = 4                # max_background_jobs
CFG_BLOCK_CACHE = 5         # block cache bytes
CFG_BLOCK_SIZE = 6          # table block bytes
CFG_COMPRESSION = 7         # 0/1
CFG_LEN = 8

OP_PUT = 0
OP_GET = 1
OP_DELETE = 2
OP_SEEK = 3
OP_MERGE = 4

# Cost constants (microseconds / bytes-per-microsecond). Calibrated so the
# background-jobs sweep is strictly unimodal and stalls emerge under the
# shipped default options.
_WRITE_BASE_US = 1.2
_WRITE_US_PER_BYTE = 0.004
_COMPRESS_CPU_FACTOR = 1.18
_COMPRESS_SIZE_FACTOR = 0.55
_READ_BASE_US = 1.6
_READ_US_PER_BYTE = 0.0015
_MISS_US = 55.0
_MISS_US_PER_BLOCK_BYTE = 0.0008
_SEEK_BASE_US = 6.0
_SEEK_NEXT_US = 0.4
_ENTRY_OVERHEAD = 24.0
_DRAIN_B_PER_US_PER_JOB = 55.0
_FLUSH_SHARE = 0.45
_COMPACT_SHARE = 0.55
_WRITE_AMP = 5.0
_EFF_JOBS_KNEE = 8.0
_EFF_JOBS_TAIL = 0.30
_CONTENTION_A = 0.018   # * jobs**1.3, every op
_CONTENTION_B = 0.10    # * (jobs-8)**2 beyond the knee
_L0_SLOW_US = 0.9       # * (l0 - slowdown_trigger)**2
_L0_STOP_US = 240.0
_MEMTABLE_STALL_US = 26.0
_SOFT_PENDING_BYTES = 8.0 * (1 << 30)
_PENDING_SLOW_US = 18.0


def sim_init_state():
    st = array("d", [0.0] * ST_LEN)
    st[ST_SLOW_FACTOR] = 1.0
    return st


def _advance_background(st, cfg, now_us: float) -> None:
    dt = now_us - st[ST_LAST_T]
    if dt < 0.0:
        dt = 0.0
    st[ST_LAST_T] = now_us
    if dt == 0.0:
        return
    jobs = cfg[CFG_JOBS]
    if jobs > _EFF_JOBS_KNEE:
        eff = _EFF_JOBS_KNEE + (jobs - _EFF_JOBS_KNEE) * _EFF_JOBS_TAIL
    else:
        eff = jobs
    budget = _DRAIN_B_PER_US_PER_JOB * eff * dt
    file_bytes = cfg[CFG_WRITE_BUFFER]
    if file_bytes <= 0.0:
        file_bytes = 1.0

    flushed = budget * _FLUSH_SHARE
    if flushed > st[ST_BACKLOG]:
        flushed = st[ST_BACKLOG]
    st[ST_BACKLOG] -= flushed
    st[ST_L0_FILES] += flushed / file_bytes
    st[ST_PENDING] += flushed

    # compaction rewrites data, so each retired byte costs _WRITE_AMP of budget
    retired = budget * _COMPACT_SHARE / _WRITE_AMP
    if retired > st[ST_PENDING]:
        retired = st[ST_PENDING]
    st[ST_PENDING] -= retired
    st[ST_COMPACTED] += retired
    st[ST_L0_FILES] -= retired / file_bytes
    if st[ST_L0_FILES] < 0.0:
        st[ST_L0_FILES] = 0.0


def _contention_us(jobs: float) -> float:
    c = _CONTENTION_A * math.pow(jobs, 1.3)
    if jobs > _EFF_JOBS_KNEE:
        over = jobs - _EFF_JOBS_KNEE
        c += _CONTENTION_B * over * over
    return c


def sim_op(st, cfg, op: int, key_size: float, value_size: float,
           now_us: float) -> float:
    """Apply one operation to the simulated engine; returns latency in us."""
    _advance_background(st, cfg, now_us)
    jobs = cfg[CFG_JOBS]
    contention = _contention_us(jobs)

    if op == OP_GET:
        live = st[ST_LIVE]
        cache = cfg[CFG_BLOCK_CACHE]
        hit = 1.0 if live <= cache or live <= 0.0 else cache / live
        lat = _READ_BASE_US + value_size * _READ_US_PER_BYTE + contention
        miss = _MISS_US + cfg[CFG_BLOCK_SIZE] * _MISS_US_PER_BLOCK_BYTE
        lat += (1.0 - hit) * miss
        return lat * st[ST_SLOW_FACTOR]

    if op == OP_SEEK:
        live = st[ST_LIVE]
        cache = cfg[CFG_BLOCK_CACHE]
        hit = 1.0 if live <= cache or live <= 0.0 else cache / live
        lat = _SEEK_BASE_US + value_size * _SEEK_NEXT_US + contention
        lat += (1.0 - hit) * (_MISS_US + cfg[CFG_BLOCK_SIZE] * _MISS_US_PER_BLOCK_BYTE)
        return lat * st[ST_SLOW_FACTOR]

    # write path: put / delete / merge
    entry = key_size + value_size + _ENTRY_OVERHEAD
    lat = _WRITE_BASE_US + entry * _WRITE_US_PER_BYTE
    if op == OP_MERGE:
        lat *= 1.1
    stored = entry
    if cfg[CFG_COMPRESSION] != 0.0:
        lat *= _COMPRESS_CPU_FACTOR
        stored = entry * _COMPRESS_SIZE_FACTOR

    st[ST_MEMTABLE] += entry
    if op != OP_DELETE:
        st[ST_LIVE] += stored
    wbs = cfg[CFG_WRITE_BUFFER]
    if wbs > 0.0 and st[ST_MEMTABLE] >= wbs:
        st[ST_BACKLOG] += st[ST_MEMTABLE]
        st[ST_MEMTABLE] = 0.0

    stall = 0.0
    l0 = st[ST_L0_FILES]
    slow_trig = cfg[CFG_L0_SLOWDOWN]
    stop_trig = cfg[CFG_L0_STOP]
    if l0 > slow_trig:
        over = l0 if l0 < stop_trig else stop_trig
        over -= slow_trig
        stall += _L0_SLOW_US * over * over
    if l0 >= stop_trig:
        stall += _L0_STOP_US
    headroom = (cfg[CFG_MAX_WRITE_BUFFERS] - 1.0) * wbs
    if wbs > 0.0 and st[ST_BACKLOG] > headroom:
        ratio = st[ST_BACKLOG] / wbs
        stall += _MEMTABLE_STALL_US * ratio * ratio
    if st[ST_PENDING] > _SOFT_PENDING_BYTES:
        stall += _PENDING_SLOW_US * (st[ST_PENDING] / _SOFT_PENDING_BYTES)

    st[ST_STALL_US] += stall
    return (lat + contention + stall) * st[ST_SLOW_FACTOR]
