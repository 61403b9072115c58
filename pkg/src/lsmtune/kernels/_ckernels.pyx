# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; bit-identical twin of `_pykernels`.

Every arithmetic expression keeps the evaluation order of the reference
module, and the extension is built with FP contraction disabled, so both
backends produce the same doubles.
"""

from array import array

from libc.math cimport log, log1p, expm1, exp, sqrt, floor, pow

ctypedef unsigned long long u64

MASK64 = (1 << 64) - 1

cdef u64 _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef u64 _MIX_A = 0xBF58476D1CE4E5B9ULL
cdef u64 _MIX_B = 0x94D049BB133111EBULL
cdef u64 _SEED_SALT = 0x8BADF00D5EEDC0DEULL
cdef u64 _SEED_P1 = 0xD6E8FEB86659FD93ULL
cdef u64 _SEED_P2 = 0xA5A5B9E3779B97F5ULL
cdef u64 _SEED_P3 = 0xC2B2AE3D27D4EB4FULL

cdef double _INV_2_53 = 1.0 / 9007199254740992.0


cdef inline u64 _mix64(u64 x) nogil:
    cdef u64 z = x
    z ^= z >> 30
    z = z * _MIX_A
    z ^= z >> 27
    z = z * _MIX_B
    z ^= z >> 31
    return z


def mix64(x):
    """splitmix64 finalizer; bijective on 64-bit ints."""
    return _mix64(<u64> x)


def stream_seed(seed, a=0, b=0, c=0):
    """Derive an independent stream state from (seed, a, b, c)."""
    cdef u64 z = _mix64((<u64> seed) ^ _SEED_SALT)
    z = _mix64(z ^ ((<u64> a) * _SEED_P1))
    z = _mix64(z ^ ((<u64> b) * _SEED_P2))
    z = _mix64(z ^ ((<u64> c) * _SEED_P3))
    return z


cdef class Rng:
    """splitmix64 sequence with distribution samplers."""

    cdef public u64 state

    def __init__(self, state):
        self.state = <u64> (state & ((1 << 64) - 1))

    cdef inline u64 _next_u64(self):
        self.state = self.state + _GOLDEN
        return _mix64(self.state)

    cdef inline double _next_double(self):
        return <double> (self._next_u64() >> 11) * _INV_2_53

    def next_u64(self):
        return self._next_u64()

    def next_double(self):
        return self._next_double()

    def uniform_index(self, n):
        cdef long long nn = n
        cdef long long i = <long long> (self._next_double() * nn)
        return nn - 1 if i >= nn else i

    def normal(self, double mu, double sigma):
        cdef double v1, v2, s
        while True:
            v1 = 2.0 * self._next_double() - 1.0
            v2 = 2.0 * self._next_double() - 1.0
            s = v1 * v1 + v2 * v2
            if 0.0 < s < 1.0:
                return mu + sigma * (v1 * sqrt(-2.0 * log(s) / s))

    def exponential(self, double rate):
        return -log(1.0 - self._next_double()) / rate

    def pareto(self, double shape, double scale):
        cdef double u = self._next_double()
        if u <= 0.0:
            u = _INV_2_53
        return scale * pow(u, -1.0 / shape)

    cdef long long _zipf(self, double n, double s, double hx1, double hn,
                         double sconst):
        cdef double u, x, k
        while True:
            u = hn + self._next_double() * (hx1 - hn)
            x = _h_integral_inv(u, s)
            k = floor(x + 0.5)
            if k < 1.0:
                k = 1.0
            elif k > n:
                k = n
            if (k - x <= sconst) or (u >= _h_integral(k + 0.5, s) - _h(k, s)):
                return <long long> k

    def zipf(self, zp):
        """Draw a 1-based rank from a bounded Zipfian via rejection-inversion."""
        cdef double n = zp[0]
        cdef double s = zp[1]
        cdef double hx1 = zp[2]
        cdef double hn = zp[3]
        cdef double sconst = zp[4]
        return self._zipf(n, s, hx1, hn, sconst)

    def zipf_batch(self, zp, count):
        cdef double n = zp[0]
        cdef double s = zp[1]
        cdef double hx1 = zp[2]
        cdef double hn = zp[3]
        cdef double sconst = zp[4]
        cdef long long i, m = count
        out = []
        for i in range(m):
            out.append(self._zipf(n, s, hx1, hn, sconst))
        return out

    def table_sample(self, table):
        """Linear-interpolated draw from a tabulated inverse CDF."""
        cdef double[:] tb = table
        cdef long long m = tb.shape[0] - 1
        cdef double t = self._next_double() * m
        cdef long long i = <long long> t
        if i >= m:
            return tb[m]
        cdef double frac = t - i
        return tb[i] + (tb[i + 1] - tb[i]) * frac


cdef inline double _helper1(double x) nogil:
    return log1p(x) / x if x != 0.0 else 1.0


cdef inline double _helper2(double x) nogil:
    return expm1(x) / x if x != 0.0 else 1.0


cdef inline double _h(double x, double s) nogil:
    return exp(-s * log(x))


cdef inline double _h_integral(double x, double s) nogil:
    cdef double lx = log(x)
    return _helper2((1.0 - s) * lx) * lx


cdef inline double _h_integral_inv(double x, double s) nogil:
    cdef double t = x * (1.0 - s)
    if t < -1.0:
        t = -1.0
    return exp(_helper1(t) * x)


def zipf_setup(n, s):
    """Precompute rejection-inversion constants for Zipf(s) over {1..n}."""
    cdef long long nn = n
    cdef double ss = s
    if nn < 1 or ss <= 0.0:
        raise ValueError("zipf requires n >= 1 and s > 0")
    cdef double hx1 = _h_integral(1.5, ss) - 1.0
    cdef double hn = _h_integral(nn + 0.5, ss)
    cdef double sconst = 2.0 - _h_integral_inv(
        _h_integral(2.5, ss) - _h(2.0, ss), ss)
    return (<double> nn, ss, hx1, hn, sconst)


cdef u64 _permute_one(u64 i, u64 n, u64 salt, int half, u64 mask) nogil:
    cdef u64 x = i
    cdef u64 left, right, f, tmp
    cdef int rnd
    while True:
        left = x >> half
        right = x & mask
        for rnd in range(4):
            f = _mix64(right ^ salt ^ ((<u64> rnd) * _GOLDEN)) & mask
            tmp = right
            right = left ^ f
            left = tmp
        x = (left << half) | right
        if x < n:
            return x


cdef inline int _feistel_half(u64 n) nogil:
    cdef int bits = 0
    cdef u64 v = n - 1
    while v:
        bits += 1
        v >>= 1
    if bits < 2:
        bits = 2
    if bits & 1:
        bits += 1
    return bits >> 1


def permute_index(i, n, salt):
    """Bijective scramble of [0, n) via a 4-round Feistel with cycle walking."""
    cdef u64 nn = n
    if nn <= 1:
        return 0
    cdef int half = _feistel_half(nn)
    cdef u64 mask = ((<u64> 1) << half) - 1
    return _permute_one(<u64> i, nn, <u64> salt, half, mask)


def permute_batch(indices, n, salt):
    cdef u64 nn = n
    if nn <= 1:
        return [0 for _ in indices]
    cdef int half = _feistel_half(nn)
    cdef u64 mask = ((<u64> 1) << half) - 1
    cdef u64 ss = salt
    out = []
    for i in indices:
        out.append(_permute_one(<u64> i, nn, ss, half, mask))
    return out


HIST_RATIO = 1.02
HIST_NBUCKETS = 932

cdef double _HIST_LOG_RATIO = log(1.02)

HIST_LOG_RATIO = _HIST_LOG_RATIO


def hist_bucket(double latency_us):
    if latency_us <= 1.0:
        return 0
    cdef int b = <int> (log(latency_us) / _HIST_LOG_RATIO) + 1
    return b if b < 932 else 931


def hist_bucket_upper(bucket):
    return pow(1.02, <double> bucket)


# Simulated-engine cost model; layout contract shared with the reference.

ST_MEMTABLE = 0
ST_BACKLOG = 1
ST_L0_FILES = 2
ST_PENDING = 3
ST_LIVE = 4
ST_STALL_US = 5
ST_LAST_T = 6
ST_SLOW_FACTOR = 7
ST_COMPACTED = 8
ST_LEN = 9

CFG_WRITE_BUFFER = 0
CFG_MAX_WRITE_BUFFERS = 1
CFG_L0_SLOWDOWN = 2
CFG_L0_STOP = 3
CFG_JOBS = 4
CFG_BLOCK_CACHE = 5
CFG_BLOCK_SIZE = 6
CFG_COMPRESSION = 7
CFG_LEN = 8

OP_PUT = 0
OP_GET = 1
OP_DELETE = 2
OP_SEEK = 3
OP_MERGE = 4

cdef double _WRITE_BASE_US = 1.2
cdef double _WRITE_US_PER_BYTE = 0.004
cdef double _COMPRESS_CPU_FACTOR = 1.18
cdef double _COMPRESS_SIZE_FACTOR = 0.55
cdef double _READ_BASE_US = 1.6
cdef double _READ_US_PER_BYTE = 0.0015
cdef double _MISS_US = 55.0
cdef double _MISS_US_PER_BLOCK_BYTE = 0.0008
cdef double _SEEK_BASE_US = 6.0
cdef double _SEEK_NEXT_US = 0.4
cdef double _ENTRY_OVERHEAD = 24.0
cdef double _DRAIN_B_PER_US_PER_JOB = 55.0
cdef double _FLUSH_SHARE = 0.45
cdef double _COMPACT_SHARE = 0.55
cdef double _WRITE_AMP = 5.0
cdef double _EFF_JOBS_KNEE = 8.0
cdef double _EFF_JOBS_TAIL = 0.30
cdef double _CONTENTION_A = 0.018
cdef double _CONTENTION_B = 0.10
cdef double _L0_SLOW_US = 0.9
cdef double _L0_STOP_US = 240.0
cdef double _MEMTABLE_STALL_US = 26.0
cdef double _SOFT_PENDING_BYTES = 8.0 * (<double> (1 << 30))
cdef double _PENDING_SLOW_US = 18.0


def sim_init_state():
    st = array('d', [0.0] * 9)
    st[7] = 1.0
    return st


cdef inline void _advance_background(double[:] st, double[:] cfg,
                                     double now_us) nogil:
    cdef double dt = now_us - st[6]
    if dt < 0.0:
        dt = 0.0
    st[6] = now_us
    if dt == 0.0:
        return
    cdef double jobs = cfg[4]
    cdef double eff
    if jobs > _EFF_JOBS_KNEE:
        eff = _EFF_JOBS_KNEE + (jobs - _EFF_JOBS_KNEE) * _EFF_JOBS_TAIL
    else:
        eff = jobs
    cdef double budget = _DRAIN_B_PER_US_PER_JOB * eff * dt
    cdef double file_bytes = cfg[0]
    if file_bytes <= 0.0:
        file_bytes = 1.0

    cdef double flushed = budget * _FLUSH_SHARE
    if flushed > st[1]:
        flushed = st[1]
    st[1] -= flushed
    st[2] += flushed / file_bytes
    st[3] += flushed

    # compaction rewrites data, so each retired byte costs _WRITE_AMP of budget
    cdef double retired = budget * _COMPACT_SHARE / _WRITE_AMP
    if retired > st[3]:
        retired = st[3]
    st[3] -= retired
    st[8] += retired
    st[2] -= retired / file_bytes
    if st[2] < 0.0:
        st[2] = 0.0


cdef inline double _contention_us(double jobs) nogil:
    cdef double c = _CONTENTION_A * pow(jobs, 1.3)
    cdef double over
    if jobs > _EFF_JOBS_KNEE:
        over = jobs - _EFF_JOBS_KNEE
        c += _CONTENTION_B * over * over
    return c


def sim_op(double[:] st, double[:] cfg, int op, double key_size,
           double value_size, double now_us):
    """Apply one operation to the simulated engine; returns latency in us."""
    _advance_background(st, cfg, now_us)
    cdef double jobs = cfg[4]
    cdef double contention = _contention_us(jobs)
    cdef double live, cache, hit, lat, miss
    cdef double entry, stored, wbs, stall, l0, slow_trig, stop_trig
    cdef double over, headroom, ratio

    if op == 1:  # get
        live = st[4]
        cache = cfg[5]
        hit = 1.0 if live <= cache or live <= 0.0 else cache / live
        lat = _READ_BASE_US + value_size * _READ_US_PER_BYTE + contention
        miss = _MISS_US + cfg[6] * _MISS_US_PER_BLOCK_BYTE
        lat += (1.0 - hit) * miss
        return lat * st[7]

    if op == 3:  # seek
        live = st[4]
        cache = cfg[5]
        hit = 1.0 if live <= cache or live <= 0.0 else cache / live
        lat = _SEEK_BASE_US + value_size * _SEEK_NEXT_US + contention
        lat += (1.0 - hit) * (_MISS_US + cfg[6] * _MISS_US_PER_BLOCK_BYTE)
        return lat * st[7]

    entry = key_size + value_size + _ENTRY_OVERHEAD
    lat = _WRITE_BASE_US + entry * _WRITE_US_PER_BYTE
    if op == 4:  # merge
        lat *= 1.1
    stored = entry
    if cfg[7] != 0.0:
        lat *= _COMPRESS_CPU_FACTOR
        stored = entry * _COMPRESS_SIZE_FACTOR

    st[0] += entry
    if op != 2:  # delete adds only a tombstone
        st[4] += stored
    wbs = cfg[0]
    if wbs > 0.0 and st[0] >= wbs:
        st[1] += st[0]
        st[0] = 0.0

    stall = 0.0
    l0 = st[2]
    slow_trig = cfg[2]
    stop_trig = cfg[3]
    if l0 > slow_trig:
        over = l0 if l0 < stop_trig else stop_trig
        over -= slow_trig
        stall += _L0_SLOW_US * over * over
    if l0 >= stop_trig:
        stall += _L0_STOP_US
    headroom = (cfg[1] - 1.0) * wbs
    if wbs > 0.0 and st[1] > headroom:
        ratio = st[1] / wbs
        stall += _MEMTABLE_STALL_US * ratio * ratio
    if st[3] > _SOFT_PENDING_BYTES:
        stall += _PENDING_SLOW_US * (st[3] / _SOFT_PENDING_BYTES)

    st[5] += stall
    return (lat + contention + stall) * st[7]
