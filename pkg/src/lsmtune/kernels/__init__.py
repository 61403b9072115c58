"""Kernel backend selection.

The compiled extension is preferred when it imported cleanly; the pure
Python twin is the fallback and the semantic reference. Set
``LSMTUNE_PURE_PYTHON=1`` to force the fallback (useful for debugging and
for the cross-backend equality tests).
"""

from __future__ import annotations

import os

from . import _pykernels

if os.environ.get("LSMTUNE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]

        BACKEND = "compiled"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

MASK64 = _impl.MASK64
mix64 = _impl.mix64
stream_seed = _impl.stream_seed
Rng = _impl.Rng
zipf_setup = _impl.zipf_setup
permute_index = _impl.permute_index
permute_batch = _impl.permute_batch

HIST_RATIO = _impl.HIST_RATIO
HIST_NBUCKETS = _impl.HIST_NBUCKETS
hist_bucket = _impl.hist_bucket
hist_bucket_upper = _impl.hist_bucket_upper

ST_MEMTABLE = _impl.ST_MEMTABLE
ST_BACKLOG = _impl.ST_BACKLOG
ST_L0_FILES = _impl.ST_L0_FILES
ST_PENDING = _impl.ST_PENDING
ST_LIVE = _impl.ST_LIVE
ST_STALL_US = _impl.ST_STALL_US
ST_LAST_T = _impl.ST_LAST_T
ST_SLOW_FACTOR = _impl.ST_SLOW_FACTOR
ST_COMPACTED = _impl.ST_COMPACTED
ST_LEN = _impl.ST_LEN

CFG_WRITE_BUFFER = _impl.CFG_WRITE_BUFFER
CFG_MAX_WRITE_BUFFERS = _impl.CFG_MAX_WRITE_BUFFERS
CFG_L0_SLOWDOWN = _impl.CFG_L0_SLOWDOWN
CFG_L0_STOP = _impl.CFG_L0_STOP
CFG_JOBS = _impl.CFG_JOBS
CFG_BLOCK_CACHE = _impl.CFG_BLOCK_CACHE
CFG_BLOCK_SIZE = _impl.CFG_BLOCK_SIZE
CFG_COMPRESSION = _impl.CFG_COMPRESSION
CFG_LEN = _impl.CFG_LEN

OP_PUT = _impl.OP_PUT
OP_GET = _impl.OP_GET
OP_DELETE = _impl.OP_DELETE
OP_SEEK = _impl.OP_SEEK
OP_MERGE = _impl.OP_MERGE

sim_init_state = _impl.sim_init_state
sim_op = _impl.sim_op

__all__ = [
    "BACKEND",
    "MASK64",
    "mix64",
    "stream_seed",
    "Rng",
    "zipf_setup",
    "permute_index",
    "permute_batch",
    "HIST_RATIO",
    "HIST_NBUCKETS",
    "hist_bucket",
    "hist_bucket_upper",
    "sim_init_state",
    "sim_op",
]
