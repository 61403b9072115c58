"""lsmtune: full-cycle auto-tuning for LSM-tree key-value stores.

Characterize a workload from a query-level trace, synthesize a replayable
benchmark spec, and iteratively tune store options with a pluggable
advisor, including runtime adjustment of mutable options while a workload
drifts.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
