"""Advisor backends: remote chat endpoint, scripted rules, replay.

Every backend exposes complete(text, meta) -> str. The scripted and
replay backends are pure functions of their inputs, which is what makes
tuning trajectories reproducible in tests.
"""

from __future__ import annotations

import hashlib
import os
import time
from pathlib import Path
from typing import Optional

from ..engine import by_name, load_catalog
from ..errors import AdvisorUnavailable, AuthError

DEFAULT_TIMEOUT_S = 120.0
DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_RETRIES = 3
API_KEY_ENV = "LSMTUNE_API_KEY"


def prompt_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def call_advisor(backend, prompt) -> str:
    """Send one prompt through a backend; errors propagate unchanged."""
    return backend.complete(prompt.text, prompt.meta)


class RemoteAdvisor:
    """HTTP chat-completions client.

    The credential comes from the environment only; endpoint, model,
    and temperature travel in configuration.
    """

    def __init__(self,
                 endpoint: str,
                 model: str,
                 temperature: float = DEFAULT_TEMPERATURE,
                 timeout_s: float = DEFAULT_TIMEOUT_S,
                 api_key_env: str = API_KEY_ENV,
                 max_retries: int = DEFAULT_MAX_RETRIES,
                 backoff_s: float = 0.5,
                 session=None) -> None:
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.timeout_s = timeout_s
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self.backoff_s = backoff_s
        self._session = session

    def _get_session(self):
        if self._session is None:
            import requests
            self._session = requests.Session()
        return self._session

    def complete(self, text: str, meta: dict) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise AuthError(
                f"no credential in environment variable {self.api_key_env}")
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": text}],
        }
        headers = {"Authorization": f"Bearer {key}",
                   "Content-Type": "application/json"}
        session = self._get_session()
        last_error: Optional[str] = None
        for attempt in range(self.max_retries + 1):
            if attempt and self.backoff_s > 0:
                time.sleep(self.backoff_s * (2 ** (attempt - 1)))
            try:
                response = session.post(self.endpoint, json=payload,
                                        headers=headers,
                                        timeout=self.timeout_s)
            except Exception as exc:
                last_error = str(exc)
                continue
            status = getattr(response, "status_code", 0)
            if status in (401, 403):
                raise AuthError(f"endpoint rejected credential ({status})")
            if status != 200:
                last_error = f"http {status}"
                continue
            try:
                body = response.json()
                return body["choices"][0]["message"]["content"]
            except Exception as exc:
                last_error = f"malformed response body: {exc}"
                continue
        raise AdvisorUnavailable(
            f"remote advisor failed after {self.max_retries + 1} attempts: "
            f"{last_error}")


class ReplayAdvisor:
    """Replays recorded responses keyed by prompt digest.

    One text file per digest; a missing file means the fixture set does
    not cover this prompt and the caller must handle the outage.
    """

    def __init__(self, fixture_dir) -> None:
        self.fixture_dir = Path(fixture_dir)

    def _path(self, digest: str) -> Path:
        return self.fixture_dir / f"{digest}.txt"

    def complete(self, text: str, meta: dict) -> str:
        path = self._path(prompt_digest(text))
        if not path.is_file():
            raise AdvisorUnavailable(
                f"no recorded response for digest {prompt_digest(text)[:12]}")
        return path.read_text(encoding="utf-8")

    def record(self, text: str, response: str) -> str:
        """Store a response for this prompt; returns the digest."""
        digest = prompt_digest(text)
        self.fixture_dir.mkdir(parents=True, exist_ok=True)
        self._path(digest).write_text(response, encoding="utf-8")
        return digest


# scripted rule thresholds
_STALL_TRIGGER_US = 1
_PENDING_TRIGGER_BYTES = 64 << 20
_CACHE_HIT_LOW = 0.90
_CACHE_HIT_FINE = 0.98
_READ_HEAVY = 0.70
_WRITE_HEAVY = 0.50
_SEEK_HEAVY = 0.20

_JOBS_CAP = 16
_WRITE_BUFFER_CAP = 256 << 20
_BLOCK_CACHE_CAP = 8 << 30
_WRITE_BUFFERS_TARGET = 4
_L0_SLOWDOWN_STEP = 8
_READAHEAD_BYTES = 2 << 20


class ScriptedAdvisor:
    """Deterministic heuristic rules over the latest telemetry.

    Roughly ten rules distilled from the store's public tuning guidance:
    push background work when writes stall, grow the cache when reads
    miss, widen buffers under write pressure. Exists to make the loop
    testable offline, not to out-tune a model.
    """

    def __init__(self) -> None:
        self._catalog = by_name(load_catalog())

    def _proposals(self, telemetry: dict, options: dict) -> dict[str, str]:
        def current_int(name: str, fallback: int) -> int:
            raw = options.get(name)
            try:
                return int(raw)
            except (TypeError, ValueError):
                return fallback

        ratios = telemetry.get("realized_op_ratios") or {}
        reads = ratios.get("Get", 0.0)
        writes = ratios.get("Put", 0.0) + ratios.get("Merge", 0.0)
        seeks = ratios.get("Seek", 0.0)
        stall_us = telemetry.get("write_stall_us") or 0
        pending = telemetry.get("pending_compaction_bytes") or 0
        hit = telemetry.get("block_cache_hit_ratio")

        out: dict[str, str] = {}

        # rule 1: write stalls -> more background work
        if stall_us >= _STALL_TRIGGER_US:
            jobs = current_int("max_background_jobs", 2)
            if jobs < _JOBS_CAP:
                out["max_background_jobs"] = str(min(jobs * 2, _JOBS_CAP))
        # rule 2: write stalls -> relax L0 backpressure thresholds
        if stall_us >= _STALL_TRIGGER_US:
            slowdown = current_int("level0_slowdown_writes_trigger", 20)
            stop = current_int("level0_stop_writes_trigger", 36)
            out["level0_slowdown_writes_trigger"] = \
                str(slowdown + _L0_SLOWDOWN_STEP)
            out["level0_stop_writes_trigger"] = \
                str(max(stop + _L0_SLOWDOWN_STEP,
                        slowdown + _L0_SLOWDOWN_STEP + 4))
        # rule 3: compaction debt -> bigger memtables to cut write amp
        if pending >= _PENDING_TRIGGER_BYTES:
            wb = current_int("write_buffer_size", 64 << 20)
            if wb < _WRITE_BUFFER_CAP:
                out["write_buffer_size"] = str(min(wb * 2, _WRITE_BUFFER_CAP))
        # rule 4: read-heavy and cache misses -> grow block cache
        if reads >= _READ_HEAVY and hit is not None and hit < _CACHE_HIT_FINE:
            cache = current_int("block_cache", 32 << 20)
            if cache < _BLOCK_CACHE_CAP:
                out["block_cache"] = str(min(cache * 2, _BLOCK_CACHE_CAP))
        # rule 5: any workload with poor hit ratio -> grow block cache
        elif hit is not None and hit < _CACHE_HIT_LOW:
            cache = current_int("block_cache", 32 << 20)
            if cache < _BLOCK_CACHE_CAP:
                out["block_cache"] = str(min(cache * 2, _BLOCK_CACHE_CAP))
        # rule 6: write-heavy -> more memtables in flight
        if writes >= _WRITE_HEAVY:
            buffers = current_int("max_write_buffer_number", 2)
            if buffers < _WRITE_BUFFERS_TARGET:
                out["max_write_buffer_number"] = str(_WRITE_BUFFERS_TARGET)
        # rule 7: write-heavy without stalls still benefits from a wider
        # buffer, one step at a time
        if writes >= _WRITE_HEAVY and stall_us < _STALL_TRIGGER_US:
            wb = current_int("write_buffer_size", 64 << 20)
            if wb < _WRITE_BUFFER_CAP:
                out.setdefault("write_buffer_size", str(wb * 2))
        # rule 8: scan-heavy -> compaction readahead
        if seeks >= _SEEK_HEAVY:
            ra = current_int("compaction_readahead_size", 0)
            if ra < _READAHEAD_BYTES:
                out["compaction_readahead_size"] = str(_READAHEAD_BYTES)
        # rule 9: degradation directive -> back off delayed write rate
        if telemetry.get("degradation"):
            rate = current_int("delayed_write_rate", 16 << 20)
            out["delayed_write_rate"] = str(max(rate // 2, 1 << 20))
        # rule 10: aborted run -> be conservative, shrink subcompactions
        if telemetry.get("aborted"):
            out["max_subcompactions"] = "1"
        return out

    def complete(self, text: str, meta: dict) -> str:
        telemetry = dict(meta.get("telemetry") or {})
        if meta.get("degradation"):
            telemetry["degradation"] = True
        options = meta.get("options") or {}
        allowed = meta.get("allowed")
        proposals = self._proposals(telemetry, options)
        if allowed is not None:
            scope = set(allowed)
            proposals = {name: value for name, value in proposals.items()
                         if name in scope}
        if not proposals:
            return ("No changes recommended for this window.\n"
                    "```\n```")
        sections: dict[str, list[str]] = {}
        for name, value in proposals.items():
            meta_entry = self._catalog.get(name)
            if meta_entry is None:
                continue
            section = meta_entry.section
            if section not in ("DBOptions", "Version"):
                section = f'{section} "default"'
            sections.setdefault(section, []).append(f"  {name}={value}")
        lines = []
        for section in sorted(sections):
            lines.append(f"[{section}]")
            lines.extend(sorted(sections[section]))
        block = "\n".join(lines)
        return ("Based on the telemetry, apply the following:\n"
                f"```\n{block}\n```")
