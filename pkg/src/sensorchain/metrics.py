"""Run metrics and structured logging.

One CSV row per noteworthy actor operation with the fixed schema
``event_time, actor, op, hash_ops, walk_length, outcome``; the trace
hash over the emitted CSV bytes is the determinism fingerprint of a
run.  Alarms, revocations, and configuration changes additionally land
in a structured JSON-lines log.
"""

from __future__ import annotations

import hashlib
import io
import json
from dataclasses import dataclass, field

TRACE_COLUMNS = ("event_time", "actor", "op", "hash_ops", "walk_length",
                 "outcome")


@dataclass
class MetricsLog:
    rows: list[tuple] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)

    def record(self, event_time: int, actor: str, op: str,
               hash_ops: int = 0, walk_length: int = 0,
               outcome: str = "ok") -> None:
        self.rows.append(
            (event_time, actor, op, hash_ops, walk_length, outcome)
        )

    def log_event(self, event_time: int, kind: str, **details) -> None:
        self.events.append({"time": event_time, "kind": kind, **details})

    def csv_bytes(self) -> bytes:
        out = io.StringIO()
        out.write(",".join(TRACE_COLUMNS) + "\n")
        for row in self.rows:
            out.write(",".join(str(v) for v in row) + "\n")
        return out.getvalue().encode()

    def trace_hash(self) -> str:
        return hashlib.sha256(self.csv_bytes()).hexdigest()

    def jsonl_bytes(self) -> bytes:
        return "".join(
            json.dumps(e, sort_keys=True) + "\n" for e in self.events
        ).encode()

    def count(self, op: str, outcome: str | None = None) -> int:
        return sum(
            1 for row in self.rows
            if row[2] == op and (outcome is None or row[5] == outcome)
        )
