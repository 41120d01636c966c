"""Event trace records.

One JSON object per line. The first seven keys are always present and in
this order: ``time, kind, packet, flow, link, series, attempt`` (``null``
where a field does not apply); kind-specific keys follow.

Kinds and their extra keys:

=============  ===============================================================
arrival        ac, size, deadline, group, frag, frags
enqueue        word (16-bit bitmap word), attempts (per-series max), mask, qlen
overflow       (none) -- tail drop, the packet never entered a queue
txop           ac, frames, limit
attempt        duration, rate
delivered      (none)
lost           mask -- current-series bitmap after the loss, 0 when exhausted
dropped        reason
outage_start   busy, loss
outage_end     busy
sim_end        residual, links
=============  ===============================================================
"""

from __future__ import annotations

import json
from typing import IO, Iterable, List

CORE_FIELDS = ("time", "kind", "packet", "flow", "link", "series", "attempt")


def record(time, kind, packet=None, flow=None, link=None, series=None, attempt=None, **extra) -> dict:
    rec = {
        "time": time,
        "kind": kind,
        "packet": packet,
        "flow": flow,
        "link": link,
        "series": series,
        "attempt": attempt,
    }
    rec.update(extra)
    return rec


def dumps(rec: dict) -> str:
    return json.dumps(rec, separators=(",", ":"))


def write_trace(trace: Iterable[dict], fh: IO[str]) -> None:
    for rec in trace:
        fh.write(dumps(rec))
        fh.write("\n")


def read_trace(fh: IO[str]) -> List[dict]:
    return [json.loads(line) for line in fh if line.strip()]
