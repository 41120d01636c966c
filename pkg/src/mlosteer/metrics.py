"""Per-flow and per-link figures computed from an event trace."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .core import decode_descriptor_bitmaps


class MalformedTrace(ValueError):
    pass


@dataclass
class FlowReport:
    flow_id: object  # int, or "all" for the aggregate row
    generated: int = 0
    delivered: int = 0
    dropped_retries: int = 0
    dropped_overflow: int = 0
    residual: int = 0
    deadline_misses: int = 0
    latency_mean: Optional[float] = None
    latency_p50: Optional[int] = None
    latency_p95: Optional[int] = None
    latency_p99: Optional[int] = None
    latency_max: Optional[int] = None
    jitter: Optional[float] = None
    reordering: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_retries + self.dropped_overflow


@dataclass
class LinkReport:
    link: int
    attempts: int = 0
    successes: int = 0
    losses: int = 0
    plr: float = 0.0
    busy_fraction: float = 0.0
    txops: int = 0
    frames_per_txop: float = 0.0


def percentile(sorted_samples: Sequence[int], p: float) -> int:
    """Nearest-rank percentile of already sorted samples."""
    if not sorted_samples:
        raise ValueError("no samples")
    rank = max(1, math.ceil(p / 100 * len(sorted_samples)))
    return sorted_samples[rank - 1]


@dataclass
class _Pkt:
    flow: int
    arrival: int
    deadline: Optional[int]
    group: Optional[int]
    frags: int
    fate: Optional[str] = None
    done: Optional[int] = None


def _collect(trace: Iterable[dict]):
    pkts: Dict[int, _Pkt] = {}
    order: List[int] = []  # delivered packet ids, in delivery order
    links: Dict[int, LinkReport] = {}
    airtime: Dict[int, int] = {}
    frames: Dict[int, int] = {}
    end = None
    for rec in trace:
        kind = rec["kind"]
        pid = rec["packet"]
        if kind == "arrival":
            pkts[pid] = _Pkt(rec["flow"], rec["time"], rec["deadline"], rec["group"], rec["frags"])
            continue
        if kind in ("overflow", "delivered", "dropped") and pid not in pkts:
            raise MalformedTrace(f"{kind} for packet {pid} without an arrival record")
        if kind == "overflow":
            pkts[pid].fate = "overflow"
            pkts[pid].done = rec["time"]
        elif kind == "delivered":
            pkts[pid].fate = "delivered"
            pkts[pid].done = rec["time"]
            order.append(pid)
            links.setdefault(rec["link"], LinkReport(rec["link"])).successes += 1
        elif kind == "dropped":
            pkts[pid].fate = "retries"
            pkts[pid].done = rec["time"]
        elif kind == "lost":
            links.setdefault(rec["link"], LinkReport(rec["link"])).losses += 1
        elif kind == "attempt":
            l = rec["link"]
            links.setdefault(l, LinkReport(l)).attempts += 1
            airtime[l] = airtime.get(l, 0) + rec["duration"]
        elif kind == "txop":
            l = rec["link"]
            links.setdefault(l, LinkReport(l))
            if rec["frames"]:
                links[l].txops += 1
                frames[l] = frames.get(l, 0) + rec["frames"]
        elif kind == "sim_end":
            end = rec
    if end is None:
        raise MalformedTrace("trace does not end with sim_end")
    for l in end["links"]:
        links.setdefault(l, LinkReport(l))
    duration = end["time"]
    for l, rep in links.items():
        rep.plr = rep.losses / rep.attempts if rep.attempts else 0.0
        rep.busy_fraction = min(1.0, airtime.get(l, 0) / duration) if duration else 0.0
        rep.frames_per_txop = frames.get(l, 0) / rep.txops if rep.txops else 0.0
    return pkts, order, [links[l] for l in sorted(links)], end


def _flow_report(key, pkts: Dict[int, _Pkt], ids: List[int], order: List[int]) -> FlowReport:
    rep = FlowReport(key)
    members = set(ids)
    for pid in ids:
        p = pkts[pid]
        rep.generated += 1
        if p.fate == "delivered":
            rep.delivered += 1
            if p.deadline is not None and p.done > p.deadline:
                rep.deadline_misses += 1
        elif p.fate == "retries":
            rep.dropped_retries += 1
            rep.deadline_misses += p.deadline is not None
        elif p.fate == "overflow":
            rep.dropped_overflow += 1
            rep.deadline_misses += p.deadline is not None
        else:
            rep.residual += 1

    # latency samples in delivery order; a fragmented frame yields one sample
    # when its last fragment arrives
    samples: List[int] = []
    group_left: Dict[int, int] = {}
    highest = -1
    for pid in order:
        if pid not in members:
            continue
        p = pkts[pid]
        if pid < highest:
            rep.reordering += 1
        highest = max(highest, pid)
        if p.group is None or p.frags == 1:
            samples.append(p.done - p.arrival)
            continue
        left = group_left.setdefault(p.group, p.frags) - 1
        group_left[p.group] = left
        if left == 0:
            samples.append(p.done - p.arrival)
    if samples:
        s = sorted(samples)
        rep.latency_mean = sum(samples) / len(samples)
        rep.latency_p50 = percentile(s, 50)
        rep.latency_p95 = percentile(s, 95)
        rep.latency_p99 = percentile(s, 99)
        rep.latency_max = s[-1]
        if len(samples) > 1:
            rep.jitter = sum(abs(b - a) for a, b in zip(samples, samples[1:])) / (len(samples) - 1)
        else:
            rep.jitter = 0.0
    return rep


def all_reports(trace: Sequence[dict]) -> Tuple[List[FlowReport], List[LinkReport], FlowReport]:
    """Per-flow reports, per-link reports and the aggregate row, in one pass."""
    pkts, order, links, _ = _collect(trace)
    by_flow: Dict[int, List[int]] = {}
    for pid, p in pkts.items():
        by_flow.setdefault(p.flow, []).append(pid)
    flows = [_flow_report(f, pkts, sorted(ids), order) for f, ids in sorted(by_flow.items())]
    return flows, links, _flow_report("all", pkts, sorted(pkts), order)


def build_reports(trace: Sequence[dict]) -> Tuple[List[FlowReport], List[LinkReport]]:
    flows, links, _ = all_reports(trace)
    return flows, links


def overall_report(trace: Sequence[dict]) -> FlowReport:
    pkts, order, _, _ = _collect(trace)
    return _flow_report("all", pkts, sorted(pkts), order)


# --- audits --------------------------------------------------------------------

def conservation(trace: Sequence[dict]) -> Tuple[int, int, int, int]:
    """Independent single-pass tally: (generated, delivered, dropped, residual).

    ``residual`` is the queue occupancy reported by the simulator at the end
    of the run, so ``generated == delivered + dropped + residual`` is a real
    cross-check rather than a definition.
    """
    generated = delivered = dropped = 0
    residual = None
    for rec in trace:
        k = rec["kind"]
        if k == "arrival":
            generated += 1
        elif k == "delivered":
            delivered += 1
        elif k in ("dropped", "overflow"):
            dropped += 1
        elif k == "sim_end":
            residual = rec["residual"]
    if residual is None:
        raise MalformedTrace("trace does not end with sim_end")
    return generated, delivered, dropped, residual


def bitmap_violations(trace: Sequence[dict]) -> List[dict]:
    """Attempts made on a link outside the packet's current-series bitmap.

    The current series is recomputed from the enqueue record's per-series
    attempt budget and the attempts seen so far, independently of the value
    the simulator writes into the attempt record.
    """
    bitmaps: Dict[int, Tuple[int, ...]] = {}
    budgets: Dict[int, List[int]] = {}
    used: Dict[int, List[int]] = {}
    bad = []
    for rec in trace:
        k = rec["kind"]
        if k == "enqueue":
            pid = rec["packet"]
            bitmaps[pid] = decode_descriptor_bitmaps(rec["word"])
            budgets[pid] = rec["attempts"]
            used[pid] = [0, 0, 0, 0]
        elif k == "attempt":
            pid = rec["packet"]
            series = next(
                (i for i, (u, b) in enumerate(zip(used[pid], budgets[pid])) if u < b), None
            )
            if series is None or series != rec["series"] or not bitmaps[pid][series] >> rec["link"] & 1:
                bad.append(rec)
            if series is not None:
                used[pid][series] += 1
    return bad


# --- comparison ----------------------------------------------------------------

LOWER_IS_BETTER = {
    "dropped_retries", "dropped_overflow", "deadline_misses", "residual",
    "latency_mean", "latency_p50", "latency_p95", "latency_p99", "latency_max",
    "jitter", "reordering", "losses", "plr",
}
HIGHER_IS_BETTER = {"delivered", "successes"}


@dataclass(frozen=True)
class Delta:
    scope: str  # "flow" or "link"
    key: str
    metric: str
    a: Optional[float]
    b: Optional[float]
    delta: Optional[float]
    direction: str  # better / worse / same / n/a  (b relative to a)


class ScenarioMismatch(ValueError):
    pass


def _direction(metric: str, a, b) -> str:
    if a is None or b is None:
        return "n/a"
    if a == b:
        return "same"
    if metric in LOWER_IS_BETTER:
        return "better" if b < a else "worse"
    if metric in HIGHER_IS_BETTER:
        return "better" if b > a else "worse"
    return "changed"


def _rows(scope: str, reports, keyattr: str):
    out = {}
    for r in reports:
        d = asdict(r)
        out[str(d.pop(keyattr))] = d
    return out


def compare_policies(
    flows_a: Sequence[FlowReport],
    links_a: Sequence[LinkReport],
    flows_b: Sequence[FlowReport],
    links_b: Sequence[LinkReport],
    fingerprint_a: Optional[str] = None,
    fingerprint_b: Optional[str] = None,
) -> List[Delta]:
    """Per-metric deltas ``b - a`` for every flow and link."""
    if fingerprint_a != fingerprint_b:
        raise ScenarioMismatch(f"runs come from different scenarios ({fingerprint_a} vs {fingerprint_b})")
    out: List[Delta] = []
    for scope, ra, rb, keyattr in (
        ("flow", flows_a, flows_b, "flow_id"),
        ("link", links_a, links_b, "link"),
    ):
        da, db = _rows(scope, ra, keyattr), _rows(scope, rb, keyattr)
        if set(da) != set(db):
            raise ScenarioMismatch(f"{scope} sets differ: {sorted(da)} vs {sorted(db)}")
        if scope == "flow":
            gen_a = {k: v["generated"] for k, v in da.items()}
            gen_b = {k: v["generated"] for k, v in db.items()}
            if gen_a != gen_b:
                raise ScenarioMismatch("offered traffic differs between runs")
        for key in da:
            for metric, va in da[key].items():
                vb = db[key][metric]
                delta = None if va is None or vb is None else vb - va
                out.append(Delta(scope, key, metric, va, vb, delta, _direction(metric, va, vb)))
    return out


# --- CSV -----------------------------------------------------------------------

def format_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return f"{v:.3f}"
    return str(v)


def write_csv(path, reports: Sequence) -> None:
    if not reports:
        raise ValueError("nothing to write")
    cols = [f.name for f in fields(reports[0])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in reports:
            w.writerow([format_cell(getattr(r, c)) for c in cols])


def write_flow_csv(path, flows: Sequence[FlowReport], overall: FlowReport) -> None:
    write_csv(path, list(flows) + [overall])


def _parse(cls, row: dict):
    out = {}
    for f in fields(cls):
        raw = row[f.name]
        if raw == "":
            out[f.name] = None
        elif f.name == "flow_id" and raw == "all":
            out[f.name] = "all"
        elif "." in raw:
            out[f.name] = float(raw)
        else:
            out[f.name] = int(raw)
    return cls(**out)


def read_flow_csv(path) -> List[FlowReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [_parse(FlowReport, row) for row in csv.DictReader(fh)]


def read_link_csv(path) -> List[LinkReport]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [_parse(LinkReport, row) for row in csv.DictReader(fh)]
