"""Deterministic discrete-event kernel and traffic generation."""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

from . import mac
from .channel import ChannelState, sample_attempt_outcome, tx_duration, SUCCESS
from .core import AccessCategory, ChannelId, Delivered, Dropped, FragmentGroup, Packet
from .scenario import (
    Scenario,
    ac_of,
    band_of,
    crs_policy,
    default_sifs,
    edca_table,
    mcs_table,
    outage_schedule,
    static_rules,
    tid_link_map,
    links_mask,
)
from .steering import LATE_FIFO, LinkStats, UMac
from .trace import record

# event kinds
PACKET_ARRIVAL = "PacketArrival"
MEDIUM_IDLE = "MediumIdle"
BACKOFF_EXPIRY = "BackoffExpiry"
TX_START = "TxStart"
TX_COMPLETE = "TxComplete"
OUTAGE_START = "OutageStart"
OUTAGE_END = "OutageEnd"
SIM_END = "SimEnd"


# --- traffic -------------------------------------------------------------------

@dataclass(frozen=True)
class Cbr:
    period: int
    jitter: int = 0


@dataclass(frozen=True)
class Poisson:
    rate_pps: float


@dataclass(frozen=True)
class Bursty:
    burst_size: int
    period: int
    spacing: int = 0


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    ac: AccessCategory
    process: Union[Cbr, Poisson, Bursty]
    start: int
    stop: int
    size: Tuple[int, int] = (1000, 1000)  # uniform(min, max); equal bounds = fixed
    tid: int = 0
    receiver: int = 1
    tos: int = 0
    port: int = 0
    deadline: Optional[int] = None  # relative, µs
    fragments: int = 1

    def __post_init__(self):
        if self.stop <= self.start:
            raise ValueError("flow stop must be after start")
        if self.fragments < 1:
            raise ValueError("fragment count must be >= 1")

    @classmethod
    def from_model(cls, f, duration: int) -> "FlowSpec":
        a = f.arrivals
        if a.cbr is not None:
            process = Cbr(a.cbr.period_us, a.cbr.jitter_us)
        elif a.poisson is not None:
            process = Poisson(a.poisson.rate_pps)
        else:
            process = Bursty(a.bursty.burst_size, a.bursty.period_us, a.bursty.spacing_us)
        size = (f.size.fixed, f.size.fixed) if f.size.fixed is not None else tuple(f.size.uniform)
        stop = min(f.stop_us if f.stop_us is not None else duration, duration)
        return cls(
            flow_id=f.id,
            ac=ac_of(f.ac),
            process=process,
            start=f.start_us,
            stop=stop,
            size=size,
            tid=f.tid,
            receiver=f.receiver,
            tos=f.tos,
            port=f.port,
            deadline=f.deadline_us,
            fragments=f.fragments,
        )


def generate_arrivals(flow: FlowSpec, rng: random.Random) -> Iterator[int]:
    """Arrival timestamps (µs) of ``flow`` inside ``[start, stop)``, in order."""
    p = flow.process
    if isinstance(p, Cbr):
        k = 0
        while flow.start + k * p.period < flow.stop:
            t = flow.start + k * p.period
            if p.jitter:
                t = max(flow.start, t + rng.randint(-p.jitter, p.jitter))
            if t < flow.stop:
                yield t
            k += 1
    elif isinstance(p, Poisson):
        mean_gap = 1e6 / p.rate_pps
        t = float(flow.start)
        while True:
            t += rng.expovariate(1.0 / mean_gap)
            if t >= flow.stop:
                return
            yield int(t)
    else:
        k = 0
        while flow.start + k * p.period < flow.stop:
            base = flow.start + k * p.period
            for j in range(p.burst_size):
                t = base + j * p.spacing
                if t >= flow.stop:
                    break
                yield t
            k += 1


class RngPlan:
    """Independent ``random.Random`` streams derived from (seed, name)."""

    def __init__(self, seed: int):
        self.seed = seed
        self._streams: Dict[str, random.Random] = {}

    def stream(self, name: str) -> random.Random:
        rng = self._streams.get(name)
        if rng is None:
            digest = hashlib.sha256(f"{self.seed}/{name}".encode()).digest()
            rng = self._streams[name] = random.Random(int.from_bytes(digest[:8], "big"))
        return rng


# --- kernel ----------------------------------------------------------------------

@dataclass
class _Txop:
    grant: mac.TxopGrant
    queue: mac.TxQueue
    frames: List[mac.QueueEntry]
    index: int = 0
    outcome: str = SUCCESS
    success: bool = False


class Simulator:
    def __init__(self, scenario: Scenario, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.rng = RngPlan(seed)
        self.duration = scenario.duration_us
        self.links = scenario.links

        self.channels: Dict[int, ChannelState] = {}
        for c in scenario.channels:
            self.channels[c.index] = ChannelState(
                ChannelId(c.index, band_of(c)),
                mcs_table(c),
                c.base_loss,
                outage_schedule(c),
                frame_overhead=c.overhead_us,
            )
        self.lmacs: Dict[int, mac.LMac] = {}
        for lm in scenario.lmacs:
            ch = scenario.channel(lm.channel)
            self.lmacs[lm.channel] = mac.LMac(
                ChannelId(lm.channel, band_of(ch)),
                edca_table(lm),
                slot_time=lm.slot_us,
                sifs=lm.sifs_us if lm.sifs_us is not None else default_sifs(ch),
            )

        st = scenario.steering
        desc = scenario.descriptor
        mcs0 = next(m for m, a in zip(desc.mcs, desc.max_attempts) if a > 0)
        stats = LinkStats(
            {l: self.channels[l].mcs_table.rate(mcs0) for l in self.links},
            alpha=st.estimator.alpha,
            window_us=st.estimator.window_us,
            plr_window=st.estimator.plr_window,
        )
        shared = {"auto": None, "shared": True, "per_link": False}[scenario.queues.scope]
        self.umac = UMac(
            st.policy,
            self.links,
            rules=static_rules(st),
            crs=crs_policy(st.crs, desc),
            crs_per_ac={ac_of(k): crs_policy(v, desc) for k, v in st.crs.per_ac.items()},
            tid_map=tid_link_map(st),
            tid_remaps=[(r.time_us, r.tid, links_mask(r.links)) for r in st.tid_remaps],
            stats=stats,
            airtime=lambda l, p: self._frame_airtime(p.size_bytes, mcs0, l, False),
            max_attempts=desc.max_attempts,
            mcs=desc.mcs,
            shared_queue=shared,
        )
        self.respect_bitmap = st.policy != LATE_FIFO
        self.queues: Dict[Tuple[Optional[int], AccessCategory], mac.TxQueue] = {}
        self.flows = [FlowSpec.from_model(f, self.duration) for f in scenario.flows]

        self.trace: List[dict] = []
        self._heap: List[tuple] = []  # (time, sequence, kind, payload); sequence breaks time ties
        self._seq = 0
        self.now = 0
        self._next_id = 0
        self._txops: Dict[int, _Txop] = {}
        self._airtime_cache: Dict[tuple, int] = {}

    # -- plumbing --------------------------------------------------------------

    def schedule(self, time: int, kind: str, *payload) -> None:
        if time < self.now:
            raise RuntimeError(f"event {kind} scheduled in the past ({time} < {self.now})")
        heapq.heappush(self._heap, (time, self._seq, kind, payload))
        self._seq += 1

    def emit(self, rec: dict) -> None:
        self.trace.append(rec)
        self.umac.observe(rec)

    def queue(self, scope: Optional[int], ac: AccessCategory) -> mac.TxQueue:
        key = (scope, ac)
        q = self.queues.get(key)
        if q is None:
            qs = self.scenario.queues
            q = self.queues[key] = mac.TxQueue(
                ac, scope, qs.capacity, qs.scan_depth, respect_bitmap=self.respect_bitmap
            )
        return q

    def _queue_for(self, link: int, ac: AccessCategory) -> Optional[mac.TxQueue]:
        return self.queues.get((None if self.umac.shared_queue else link, ac))

    def _frame_airtime(self, size: int, mcs_index: int, link: int, rts: bool) -> int:
        key = (size, mcs_index, link, rts)
        d = self._airtime_cache.get(key)
        if d is None:
            ch = self.channels[link]
            d = self._airtime_cache[key] = tx_duration(size, mcs_index, ch.mcs_table, ch.frame_overhead, rts)
        return d

    def airtime(self, entry: mac.QueueEntry, link: int) -> int:
        s = entry.series
        return self._frame_airtime(entry.packet.size_bytes, s.mcs_index, link, s.rts_cts)

    # -- main loop ---------------------------------------------------------------

    def run(self) -> List[dict]:
        self.schedule(self.duration, SIM_END)
        for l in self.links:
            for o in self.channels[l].outages.intervals:
                if o.start < self.duration:
                    self.schedule(o.start, OUTAGE_START, l, o)
                if o.end < self.duration:
                    self.schedule(o.end, OUTAGE_END, l, o)
        for i, f in enumerate(self.flows):
            it = generate_arrivals(f, self.rng.stream(f"arrivals/{f.flow_id}"))
            t = next(it, None)
            if t is not None:
                self.schedule(t, PACKET_ARRIVAL, i, it)

        handlers = {
            PACKET_ARRIVAL: self._on_arrival,
            BACKOFF_EXPIRY: self._on_backoff,
            TX_START: self._on_tx_start,
            TX_COMPLETE: self._on_tx_complete,
            MEDIUM_IDLE: self._on_medium_idle,
            OUTAGE_START: self._on_outage_start,
            OUTAGE_END: self._on_outage_end,
        }
        while self._heap:
            self.now, _, kind, payload = heapq.heappop(self._heap)
            if kind == SIM_END:
                residual = sum(len(q) for q in self.queues.values())
                self.emit(record(self.now, "sim_end", residual=residual, links=list(self.links)))
                break
            handlers[kind](*payload)
        return self.trace

    # -- handlers ----------------------------------------------------------------

    def _on_arrival(self, flow_idx: int, it: Iterator[int]) -> None:
        f = self.flows[flow_idx]
        now = self.now
        size_rng = self.rng.stream(f"sizes/{f.flow_id}")
        lo, hi = f.size
        size = lo if lo == hi else size_rng.randint(lo, hi)
        n = f.fragments
        frag_size = math.ceil(size / n)
        group = self._next_id if n > 1 else None
        for j in range(n):
            pid = self._next_id
            self._next_id += 1
            fg = FragmentGroup(group, j, n) if group is not None else None
            pkt = Packet(
                pid, f.flow_id, f.tid, f.ac, f.receiver, f.tos, f.port, frag_size, now,
                now + f.deadline if f.deadline is not None else None, fg,
            )
            self.emit(record(
                now, "arrival", pid, f.flow_id, ac=f.ac.name, size=frag_size,
                deadline=pkt.deadline, group=group, frag=j, frags=n,
            ))
            scope, desc = self.umac.route(pkt, now)
            q = self.queue(scope, f.ac)
            entry = mac.enqueue(q, pkt, desc, now)
            if entry is None:
                self.emit(record(now, "overflow", pid, f.flow_id, scope))
                if fg is not None:
                    q.resolve_fragment(fg, None)
            else:
                self.emit(record(
                    now, "enqueue", pid, f.flow_id, scope, entry.current_series, 0,
                    word=desc.word, attempts=list(desc.max_attempts), mask=entry.mask, qlen=len(q),
                ))
        t = next(it, None)
        if t is not None:
            self.schedule(t, PACKET_ARRIVAL, flow_idx, it)
        self._kick(f.ac)

    def _kick(self, ac: AccessCategory, links=None) -> None:
        for link in links if links is not None else self.links:
            lm = self.lmacs[link]
            if lm.transmitting:
                continue
            st = lm.state[ac]
            if st.access_time is not None:
                continue
            q = self._queue_for(link, ac)
            if q is None or not q.has_eligible(link):
                continue
            t = mac.edca_contend(
                lm, ac, self.now, self.rng.stream(f"backoff/{link}/{ac.name}"), self.channels[link]
            )
            self.schedule(t, BACKOFF_EXPIRY, link, ac, st.gen)

    def _kick_link(self, link: int) -> None:
        for ac in sorted(self.lmacs[link].state):
            self._kick(ac, (link,))

    def _on_backoff(self, link: int, ac: AccessCategory, gen: int) -> None:
        lm = self.lmacs[link]
        if lm.state[ac].gen != gen:
            return
        now = self.now
        contenders = [a for a, s in lm.state.items() if s.access_time == now]
        winner = mac.resolve_virtual_collision(lm, contenders, now) if len(contenders) > 1 else ac
        wst = lm.state[winner]
        wst.backoff = None
        wst.access_time = None
        wst.countdown_from = None
        wst.gen += 1

        grant = mac.TxopGrant(link, winner, now, lm.edca[winner].txop_limit)
        q = self._queue_for(link, winner)
        frames = mac.txop_scan(grant, q, lambda e: self.airtime(e, link), lm.sifs) if q else []
        self.emit(record(now, "txop", link=link, ac=winner.name, frames=len(frames), limit=grant.limit))
        if not frames:
            self._kick_link(link)
            return
        for a in lm.pending():
            mac.freeze_backoff(lm, a, now)
        total = sum(self.airtime(e, link) for e in frames) + lm.sifs * (len(frames) - 1)
        lm.transmitting = True
        lm.busy_until = now + total
        self.channels[link].mark_busy(lm.busy_until)
        for e in frames:
            q.claim(e)
        self._txops[link] = _Txop(grant, q, frames)
        self.schedule(now, TX_START, link)

    def _on_tx_start(self, link: int) -> None:
        tx = self._txops[link]
        e = tx.frames[tx.index]
        dur = self.airtime(e, link)
        tx.outcome = sample_attempt_outcome(self.channels[link], self.now, self.rng.stream(f"channel/{link}"))
        rate = self.channels[link].mcs_table.rate(e.series.mcs_index)
        self.emit(record(
            self.now, "attempt", e.packet.id, e.packet.flow_id, link, e.current_series,
            e.total_attempts + 1, duration=dur, rate=rate,
        ))
        self.schedule(self.now + dur, TX_COMPLETE, link)

    def _on_tx_complete(self, link: int) -> None:
        tx = self._txops[link]
        e = tx.frames[tx.index]
        series = e.current_series
        pkt = e.packet
        fate = mac.complete_attempt(tx.queue, e, tx.grant, tx.outcome, self.now)
        if isinstance(fate, Delivered):
            tx.success = True
            self.emit(record(self.now, "delivered", pkt.id, pkt.flow_id, link, series, fate.attempts))
        else:
            self.emit(record(self.now, "lost", pkt.id, pkt.flow_id, link, series, e.total_attempts, mask=e.mask))
            if isinstance(fate, Dropped):
                self.emit(record(
                    self.now, "dropped", pkt.id, pkt.flow_id, link, series, e.total_attempts,
                    reason=fate.reason.value,
                ))
        tx.index += 1
        lm = self.lmacs[link]
        if tx.index < len(tx.frames):
            self.schedule(self.now + lm.sifs, TX_START, link)
        else:
            del self._txops[link]
            mac.post_txop_reset(lm, tx.grant.ac, tx.success)
            lm.transmitting = False
            lm.busy_until = self.now
            self.schedule(self.now, MEDIUM_IDLE, link)
        self._kick(tx.grant.ac)

    def _on_medium_idle(self, link: int) -> None:
        self._kick_link(link)

    def _on_outage_start(self, link: int, outage) -> None:
        self.emit(record(self.now, "outage_start", link=link, busy=outage.busy, loss=outage.loss_prob_override))
        if outage.busy:
            lm = self.lmacs[link]
            for a in lm.pending():
                mac.freeze_backoff(lm, a, self.now)
            self.channels[link].mark_busy(outage.end)

    def _on_outage_end(self, link: int, outage) -> None:
        self.emit(record(self.now, "outage_end", link=link, busy=outage.busy))
        if outage.busy and not self.lmacs[link].transmitting:
            self._kick_link(link)


@dataclass
class RunResult:
    scenario: Scenario
    seed: int
    trace: List[dict]
    flows: list
    links: list
    overall: object

    @property
    def policy(self) -> str:
        return self.scenario.steering.policy


def run(scenario: Scenario, seed: int) -> RunResult:
    from .metrics import all_reports

    trace = Simulator(scenario, seed).run()
    return RunResult(scenario, seed, trace, *all_reports(trace))
