"""MLD MAC engine pieces: per-AC queues, EDCA contention and TXOP service.

The split follows real adapters: a queue feeds descriptors (``TxQueue``),
a per-link contention unit decides when a TXOP is won (``LMac`` and
``edca_contend``), and the TXOP service walks the queue in order picking the
frames whose current TX series allows the granted link (``txop_scan``).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional

from . import channel as chan
from .core import (
    AccessCategory,
    ChannelId,
    Delivered,
    DEFAULT_EDCA,
    Dropped,
    DropReason,
    EdcaParams,
    MAX_LINKS,
    Packet,
    PacketFate,
    Queued,
    TxDescriptor,
    validate_descriptor,
)

DEFAULT_SLOT = 9
SIFS_2G4 = 10
SIFS_5G6 = 16
DEFAULT_QUEUE_CAPACITY = 256


# --- contention --------------------------------------------------------------

@dataclass
class AcContention:
    cw: int
    backoff: Optional[int] = None  # remaining slots; None = draw on next contention
    countdown_from: Optional[int] = None  # start of the AIFS wait currently running
    access_time: Optional[int] = None
    gen: int = 0  # bumped whenever a scheduled access is invalidated


@dataclass
class LMac:
    channel: ChannelId
    edca: Dict[AccessCategory, EdcaParams] = field(default_factory=lambda: dict(DEFAULT_EDCA))
    slot_time: int = DEFAULT_SLOT
    sifs: int = SIFS_5G6
    state: Dict[AccessCategory, AcContention] = field(default_factory=dict)
    busy_until: int = 0  # end of our own TXOP on this link
    transmitting: bool = False

    def __post_init__(self):
        for ac, params in self.edca.items():
            self.state.setdefault(ac, AcContention(cw=params.cw_min))

    @property
    def link(self) -> int:
        return self.channel.index

    def aifs(self, ac: AccessCategory) -> int:
        return self.sifs + self.edca[ac].aifsn * self.slot_time

    def pending(self) -> List[AccessCategory]:
        return [ac for ac, st in self.state.items() if st.access_time is not None]


def edca_contend(
    lmac: LMac,
    ac: AccessCategory,
    now: int,
    rng: random.Random,
    channel: Optional[chan.ChannelState] = None,
) -> int:
    """Schedule channel access for ``ac`` and return the access time.

    The countdown starts once the medium is idle (own TXOP over, no external
    busy period), waits AIFS, then ``backoff`` slots.
    """
    st = lmac.state[ac]
    if st.backoff is None:
        st.backoff = rng.randint(0, st.cw)
    t = max(now, lmac.busy_until)
    if channel is not None:
        while True:
            ext = chan.external_busy(channel, t)
            if ext is None:
                break
            t = max(ext, lmac.busy_until)
    st.countdown_from = t
    st.access_time = t + lmac.aifs(ac) + st.backoff * lmac.slot_time
    return st.access_time


def freeze_backoff(lmac: LMac, ac: AccessCategory, at: int) -> None:
    """Medium turned busy at ``at``: keep the slots not yet counted down."""
    st = lmac.state[ac]
    if st.access_time is None:
        return
    counting_from = st.countdown_from + lmac.aifs(ac)
    if at > counting_from:
        st.backoff = max(0, st.backoff - (at - counting_from) // lmac.slot_time)
    st.access_time = None
    st.countdown_from = None
    st.gen += 1


def _double_cw(st: AcContention, params: EdcaParams) -> None:
    st.cw = min(2 * st.cw + 1, params.cw_max)


def resolve_virtual_collision(
    lmac: LMac, contenders: Iterable[AccessCategory], now: int
) -> AccessCategory:
    """Highest AC wins; losers double CW and redraw backoff on next contention."""
    contenders = sorted(set(contenders))
    if not contenders:
        raise ValueError("no contenders")
    winner = contenders[-1]
    for ac in contenders[:-1]:
        st = lmac.state[ac]
        _double_cw(st, lmac.edca[ac])
        st.backoff = None
        st.access_time = None
        st.countdown_from = None
        st.gen += 1
    return winner


def post_txop_reset(lmac: LMac, ac: AccessCategory, txop_had_success: bool) -> None:
    st = lmac.state[ac]
    if txop_had_success:
        st.cw = lmac.edca[ac].cw_min
    else:
        _double_cw(st, lmac.edca[ac])
    st.backoff = None
    st.access_time = None
    st.countdown_from = None
    st.gen += 1


# --- queues ------------------------------------------------------------------

class QueueOverflow(Exception):
    pass


@dataclass(eq=False)
class QueueEntry:
    packet: Packet
    descriptor: TxDescriptor
    enqueued_at: int
    attempts_used: List[int] = field(default_factory=lambda: [0, 0, 0, 0])
    current_series: Optional[int] = None
    in_flight: bool = False

    def __post_init__(self):
        if self.current_series is None:
            self.current_series = self._next_series()

    def _next_series(self) -> Optional[int]:
        for i, s in enumerate(self.descriptor.series):
            if s.used and self.attempts_used[i] < s.max_attempts:
                return i
        return None

    @property
    def mask(self) -> int:
        if self.current_series is None:
            return 0
        return self.descriptor.series[self.current_series].channel_bitmap

    @property
    def series(self):
        return self.descriptor.series[self.current_series]

    @property
    def total_attempts(self) -> int:
        return sum(self.attempts_used)


@dataclass
class _GroupState:
    count: int
    resolved: set = field(default_factory=set)
    next_index: int = 0
    link: Optional[int] = None

    def resolve(self, index: int) -> None:
        self.resolved.add(index)
        while self.next_index in self.resolved:
            self.next_index += 1

    @property
    def done(self) -> bool:
        return self.next_index >= self.count


class TxQueue:
    """One transmission buffer for one AC, either bound to a link or shared.

    ``respect_bitmap=False`` turns the queue into a plain late-FIFO buffer
    whose scan ignores descriptor bitmaps.
    """

    def __init__(
        self,
        ac: AccessCategory,
        scope: Optional[int] = None,
        capacity: int = DEFAULT_QUEUE_CAPACITY,
        scan_depth: Optional[int] = None,
        respect_bitmap: bool = True,
    ):
        self.ac = ac
        self.scope = scope  # link index for a per-link queue, None when shared
        self.capacity = capacity
        self.scan_depth = scan_depth
        self.respect_bitmap = respect_bitmap
        self.entries: List[QueueEntry] = []
        self.groups: Dict[int, _GroupState] = {}
        self._ready = [0] * MAX_LINKS  # queued, not in flight, bitmap allows link
        self._fragments = 0

    def __len__(self) -> int:
        return len(self.entries)

    def _mask(self, entry: QueueEntry) -> int:
        return entry.mask if self.respect_bitmap else (1 << MAX_LINKS) - 1

    def _count(self, entry: QueueEntry, delta: int) -> None:
        m = self._mask(entry)
        for i in range(MAX_LINKS):
            if m >> i & 1:
                self._ready[i] += delta

    def append(self, entry: QueueEntry) -> None:
        if len(self.entries) >= self.capacity:
            raise QueueOverflow
        self.entries.append(entry)
        self._count(entry, +1)
        fg = entry.packet.fragment_group
        if fg is not None:
            self._fragments += 1
            self.groups.setdefault(fg.group_id, _GroupState(fg.count))

    def claim(self, entry: QueueEntry) -> None:
        entry.in_flight = True
        self._count(entry, -1)

    def release(self, entry: QueueEntry) -> None:
        entry.in_flight = False
        self._count(entry, +1)

    def remove(self, entry: QueueEntry, delivered_on: Optional[int] = None) -> None:
        self.entries.remove(entry)
        if not entry.in_flight:
            self._count(entry, -1)
        fg = entry.packet.fragment_group
        if fg is not None:
            self._fragments -= 1
            self.resolve_fragment(fg, delivered_on)

    def resolve_fragment(self, fg, delivered_on: Optional[int]) -> None:
        group = self.groups.setdefault(fg.group_id, _GroupState(fg.count))
        if delivered_on is not None and group.link is None:
            group.link = delivered_on
        group.resolve(fg.index)
        if group.done:
            del self.groups[fg.group_id]

    def eligible(self, entry: QueueEntry, link: int) -> bool:
        if entry.in_flight or entry.current_series is None:
            return False
        if self.scope is not None and self.scope != link:
            return False
        if not self._mask(entry) >> link & 1:
            return False
        fg = entry.packet.fragment_group
        if fg is not None:
            group = self.groups.get(fg.group_id)
            if group is not None:
                if fg.index != group.next_index:
                    return False
                if group.link is not None and group.link != link:
                    return False
        return True

    def has_eligible(self, link: int) -> bool:
        if self.scope is not None and self.scope != link:
            return False
        if self._ready[link] == 0:
            return False
        if self._fragments == 0:
            return True
        return any(self.eligible(e, link) for e in self.entries)


_VALID_SERIES: set = set()


def enqueue(queue: TxQueue, packet: Packet, descriptor: TxDescriptor, now: int) -> Optional[QueueEntry]:
    """Tail-append; returns None when the packet is tail-dropped on overflow."""
    if descriptor.series not in _VALID_SERIES:
        problems = validate_descriptor(descriptor)
        if problems:
            raise ValueError(f"invalid descriptor: {', '.join(problems)}")
        _VALID_SERIES.add(descriptor.series)
    entry = QueueEntry(packet, descriptor, now)
    try:
        queue.append(entry)
    except QueueOverflow:
        return None
    return entry


# --- TXOP service ------------------------------------------------------------

@dataclass(frozen=True)
class TxopGrant:
    link: int
    ac: AccessCategory
    start: int
    limit: int


def txop_scan(
    grant: TxopGrant,
    queue: TxQueue,
    airtime: Callable[[QueueEntry], int],
    gap: int = 0,
) -> List[QueueEntry]:
    """Walk the queue head to tail and pick entries sendable on ``grant.link``.

    Ineligible entries are skipped in place. Selection stops at the first
    frame that would overflow the TXOP limit; the first frame is always
    allowed, and a zero limit means exactly one frame.
    """
    selected: List[QueueEntry] = []
    used = 0
    for depth, entry in enumerate(queue.entries):
        if queue.scan_depth is not None and depth >= queue.scan_depth:
            break
        if not queue.eligible(entry, grant.link):
            continue
        need = airtime(entry) + (gap if selected else 0)
        if selected and (grant.limit == 0 or used + need > grant.limit):
            break
        selected.append(entry)
        used += need
        if grant.limit == 0:
            break
    return selected


def complete_attempt(
    queue: TxQueue, entry: QueueEntry, grant: TxopGrant, outcome: str, now: int
) -> PacketFate:
    """Book one finished attempt; removes the entry if it left the queue."""
    cs = entry.current_series
    entry.attempts_used[cs] += 1
    if outcome == chan.SUCCESS:
        queue.remove(entry, delivered_on=grant.link)
        return Delivered(grant.link, now, entry.total_attempts)
    # counters are never reset: the series only moves forward
    entry.current_series = entry._next_series()
    if entry.current_series is None:
        queue.remove(entry)
        return Dropped(DropReason.RetriesExhausted, now)
    queue.release(entry)
    return Queued()
