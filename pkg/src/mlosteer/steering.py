"""U-MAC steering policies: which queue a packet joins and what its descriptor allows.

Policies run once per packet, at enqueue time. Dynamic ones read a
``LinkStats`` snapshot that is fed from the simulator's own event trace,
the way a driver would poll adapter status registers.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .core import (
    ALL_LINKS_MASK,
    NUM_SERIES,
    AccessCategory,
    Packet,
    TxDescriptor,
    TxSeries,
    bitmap_links,
    make_descriptor,
    validate_descriptor,
)

DEFAULT_MAX_ATTEMPTS = (4, 4, 4, 4)


# --- static rules ------------------------------------------------------------

@dataclass(frozen=True)
class StaticRule:
    """First-match rule over header fields; an empty match is the default rule."""

    target: int
    receiver: Optional[int] = None
    tos: Optional[int] = None
    port: Optional[int] = None
    ac: Optional[AccessCategory] = None
    tid: Optional[int] = None

    def matches(self, packet: Packet) -> bool:
        return all(
            want is None or want == getattr(packet, name)
            for name, want in (
                ("receiver", self.receiver),
                ("tos", self.tos),
                ("port", self.port),
                ("ac", self.ac),
                ("tid", self.tid),
            )
        )

    @property
    def is_default(self) -> bool:
        return all(v is None for v in (self.receiver, self.tos, self.port, self.ac, self.tid))


def steer_static(packet: Packet, rules: Sequence[StaticRule]) -> int:
    for rule in rules:
        if rule.matches(packet):
            return rule.target
    raise ValueError("static rule list has no default rule")


# --- link statistics -----------------------------------------------------------

@dataclass
class _LinkEstimator:
    capacity: float
    qlen: int = 0
    mean_q: float = 0.0
    area: float = 0.0
    last_arrival: Optional[int] = None
    mean_gap: Optional[float] = None
    outcomes: deque = field(default_factory=deque)


class LinkStats:
    """Per-link queue length, arrival rate, wait and loss estimates.

    ``window_us=None`` makes the mean queue length a plain time average over
    the whole observation; otherwise it is exponentially time-weighted with
    that time constant.
    """

    def __init__(
        self,
        capacities: Mapping[int, float],
        alpha: float = 0.05,
        window_us: Optional[int] = None,
        plr_window: int = 100,
    ):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = alpha
        self.window_us = window_us
        self.plr_window = plr_window
        self.links: Dict[int, _LinkEstimator] = {
            l: _LinkEstimator(capacity=c, outcomes=deque(maxlen=plr_window))
            for l, c in sorted(capacities.items())
        }
        self.t0: Optional[int] = None
        self.now: Optional[int] = None
        self._masks: Dict[int, int] = {}

    def _advance(self, t: int) -> None:
        if self.now is None:
            self.t0 = self.now = t
            return
        if t < self.now:
            raise ValueError(f"out-of-order event at {t} (stats already at {self.now})")
        dt = t - self.now
        if dt:
            for est in self.links.values():
                if self.window_us is None:
                    est.area += est.qlen * dt
                else:
                    est.mean_q += (1 - math.exp(-dt / self.window_us)) * (est.qlen - est.mean_q)
        self.now = t

    def _set_mask(self, packet: int, mask: int) -> None:
        old = self._masks.pop(packet, 0)
        for l in bitmap_links(old):
            if l in self.links:
                self.links[l].qlen -= 1
        if mask:
            self._masks[packet] = mask
            for l in bitmap_links(mask):
                if l in self.links:
                    self.links[l].qlen += 1

    def _arrival(self, link: int, t: int) -> None:
        est = self.links[link]
        if est.last_arrival is not None:
            gap = t - est.last_arrival
            if est.mean_gap is None:
                est.mean_gap = float(gap)
            else:
                est.mean_gap += self.alpha * (gap - est.mean_gap)
        est.last_arrival = t

    def update(self, rec: Mapping) -> "LinkStats":
        t = rec["time"]
        self._advance(t)
        kind = rec["kind"]
        if kind == "enqueue":
            mask = rec["mask"]
            for l in bitmap_links(mask):
                if l in self.links:
                    self._arrival(l, t)
            self._set_mask(rec["packet"], mask)
        elif kind == "lost":
            self.links[rec["link"]].outcomes.append(1)
            self._set_mask(rec["packet"], rec["mask"])
        elif kind == "delivered":
            self.links[rec["link"]].outcomes.append(0)
            self._set_mask(rec["packet"], 0)
        elif kind == "dropped":
            self._set_mask(rec["packet"], 0)
        elif kind == "attempt":
            est = self.links[rec["link"]]
            est.capacity += self.alpha * (rec["rate"] - est.capacity)
        return self

    # queries -----------------------------------------------------------------

    def mean_queue(self, link: int) -> float:
        est = self.links[link]
        if self.window_us is not None:
            return est.mean_q
        if self.now is None or self.now == self.t0:
            return float(est.qlen)
        return est.area / (self.now - self.t0)

    def arrival_rate(self, link: int) -> float:
        gap = self.links[link].mean_gap
        if gap is None:
            return 0.0
        return math.inf if gap == 0 else 1.0 / gap

    def plr(self, link: int) -> float:
        out = self.links[link].outcomes
        return sum(out) / len(out) if out else 0.0

    def capacity(self, link: int) -> float:
        return self.links[link].capacity

    def wait(self, link: int) -> float:
        return little_wait(self.mean_queue(link), self.arrival_rate(link))


def update_stats(stats: LinkStats, record: Mapping) -> LinkStats:
    return stats.update(record)


def little_wait(mean_queue: float, arrival_rate: float) -> float:
    """W = L / lambda, with the empty and no-arrival corner cases pinned."""
    if mean_queue == 0:
        return 0.0
    if arrival_rate == 0:
        return math.inf
    return mean_queue / arrival_rate


def estimate_wait(stats: LinkStats, link: int) -> float:
    return stats.wait(link)


def steer_dynamic(
    packet: Packet,
    stats: LinkStats,
    now: int,
    airtime: Optional[Callable[[int, Packet], float]] = None,
    links: Optional[Iterable[int]] = None,
) -> int:
    """Pick the link with the smallest expected completion time.

    With a deadline, links whose wait plus airtime cannot meet it are
    filtered out first; if none survive, the smallest wait wins.
    """
    links = sorted(stats.links if links is None else links)
    if airtime is None:
        airtime = lambda l, p: 8 * p.size_bytes / stats.capacity(l)
    waits = {l: stats.wait(l) for l in links}
    cost = {l: waits[l] + airtime(l, packet) for l in links}
    candidates = links
    if packet.deadline is not None:
        budget = packet.deadline - now
        candidates = [l for l in links if cost[l] <= budget]
        if not candidates:
            return min(links, key=lambda l: (waits[l], l))
    return min(candidates, key=lambda l: (cost[l], stats.plr(l), l))


# --- TID-to-link mapping -----------------------------------------------------

@dataclass(frozen=True)
class TidLinkMap:
    masks: Tuple[int, ...] = (ALL_LINKS_MASK,) * 8
    version: int = 0

    def __post_init__(self):
        if len(self.masks) != 8:
            raise ValueError("TID map covers exactly TIDs 0..7")
        for tid, m in enumerate(self.masks):
            if m & ALL_LINKS_MASK == 0:
                raise ValueError(f"TID {tid} maps to an empty link set")

    def mask(self, tid: int) -> int:
        return self.masks[tid]

    def remap(self, tid: int, mask: int) -> "TidLinkMap":
        masks = list(self.masks)
        masks[tid] = mask
        return TidLinkMap(tuple(masks), self.version + 1)


def apply_tid_map(packet: Packet, tid_map: TidLinkMap, base: TxDescriptor) -> TxDescriptor:
    allowed = tid_map.mask(packet.tid)
    series = []
    for s in base.series:
        if not s.used:
            series.append(s)
            continue
        bitmap = s.channel_bitmap & allowed
        series.append(TxSeries(bitmap or allowed, s.max_attempts, s.mcs_index, s.rts_cts))
    return TxDescriptor(tuple(series), base.created_at)


# --- CRS descriptor assignment -----------------------------------------------

PIN = "pin"
ESCALATE = "escalate"
ALL_LINKS = "all"
DEADLINE_AWARE = "deadline"
STRATEGIES = (PIN, ESCALATE, ALL_LINKS, DEADLINE_AWARE)


@dataclass(frozen=True)
class CrsPolicy:
    strategy: str = ALL_LINKS
    pin_link: Optional[int] = None
    pin_static: bool = False  # pin target comes from the static rules, per packet
    preferred: Tuple[int, ...] = ()
    widen: Tuple[int, ...] = (1, 2, 3, 4)  # links of `preferred` enabled per series
    pinned_series: int = 2
    max_attempts: Tuple[int, ...] = DEFAULT_MAX_ATTEMPTS
    mcs: Tuple[int, ...] = (0, 0, 0, 0)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown CRS strategy {self.strategy!r}")
        if self.strategy == PIN and self.pin_link is None and not self.pin_static:
            raise ValueError("pin strategy needs a link")
        if self.strategy == ESCALATE and not self.preferred:
            raise ValueError("escalate strategy needs a preference list")
        if len(self.max_attempts) != NUM_SERIES or len(self.widen) != NUM_SERIES:
            raise ValueError("max_attempts and widen need one value per series")
        if any(b < a for a, b in zip(self.widen, self.widen[1:])) or self.widen[0] < 1:
            raise ValueError("widen schedule must start at >= 1 and be non-decreasing")

    def links(self) -> List[int]:
        out = list(self.preferred)
        if self.pin_link is not None:
            out.append(self.pin_link)
        return out


def _one_hot(link: int) -> int:
    return 1 << link


def assign_crs_descriptor(
    packet: Packet,
    policy: CrsPolicy,
    stats: Optional[LinkStats] = None,
    now: int = 0,
    links: Optional[Iterable[int]] = None,
    dynamic_choice: Optional[int] = None,
) -> TxDescriptor:
    valid = set(links) if links is not None else (set(stats.links) if stats else None)
    if valid is not None:
        missing = [l for l in policy.links() if l not in valid]
        if missing:
            raise ValueError(f"CRS policy references nonexistent link(s) {missing}")

    if policy.strategy == PIN:
        bitmaps = [_one_hot(policy.pin_link)] * NUM_SERIES
    elif policy.strategy == ALL_LINKS:
        bitmaps = [ALL_LINKS_MASK] * NUM_SERIES
    elif policy.strategy == ESCALATE:
        bitmaps = []
        for n in policy.widen:
            mask = 0
            for l in policy.preferred[:n]:
                mask |= _one_hot(l)
            bitmaps.append(mask)
    else:
        if dynamic_choice is None:
            if stats is None:
                raise ValueError("deadline-aware strategy needs link statistics")
            dynamic_choice = steer_dynamic(packet, stats, now, links=valid)
        k = policy.pinned_series
        bitmaps = [_one_hot(dynamic_choice)] * k + [ALL_LINKS_MASK] * (NUM_SERIES - k)

    desc = make_descriptor(bitmaps, policy.max_attempts, policy.mcs, created_at=now)
    problems = validate_descriptor(desc)
    if problems:
        raise ValueError(f"policy produced an invalid descriptor: {problems}")
    return desc


# --- U-MAC ---------------------------------------------------------------------

EARLY_STATIC = "early-static"
EARLY_DYNAMIC = "early-dynamic"
LATE_FIFO = "late-fifo"
TID_MAP = "tid-map"
CRS = "crs"
POLICIES = (EARLY_STATIC, EARLY_DYNAMIC, LATE_FIFO, TID_MAP, CRS)
PER_LINK_POLICIES = (EARLY_STATIC, EARLY_DYNAMIC)
STATS_POLICIES = (EARLY_DYNAMIC,)


class UMac:
    """Binds one steering policy to a scenario's links.

    ``route`` returns ``(queue_scope, descriptor)`` where ``queue_scope`` is
    the link index of a per-link queue, or None for the shared per-AC queue.
    Fragments of one frame reuse the decision taken for the first fragment.
    """

    def __init__(
        self,
        policy: str,
        links: Sequence[int],
        *,
        rules: Sequence[StaticRule] = (),
        crs: CrsPolicy = CrsPolicy(),
        crs_per_ac: Optional[Mapping[AccessCategory, CrsPolicy]] = None,
        tid_map: Optional[TidLinkMap] = None,
        tid_remaps: Sequence[Tuple[int, int, int]] = (),
        stats: Optional[LinkStats] = None,
        airtime: Optional[Callable[[int, Packet], float]] = None,
        max_attempts: Sequence[int] = DEFAULT_MAX_ATTEMPTS,
        mcs: Sequence[int] = (0, 0, 0, 0),
        shared_queue: Optional[bool] = None,
    ):
        if policy not in POLICIES:
            raise ValueError(f"unknown policy {policy!r}")
        self.policy = policy
        self.links = sorted(links)
        self.rules = list(rules)
        self.crs = crs
        self.crs_per_ac = dict(crs_per_ac or {})
        self.tid_map = tid_map
        self.tid_remaps = sorted(tid_remaps)  # (time, tid, mask)
        self.stats = stats
        self.airtime = airtime
        self.max_attempts = tuple(max_attempts)
        self.mcs = tuple(mcs)
        if shared_queue is None:
            shared_queue = policy not in PER_LINK_POLICIES
        self.shared_queue = shared_queue
        self.needs_stats = policy in STATS_POLICIES or (
            policy == CRS
            and any(p.strategy == DEADLINE_AWARE for p in [crs, *self.crs_per_ac.values()])
        )
        if self.needs_stats and stats is None:
            raise ValueError(f"policy {policy!r} needs link statistics")
        self._groups: Dict[int, Tuple[Optional[int], TxDescriptor]] = {}

    def observe(self, record: Mapping) -> None:
        if self.needs_stats:
            self.stats.update(record)

    def tid_map_at(self, now: int) -> Optional[TidLinkMap]:
        m = self.tid_map
        for t, tid, mask in self.tid_remaps:
            if t > now:
                break
            m = (m or TidLinkMap()).remap(tid, mask)
        return m

    def _pinned(self, link: int, now: int) -> TxDescriptor:
        return make_descriptor([1 << link] * NUM_SERIES, self.max_attempts, self.mcs, now)

    def _route(self, packet: Packet, now: int) -> Tuple[Optional[int], TxDescriptor]:
        if self.policy == EARLY_STATIC:
            link = steer_static(packet, self.rules)
            return link, self._pinned(link, now)
        if self.policy == EARLY_DYNAMIC:
            link = steer_dynamic(packet, self.stats, now, self.airtime, self.links)
            return link, self._pinned(link, now)
        if self.policy == LATE_FIFO:
            return None, make_descriptor([ALL_LINKS_MASK] * NUM_SERIES, self.max_attempts, self.mcs, now)

        tid_map = self.tid_map_at(now)
        if self.policy == TID_MAP:
            base = make_descriptor([ALL_LINKS_MASK] * NUM_SERIES, self.max_attempts, self.mcs, now)
            return None, apply_tid_map(packet, tid_map or TidLinkMap(), base)

        policy = self.crs_per_ac.get(packet.ac, self.crs)
        dynamic_choice = None
        if policy.strategy == PIN and policy.pin_static:
            policy = replace(policy, pin_link=steer_static(packet, self.rules), pin_static=False)
        if policy.strategy == DEADLINE_AWARE:
            dynamic_choice = steer_dynamic(packet, self.stats, now, self.airtime, self.links)
        desc = assign_crs_descriptor(
            packet, policy, self.stats, now, links=self.links, dynamic_choice=dynamic_choice
        )
        if tid_map is not None:
            desc = apply_tid_map(packet, tid_map, desc)
        return None, desc

    def route(self, packet: Packet, now: int) -> Tuple[Optional[int], TxDescriptor]:
        fg = packet.fragment_group
        if fg is not None and fg.group_id in self._groups:
            scope, desc = self._groups[fg.group_id]
            if fg.index == fg.count - 1:
                del self._groups[fg.group_id]
            return scope, desc
        scope, desc = self._route(packet, now)
        if not self.shared_queue and scope is None:
            raise ValueError(f"policy {self.policy!r} cannot feed per-link queues")
        if self.shared_queue:
            scope = None
        if fg is not None and fg.count > 1:
            self._groups[fg.group_id] = (scope, desc)
        return scope, desc
