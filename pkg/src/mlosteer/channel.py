"""Radio channel model: MCS rate table, per-attempt loss, scheduled outages."""

from __future__ import annotations

import bisect
import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Optional, Tuple

from .core import ChannelId

DEFAULT_FRAME_OVERHEAD = 50  # µs: preamble + SIFS + ACK
RTS_CTS_OVERHEAD = 44  # µs added when a series requests RTS/CTS

SUCCESS = "success"
LOST = "lost"


class UnknownMcs(KeyError):
    pass


@dataclass(frozen=True)
class McsTable:
    """MCS index -> PHY rate in bits/µs."""

    rates: Mapping[int, float]

    def __post_init__(self):
        if not self.rates:
            raise ValueError("MCS table is empty")
        prev = None
        for idx in sorted(self.rates):
            rate = self.rates[idx]
            if rate <= 0:
                raise ValueError(f"MCS {idx}: rate must be positive")
            if prev is not None and rate < prev:
                raise ValueError(f"MCS {idx}: rates must be non-decreasing in MCS index")
            prev = rate

    def rate(self, mcs_index: int) -> float:
        try:
            return self.rates[mcs_index]
        except KeyError:
            raise UnknownMcs(mcs_index) from None


@dataclass(frozen=True)
class Outage:
    start: int
    end: int
    loss_prob_override: float = 1.0
    busy: bool = False

    def __post_init__(self):
        if self.start >= self.end:
            raise ValueError("outage start must precede end")
        if not 0.0 <= self.loss_prob_override <= 1.0:
            raise ValueError("loss_prob_override must lie in [0, 1]")

    def covers(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class OutageSchedule:
    intervals: Tuple[Outage, ...] = ()

    def __post_init__(self):
        for a, b in zip(self.intervals, self.intervals[1:]):
            if b.start < a.end:
                raise ValueError("outage intervals must be sorted and non-overlapping")
        object.__setattr__(self, "_starts", [o.start for o in self.intervals])

    def at(self, t: int) -> Optional[Outage]:
        """Outage whose half-open interval contains ``t``, if any."""
        i = bisect.bisect_right(self._starts, t) - 1
        if i >= 0 and self.intervals[i].covers(t):
            return self.intervals[i]
        return None


@dataclass
class ChannelState:
    channel: ChannelId
    mcs_table: McsTable
    base_loss_prob: float = 0.0
    outages: OutageSchedule = field(default_factory=OutageSchedule)
    busy_until: int = 0
    frame_overhead: int = DEFAULT_FRAME_OVERHEAD

    def __post_init__(self):
        if not 0.0 <= self.base_loss_prob < 1.0:
            raise ValueError("base_loss_prob must lie in [0, 1)")

    def mark_busy(self, until: int) -> None:
        self.busy_until = max(self.busy_until, until)

    def loss_prob(self, at: int) -> float:
        outage = self.outages.at(at)
        return outage.loss_prob_override if outage is not None else self.base_loss_prob


def tx_duration(
    size_bytes: int,
    mcs_index: int,
    table: McsTable,
    overhead: int = DEFAULT_FRAME_OVERHEAD,
    rts_cts: bool = False,
) -> int:
    """Airtime of one frame exchange in µs (payload rounded up, plus fixed overhead)."""
    rate = table.rate(mcs_index)
    payload = math.ceil(8 * size_bytes / rate)
    return payload + overhead + (RTS_CTS_OVERHEAD if rts_cts else 0)


def sample_attempt_outcome(state: ChannelState, at: int, rng: random.Random) -> str:
    # exactly one draw per call, whatever the probability
    u = rng.random()
    return LOST if u < state.loss_prob(at) else SUCCESS


def external_busy(state: ChannelState, at: int) -> Optional[int]:
    outage = state.outages.at(at)
    if outage is not None and outage.busy:
        return outage.end
    return None
