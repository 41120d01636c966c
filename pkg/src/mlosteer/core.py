"""Domain types shared across the simulator and the descriptor bitmap codec.

All times are integer microseconds.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

MAX_LINKS = 4
NUM_SERIES = 4
ALL_LINKS_MASK = (1 << MAX_LINKS) - 1
NUM_TIDS = 8


class Band(enum.Enum):
    GHz2_4 = "2.4"
    GHz5 = "5"
    GHz6 = "6"


@dataclass(frozen=True, order=True)
class ChannelId:
    index: int
    band: Band = field(compare=False, default=Band.GHz5)

    def __post_init__(self):
        if not 0 <= self.index < MAX_LINKS:
            raise ValueError(f"channel index {self.index} outside 0..{MAX_LINKS - 1}")

    @property
    def bit(self) -> int:
        return 1 << self.index


class AccessCategory(enum.IntEnum):
    """EDCA access categories; the integer order is the internal priority."""

    Background = 0
    BestEffort = 1
    Video = 2
    Voice = 3

    @classmethod
    def parse(cls, name: str) -> "AccessCategory":
        aliases = {"BK": cls.Background, "BE": cls.BestEffort, "VI": cls.Video, "VO": cls.Voice}
        if name in aliases:
            return aliases[name]
        return cls[name]


def _is_pow2_minus_one(x: int) -> bool:
    return x >= 0 and (x + 1) & x == 0


@dataclass(frozen=True)
class EdcaParams:
    cw_min: int
    cw_max: int
    aifsn: int
    txop_limit: int  # µs, 0 = one frame per TXOP

    def __post_init__(self):
        if not (_is_pow2_minus_one(self.cw_min) and _is_pow2_minus_one(self.cw_max)):
            raise ValueError("cw_min and cw_max must be of the form 2^k - 1")
        if self.cw_min > self.cw_max:
            raise ValueError("cw_min > cw_max")
        if self.aifsn < 1:
            raise ValueError("aifsn must be >= 1")
        if self.txop_limit < 0:
            raise ValueError("txop_limit must be >= 0")


# 802.11 default EDCA parameter set (OFDM PHYs).
DEFAULT_EDCA = {
    AccessCategory.Background: EdcaParams(15, 1023, 7, 0),
    AccessCategory.BestEffort: EdcaParams(15, 1023, 3, 0),
    AccessCategory.Video: EdcaParams(7, 15, 2, 3008),
    AccessCategory.Voice: EdcaParams(3, 7, 2, 1504),
}


@dataclass(frozen=True)
class TxSeries:
    channel_bitmap: int
    max_attempts: int
    mcs_index: int = 0
    rts_cts: bool = False

    @property
    def used(self) -> bool:
        return self.max_attempts > 0


@dataclass(frozen=True)
class TxDescriptor:
    series: Tuple[TxSeries, TxSeries, TxSeries, TxSeries]
    created_at: int = 0

    @property
    def bitmaps(self) -> Tuple[int, ...]:
        return tuple(s.channel_bitmap for s in self.series)

    @property
    def max_attempts(self) -> Tuple[int, ...]:
        return tuple(s.max_attempts for s in self.series)

    @property
    def total_attempts(self) -> int:
        return sum(s.max_attempts for s in self.series)

    @property
    def word(self) -> int:
        return encode_descriptor_bitmaps(self)


def make_descriptor(
    bitmaps: Sequence[int],
    max_attempts: Sequence[int],
    mcs: Sequence[int] = (0, 0, 0, 0),
    created_at: int = 0,
) -> TxDescriptor:
    """Build a descriptor; unused series (0 attempts) get a zero bitmap."""
    series = tuple(
        TxSeries(b if a > 0 else 0, a, m) for b, a, m in zip(bitmaps, max_attempts, mcs)
    )
    if len(series) != NUM_SERIES:
        raise ValueError(f"a descriptor has exactly {NUM_SERIES} series")
    return TxDescriptor(series, created_at)


@dataclass(frozen=True)
class FragmentGroup:
    group_id: int
    index: int
    count: int


@dataclass(frozen=True)
class Packet:
    id: int
    flow_id: int
    tid: int
    ac: AccessCategory
    receiver: int
    tos: int
    port: int
    size_bytes: int
    arrival_time: int
    deadline: Optional[int] = None
    fragment_group: Optional[FragmentGroup] = None

    def __post_init__(self):
        if not 0 <= self.tid < NUM_TIDS:
            raise ValueError(f"tid {self.tid} outside 0..7")
        if not 0 <= self.tos <= 255:
            raise ValueError(f"tos {self.tos} outside 0..255")
        if self.size_bytes <= 0:
            raise ValueError("size_bytes must be positive")
        if self.deadline is not None and self.deadline <= self.arrival_time:
            raise ValueError("deadline must be after arrival_time")
        fg = self.fragment_group
        if fg is not None and not 0 <= fg.index < fg.count:
            raise ValueError("fragment index must be < fragment count")


class DropReason(enum.Enum):
    RetriesExhausted = "retries"
    QueueOverflow = "overflow"


@dataclass(frozen=True)
class Delivered:
    link: int
    time: int
    attempts: int


@dataclass(frozen=True)
class Dropped:
    reason: DropReason
    time: int


@dataclass(frozen=True)
class InFlight:
    pass


@dataclass(frozen=True)
class Queued:
    pass


PacketFate = Union[Delivered, Dropped, InFlight, Queued]


# --- descriptor codec -------------------------------------------------------

def encode_descriptor_bitmaps(descriptor: TxDescriptor) -> int:
    """Pack the four series bitmaps into a 16-bit word.

    Series ``i`` occupies bits ``4i..4i+3``; the bit position inside a nibble
    is the channel index. Unused series contribute a zero nibble.
    """
    word = 0
    for i, s in enumerate(descriptor.series):
        if s.max_attempts <= 0:
            continue
        if s.channel_bitmap & ALL_LINKS_MASK == 0:
            raise ValueError(f"series {i} is used but its channel bitmap is zero")
        if s.channel_bitmap & ~ALL_LINKS_MASK:
            raise ValueError(f"series {i} bitmap does not fit in {MAX_LINKS} bits")
        word |= s.channel_bitmap << (4 * i)
    return word


def decode_descriptor_bitmaps(word: int) -> Tuple[int, int, int, int]:
    return (word & 0xF, word >> 4 & 0xF, word >> 8 & 0xF, word >> 12 & 0xF)


ZERO_BITMAP = "zero bitmap on used series"
NO_USABLE_SERIES = "no usable series"
WRONG_SERIES_COUNT = "descriptor must have exactly 4 series"
NEGATIVE_ATTEMPTS = "negative max_attempts"
BITMAP_TOO_WIDE = "bitmap wider than 4 bits"


def validate_descriptor(descriptor: TxDescriptor) -> list[str]:
    """Return every violated descriptor invariant; an empty list means valid."""
    violations: list[str] = []
    series = descriptor.series
    if len(series) != NUM_SERIES:
        violations.append(WRONG_SERIES_COUNT)
    usable = False
    for i, s in enumerate(series):
        tries = s.max_attempts
        if tries <= 0:
            if tries < 0:
                violations.append(f"{NEGATIVE_ATTEMPTS} (series {i})")
            continue
        usable = True
        b = s.channel_bitmap
        if b & ~ALL_LINKS_MASK:
            violations.append(f"{BITMAP_TOO_WIDE} (series {i})")
        if b & ALL_LINKS_MASK == 0:
            violations.append(f"{ZERO_BITMAP} (series {i})")
    if not usable:
        violations.append(NO_USABLE_SERIES)
    return violations


def bitmap_links(mask: int) -> list[int]:
    return [i for i in range(MAX_LINKS) if mask >> i & 1]
