"""Scenario file format (YAML) with strict parsing.

Unknown keys are rejected at every level. ``parse_scenario`` returns either a
validated :class:`Scenario` or raises :class:`ScenarioError` carrying the
complete list of problems found.
"""

from __future__ import annotations

import hashlib
import json
from typing import Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from . import steering
from .channel import McsTable, Outage, OutageSchedule
from .core import ALL_LINKS_MASK, DEFAULT_EDCA, MAX_LINKS, NUM_TIDS, AccessCategory, Band, EdcaParams

AcName = Literal["Background", "BestEffort", "Video", "Voice", "BK", "BE", "VI", "VO"]
PolicyName = Literal["early-static", "early-dynamic", "late-fifo", "tid-map", "crs"]
StrategyName = Literal["pin", "escalate", "all", "deadline"]
Series4 = Tuple[int, int, int, int]

POLICY_ALIASES = {
    "crs-pin": ("crs", "pin"),
    "crs-escalate": ("crs", "escalate"),
    "crs-all": ("crs", "all"),
    "crs-deadline": ("crs", "deadline"),
}
POLICY_CHOICES = tuple(steering.POLICIES) + tuple(POLICY_ALIASES)


class ScenarioError(ValueError):
    def __init__(self, errors: List[str]):
        super().__init__("\n".join(errors))
        self.errors = errors


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class OutageSpec(_Strict):
    start_us: int = Field(ge=0)
    end_us: int = Field(gt=0)
    loss: float = Field(default=1.0, ge=0.0, le=1.0)
    busy: bool = False


class ChannelSpec(_Strict):
    index: int = Field(ge=0)
    band: Literal["2.4", "5", "6"]
    mcs: Dict[int, float]
    base_loss: float = Field(default=0.0, ge=0.0, lt=1.0)
    overhead_us: int = Field(default=50, ge=0)
    outages: List[OutageSpec] = []


class EdcaSpec(_Strict):
    cw_min: Optional[int] = None
    cw_max: Optional[int] = None
    aifsn: Optional[int] = None
    txop_us: Optional[int] = None


class LMacSpec(_Strict):
    channel: int
    slot_us: int = Field(default=9, gt=0)
    sifs_us: Optional[int] = Field(default=None, gt=0)  # default by band
    edca: Dict[AcName, EdcaSpec] = {}


class QueueSpec(_Strict):
    scope: Literal["auto", "shared", "per_link"] = "auto"
    capacity: int = Field(default=256, gt=0)
    scan_depth: Optional[int] = Field(default=None, gt=0)


class DescriptorSpec(_Strict):
    max_attempts: Series4 = (4, 4, 4, 4)
    mcs: Series4 = (0, 0, 0, 0)


class SizeSpec(_Strict):
    fixed: Optional[int] = Field(default=None, gt=0)
    uniform: Optional[Tuple[int, int]] = None


class CbrSpec(_Strict):
    period_us: int = Field(gt=0)
    jitter_us: int = Field(default=0, ge=0)


class PoissonSpec(_Strict):
    rate_pps: float = Field(gt=0)


class BurstySpec(_Strict):
    burst_size: int = Field(ge=1)
    period_us: int = Field(gt=0)
    spacing_us: int = Field(default=0, ge=0)


class ArrivalSpec(_Strict):
    cbr: Optional[CbrSpec] = None
    poisson: Optional[PoissonSpec] = None
    bursty: Optional[BurstySpec] = None


class FlowSpecModel(_Strict):
    id: int
    ac: AcName = "BestEffort"
    tid: int = Field(default=0, ge=0, lt=NUM_TIDS)
    receiver: int = 1
    tos: int = Field(default=0, ge=0, le=255)
    port: int = 0
    size: SizeSpec
    arrivals: ArrivalSpec
    deadline_us: Optional[int] = Field(default=None, gt=0)
    fragments: int = Field(default=1, ge=1)
    start_us: int = Field(default=0, ge=0)
    stop_us: Optional[int] = None


class MatchSpec(_Strict):
    receiver: Optional[int] = None
    tos: Optional[int] = None
    port: Optional[int] = None
    ac: Optional[AcName] = None
    tid: Optional[int] = None


class RuleSpec(_Strict):
    link: int
    match: MatchSpec = MatchSpec()


class CrsStrategySpec(_Strict):
    strategy: StrategyName = "all"
    pin_link: Union[int, Literal["static"], None] = None
    preferred: List[int] = []
    widen: Series4 = (1, 2, 3, 4)
    pinned_series: int = Field(default=2, ge=0, le=4)
    max_attempts: Optional[Series4] = None


class CrsSpec(CrsStrategySpec):
    per_ac: Dict[AcName, CrsStrategySpec] = {}


class EstimatorSpec(_Strict):
    alpha: float = Field(default=0.05, gt=0.0, le=1.0)
    window_us: Optional[int] = Field(default=50_000, gt=0)
    plr_window: int = Field(default=100, gt=0)


class RemapSpec(_Strict):
    time_us: int = Field(ge=0)
    tid: int = Field(ge=0, lt=NUM_TIDS)
    links: List[int]


class SteeringSpec(_Strict):
    policy: PolicyName = "crs"
    rules: List[RuleSpec] = []
    tid_map: Optional[Dict[int, List[int]]] = None
    tid_remaps: List[RemapSpec] = []
    crs: CrsSpec = CrsSpec()
    estimator: EstimatorSpec = EstimatorSpec()


class Scenario(_Strict):
    name: str = ""
    duration_us: int = Field(gt=0)
    channels: List[ChannelSpec]
    lmacs: List[LMacSpec]
    queues: QueueSpec = QueueSpec()
    descriptor: DescriptorSpec = DescriptorSpec()
    flows: List[FlowSpecModel] = []
    steering: SteeringSpec = SteeringSpec()

    # -- derived views ------------------------------------------------------

    @property
    def links(self) -> List[int]:
        return sorted(c.index for c in self.channels)

    def channel(self, index: int) -> ChannelSpec:
        return next(c for c in self.channels if c.index == index)

    def with_policy(self, name: str) -> "Scenario":
        if name in POLICY_ALIASES:
            policy, strategy = POLICY_ALIASES[name]
            crs = self.steering.crs.model_copy(update={"strategy": strategy})
            st = self.steering.model_copy(update={"policy": policy, "crs": crs})
        elif name in steering.POLICIES:
            st = self.steering.model_copy(update={"policy": name})
        else:
            raise ScenarioError([f"unknown policy {name!r}; choose from {', '.join(POLICY_CHOICES)}"])
        out = self.model_copy(update={"steering": st})
        errors = semantic_errors(out)
        if errors:
            raise ScenarioError(errors)
        return out

    def fingerprint(self, include_steering: bool = False) -> str:
        data = self.to_dict()
        if not include_steering:
            data.pop("steering")
        blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return self.model_dump(mode="json")

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


# --- conversion helpers used by the simulator ----------------------------------

def ac_of(name: str) -> AccessCategory:
    return AccessCategory.parse(name)


def band_of(ch: ChannelSpec) -> Band:
    return {"2.4": Band.GHz2_4, "5": Band.GHz5, "6": Band.GHz6}[ch.band]


def mcs_table(ch: ChannelSpec) -> McsTable:
    return McsTable(dict(ch.mcs))


def outage_schedule(ch: ChannelSpec) -> OutageSchedule:
    return OutageSchedule(
        tuple(Outage(o.start_us, o.end_us, o.loss, o.busy) for o in sorted(ch.outages, key=lambda o: o.start_us))
    )


def default_sifs(ch: ChannelSpec) -> int:
    return 10 if ch.band == "2.4" else 16


def edca_table(lm: LMacSpec) -> Dict[AccessCategory, EdcaParams]:
    table = {}
    overrides = {ac_of(k): v for k, v in lm.edca.items()}
    for ac, base in DEFAULT_EDCA.items():
        o = overrides.get(ac)
        if o is None:
            table[ac] = base
            continue
        table[ac] = EdcaParams(
            o.cw_min if o.cw_min is not None else base.cw_min,
            o.cw_max if o.cw_max is not None else base.cw_max,
            o.aifsn if o.aifsn is not None else base.aifsn,
            o.txop_us if o.txop_us is not None else base.txop_limit,
        )
    return table


def static_rules(st: SteeringSpec) -> List[steering.StaticRule]:
    return [
        steering.StaticRule(
            r.link,
            receiver=r.match.receiver,
            tos=r.match.tos,
            port=r.match.port,
            ac=ac_of(r.match.ac) if r.match.ac else None,
            tid=r.match.tid,
        )
        for r in st.rules
    ]


def links_mask(links) -> int:
    m = 0
    for l in links:
        m |= 1 << l
    return m


def tid_link_map(st: SteeringSpec) -> Optional[steering.TidLinkMap]:
    if st.tid_map is None:
        return None
    # TIDs left out of the map keep the default all-links mapping
    masks = [links_mask(st.tid_map[t]) if t in st.tid_map else ALL_LINKS_MASK for t in range(NUM_TIDS)]
    return steering.TidLinkMap(tuple(masks))


def crs_policy(spec: CrsStrategySpec, desc: DescriptorSpec) -> steering.CrsPolicy:
    return steering.CrsPolicy(
        spec.strategy,
        pin_link=spec.pin_link if isinstance(spec.pin_link, int) else None,
        pin_static=spec.pin_link == "static",
        preferred=tuple(spec.preferred),
        widen=tuple(spec.widen),
        pinned_series=spec.pinned_series,
        max_attempts=tuple(spec.max_attempts or desc.max_attempts),
        mcs=tuple(desc.mcs),
    )


# --- parsing -------------------------------------------------------------------

def _fmt_loc(loc) -> str:
    return ".".join(str(p) for p in loc) or "<root>"


def semantic_errors(s: Scenario) -> List[str]:
    """Cross-field checks; every problem is reported, not just the first."""
    errs: List[str] = []
    ch_idx = [c.index for c in s.channels]
    links = set(ch_idx)

    if len(s.lmacs) > MAX_LINKS:
        errs.append(f"lmacs: at most four L-MACs are allowed (got {len(s.lmacs)})")
    if not s.lmacs:
        errs.append("lmacs: at least one L-MAC is required")
    if len(s.channels) > MAX_LINKS:
        errs.append(f"channels: at most four channels are allowed (got {len(s.channels)})")
    for i, c in enumerate(s.channels):
        if c.index >= MAX_LINKS:
            errs.append(f"channels.{i}.index: {c.index} outside 0..{MAX_LINKS - 1}")
        if not c.mcs:
            errs.append(f"channels.{i}.mcs: empty MCS table")
        try:
            McsTable(dict(c.mcs))
        except ValueError as e:
            errs.append(f"channels.{i}.mcs: {e}")
        outs = sorted(c.outages, key=lambda o: o.start_us)
        for j, o in enumerate(c.outages):
            if o.start_us >= o.end_us:
                errs.append(f"channels.{i}.outages.{j}: start_us must be < end_us")
        for a, b in zip(outs, outs[1:]):
            if b.start_us < a.end_us:
                errs.append(f"channels.{i}.outages: intervals overlap ({a.start_us}..{a.end_us} and {b.start_us}..{b.end_us})")
        for j, m in enumerate(s.descriptor.mcs):
            if s.descriptor.max_attempts[j] > 0 and m not in c.mcs:
                errs.append(f"descriptor.mcs.{j}: MCS {m} not in channel {c.index}'s table")
    if len(set(ch_idx)) != len(ch_idx):
        errs.append("channels: duplicate channel index")

    bound = [lm.channel for lm in s.lmacs]
    for i, lm in enumerate(s.lmacs):
        if lm.channel not in links:
            errs.append(f"lmacs.{i}.channel: undefined channel {lm.channel}")
        try:
            edca_table(lm)
        except ValueError as e:
            errs.append(f"lmacs.{i}.edca: {e}")
    for c in sorted(links):
        n = bound.count(c)
        if n != 1:
            errs.append(f"lmacs: channel {c} needs exactly one L-MAC (found {n})")

    if any(a < 0 for a in s.descriptor.max_attempts):
        errs.append("descriptor.max_attempts: negative value")
    if not any(a > 0 for a in s.descriptor.max_attempts):
        errs.append("descriptor.max_attempts: no usable series")

    st = s.steering
    tid_map = st.tid_map
    if tid_map is not None:
        for tid, tl in tid_map.items():
            if not 0 <= tid < NUM_TIDS:
                errs.append(f"steering.tid_map: TID {tid} outside 0..7")
            if not tl:
                errs.append(f"steering.tid_map.{tid}: empty link set")
            for l in tl:
                if l not in links:
                    errs.append(f"steering.tid_map.{tid}: undefined channel {l}")
    for i, r in enumerate(st.tid_remaps):
        if not r.links:
            errs.append(f"steering.tid_remaps.{i}: empty link set")
        for l in r.links:
            if l not in links:
                errs.append(f"steering.tid_remaps.{i}: undefined channel {l}")

    ids = [f.id for f in s.flows]
    if len(set(ids)) != len(ids):
        errs.append("flows: duplicate flow id")
    for i, f in enumerate(s.flows):
        where = f"flows.{i}"
        kinds = [k for k in ("cbr", "poisson", "bursty") if getattr(f.arrivals, k) is not None]
        if len(kinds) != 1:
            errs.append(f"{where}.arrivals: exactly one of cbr/poisson/bursty is required")
        if f.arrivals.cbr is not None and 2 * f.arrivals.cbr.jitter_us >= f.arrivals.cbr.period_us:
            errs.append(f"{where}.arrivals.cbr: jitter_us must be below half the period")
        sizes = [k for k in ("fixed", "uniform") if getattr(f.size, k) is not None]
        if len(sizes) != 1:
            errs.append(f"{where}.size: exactly one of fixed/uniform is required")
        if f.size.uniform is not None and not 0 < f.size.uniform[0] <= f.size.uniform[1]:
            errs.append(f"{where}.size.uniform: need 0 < min <= max")
        stop = f.stop_us if f.stop_us is not None else s.duration_us
        if stop <= f.start_us:
            errs.append(f"{where}: stop_us must be after start_us")
        if tid_map is not None and f.tid not in tid_map:
            errs.append(f"{where}.tid: TID {f.tid} has no entry in steering.tid_map")

    for i, r in enumerate(st.rules):
        if r.link not in links:
            errs.append(f"steering.rules.{i}.link: undefined channel {r.link}")
    has_default = any(r.match == MatchSpec() for r in st.rules)

    strategies = [("steering.crs", st.crs)] + [(f"steering.crs.per_ac.{k}", v) for k, v in st.crs.per_ac.items()]
    needs_rules = st.policy == "early-static"
    if st.policy == "crs":
        for where, cs in strategies:
            if cs.strategy == "pin":
                if cs.pin_link is None:
                    errs.append(f"{where}.pin_link: pin strategy needs a link (or 'static')")
                elif cs.pin_link == "static":
                    needs_rules = True
                elif cs.pin_link not in links:
                    errs.append(f"{where}.pin_link: undefined channel {cs.pin_link}")
            if cs.strategy == "escalate" and not cs.preferred:
                errs.append(f"{where}.preferred: escalate strategy needs a preference list")
            for l in cs.preferred:
                if l not in links:
                    errs.append(f"{where}.preferred: undefined channel {l}")
            if len(set(cs.preferred)) != len(cs.preferred):
                errs.append(f"{where}.preferred: duplicate link")
            w = cs.widen
            if w[0] < 1 or any(b < a for a, b in zip(w, w[1:])):
                errs.append(f"{where}.widen: must start at >= 1 and be non-decreasing")
    if needs_rules and not has_default:
        errs.append("steering.rules: a default rule (empty match) is required")

    scope = s.queues.scope
    if scope == "per_link" and st.policy not in steering.PER_LINK_POLICIES:
        errs.append(f"queues.scope: per_link queues only work with early policies, not {st.policy!r}")
    return errs


def parse_scenario_dict(data) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError(["<root>: scenario must be a mapping"])
    try:
        s = Scenario.model_validate(data)
    except ValidationError as e:
        raise ScenarioError([f"{_fmt_loc(err['loc'])}: {err['msg']}" for err in e.errors()]) from None
    errors = semantic_errors(s)
    if errors:
        raise ScenarioError(errors)
    return s


def parse_scenario(text: str) -> Scenario:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        raise ScenarioError([f"<yaml>: {e}"]) from None
    return parse_scenario_dict(data)


def load_scenario(path) -> Scenario:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
