"""Builders shared by the test modules."""

import copy

from mlosteer.core import AccessCategory, FragmentGroup, Packet, make_descriptor
from mlosteer.scenario import parse_scenario_dict

BASE_SCENARIO = {
    "name": "unit",
    "duration_us": 100_000,
    "channels": [{"index": 0, "band": "5", "mcs": {0: 600.0}}],
    "lmacs": [{"channel": 0}],
    "flows": [],
}


def scenario_dict(**overrides):
    d = copy.deepcopy(BASE_SCENARIO)
    d.update(copy.deepcopy(overrides))
    return d


def make_scenario(**overrides):
    return parse_scenario_dict(scenario_dict(**overrides))


def cbr_flow(fid, period, size=1000, ac="BestEffort", **extra):
    f = {"id": fid, "ac": ac, "size": {"fixed": size}, "arrivals": {"cbr": {"period_us": period}}}
    f.update(extra)
    return f


def three_links(**extra):
    ch = [
        {"index": 0, "band": "2.4", "mcs": {0: 143.0}, "base_loss": 0.05},
        {"index": 1, "band": "5", "mcs": {0: 600.0}, "base_loss": 0.05},
        {"index": 2, "band": "6", "mcs": {0: 1200.0}, "base_loss": 0.05},
    ]
    return dict(channels=ch, lmacs=[{"channel": i} for i in range(3)], **extra)


def packet(pid=0, tid=0, ac=AccessCategory.BestEffort, size=1000, t=0, port=0, tos=0,
           receiver=1, deadline=None, fg=None, flow=1):
    return Packet(pid, flow, tid, ac, receiver, tos, port, size, t, deadline, fg)


def descriptor(bitmaps, attempts=(1, 1, 1, 1)):
    return make_descriptor(bitmaps, attempts)
