import pytest
import yaml
from hypothesis import given, settings, strategies as st

from helpers import cbr_flow, make_scenario, scenario_dict, three_links
from mlosteer.cli import bundled_scenarios, resolve_scenario
from mlosteer.scenario import ScenarioError, parse_scenario, parse_scenario_dict
from mlosteer.sim import Simulator

MINIMAL = """
duration_us: 10000
channels: [{index: 0, band: "5", mcs: {0: 600}}]
lmacs: [{channel: 0}]
flows:
  - {id: 1, size: {fixed: 100}, arrivals: {cbr: {period_us: 1000}}}
"""


def errors_of(d):
    with pytest.raises(ScenarioError) as exc:
        parse_scenario_dict(d)
    return exc.value.errors


def test_minimal_scenario_parses():
    s = parse_scenario(MINIMAL)
    assert s.links == [0] and len(s.flows) == 1


def test_five_lmacs_rejected():
    chans = [{"index": i, "band": "6", "mcs": {0: 1.0}} for i in range(4)]
    errs = errors_of(scenario_dict(channels=chans, lmacs=[{"channel": i % 4} for i in range(5)]))
    assert any("at most four L-MACs" in e for e in errs)


def test_dangling_tid_reference():
    d = scenario_dict(flows=[cbr_flow(1, 100, tid=3)], steering={"tid_map": {0: [0]}})
    assert any("TID 3 has no entry in steering.tid_map" in e for e in errors_of(d))


def test_unknown_key_rejected():
    d = scenario_dict(flows=[cbr_flow(1, 100, colour="red")])
    assert any("colour" in e for e in errors_of(d))


def test_all_errors_reported_together():
    d = scenario_dict(
        lmacs=[{"channel": 0}, {"channel": 7}],
        flows=[cbr_flow(1, 100), cbr_flow(1, 100)],
        steering={"policy": "early-static", "rules": [{"link": 5, "match": {"port": 1}}]},
    )
    errs = errors_of(d)
    joined = "\n".join(errs)
    for needle in ("undefined channel 7", "duplicate flow id", "undefined channel 5", "default rule"):
        assert needle in joined
    assert len(errs) >= 4


def test_range_violation():
    d = scenario_dict(channels=[{"index": 0, "band": "5", "mcs": {0: 600.0}, "base_loss": 1.0}])
    assert any("base_loss" in e for e in errors_of(d))


def test_yaml_syntax_error():
    with pytest.raises(ScenarioError):
        parse_scenario("channels: [")


@pytest.mark.parametrize("name", bundled_scenarios())
def test_bundled_roundtrip(name):
    s = resolve_scenario(name)
    assert parse_scenario(s.to_yaml()) == s
    assert yaml.safe_load(s.to_yaml()) == s.to_dict()


@settings(max_examples=30, deadline=None)
@given(
    st.integers(1, 10**7),
    st.lists(st.integers(1, 10_000), min_size=0, max_size=3),
    st.sampled_from(["crs", "late-fifo", "tid-map", "early-dynamic"]),
    st.floats(0, 0.9),
)
def test_roundtrip_property(duration, periods, policy, loss):
    s = make_scenario(
        duration_us=duration,
        channels=[{"index": 0, "band": "2.4", "mcs": {0: 72.0, 3: 150.0}, "base_loss": loss}],
        flows=[cbr_flow(i + 1, p) for i, p in enumerate(periods)],
        steering={"policy": policy},
    )
    assert parse_scenario(s.to_yaml()) == s


def test_policy_override_only_touches_steering():
    base = resolve_scenario("jamming").model_copy(update={"duration_us": 200_000})
    pin = base.with_policy("crs-pin")
    assert pin.fingerprint() == base.fingerprint()
    assert pin.fingerprint(include_steering=True) != base.fingerprint(include_steering=True)
    assert pin.to_dict() | {"steering": None} == base.to_dict() | {"steering": None}
    # offered traffic is unchanged: arrival records match exactly
    arr = lambda s: [r for r in Simulator(s, 1).run() if r["kind"] == "arrival"]
    assert arr(base) == arr(pin)


def test_unknown_policy_override():
    with pytest.raises(ScenarioError):
        make_scenario().with_policy("round-robin")


def test_per_link_scope_needs_early_policy():
    d = scenario_dict(queues={"scope": "per_link"}, steering={"policy": "crs"})
    assert any("per_link" in e for e in errors_of(d))


def test_static_pin_needs_default_rule():
    d = scenario_dict(**three_links(steering={"crs": {"strategy": "pin", "pin_link": "static"}}))
    assert any("default rule" in e for e in errors_of(d))
