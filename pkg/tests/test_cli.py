import csv
import json

import pytest

from mlosteer.cli import main, parse_seed_range

SMALL = """
name: cli-small
duration_us: 50000
channels:
  - {index: 0, band: "2.4", mcs: {0: 143}, base_loss: 0.1}
  - {index: 1, band: "5", mcs: {0: 600}, base_loss: 0.1}
lmacs: [{channel: 0}, {channel: 1}]
flows:
  - {id: 1, ac: Video, size: {fixed: 1200}, arrivals: {cbr: {period_us: 400}}}
  - {id: 2, ac: Voice, size: {fixed: 200}, arrivals: {poisson: {rate_pps: 500}}, deadline_us: 5000}
steering:
  policy: crs
  rules: [{link: 1}]
  crs: {strategy: escalate, preferred: [1, 0], widen: [1, 2, 2, 2], pin_link: 1}
"""


@pytest.fixture
def scen(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return str(p)


def test_validate_ok(scen, capsys):
    assert main(["validate", "--scenario", scen]) == 0
    assert capsys.readouterr().out.strip() == "OK"


def test_validate_bundled_name(capsys):
    assert main(["validate", "--scenario", "jamming"]) == 0


def test_validate_reports_errors(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(SMALL.replace("lmacs: [{channel: 0}, {channel: 1}]", "lmacs: [{channel: 0}, {channel: 3}]"))
    assert main(["validate", "--scenario", str(p)]) == 1
    assert "undefined channel 3" in capsys.readouterr().err


def test_bad_flags_exit_2(capsys):
    assert main(["run", "--scenario"]) == 2
    assert main(["frobnicate"]) == 2
    assert main(["sweep", "--scenario", "x", "--seeds", "5..1", "--policies", "crs", "--out", "o"]) == 2
    assert main(["run", "--scenario", "x", "--seed", "1", "--out", "o", "--policy", "nope"]) == 2
    assert "usage" in capsys.readouterr().err


def test_missing_file_exit_1(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "none.yaml"), "--seed", "1", "--out", str(tmp_path)]) == 1


def test_run_is_byte_identical(scen, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "--scenario", scen, "--seed", "7", "--out", str(out), "--trace"]) == 0
    names = sorted(p.name for p in a.iterdir())
    assert names == ["flows.csv", "links.csv", "run.json", "trace.jsonl"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_run_uses_env_out_dir(scen, tmp_path, monkeypatch):
    monkeypatch.setenv("MLOSTEER_OUT", str(tmp_path / "env"))
    assert main(["run", "--scenario", scen, "--seed", "1"]) == 0
    assert (tmp_path / "env" / "flows.csv").exists()


def test_sweep_layout(scen, tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--scenario", scen, "--seeds", "1..10", "--policies", "crs-escalate,crs-pin",
                 "--out", str(out), "--workers", "2"]) == 0
    dirs = sorted(p.relative_to(out).as_posix() for p in out.glob("*/seed-*"))
    assert len(dirs) == 2 * 10
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 20
    assert [r["seed"] for r in rows[:10]] == [str(s) for s in range(1, 11)]


def test_sweep_workers_do_not_change_results(scen, tmp_path):
    for w in ("1", "3"):
        main(["sweep", "--scenario", scen, "--seeds", "1..3", "--policies", "crs,late-fifo",
              "--out", str(tmp_path / w), "--workers", w])
    assert (tmp_path / "1" / "summary.csv").read_bytes() == (tmp_path / "3" / "summary.csv").read_bytes()


def test_compare(scen, tmp_path, capsys):
    main(["run", "--scenario", scen, "--seed", "3", "--out", str(tmp_path / "e"), "--policy", "crs-escalate"])
    main(["run", "--scenario", scen, "--seed", "3", "--out", str(tmp_path / "p"), "--policy", "crs-pin"])
    capsys.readouterr()
    assert main(["compare", "--a", str(tmp_path / "p"), "--b", str(tmp_path / "e")]) == 0
    out = capsys.readouterr().out
    assert "a: crs/pin seed 3" in out and "b: crs/escalate seed 3" in out
    meta = json.loads((tmp_path / "e" / "run.json").read_text())
    assert meta["policy"] == "crs" and meta["strategy"] == "escalate"


def test_compare_refuses_other_scenario(scen, tmp_path, capsys):
    main(["run", "--scenario", scen, "--seed", "1", "--out", str(tmp_path / "a")])
    main(["run", "--scenario", "legacy_fallback", "--seed", "1", "--out", str(tmp_path / "b")])
    assert main(["compare", "--a", str(tmp_path / "a"), "--b", str(tmp_path / "b")]) == 1
    assert "different scenarios" in capsys.readouterr().err


@pytest.mark.parametrize("text, seeds", [("3", [3]), ("1..4", [1, 2, 3, 4]), ("7..7", [7])])
def test_seed_ranges(text, seeds):
    assert parse_seed_range(text) == seeds
