"""Command-line entry point: validate, run, sweep and compare scenarios."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from .metrics import (
    ScenarioMismatch,
    all_reports,
    compare_policies,
    format_cell,
    read_flow_csv,
    read_link_csv,
    write_csv,
    write_flow_csv,
)
from .scenario import POLICY_CHOICES, Scenario, ScenarioError, load_scenario, parse_scenario
from .sim import Simulator
from .trace import write_trace

log = logging.getLogger("mlosteer")

OUT_ENV = "MLOSTEER_OUT"
SUMMARY_COLUMNS = (
    "policy", "seed", "generated", "delivered", "dropped_retries", "dropped_overflow",
    "residual", "deadline_misses", "latency_mean", "latency_p50", "latency_p95",
    "latency_p99", "latency_max", "jitter", "reordering",
)


def bundled_scenarios() -> List[str]:
    root = resources.files("mlosteer") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def resolve_scenario(path: str) -> Scenario:
    """Load a scenario file; a bare bundled name such as ``jamming`` also works."""
    if not os.path.exists(path) and path in bundled_scenarios():
        text = (resources.files("mlosteer") / "scenarios" / f"{path}.yaml").read_text(encoding="utf-8")
        return parse_scenario(text)
    return load_scenario(path)


def parse_seed_range(text: str) -> List[int]:
    """``"3"`` or inclusive ``"1..10"``."""
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; use N or A..B") from None
    if b < a:
        raise argparse.ArgumentTypeError(f"empty seed range {text!r}")
    return list(range(a, b + 1))


def _policy(name: str) -> str:
    if name not in POLICY_CHOICES:
        raise argparse.ArgumentTypeError(f"unknown policy {name!r}; choose from {', '.join(POLICY_CHOICES)}")
    return name


def _policy_list(text: str) -> List[str]:
    return [_policy(p.strip()) for p in text.split(",") if p.strip()]


def write_run(scenario: Scenario, seed: int, out: Path, with_trace: bool = False):
    """Simulate one (scenario, seed) pair and write its reports into ``out``."""
    trace = Simulator(scenario, seed).run()
    flows, links, overall = all_reports(trace)
    out.mkdir(parents=True, exist_ok=True)
    write_flow_csv(out / "flows.csv", flows, overall)
    write_csv(out / "links.csv", links)
    meta = {
        "scenario": scenario.name,
        "fingerprint": scenario.fingerprint(),
        "policy": scenario.steering.policy,
        "strategy": scenario.steering.crs.strategy,
        "seed": seed,
    }
    (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if with_trace:
        with open(out / "trace.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            write_trace(trace, fh)
    return overall


def _sweep_job(job: Tuple[dict, str, int, str]):
    data, policy, seed, out = job
    scenario = Scenario.model_validate(data).with_policy(policy)
    overall = write_run(scenario, seed, Path(out))
    return policy, seed, overall


# --- subcommands ----------------------------------------------------------------

def cmd_validate(args) -> int:
    resolve_scenario(args.scenario)
    print("OK")
    return 0


def cmd_run(args) -> int:
    scenario = resolve_scenario(args.scenario)
    if args.policy:
        scenario = scenario.with_policy(args.policy)
    overall = write_run(scenario, args.seed, Path(args.out), args.trace)
    print(
        f"{scenario.name or args.scenario} seed={args.seed} policy={scenario.steering.policy}: "
        f"generated={overall.generated} delivered={overall.delivered} dropped={overall.dropped} "
        f"p99={overall.latency_p99}"
    )
    return 0


def cmd_sweep(args) -> int:
    scenario = resolve_scenario(args.scenario)
    for p in args.policies:
        scenario.with_policy(p)  # fail fast before spawning anything
    out = Path(args.out)
    data = scenario.to_dict()
    jobs = [(data, p, s, str(out / p / f"seed-{s}")) for p in args.policies for s in args.seeds]
    log.info("sweep: %d runs with %d worker(s)", len(jobs), args.workers)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    # written once, after every run has finished
    rows = []
    for policy, seed, overall in sorted(results, key=lambda r: (r[0], r[1])):
        row = {"policy": policy, "seed": seed}
        row.update({c: getattr(overall, c) for c in SUMMARY_COLUMNS[2:]})
        rows.append(row)
    with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([format_cell(r[c]) for c in SUMMARY_COLUMNS])
    print(f"{len(results)} runs written under {out}")
    return 0


def _load_run(path: Path):
    meta = json.loads((path / "run.json").read_text(encoding="utf-8"))
    return meta, read_flow_csv(path / "flows.csv"), read_link_csv(path / "links.csv")


def cmd_compare(args) -> int:
    meta_a, flows_a, links_a = _load_run(Path(args.a))
    meta_b, flows_b, links_b = _load_run(Path(args.b))
    deltas = compare_policies(
        flows_a, links_a, flows_b, links_b, meta_a["fingerprint"], meta_b["fingerprint"]
    )
    print(f"a: {meta_a['policy']}/{meta_a['strategy']} seed {meta_a['seed']}")
    print(f"b: {meta_b['policy']}/{meta_b['strategy']} seed {meta_b['seed']}")
    for d in deltas:
        if d.direction in ("same", "n/a") and not args.all:
            continue
        print(f"{d.scope:4} {d.key:>4} {d.metric:<17} {d.a!s:>12} -> {d.b!s:<12} {d.direction}")
    return 0


# --- wiring ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    default_out = os.environ.get(OUT_ENV)
    ap = argparse.ArgumentParser(
        prog="mlosteer",
        description="Packet-steering simulator for multi-link Wi-Fi devices.",
    )
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a scenario file")
    p.add_argument("--scenario", required=True, help="YAML file or bundled scenario name")
    p.set_defaults(func=cmd_validate)

    out_help = f"output directory (default: ${OUT_ENV})"

    p = sub.add_parser("run", help="simulate one scenario and seed")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=default_out, required=default_out is None, help=out_help)
    p.add_argument("--policy", type=_policy, help="override the scenario's steering policy")
    p.add_argument("--trace", action="store_true", help="also write trace.jsonl")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run policies x seeds")
    p.add_argument("--scenario", required=True)
    p.add_argument("--seeds", type=parse_seed_range, required=True, help="N or inclusive A..B")
    p.add_argument("--policies", type=_policy_list, required=True, help="comma-separated")
    p.add_argument("--out", default=default_out, required=default_out is None, help=out_help)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="diff the reports of two run directories")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--all", action="store_true", help="also list unchanged metrics")
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse exits 2 on usage errors, 0 on --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "workers", 1) < 1:
        parser.print_usage(sys.stderr)
        print("mlosteer: error: --workers must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except ScenarioError as e:
        for msg in e.errors:
            print(f"error: {msg}", file=sys.stderr)
        return 1
    except ScenarioMismatch as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
