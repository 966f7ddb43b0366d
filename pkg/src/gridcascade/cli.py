"""Command-line interface.

Subcommands: ``partition`` (tree-partition report), ``cascade`` (single
trace), ``scan`` (N-1 sweep with reports), ``verify`` (property suites).
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings

import numpy as np

from . import cases, verification
from .cascade import CascadeConfig, run_cascade
from .graph import reduced_multigraph, tree_partition
from .harness import (
    generate_profiles,
    n_minus_1_scan,
    remove_lines,
    switched_off_ids,
    write_report,
)
from .netmodel import Network, Scenario, parse_case, scale_capacities
from .uc import AllowShed, LiftAce


def _load_network(path: str) -> Network:
    if path == "ieee118":
        return cases.ieee118()
    with open(path) as fh:
        text = fh.read()
    fmt = "matpower-m" if path.endswith(".m") else "native-json"
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return parse_case(text, fmt)


def _parse_pairs(spec: str) -> list[tuple[int, int]]:
    pairs = []
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        a, b = chunk.split("-")
        pairs.append((int(a), int(b)))
    return pairs


def _parse_ladder(path: str) -> list:
    with open(path) as fh:
        doc = json.load(fh)
    ladder = []
    for item in doc:
        if item["type"] == "lift_ace":
            ladder.append(LiftAce(int(item["areas"][0]), int(item["areas"][1])))
        elif item["type"] == "allow_shed":
            buses = item.get("buses")
            ladder.append(
                AllowShed(
                    buses=None if buses is None else frozenset(int(b) for b in buses),
                    amount=float(item.get("amount", np.inf)),
                )
            )
        else:
            raise ValueError(f"unknown ladder action type {item['type']!r}")
    return ladder


def _apply_switch_off(net: Network, spec: str | None) -> Network:
    if not spec:
        return net
    return remove_lines(net, switched_off_ids(net, _parse_pairs(spec)))


def cmd_partition(args) -> int:
    net = _apply_switch_off(_load_network(args.case), args.switch_off)
    part = tree_partition(net)
    _, areas_tree = reduced_multigraph(net, net.areas)
    doc = {
        "regions": [sorted(r) for r in part.regions],
        "bridges": sorted(
            [list(ln.pair) for ln in net.lines if ln.id in part.bridges]
        ),
        "areas": [sorted(a) for a in net.areas],
        "areas_form_tree": areas_tree,
    }
    print(json.dumps(doc, indent=2))
    return 0


def cmd_cascade(args) -> int:
    net = _apply_switch_off(_load_network(args.case), args.switch_off)
    if args.alpha_line != 1.0 or args.alpha_gen != 1.0:
        net = scale_capacities(net, args.alpha_line, args.alpha_gen)
    if args.dispatch == "opf":
        scenarios, _ = generate_profiles(net, 1, 0.0, seed=args.seed)
        scenario = scenarios[0]
    else:
        scenario = Scenario(network=net, injections=net.base_injections())
    fail_ids = {net.line_by_pair(a, b).id for a, b in _parse_pairs(args.fail)}
    config = CascadeConfig(
        controller=args.controller,
        detect=args.detect,
        ladder=_parse_ladder(args.ladder) if args.ladder else None,
        dual_cap=args.dual_cap,
        dual_window=args.dual_window,
    )
    trace = run_cascade(scenario, fail_ids, config=config)
    summary = {
        "controller": trace.controller,
        "stages": trace.n_stages,
        "final_status": trace.final_status,
        "successive_failures": trace.successive_failures(),
        "total_shed": trace.total_shed,
        "critical": any(s.critical for s in trace.stages),
    }
    print(json.dumps(summary, indent=2))
    if args.trace_out:
        with open(args.trace_out, "w") as fh:
            fh.write(trace.to_json(net))
        print(f"trace written to {args.trace_out}", file=sys.stderr)
    return 0


def cmd_scan(args) -> int:
    net = _apply_switch_off(_load_network(args.case), args.switch_off)
    if args.alpha_line != 1.0 or args.alpha_gen != 1.0:
        net = scale_capacities(net, args.alpha_line, args.alpha_gen)
    scenarios, rejected = generate_profiles(net, args.profiles, args.perturb, args.seed)
    config = CascadeConfig(
        controller=args.controller,
        detect=args.detect,
        dual_cap=args.dual_cap,
        dual_window=args.dual_window,
    )
    report = n_minus_1_scan(scenarios, config, rejected_profiles=rejected)
    tag = f"{args.controller}_a{args.alpha_line:g}_g{args.alpha_gen:g}"
    write_report(report, args.out, tag)
    agg = report.aggregates()
    print(json.dumps({k: v for k, v in agg.items() if not k.startswith("ccdf")}, indent=2))
    print(f"reports written to {args.out}/{tag}_*", file=sys.stderr)
    return 0


def cmd_verify(args) -> int:
    results = verification.run_all(fast=args.fast)
    for res in results:
        print(res.line())
    return 0 if all(r.passed for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gridcascade",
        description="staged cascading-failure simulation on DC network models",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="tree-partition of a case")
    p.add_argument("case", help="case file path, or 'ieee118' for the bundled case")
    p.add_argument("--switch-off", help="lines to switch off, e.g. '15-33,19-34'")
    p.set_defaults(func=cmd_partition)

    c = sub.add_parser("cascade", help="simulate one cascade trace")
    c.add_argument("--case", required=True)
    c.add_argument("--fail", required=True, help="initial failures, e.g. '15-33,19-34'")
    c.add_argument("--controller", choices=("droop", "agc", "uc"), default="uc")
    c.add_argument("--switch-off")
    c.add_argument("--dispatch", choices=("base", "opf"), default="opf")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--alpha-line", type=float, default=1.0)
    c.add_argument("--alpha-gen", type=float, default=1.0)
    c.add_argument("--detect", choices=("exact", "dynamic"), default="exact")
    c.add_argument("--ladder", help="JSON file with lifting actions")
    c.add_argument("--dual-cap", type=float, default=None)
    c.add_argument("--dual-window", type=float, default=10.0)
    c.add_argument("--trace-out")
    c.set_defaults(func=cmd_cascade)

    s = sub.add_parser("scan", help="N-1 scan over load profiles")
    s.add_argument("--case", required=True)
    s.add_argument("--controller", choices=("droop", "agc", "uc"), default="uc")
    s.add_argument("--profiles", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--perturb", type=float, default=0.25)
    s.add_argument("--alpha-line", type=float, default=1.0)
    s.add_argument("--alpha-gen", type=float, default=1.0)
    s.add_argument("--switch-off")
    s.add_argument("--detect", choices=("exact", "dynamic"), default="exact")
    s.add_argument("--dual-cap", type=float, default=None)
    s.add_argument("--dual-window", type=float, default=10.0)
    s.add_argument("--out", required=True, help="output directory for reports")
    s.set_defaults(func=cmd_scan)

    v = sub.add_parser("verify", help="run the property suites")
    v.add_argument("--fast", action="store_true", help="smoke sizing instead of full")
    v.set_defaults(func=cmd_verify)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
