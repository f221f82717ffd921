"""Command-line entry point: ``scratchshare analyze|transform|sim|compare``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import report as rep
from .alloc import InfeasiblePackingError, SharingConfig, select_shared_set
from .dataflow import compute_access_facts, format_access_table
from .ir import KernelError, format_kernel, parse_kernel
from .launch import compute_block_plan
from .pipeline import MODES, PipelineError, load_config, run_pipeline
from .relssp import PlacementError, Strategy, place


def _analyze(args) -> int:
    cfg = parse_kernel(Path(args.kernel).read_text())
    config = load_config(args.config)
    facts = compute_access_facts(cfg)
    sets = [s.split(",") for s in args.sets] if args.sets else None
    print(format_access_table(cfg, facts, sets))
    sharing = SharingConfig(config.hw.scratchpad_per_sm, cfg.scratchpad_bytes, config.t)
    plan = compute_block_plan(config.hw, sharing, config.threads_per_block)
    print()
    print(f"block plan: {json.dumps(plan.to_json(), sort_keys=True)}")
    try:
        choice = select_shared_set(cfg, facts, sharing, loop_weight=config.loop_weight,
                                   strict=config.strict_alloc)
    except InfeasiblePackingError as exc:
        print(f"allocation: infeasible ({exc})")
        return 0
    print(f"allocation: {json.dumps(choice.to_json(), sort_keys=True)}")
    return 0


def _transform(args) -> int:
    cfg = parse_kernel(Path(args.kernel).read_text())
    if args.shared is not None:
        shared = frozenset(s for s in args.shared.split(",") if s)
    else:
        config = load_config(args.config)
        sharing = SharingConfig(config.hw.scratchpad_per_sm, cfg.scratchpad_bytes, config.t)
        shared = select_shared_set(cfg, compute_access_facts(cfg), sharing,
                                   loop_weight=config.loop_weight, strict=config.strict_alloc).shared
    out = place(cfg, shared, args.placement)
    sys.stdout.write(format_kernel(out))
    return 0


def _sim(args) -> int:
    report = run_pipeline(args.kernel, args.config, args.mode)
    text = rep.dumps(report)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.csv:
        Path(args.csv).write_text(rep.reports_csv([report]))
    return 0


def _compare(args) -> int:
    reports = [json.loads(Path(p).read_text()) for p in args.reports]
    rows = rep.compare(reports)
    if args.format == "csv":
        sys.stdout.write(rep.compare_csv(rows))
    elif args.format == "json":
        sys.stdout.write(json.dumps(rows, indent=2, sort_keys=True) + "\n")
    else:
        print(rep.format_table(rows))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scratchshare", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="print access ranges, block plan and shared-set choice")
    a.add_argument("kernel")
    a.add_argument("--config")
    a.add_argument("--sets", nargs="*", help="variable sets to tabulate, e.g. A,B B,C")
    a.set_defaults(func=_analyze)

    t = sub.add_parser("transform", help="emit the kernel with relssp inserted")
    t.add_argument("kernel")
    t.add_argument("--placement", choices=[s.value for s in Strategy], default="opt")
    t.add_argument("--shared", help="comma-separated shared set (default: allocator's choice)")
    t.add_argument("--config")
    t.set_defaults(func=_transform)

    s = sub.add_parser("sim", help="simulate one mode and print a JSON report")
    s.add_argument("kernel")
    s.add_argument("--mode", choices=sorted(MODES), default="shared-owf-opt")
    s.add_argument("--config")
    s.add_argument("-o", "--output")
    s.add_argument("--csv")
    s.set_defaults(func=_sim)

    c = sub.add_parser("compare", help="compare reports against the first one")
    c.add_argument("reports", nargs="+")
    c.add_argument("--format", choices=["table", "csv", "json"], default="table")
    c.set_defaults(func=_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (KernelError, PipelineError, PlacementError, InfeasiblePackingError,
            rep.CompareError, OSError, ValueError) as exc:
        print(f"scratchshare: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
