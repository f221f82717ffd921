"""Run every scheduling/placement mode on one kernel and print a comparison.

    python3 scripts/mode_sweep.py kernels/directional.kir configs/directional.json
    python3 scripts/mode_sweep.py kernels/unlimited.kir configs/unlimited.toml --csv out.csv

The first mode listed is the baseline for the ratio columns.
"""

import argparse
import sys
from pathlib import Path

from scratchshare import report as rep
from scratchshare.pipeline import MODES, load_config, run_modes

DEFAULT_MODES = ["unshared-lrr", "unshared-gto", "shared-noopt", "shared-owf",
                 "shared-owf-postdom", "shared-owf-opt"]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("kernel")
    p.add_argument("config", nargs="?")
    p.add_argument("--modes", nargs="+", choices=sorted(MODES), default=DEFAULT_MODES)
    p.add_argument("--jobs", type=int, default=4)
    p.add_argument("--csv", help="also write the raw per-mode CSV here")
    args = p.parse_args(argv)

    source = Path(args.kernel).read_text()
    config = load_config(args.config)
    by_mode = {r["mode"]: r for r in run_modes(source, config, args.modes, jobs=args.jobs,
                                                kernel_name=Path(args.kernel).stem)}
    ordered = [by_mode[m] for m in args.modes]
    print(rep.format_table(rep.compare(ordered)))
    print()
    for r in ordered:
        ph = r["phases"]
        print(f"{r['mode']:<20} lock_wait={r['lock_wait_cycles']:<7} "
              f"phases pre={ph['pre']:.1f}% shared={ph['shared']:.1f}% post={ph['post']:.1f}%")
    if args.csv:
        Path(args.csv).write_text(rep.reports_csv(ordered))
    return 0


if __name__ == "__main__":
    sys.exit(main())
