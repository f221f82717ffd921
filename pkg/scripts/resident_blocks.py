"""Tabulate resident blocks per SM with and without sharing over a range of block footprints.

    python3 scripts/resident_blocks.py --t 0.1 --block-size 128 2112 2176 3840 9408
"""

import argparse
import sys
from fractions import Fraction

from scratchshare.alloc import SharingConfig
from scratchshare.launch import HardwareConfig, compute_block_plan, fill_boundary


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("footprints", nargs="*", type=int, help="per-block scratchpad bytes")
    p.add_argument("--t", default="0.1")
    p.add_argument("--block-size", type=int, default=128)
    p.add_argument("--scratchpad", type=int, default=16384)
    args = p.parse_args(argv)

    hw = HardwareConfig(scratchpad_per_sm=args.scratchpad)
    footprints = args.footprints or list(range(1024, 8193, 512))
    print(f"{'R_tb':>6} {'default':>7} {'total':>5} {'pairs':>5} {'unshared':>8} {'boundary':>8} {'fill':>6}")
    for r_tb in footprints:
        sharing = SharingConfig(args.scratchpad, r_tb, Fraction(args.t))
        plan = compute_block_plan(hw, sharing, args.block_size)
        fill = fill_boundary(hw, sharing, plan)
        print(f"{r_tb:>6} {plan.default_count:>7} {plan.total:>5} {plan.pairs:>5} {plan.unshared:>8} "
              f"{sharing.boundary:>8} {fill:>6}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
