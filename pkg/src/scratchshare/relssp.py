"""Placement of the ``relssp`` (release shared scratchpad) instruction.

Safety is a backward AND-problem: ``relssp`` may sit at a point when no path
from it reaches an access to a shared variable. The optimal points are the
earliest safe points, i.e. the block boundaries where safety first becomes
true along some path. On a CFG without critical edges every path from entry
to exit crosses exactly one of them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Iterable

from .ir import RELSSP, KernelCFG, Op
from .normalize import ensure_unique_entry_exit, normalize


class PlacementError(Exception):
    pass


class Position(enum.Enum):
    IN = "IN"
    OUT = "OUT"


class Strategy(enum.Enum):
    OPT = "opt"
    POSTDOM = "postdom"
    EXIT = "exit"
    NONE = "none"


def _shared_blocks(cfg: KernelCFG, shared: Iterable[str]) -> set[str]:
    shared = set(shared)
    return {b.label for b in cfg.blocks if b.accesses() & shared}


@dataclass(frozen=True)
class SafetyFacts:
    safe_in: dict[str, bool]
    safe_out: dict[str, bool]
    ins_in: dict[str, bool]
    ins_out: dict[str, bool]

    def points(self) -> list[tuple[str, Position]]:
        pts = []
        for b in self.safe_in:
            if self.ins_in[b]:
                pts.append((b, Position.IN))
            if self.ins_out[b]:
                pts.append((b, Position.OUT))
        return pts


def compute_safety(cfg: KernelCFG, shared: Iterable[str]) -> SafetyFacts:
    """Greatest fixed point of the SafeIN/SafeOUT equations and the insertion flags.

    The entry block has no predecessor to hoist into, so ``relssp`` goes at
    IN(entry) exactly when the entry itself is safe (a kernel that never
    touches the shared set).
    """
    accessing = _shared_blocks(cfg, shared)
    exit_ = cfg.exit
    safe_in = {b: True for b in cfg.labels}
    safe_out = {b: True for b in cfg.labels}
    order = cfg.postorder()
    changed = True
    while changed:
        changed = False
        for b in order:
            out = True if b == exit_ else all(safe_in[s] for s in cfg.succs(b))
            in_ = False if b in accessing else out
            if out != safe_out[b] or in_ != safe_in[b]:
                safe_out[b], safe_in[b] = out, in_
                changed = True

    ins_out = {b: safe_out[b] and not safe_in[b] for b in cfg.labels}
    ins_in = {}
    for b in cfg.labels:
        preds = cfg.preds(b)
        if b == cfg.entry and not preds:
            ins_in[b] = safe_in[b]
        else:
            ins_in[b] = not all(safe_out[p] for p in preds) and safe_in[b]
        # SafeIN is false for accessing blocks, so both flags never hold together.
        assert not (ins_in[b] and ins_out[b]), b
    return SafetyFacts(safe_in, safe_out, ins_in, ins_out)


def insert_at(cfg: KernelCFG, points: Iterable[tuple[str, Position]]) -> KernelCFG:
    """Insert one relssp per point; OUT goes just before the block's terminator."""
    by_block: dict[str, set[Position]] = {}
    for label, pos in points:
        by_block.setdefault(label, set()).add(pos)
    blocks = []
    for b in cfg.blocks:
        where = by_block.get(b.label, ())
        instrs = b.instrs
        if Position.OUT in where:
            if b.terminator is not None:
                instrs = instrs[:-1] + (RELSSP, instrs[-1])
            else:
                instrs = instrs + (RELSSP,)
        if Position.IN in where:
            instrs = (RELSSP,) + instrs
        blocks.append(replace(b, instrs=instrs) if instrs is not b.instrs else b)
    return cfg.with_blocks(blocks)


def insert_relssp(cfg: KernelCFG, facts: SafetyFacts, shared: Iterable[str] | None = None) -> KernelCFG:
    out = insert_at(cfg, facts.points())
    if shared is not None:
        verify_release(out, shared)
    return out


# -- dominance ---------------------------------------------------------------


def _dominators(cfg: KernelCFG, reverse: bool = False) -> dict[str, set[str]]:
    root = cfg.exit if reverse else cfg.entry
    pred = cfg.succs if reverse else cfg.preds
    nodes = list(reversed(cfg.postorder(reverse_graph=reverse)))
    dom = {n: set(nodes) for n in nodes}
    dom[root] = {root}
    changed = True
    while changed:
        changed = False
        for n in nodes:
            if n == root:
                continue
            ps = [p for p in pred(n) if p in dom]
            new = set.intersection(*(dom[p] for p in ps)) if ps else set()
            new = new | {n}
            if new != dom[n]:
                dom[n] = new
                changed = True
    return dom


def dominators(cfg: KernelCFG) -> dict[str, set[str]]:
    return _dominators(cfg)


def postdominators(cfg: KernelCFG) -> dict[str, set[str]]:
    return _dominators(cfg, reverse=True)


def _strict_reach(cfg: KernelCFG, label: str) -> set[str]:
    seen: set[str] = set()
    stack = list(cfg.succs(label))
    while stack:
        n = stack.pop()
        if n not in seen:
            seen.add(n)
            stack.extend(cfg.succs(n))
    return seen


def postdom_point(cfg: KernelCFG, shared: Iterable[str]) -> tuple[str, Position]:
    """Nearest common post-dominator of the accessing blocks that is executed once on every path.

    Walks up the post-dominator chain until it finds a block that dominates
    the exit, is not on a cycle and cannot reach another shared access.
    """
    accessing = _shared_blocks(cfg, shared)
    exit_ = cfg.exit
    pdom = postdominators(cfg)
    dom = dominators(cfg)
    if not accessing:
        return exit_, Position.IN
    common = set.intersection(*(pdom[a] for a in accessing))
    # Common post-dominators form a chain; the nearest has the largest set.
    for c in sorted(common, key=lambda n: (-len(pdom[n]), n)):
        reach = _strict_reach(cfg, c)
        if c not in dom[exit_] or c in reach or reach & accessing:
            continue
        return c, (Position.OUT if c in accessing else Position.IN)
    raise PlacementError("exit block does not qualify as a release point")  # pragma: no cover


def place_at_postdominator(cfg: KernelCFG, shared: Iterable[str]) -> KernelCFG:
    shared = set(shared)
    out = insert_at(cfg, [postdom_point(cfg, shared)])
    verify_release(out, shared)
    return out


def place_at_exit(cfg: KernelCFG) -> KernelCFG:
    return insert_at(cfg, [(cfg.exit, Position.OUT)])


def verify_release(cfg: KernelCFG, shared: Iterable[str]) -> None:
    """Check that every entry-to-exit path runs relssp exactly once and never touches
    the shared set afterwards.

    Explores (block, relssp-count) states, so paths around loops are covered
    for any number of iterations.
    """
    shared = set(shared)
    start = (cfg.entry, 0)
    seen = {start}
    stack = [start]
    exit_ = cfg.exit
    while stack:
        label, k = stack.pop()
        for ins in cfg.block(label).instrs:
            if ins.op is Op.RELSSP:
                k += 1
                if k > 1:
                    raise PlacementError(f"relssp executed more than once on a path through {label}")
            elif ins.is_shared_access and ins.var in shared and k:
                raise PlacementError(f"shared access to {ins.var} in {label} after relssp")
        if label == exit_ and k != 1:
            raise PlacementError("a path reaches the exit without executing relssp")
        for s in cfg.succs(label):
            st = (s, k)
            if st not in seen:
                seen.add(st)
                stack.append(st)


def place(cfg: KernelCFG, shared: Iterable[str], strategy: Strategy | str) -> KernelCFG:
    """Apply a placement strategy, normalizing the CFG as the strategy needs.

    Kernels that never touch the shared set are returned unchanged.
    """
    strategy = Strategy(strategy)
    shared = set(shared)
    if strategy is Strategy.NONE or not _shared_blocks(cfg, shared):
        # Nothing is ever locked, so there is nothing to release.
        return cfg
    if strategy is Strategy.EXIT:
        return place_at_exit(ensure_unique_entry_exit(cfg))
    if strategy is Strategy.POSTDOM:
        return place_at_postdominator(ensure_unique_entry_exit(cfg), shared)
    norm = normalize(cfg)
    return insert_relssp(norm, compute_safety(norm, shared), shared)
