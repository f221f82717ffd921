"""Bring a kernel CFG into analysis form: one entry, one exit, no critical edges.

Synthetic blocks live in the ``$`` label namespace (``$entry``, ``$exit``,
``$split<k>``) so reports can tell inserted branches from user code.
"""

from __future__ import annotations

from dataclasses import replace

from .ir import BasicBlock, Instruction, KernelCFG, Op, bra, retarget


def _fresh(cfg_labels: set[str], base: str) -> str:
    if base not in cfg_labels:
        return base
    k = 1
    while f"{base}{k}" in cfg_labels:
        k += 1
    return f"{base}{k}"


def ensure_unique_entry_exit(cfg: KernelCFG) -> KernelCFG:
    """Add a synthetic entry and/or exit block when needed.

    Returns ``cfg`` itself when it already has a predecessor-free entry and a
    single exit block.
    """
    blocks = list(cfg.blocks)
    labels = set(cfg.labels)
    changed = False

    exits = cfg.exits()
    if len(exits) > 1:
        exit_label = _fresh(labels, "$exit")
        labels.add(exit_label)
        for i, b in enumerate(blocks):
            if b.label in exits:
                blocks[i] = replace(b, instrs=b.instrs[:-1] + (bra(exit_label),))
        depth = min(cfg.block(e).loop_depth for e in exits)
        blocks.append(BasicBlock(exit_label, (Instruction(Op.EXIT),), depth))
        changed = True

    if cfg.preds(cfg.entry):
        entry_label = _fresh(labels, "$entry")
        blocks.insert(0, BasicBlock(entry_label, (bra(cfg.entry),), 0))
        changed = True

    return cfg.with_blocks(blocks) if changed else cfg


def is_critical(cfg: KernelCFG, u: str, v: str) -> bool:
    return len(cfg.succs(u)) > 1 and len(cfg.preds(v)) > 1


def critical_edges(cfg: KernelCFG) -> list[tuple[str, str]]:
    return [(u, v) for u, v in cfg.edges() if is_critical(cfg, u, v)]


def split_critical_edges(cfg: KernelCFG) -> KernelCFG:
    """Insert a ``$split<k>`` block holding a single ``bra`` on every critical edge.

    The new block inherits the loop depth of the edge's source.
    """
    crit = critical_edges(cfg)
    if not crit:
        return cfg
    labels = set(cfg.labels)
    blocks = {b.label: b for b in cfg.blocks}
    order = list(cfg.labels)
    k = 0
    for u, v in crit:
        while f"$split{k}" in labels:
            k += 1
        mid = f"$split{k}"
        labels.add(mid)
        src = blocks[u]
        # Sources of critical edges have two successors, so they end in bra.cond.
        blocks[u] = replace(src, instrs=src.instrs[:-1] + (retarget(src.instrs[-1], v, mid),))
        blocks[mid] = BasicBlock(mid, (bra(v),), src.loop_depth)
        order.append(mid)
    return cfg.with_blocks(blocks[label] for label in order)


def normalize(cfg: KernelCFG) -> KernelCFG:
    return split_critical_edges(ensure_unique_entry_exit(cfg))
