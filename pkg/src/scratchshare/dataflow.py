"""Access-range analysis for scratchpad variables.

Two bit-vector problems over the CFG, one bit per scratchpad variable:

* Pre  (forward, OR-meet):  some access to v happened before the point.
* Post (backward, OR-meet): some access to v happens after the point.

A point is in the access range of a set S when some member of S was
accessed before it and some member of S is accessed after it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .ir import KernelCFG

DEFAULT_LOOP_WEIGHT = 10


@dataclass(frozen=True)
class AccessFacts:
    """Per-block Pre/Post facts, each stored as an int bit-vector over ``variables``."""

    variables: tuple[str, ...]
    blocks: tuple[str, ...]
    gen: dict[str, int]
    pre_in: dict[str, int]
    pre_out: dict[str, int]
    post_in: dict[str, int]
    post_out: dict[str, int]
    iterations: int = 0

    def mask(self, names: Iterable[str]) -> int:
        m = 0
        for n in names:
            m |= 1 << self.variables.index(n)
        return m

    def _bit(self, table, var: str, block: str) -> bool:
        return bool(table[block] >> self.variables.index(var) & 1)

    def PreIN(self, var, block):
        return self._bit(self.pre_in, var, block)

    def PreOUT(self, var, block):
        return self._bit(self.pre_out, var, block)

    def PostIN(self, var, block):
        return self._bit(self.post_in, var, block)

    def PostOUT(self, var, block):
        return self._bit(self.post_out, var, block)


def compute_access_facts(cfg: KernelCFG) -> AccessFacts:
    variables = tuple(cfg.var_names)
    index = {v: i for i, v in enumerate(variables)}
    gen = {}
    for b in cfg.blocks:
        m = 0
        for v in b.accesses():
            m |= 1 << index[v]
        gen[b.label] = m

    entry, exit_ = cfg.entry, cfg.exit
    pre_in = {b: 0 for b in cfg.labels}
    pre_out = {b: 0 for b in cfg.labels}
    post_in = {b: 0 for b in cfg.labels}
    post_out = {b: 0 for b in cfg.labels}

    rpo = cfg.reverse_postorder()
    po = cfg.postorder(reverse_graph=False)
    changed_sweeps = 0
    while True:
        changed = False
        for b in rpo:
            new_in = 0
            if b != entry:
                for p in cfg.preds(b):
                    new_in |= pre_out[p]
            new_out = gen[b] | new_in
            if new_in != pre_in[b] or new_out != pre_out[b]:
                pre_in[b], pre_out[b] = new_in, new_out
                changed = True
        for b in po:
            new_out = 0
            if b != exit_:
                for s in cfg.succs(b):
                    new_out |= post_in[s]
            new_in = gen[b] | new_out
            if new_in != post_in[b] or new_out != post_out[b]:
                post_in[b], post_out[b] = new_in, new_out
                changed = True
        if not changed:
            break
        changed_sweeps += 1

    return AccessFacts(variables, tuple(cfg.labels), gen, pre_in, pre_out, post_in, post_out, changed_sweeps)


@dataclass(frozen=True)
class SetAccessRange:
    variables: frozenset[str]
    acc_in: dict[str, bool]
    acc_out: dict[str, bool]
    in_range: tuple[str, ...]
    count: int


def block_weight(cfg: KernelCFG, label: str, loop_weight: int = DEFAULT_LOOP_WEIGHT) -> int:
    b = cfg.block(label)
    return loop_weight ** b.loop_depth * len(b.instrs)


def access_range_of_set(
    cfg: KernelCFG,
    facts: AccessFacts,
    names: Iterable[str],
    loop_weight: int = DEFAULT_LOOP_WEIGHT,
) -> SetAccessRange:
    """AccIN/AccOUT for a variable set plus its weighted instruction count.

    A block is counted when its entry or exit point lies in the range or when
    it accesses a member of the set; each counted block contributes
    ``loop_weight ** depth * len(instructions)``.
    """
    names = frozenset(names)
    unknown = names - set(facts.variables)
    if unknown:
        raise KeyError(f"undeclared variables: {sorted(unknown)}")
    m = facts.mask(names)
    acc_in, acc_out, members = {}, {}, []
    count = 0
    for b in facts.blocks:
        acc_in[b] = bool(facts.pre_in[b] & m) and bool(facts.post_in[b] & m)
        acc_out[b] = bool(facts.pre_out[b] & m) and bool(facts.post_out[b] & m)
        if acc_in[b] or acc_out[b] or facts.gen[b] & m:
            members.append(b)
            count += block_weight(cfg, b, loop_weight)
    return SetAccessRange(names, acc_in, acc_out, tuple(members), count)


def _cell(flag: bool) -> str:
    return "t" if flag else "f"


def access_range_table(
    cfg: KernelCFG,
    facts: AccessFacts,
    sets: Sequence[Sequence[str]] | None = None,
    rows: Sequence[str] | None = None,
) -> list[list[str]]:
    """Rows of ``[block, IN cells..., OUT cells...]`` for variables and then sets.

    Column order matches the classic layout: IN for each variable, OUT for
    each variable, IN for each set, OUT for each set.
    """
    singles = [(v,) for v in facts.variables]
    groups = [tuple(s) for s in sets] if sets is not None else []
    rows = list(rows) if rows is not None else list(facts.blocks)
    single_ranges = [access_range_of_set(cfg, facts, s) for s in singles]
    group_ranges = [access_range_of_set(cfg, facts, s) for s in groups]
    out = []
    for b in rows:
        row = [b]
        for ranges in (single_ranges, group_ranges):
            row += [_cell(r.acc_in[b]) for r in ranges]
            row += [_cell(r.acc_out[b]) for r in ranges]
        out.append(row)
    return out


def format_access_table(
    cfg: KernelCFG,
    facts: AccessFacts,
    sets: Sequence[Sequence[str]] | None = None,
    rows: Sequence[str] | None = None,
) -> str:
    singles = list(facts.variables)
    groups = ["".join(s) for s in sets] if sets else []
    header = ["Block"]
    header += [f"IN:{v}" for v in singles] + [f"OUT:{v}" for v in singles]
    header += [f"IN:{g}" for g in groups] + [f"OUT:{g}" for g in groups]
    body = access_range_table(cfg, facts, sets, rows)
    width = max(len(h) for h in header)
    lines = [" ".join(h.ljust(width) for h in header)]
    lines += [" ".join(c.ljust(width) for c in row) for row in body]
    return "\n".join(lines)
