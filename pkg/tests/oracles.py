"""Reference implementations that do not share code paths with the package.

They enumerate paths or query graph reachability directly instead of
solving dataflow equations.
"""

from __future__ import annotations

import itertools

import networkx as nx

from scratchshare.ir import KernelCFG, Op


def to_graph(cfg: KernelCFG) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(cfg.labels)
    g.add_edges_from(cfg.edges())
    return g


def _gen(cfg: KernelCFG) -> dict[str, frozenset]:
    return {b.label: frozenset(b.accesses()) for b in cfg.blocks}


def _walks(start, step, cap=2):
    """Yield every walk from ``start`` that visits each node at most ``cap`` times."""
    stack = [((start,), {start: 1})]
    while stack:
        walk, seen = stack.pop()
        yield walk
        for n in step(walk[-1]):
            if seen.get(n, 0) < cap:
                s2 = dict(seen)
                s2[n] = s2.get(n, 0) + 1
                stack.append((walk + (n,), s2))


def enumerate_access_facts(cfg: KernelCFG):
    """Pre/Post sets per block from explicit walk enumeration.

    Pre facts come from walks that start at the entry, Post facts from
    walks that end at the exit. Two visits per block suffice: any witness
    walk splits into two simple paths.
    """
    gen = _gen(cfg)
    pre_in = {b: set() for b in cfg.labels}
    pre_out = {b: set() for b in cfg.labels}
    post_in = {b: set() for b in cfg.labels}
    post_out = {b: set() for b in cfg.labels}
    for walk in _walks(cfg.entry, cfg.succs):
        before = set().union(*(gen[b] for b in walk[:-1])) if len(walk) > 1 else set()
        pre_in[walk[-1]] |= before
        pre_out[walk[-1]] |= before | gen[walk[-1]]
    for walk in _walks(cfg.exit, cfg.preds):
        after = set().union(*(gen[b] for b in walk[:-1])) if len(walk) > 1 else set()
        post_out[walk[-1]] |= after
        post_in[walk[-1]] |= after | gen[walk[-1]]
    return pre_in, pre_out, post_in, post_out


def reach_range(cfg: KernelCFG, names) -> tuple[dict, dict]:
    """AccIN/AccOUT from reachability: some member accessed on a path before, some after."""
    g = to_graph(cfg)
    names = set(names)
    acc = {b.label for b in cfg.blocks if b.accesses() & names}
    from_entry = nx.descendants(g, cfg.entry) | {cfg.entry}
    # Blocks with a nonempty path from an accessing block.
    after_access = set()
    for a in acc & from_entry:
        for s in g.successors(a):
            after_access |= nx.descendants(g, s) | {s}
    reaches_access = set()
    for a in acc:
        reaches_access |= nx.ancestors(g, a) | {a}
    acc_in, acc_out = {}, {}
    for b in cfg.labels:
        before_in = b in after_access and b != cfg.entry
        before_out = before_in or b in acc
        after_out = b != cfg.exit and any(s in reaches_access for s in cfg.succs(b))
        after_in = b in acc or after_out
        acc_in[b] = before_in and after_in
        acc_out[b] = before_out and after_out
    return acc_in, acc_out


def brute_force_count(cfg: KernelCFG, names, loop_weight: int = 10) -> int:
    acc_in, acc_out = reach_range(cfg, names)
    names = set(names)
    total = 0
    for b in cfg.blocks:
        if acc_in[b.label] or acc_out[b.label] or b.accesses() & names:
            total += loop_weight ** b.loop_depth * len(b.instrs)
    return total


def brute_force_choice(cfg: KernelCFG, unshared_cap: int, shared_cap: int | None, loop_weight: int = 10):
    """Minimum (count, size, names) over every subset; ``shared_cap=None`` drops the shared-side test."""
    sizes = {v.name: v.size_bytes for v in cfg.variables}
    total = sum(sizes.values())
    best = None
    names = sorted(sizes)
    for mask in range(1 << len(names)):
        subset = tuple(n for i, n in enumerate(names) if mask >> i & 1)
        in_s = sum(sizes[n] for n in subset)
        if total - in_s > unshared_cap:
            continue
        if shared_cap is not None and in_s > shared_cap:
            continue
        count = brute_force_count(cfg, subset, loop_weight) if subset else 0
        key = (count, len(subset), subset)
        if best is None or key < best:
            best = key
    return best


def retreating_edges(cfg: KernelCFG) -> set[tuple[str, str]]:
    order = {b: i for i, b in enumerate(cfg.reverse_postorder())}
    return {(u, v) for u, v in cfg.edges() if order[v] <= order[u]}


def bounded_paths(cfg: KernelCFG, max_back: int = 2, limit: int = 200_000):
    """Entry-to-exit block paths that take retreating edges at most ``max_back`` times."""
    back = retreating_edges(cfg)
    exit_ = cfg.exit
    stack = [((cfg.entry,), 0)]
    produced = 0
    while stack:
        path, k = stack.pop()
        last = path[-1]
        if last == exit_:
            produced += 1
            if produced > limit:
                raise RuntimeError("path enumeration limit exceeded")
            yield path
            continue
        for s in cfg.succs(last):
            k2 = k + ((last, s) in back)
            if k2 <= max_back:
                stack.append((path + (s,), k2))


def path_events(cfg: KernelCFG, path, shared) -> list[str]:
    """Flatten a block path into events: 'rel', 'acc' (shared access) or 'ins' (other original instruction)."""
    events = []
    for label in path:
        block = cfg.block(label)
        for ins in block.instrs:
            if ins.op is Op.RELSSP:
                events.append("rel")
            elif block.is_synthetic:
                continue
            elif ins.is_shared_access and ins.var in shared:
                events.append("acc")
            else:
                events.append("ins")
    return events


def lift_path(transformed: KernelCFG, path) -> tuple[str, ...]:
    """Map an original block path onto a CFG that gained synthetic entry, exit or split blocks."""
    out = []
    if transformed.entry != path[0]:
        out.append(transformed.entry)
    for i, b in enumerate(path):
        out.append(b)
        if i + 1 < len(path):
            nxt = path[i + 1]
            if nxt not in transformed.succs(b):
                (hop,) = [s for s in transformed.succs(b)
                          if transformed.block(s).is_synthetic and nxt in transformed.succs(s)]
                out.append(hop)
    while out[-1] != transformed.exit:
        (nxt,) = transformed.succs(out[-1])
        out.append(nxt)
    return tuple(out)


def release_positions(original: KernelCFG, transformed: KernelCFG, shared, max_back: int = 2):
    """For each bounded original path: positions (counted in original instructions) of every relssp,
    and whether a shared access follows a relssp."""
    out = {}
    for path in bounded_paths(original, max_back):
        pos, rels, late_access = 0, [], False
        for e in path_events(transformed, lift_path(transformed, path), shared):
            if e == "rel":
                rels.append(pos)
            else:
                if e == "acc" and rels:
                    late_access = True
                pos += 1
        out[path] = (rels, late_access)
    return out


def subsets(names):
    for k in range(len(names) + 1):
        yield from itertools.combinations(sorted(names), k)
