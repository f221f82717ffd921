"""Cycle-level streaming-multiprocessor model with scratchpad sharing.

Each cycle, every warp scheduler of every SM computes its ready warps
(scoreboard, barrier and shared-region lock permitting), picks one by
policy and issues it. Shared-region lock requests made in the same cycle
are granted to the lowest slot index; the loser retries next cycle.

Timing conventions:

* An instruction issued in cycle ``c`` with latency ``L`` makes its result
  readable from cycle ``c + L``.
* ``exit`` retires in the same cycle as the instruction before it, so a warp
  finishes when it issues its last non-exit instruction. A warp whose first
  instruction is ``exit`` still spends one issue slot on it.
* Lock releases, ownership transfers and block launches triggered in cycle
  ``c`` take effect at the start of cycle ``c + 1``.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional

from .alloc import SharingConfig
from .ir import Instruction, KernelCFG, Op
from .launch import BlockPlan, HardwareConfig, LaunchSchedule, SlotKind, assign_blocks_to_sms


class SimulationError(Exception):
    pass


class NonTermination(SimulationError):
    def __init__(self, message: str, dump: str):
        super().__init__(f"{message}\n{dump}")
        self.dump = dump


class InvariantViolation(SimulationError):
    pass


class Stall(enum.Enum):
    NONE = "none"
    DATA = "data-dep"
    MEMORY = "memory"
    LOCK = "shared-lock"
    BARRIER = "barrier"


class Policy(enum.Enum):
    LRR = "lrr"
    GTO = "gto"
    OWF = "owf"
    # Unshared warps before owners; only used to replay the scheduling example.
    UWF = "uwf"


class Access(enum.Enum):
    GRANTED = "granted"
    RETRY = "retry"


_DEFAULT_LATENCY = {
    Op.ADD: 1,
    Op.MOV: 1,
    Op.LD_SHARED: 1,
    Op.ST_SHARED: 1,
    Op.LD_GLOBAL: 400,
    Op.ST_GLOBAL: 400,
    Op.BAR_SYNC: 1,
    Op.BRA: 1,
    Op.BRA_COND: 1,
    Op.RELSSP: 1,
    Op.EXIT: 1,
}


@dataclass(frozen=True)
class LatencyModel:
    cycles: dict = field(default_factory=lambda: dict(_DEFAULT_LATENCY))

    def __post_init__(self):
        merged = dict(_DEFAULT_LATENCY)
        merged.update({Op(k) if not isinstance(k, Op) else k: v for k, v in self.cycles.items()})
        if any(v < 1 for v in merged.values()):
            raise ValueError("latencies must be at least one cycle")
        object.__setattr__(self, "cycles", merged)

    def __getitem__(self, op: Op) -> int:
        return self.cycles[op]

    def __hash__(self):
        return hash(tuple(sorted((k.value, v) for k, v in self.cycles.items())))

    def to_json(self) -> dict:
        return {k.value: v for k, v in self.cycles.items()}


@dataclass(frozen=True)
class BranchSpec:
    """Outcome stream for a ``bra.cond``.

    With ``taken`` set, the first target is taken that many times, then the
    second target once, and the pattern repeats (a loop trip count).
    Otherwise the first target is taken with probability ``p``.
    """

    taken: Optional[int] = None
    p: float = 0.5

    @classmethod
    def from_json(cls, obj) -> "BranchSpec":
        if isinstance(obj, int):
            return cls(taken=obj)
        return cls(taken=obj.get("taken"), p=obj.get("p", 0.5))


@dataclass(frozen=True)
class SimConfig:
    hw: HardwareConfig = field(default_factory=HardwareConfig)
    policy: Policy = Policy.LRR
    latency: LatencyModel = field(default_factory=LatencyModel)
    seed: int = 0
    branches: dict = field(default_factory=dict)
    active_threads: Optional[int] = None
    max_cycles: int = 5_000_000
    check_invariants: bool = False
    initial_owner_slots: tuple = ()
    record_trace: bool = False

    def __post_init__(self):
        object.__setattr__(self, "policy", Policy(self.policy))
        object.__setattr__(
            self, "branches",
            {k: v if isinstance(v, BranchSpec) else BranchSpec.from_json(v) for k, v in self.branches.items()},
        )

    def __hash__(self):
        return hash((self.hw, self.policy, self.latency, self.seed, self.max_cycles))


# ---------------------------------------------------------------------------
# Runtime state
# ---------------------------------------------------------------------------


class ReleaseUnit:
    """Per-block active (A) and release (R) bits; unlock fires once all active threads released."""

    def __init__(self, active_mask: int):
        self.active = active_mask
        self.released = 0
        self.fired = False

    @property
    def count(self) -> int:
        return bin(self.active & self.released).count("1")

    def execute(self, lanes: int) -> bool:
        """Record relssp for ``lanes``; True exactly once, when the gate first opens."""
        self.released |= lanes
        if not self.fired and self.active & ~self.released == 0:
            self.fired = True
            return True
        return False


class Warp:
    __slots__ = (
        "wid", "block", "index", "lanes", "nthreads", "block_label", "pos", "reg_ready", "reg_mem",
        "done", "at_barrier", "issued", "thread_instrs", "rng", "branch_counts", "stall",
    )

    def __init__(self, wid: int, block: "ThreadBlock", index: int, lanes: int, entry: str, seed: int):
        self.wid = wid
        self.block = block
        self.index = index
        self.lanes = lanes
        self.nthreads = bin(lanes).count("1")
        self.block_label = entry
        self.pos = 0
        self.reg_ready: dict[str, int] = {}
        self.reg_mem: set[str] = set()
        self.done = False
        self.at_barrier = False
        self.issued = 0
        self.thread_instrs = 0
        self.rng = random.Random(f"{seed}:{block.bid}:{index}")
        self.branch_counts: dict[str, int] = {}
        self.stall = Stall.NONE


class ThreadBlock:
    def __init__(self, bid: int, slot: int, kind: SlotKind, partner: Optional[int], launch: int):
        self.bid = bid
        self.slot = slot
        self.kind = kind
        self.partner = partner
        self.launch = launch
        self.warps: list[Warp] = []
        self.release: Optional[ReleaseUnit] = None
        self.acquire_cycle: Optional[int] = None
        self.release_cycle: Optional[int] = None
        self.finish_cycle: Optional[int] = None
        self.lock_wait = 0
        self.barrier_waiting = 0

    @property
    def finished(self) -> bool:
        return self.finish_cycle is not None

    @property
    def live_warps(self) -> int:
        return sum(1 for w in self.warps if not w.done)


@dataclass
class SharedLock:
    pair: int
    holder: Optional[int] = None  # slot index


@dataclass(frozen=True)
class BlockRecord:
    bid: int
    sm: int
    slot: int
    kind: str
    launch: int
    acquire: Optional[int]
    release: Optional[int]
    finish: int
    lock_wait: int

    @property
    def phases(self) -> tuple[int, int, int]:
        """Cycles before acquiring the shared region, while holding it, and after releasing it."""
        life = self.finish - self.launch + 1
        if self.acquire is None:
            return life, 0, 0
        release = self.release if self.release is not None else self.finish
        return self.acquire - self.launch, release - self.acquire + 1, self.finish - release


@dataclass
class RunReport:
    cycles: int
    warp_issues: int
    instr_user: int
    instr_relssp: int
    instr_goto: int
    busy_cycles: int
    stall_cycles: int
    lock_wait_cycles: int
    num_sms: int
    blocks: list[BlockRecord]
    # (block id, warp index) -> (warp issues, thread instructions)
    issued_per_warp: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    @property
    def instructions(self) -> int:
        return self.instr_user + self.instr_relssp + self.instr_goto

    @property
    def ipc(self) -> Fraction:
        return Fraction(self.instructions, self.cycles) if self.cycles else Fraction(0)

    def phase_breakdown(self) -> dict[str, float]:
        """Share of shared-block lifetime spent before, inside and after the shared region (percent)."""
        pre = held = post = 0
        for r in self.blocks:
            if r.kind != SlotKind.SHARED.value:
                continue
            a, b, c = r.phases
            pre, held, post = pre + a, held + b, post + c
        total = pre + held + post
        if not total:
            return {"pre": 0.0, "shared": 0.0, "post": 0.0}
        return {"pre": 100.0 * pre / total, "shared": 100.0 * held / total, "post": 100.0 * post / total}

    def finish_cycle(self, bid: int) -> int:
        for r in self.blocks:
            if r.bid == bid:
                return r.finish
        raise KeyError(bid)


class SM:
    def __init__(self, sim: "Simulator", index: int):
        self.sim = sim
        self.index = index
        plan = sim.plan
        self.slots: list[Optional[ThreadBlock]] = [None] * plan.total
        self.slot_kind = [plan.slot_kind(s) for s in range(plan.total)]
        self.locks = {s: SharedLock(s) for s in range(plan.pairs)}
        self.schedulers: list[list[Warp]] = [[] for _ in range(sim.config.hw.schedulers_per_sm)]
        self.last_issued: list[Optional[int]] = [None] * len(self.schedulers)
        self.next_wid = 0
        self.events: list[tuple] = []
        self.busy = 0

    def pair_of(self, slot: int) -> Optional[int]:
        plan = self.sim.plan
        if slot < plan.pairs:
            return slot
        if plan.base <= slot < plan.total:
            return slot - plan.base
        return None

    def lock_of(self, block: ThreadBlock) -> Optional[SharedLock]:
        if block.kind is not SlotKind.SHARED:
            return None
        return self.locks[self.pair_of(block.slot)]

    def launch(self, bid: int, slot: int, kind: SlotKind, partner: Optional[int], cycle: int):
        sim = self.sim
        block = ThreadBlock(bid, slot, kind, partner, cycle)
        warp_size = sim.config.hw.warp_size
        nwarps = -(-sim.block_size // warp_size)
        active = sim.active_threads
        mask = (1 << active) - 1
        block.release = ReleaseUnit(mask)
        for i in range(nwarps):
            # Lanes are kept at their block-wide bit positions for the release gate.
            lanes = mask & (((1 << warp_size) - 1) << (i * warp_size))
            w = Warp(self.next_wid, block, i, lanes, sim.kernel.entry, sim.config.seed)
            self.next_wid += 1
            block.warps.append(w)
            self.schedulers[w.wid % len(self.schedulers)].append(w)
        self.slots[slot] = block
        return block


class Simulator:
    """Runs one kernel launch across ``hw.num_sms`` SMs until every block has finished."""

    def __init__(
        self,
        kernel: KernelCFG,
        offsets: dict[str, int],
        sharing: SharingConfig,
        plan: BlockPlan,
        num_blocks: int,
        block_size: int,
        config: SimConfig,
    ):
        self.kernel = kernel
        self.offsets = offsets
        self.sharing = sharing
        self.plan = plan
        self.num_blocks = num_blocks
        self.block_size = block_size
        self.config = config
        self.active_threads = block_size if config.active_threads is None else config.active_threads
        if not 0 < self.active_threads <= block_size:
            raise ValueError("active_threads must lie in [1, block_size]")
        self.code = {b.label: b.instrs for b in kernel.blocks}
        self.succ = {b.label: kernel.succs(b.label) for b in kernel.blocks}
        self.synthetic = {b.label for b in kernel.blocks if b.is_synthetic}
        self.schedule: LaunchSchedule = assign_blocks_to_sms(num_blocks, plan, config.hw)
        self.sms = [SM(self, i) for i in range(config.hw.num_sms)]
        self.cycle = 0
        self.records: list[BlockRecord] = []
        self.instr = {"user": 0, "relssp": 0, "goto": 0}
        self.warp_issues = 0
        self.lock_wait_total = 0
        self.finished_blocks = 0
        self.issued_per_warp: dict = {}
        # (cycle, sm, block id, warp id, block label, position) per issue when enabled.
        self.trace: list[tuple] = []
        for sm, row in zip(self.sms, self.schedule.initial):
            for a in row:
                b = sm.launch(a.block_id, a.slot, a.kind, a.partner_slot, 1)
                if a.slot in config.initial_owner_slots and a.kind is SlotKind.SHARED:
                    sm.lock_of(b).holder = a.slot
                    b.acquire_cycle = 1

    # -- scratchpad access mechanism ---------------------------------------

    def address(self, ins: Instruction) -> int:
        addr = self.offsets[ins.var] + ins.offset
        if not 0 <= addr < max(self.sharing.block_bytes, 1):
            raise SimulationError(f"scratchpad address {addr} out of range")
        return addr

    def needs_lock(self, block: ThreadBlock, ins: Instruction) -> bool:
        return block.kind is SlotKind.SHARED and self.address(ins) >= self.sharing.boundary

    def scratchpad_access(self, sm: SM, block: ThreadBlock, addr: int) -> Access:
        """Single-request form of the access check: bypass, private region, or lock."""
        if not 0 <= addr < self.sharing.block_bytes:
            raise SimulationError(f"scratchpad address {addr} out of range")
        if block.kind is SlotKind.UNSHARED or addr < self.sharing.boundary:
            return Access.GRANTED
        lock = sm.lock_of(block)
        if lock.holder == block.slot:
            return Access.GRANTED
        if lock.holder is None:
            lock.holder = block.slot
            if block.acquire_cycle is None:
                block.acquire_cycle = self.cycle
            return Access.GRANTED
        return Access.RETRY

    # -- per-cycle machinery -----------------------------------------------

    def _warp_class(self, sm: SM, w: Warp) -> int:
        """0 owner, 1 unshared, 2 non-owner."""
        b = w.block
        if b.kind is SlotKind.UNSHARED:
            return 1
        return 0 if sm.lock_of(b).holder == b.slot else 2

    def _ready(self, sm: SM, w: Warp, cycle: int) -> Optional[bool]:
        """None if not ready; False if ready; True if ready but needs the free lock."""
        if w.at_barrier:
            w.stall = Stall.BARRIER
            return None
        ins = self.code[w.block_label][w.pos]
        rr = w.reg_ready
        regs = ins.srcs if ins.dest is None else ins.srcs + (ins.dest,)
        for r in regs:
            if rr.get(r, 0) > cycle:
                w.stall = Stall.MEMORY if r in w.reg_mem else Stall.DATA
                return None
        if ins.op in (Op.LD_SHARED, Op.ST_SHARED) and self.needs_lock(w.block, ins):
            lock = sm.lock_of(w.block)
            if lock.holder is None:
                w.stall = Stall.NONE
                return True
            if lock.holder != w.block.slot:
                w.stall = Stall.LOCK
                return None
        w.stall = Stall.NONE
        return False

    def _pick(self, sm: SM, sched: int, ready: list[Warp]) -> Optional[Warp]:
        if not ready:
            return None
        policy = self.config.policy
        if policy is Policy.OWF:
            return min(ready, key=lambda w: (self._warp_class(sm, w), w.wid))
        if policy is Policy.UWF:
            rank = {1: 0, 0: 1, 2: 2}
            return min(ready, key=lambda w: (rank[self._warp_class(sm, w)], w.wid))
        last = sm.last_issued[sched]
        if policy is Policy.GTO:
            for w in ready:
                if w.wid == last:
                    return w
            return min(ready, key=lambda w: w.wid)
        # LRR: first ready warp after the last one issued, wrapping around.
        if last is None:
            return min(ready, key=lambda w: w.wid)
        after = [w for w in ready if w.wid > last]
        return min(after or ready, key=lambda w: w.wid)

    def _advance(self, w: Warp, ins: Instruction) -> None:
        label = w.block_label
        if ins.op is Op.BRA:
            w.block_label, w.pos = ins.targets[0], 0
        elif ins.op is Op.BRA_COND:
            w.block_label, w.pos = self._resolve(w, label, ins), 0
        elif w.pos + 1 < len(self.code[label]):
            w.pos += 1
        else:
            w.block_label, w.pos = self.succ[label][0], 0

    def _resolve(self, w: Warp, label: str, ins: Instruction) -> str:
        spec = self.config.branches.get(label)
        n = w.branch_counts.get(label, 0)
        w.branch_counts[label] = n + 1
        if spec is not None and spec.taken is not None:
            taken = n % (spec.taken + 1) < spec.taken
        else:
            taken = w.rng.random() < (spec.p if spec is not None else 0.5)
        return ins.targets[0] if taken else ins.targets[1]

    def _count(self, w: Warp, label: str, ins: Instruction) -> None:
        w.issued += 1
        w.thread_instrs += w.nthreads
        self.warp_issues += 1
        if ins.op is Op.RELSSP:
            self.instr["relssp"] += w.nthreads
        elif label in self.synthetic:
            self.instr["goto"] += w.nthreads
        else:
            self.instr["user"] += w.nthreads

    def _issue(self, sm: SM, w: Warp, cycle: int) -> None:
        label = w.block_label
        ins = self.code[label][w.pos]
        if self.config.record_trace:
            self.trace.append((cycle, sm.index, w.block.bid, w.wid, label, w.pos))
        self._count(w, label, ins)
        block = w.block
        op = ins.op
        if op is Op.EXIT:
            self._retire(sm, w, cycle)
            return
        if ins.dest is not None:
            w.reg_ready[ins.dest] = cycle + self.config.latency[op]
            if op is Op.LD_GLOBAL:
                w.reg_mem.add(ins.dest)
            else:
                w.reg_mem.discard(ins.dest)
        if op is Op.RELSSP:
            if block.release.execute(w.lanes):
                self._unlock(sm, block, cycle)
        self._advance(w, ins)
        if op is Op.BAR_SYNC:
            w.at_barrier = True
            block.barrier_waiting += 1
            self._maybe_release_barrier(block)
        nxt = self.code[w.block_label][w.pos]
        if nxt.op is Op.EXIT and not w.at_barrier:
            self._count(w, w.block_label, nxt)
            self._retire(sm, w, cycle)

    def _maybe_release_barrier(self, block: ThreadBlock) -> None:
        if block.barrier_waiting and block.barrier_waiting == block.live_warps:
            for w in block.warps:
                if w.at_barrier:
                    w.at_barrier = False
                    nxt = self.code[w.block_label][w.pos]
                    if nxt.op is Op.EXIT:
                        # Folded exit after the barrier: retire on the next cycle's issue.
                        pass
            block.barrier_waiting = 0

    def _unlock(self, sm: SM, block: ThreadBlock, cycle: int) -> None:
        lock = sm.lock_of(block)
        if lock is not None and lock.holder == block.slot:
            block.release_cycle = cycle
            sm.events.append((cycle + 1, "release", lock.pair, block.slot))

    def _retire(self, sm: SM, w: Warp, cycle: int) -> None:
        w.done = True
        self.issued_per_warp[(w.block.bid, w.index)] = (w.issued, w.thread_instrs)
        block = w.block
        if block.live_warps == 0:
            self._finish_block(sm, block, cycle)
        else:
            self._maybe_release_barrier(block)

    def _finish_block(self, sm: SM, block: ThreadBlock, cycle: int) -> None:
        block.finish_cycle = cycle
        lock = sm.lock_of(block)
        if lock is not None and lock.holder == block.slot:
            if block.release_cycle is None:
                block.release_cycle = cycle
            partner = sm.slots[block.partner] if block.partner is not None else None
            if partner is not None and not partner.finished and not partner.release.fired:
                sm.events.append((cycle + 1, "transfer", lock.pair, block.slot, partner.slot))
            else:
                sm.events.append((cycle + 1, "release", lock.pair, block.slot))
        for ws in sm.schedulers:
            ws[:] = [x for x in ws if x.block is not block]
        self.records.append(BlockRecord(
            block.bid, sm.index, block.slot, block.kind.value, block.launch,
            block.acquire_cycle, block.release_cycle, cycle, block.lock_wait,
        ))
        self.finished_blocks += 1
        nxt = self.schedule.next_block()
        if nxt is not None:
            sm.events.append((cycle + 1, "launch", nxt, block.slot, block.kind, block.partner))
        else:
            sm.events.append((cycle + 1, "vacate", block.slot))

    def _apply_events(self, sm: SM, cycle: int) -> None:
        due = [e for e in sm.events if e[0] <= cycle]
        if not due:
            return
        sm.events = [e for e in sm.events if e[0] > cycle]
        for e in due:
            kind = e[1]
            if kind == "release":
                lock = sm.locks[e[2]]
                if lock.holder == e[3]:
                    lock.holder = None
            elif kind == "transfer":
                lock = sm.locks[e[2]]
                if lock.holder == e[3]:
                    lock.holder = e[4]
                    partner = sm.slots[e[4]]
                    if partner is not None and partner.acquire_cycle is None:
                        partner.acquire_cycle = cycle
            elif kind == "launch":
                _, _, bid, slot, slot_kind, partner = e
                sm.launch(bid, slot, slot_kind, partner, cycle)
            elif kind == "vacate":
                if sm.slots[e[2]] is not None and sm.slots[e[2]].finished:
                    sm.slots[e[2]] = None

    # -- invariants ----------------------------------------------------------

    def _check(self, sm: SM) -> None:
        plan = self.plan
        waiting_blocks = 0
        empty = 0
        for slot, b in enumerate(sm.slots):
            if b is None or b.finished:
                empty += 1
                continue
            lock = sm.lock_of(b)
            blocked = any(w.stall is Stall.LOCK for w in b.warps if not w.done)
            if blocked:
                waiting_blocks += 1
                if lock is not None and lock.holder == b.slot:
                    raise InvariantViolation(f"owner block {b.bid} waits on its own lock")
        for lock in sm.locks.values():
            if lock.holder is not None:
                holder = sm.slots[lock.holder]
                if sm.pair_of(lock.holder) != lock.pair:
                    raise InvariantViolation(f"lock {lock.pair} held by slot {lock.holder} outside the pair")
                if holder is None or holder.kind is not SlotKind.SHARED:
                    raise InvariantViolation(f"lock {lock.pair} held by a non-shared or empty slot")
        resident = plan.total - empty
        active = resident - waiting_blocks
        if active < plan.default_count - empty:
            raise InvariantViolation(
                f"SM {sm.index} cycle {self.cycle}: only {active} active blocks, "
                f"default {plan.default_count}, {empty} empty slots"
            )

    def _dump(self) -> str:
        lines = [f"cycle {self.cycle}"]
        for sm in self.sms:
            for lock in sm.locks.values():
                lines.append(f"  SM{sm.index} lock{lock.pair}: holder slot {lock.holder}")
            for b in sm.slots:
                if b is None or b.finished:
                    continue
                for w in b.warps:
                    if not w.done:
                        lines.append(
                            f"  SM{sm.index} block {b.bid} slot {b.slot} warp {w.wid}: "
                            f"{w.block_label}[{w.pos}] stalled on {w.stall.value}"
                        )
        return "\n".join(lines)

    # -- main loop -----------------------------------------------------------

    def step_cycle(self) -> bool:
        """Advance one cycle. Returns whether any warp issued."""
        self.cycle += 1
        cycle = self.cycle
        any_issue = False
        for sm in self.sms:
            self._apply_events(sm, cycle)
            picks: list[tuple[int, Warp, bool]] = []
            for s, warps in enumerate(sm.schedulers):
                ready, needs = [], {}
                for w in warps:
                    if w.done:
                        continue
                    r = self._ready(sm, w, cycle)
                    if r is not None:
                        ready.append(w)
                        needs[w.wid] = r
                w = self._pick(sm, s, ready)
                if w is not None:
                    picks.append((s, w, needs[w.wid]))
            # Same-cycle requests for a free lock: lowest slot wins.
            winners: dict[int, int] = {}
            for _, w, needs_lock in picks:
                if needs_lock:
                    pair = sm.pair_of(w.block.slot)
                    winners[pair] = min(winners.get(pair, w.block.slot), w.block.slot)
            issued_here = False
            for s, w, needs_lock in picks:
                if needs_lock:
                    pair = sm.pair_of(w.block.slot)
                    if winners[pair] != w.block.slot:
                        w.stall = Stall.LOCK
                        continue
                    ins = self.code[w.block_label][w.pos]
                    assert self.scratchpad_access(sm, w.block, self.address(ins)) is Access.GRANTED
                sm.last_issued[s] = w.wid
                self._issue(sm, w, cycle)
                issued_here = True
            for b in sm.slots:
                if b is not None and not b.finished and any(w.stall is Stall.LOCK for w in b.warps if not w.done):
                    b.lock_wait += 1
                    self.lock_wait_total += 1
            if issued_here:
                sm.busy += 1
                any_issue = True
            if self.config.check_invariants:
                self._check(sm)
        return any_issue

    def _next_wakeup(self) -> Optional[int]:
        """Earliest future cycle at which a stalled warp's operands become ready."""
        best = None
        for sm in self.sms:
            if sm.events:
                return self.cycle + 1
            for warps in sm.schedulers:
                for w in warps:
                    if w.done or w.at_barrier or w.stall not in (Stall.DATA, Stall.MEMORY):
                        continue
                    ins = self.code[w.block_label][w.pos]
                    regs = ins.srcs if ins.dest is None else ins.srcs + (ins.dest,)
                    t = max(w.reg_ready.get(r, 0) for r in regs)
                    if best is None or t < best:
                        best = t
        return best

    @property
    def done(self) -> bool:
        return self.finished_blocks == self.num_blocks

    def run(self) -> RunReport:
        max_cycles = self.config.max_cycles
        while not self.done:
            if self.cycle >= max_cycles:
                raise NonTermination(f"simulation exceeded {max_cycles} cycles", self._dump())
            issued = self.step_cycle()
            if issued or self.done:
                continue
            wake = self._next_wakeup()
            if wake is None:
                raise NonTermination("no warp can ever issue again (deadlock)", self._dump())
            skip = min(wake, max_cycles) - self.cycle - 1
            if skip > 0:
                for sm in self.sms:
                    for b in sm.slots:
                        if b is not None and not b.finished and any(
                            w.stall is Stall.LOCK for w in b.warps if not w.done
                        ):
                            b.lock_wait += skip
                            self.lock_wait_total += skip
                self.cycle += skip
        cycles = self.cycle
        busy = sum(sm.busy for sm in self.sms)
        return RunReport(
            cycles=cycles,
            warp_issues=self.warp_issues,
            instr_user=self.instr["user"],
            instr_relssp=self.instr["relssp"],
            instr_goto=self.instr["goto"],
            busy_cycles=busy,
            stall_cycles=cycles * len(self.sms) - busy,
            lock_wait_cycles=self.lock_wait_total,
            num_sms=len(self.sms),
            blocks=sorted(self.records, key=lambda r: r.bid),
            issued_per_warp=dict(self.issued_per_warp),
            trace=list(self.trace),
        )


def simulate(
    kernel: KernelCFG,
    offsets: dict[str, int],
    sharing: SharingConfig,
    plan: BlockPlan,
    num_blocks: int,
    block_size: int,
    config: SimConfig,
) -> RunReport:
    return Simulator(kernel, offsets, sharing, plan, num_blocks, block_size, config).run()


def owf_order(classes: Iterable[tuple[int, str]]) -> list[int]:
    """Sort ``(warp_id, kind)`` pairs into OWF issue priority; kind is owner/unshared/non-owner."""
    rank = {"owner": 0, "unshared": 1, "non-owner": 2}
    return [wid for wid, _ in sorted(classes, key=lambda c: (rank[c[1]], c[0]))]
