"""Resident-block planning and round-robin block distribution across SMs."""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

from .alloc import SharingConfig


class LaunchError(Exception):
    pass


@dataclass(frozen=True)
class HardwareConfig:
    """SM resources; the defaults follow the usual GPGPU-Sim Fermi-class setup."""

    num_sms: int = 14
    sms_per_cluster: int = 1
    scratchpad_per_sm: int = 16384
    max_blocks_per_sm: int = 16
    max_threads_per_sm: int = 3072
    warp_size: int = 32
    schedulers_per_sm: int = 4

    def __post_init__(self):
        for name in ("num_sms", "sms_per_cluster", "scratchpad_per_sm", "max_blocks_per_sm",
                     "max_threads_per_sm", "warp_size", "schedulers_per_sm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_threads_per_sm % self.warp_size:
            raise ValueError("max_threads_per_sm must be a multiple of warp_size")

    @property
    def max_warps_per_sm(self) -> int:
        return self.max_threads_per_sm // self.warp_size


class SlotKind(enum.Enum):
    UNSHARED = "unshared"
    SHARED = "shared"


@dataclass(frozen=True)
class BlockPlan:
    """How many blocks an SM hosts: ``pairs`` sharing pairs plus ``unshared`` singles.

    Slots ``0 .. pairs+unshared-1`` are the base slots; slot ``pairs+unshared+i``
    is the partner of base slot ``i``.
    """

    default_count: int
    pairs: int
    unshared: int

    @property
    def total(self) -> int:
        return 2 * self.pairs + self.unshared

    @property
    def base(self) -> int:
        return self.pairs + self.unshared

    def partner(self, slot: int) -> int | None:
        if slot < self.pairs:
            return self.base + slot
        if self.base <= slot < self.total:
            return slot - self.base
        return None

    def slot_kind(self, slot: int) -> SlotKind:
        return SlotKind.SHARED if self.partner(slot) is not None else SlotKind.UNSHARED

    def pairing(self) -> dict[int, int | None]:
        return {s: self.partner(s) for s in range(self.total)}

    @property
    def sharing_enabled(self) -> bool:
        return self.pairs > 0

    def to_json(self) -> dict:
        return {
            "default": self.default_count,
            "pairs": self.pairs,
            "unshared": self.unshared,
            "total": self.total,
            "pairing": {str(k): v for k, v in self.pairing().items()},
        }


def default_block_count(hw: HardwareConfig, block_bytes: int, block_size: int) -> int:
    by_mem = hw.scratchpad_per_sm // block_bytes if block_bytes else hw.max_blocks_per_sm
    return min(by_mem, hw.max_blocks_per_sm, hw.max_threads_per_sm // block_size)


def fits(hw: HardwareConfig, sharing: SharingConfig, block_size: int, pairs: int, unshared: int) -> bool:
    total = 2 * pairs + unshared
    return (
        pairs * sharing.pair_bytes + unshared * sharing.block_bytes <= hw.scratchpad_per_sm
        and total * block_size <= hw.max_threads_per_sm
        and total <= hw.max_blocks_per_sm
    )


def compute_block_plan(hw: HardwareConfig, sharing: SharingConfig, block_size: int) -> BlockPlan:
    """Largest resident-block count that keeps at least the default number of blocks active.

    Among plans where ``pairs + unshared`` is at least the unshared default
    (at most one block per pair can be waiting), maximize ``2*pairs +
    unshared`` and then ``pairs``.
    """
    if sharing.block_bytes > hw.scratchpad_per_sm:
        raise LaunchError(
            f"kernel needs {sharing.block_bytes} bytes of scratchpad per block; SM has {hw.scratchpad_per_sm}"
        )
    if not 0 < block_size <= hw.max_threads_per_sm:
        raise LaunchError(f"block size {block_size} does not fit in an SM")
    default = default_block_count(hw, sharing.block_bytes, block_size)
    best = None
    for pairs in range(hw.max_blocks_per_sm // 2 + 1):
        if pairs and sharing.block_bytes == 0:
            break
        for unshared in range(max(default - pairs, 0), hw.max_blocks_per_sm + 1):
            if not fits(hw, sharing, block_size, pairs, unshared):
                break
            key = (2 * pairs + unshared, pairs)
            if best is None or key > best[0]:
                best = (key, pairs, unshared)
    if best is None:
        return BlockPlan(default, 0, default)
    _, pairs, unshared = best
    return BlockPlan(default, pairs, unshared)


def fill_boundary(hw: HardwareConfig, sharing: SharingConfig, plan: BlockPlan) -> int:
    """Boundary after spreading leftover SM scratchpad over the pairs' private parts.

    Each pair occupies ``R_tb + boundary`` bytes, so the largest boundary
    that still fits is ``floor((R - U*R_tb) / P) - R_tb``.
    """
    if plan.pairs == 0:
        return sharing.boundary
    room = (hw.scratchpad_per_sm - plan.unshared * sharing.block_bytes) // plan.pairs - sharing.block_bytes
    return min(max(room, sharing.boundary), sharing.block_bytes)


def overhead_bits(hw: HardwareConfig | None = None, *, T: int | None = None, W: int | None = None,
                  N: int = 1) -> int:
    """Extra storage for sharing: the SM flag, partner table, owner-warp bits and pair locks.

    ``(1 + T*ceil(log2(T+1)) + W + floor(T/2)*ceil(log2 T)) * N``
    """
    if hw is not None:
        T, W, N = hw.max_blocks_per_sm, hw.max_warps_per_sm, hw.num_sms
    if T is None or W is None or T < 1 or W < 1:
        raise ValueError("T and W must be positive")
    per_sm = 1 + T * math.ceil(math.log2(T + 1)) + W + (T // 2) * math.ceil(math.log2(T))
    return per_sm * N


@dataclass(frozen=True)
class SlotAssignment:
    block_id: int
    slot: int
    kind: SlotKind
    partner_slot: int | None


@dataclass
class LaunchSchedule:
    """Initial per-SM residents plus the FIFO of blocks launched as slots free up."""

    initial: list[list[SlotAssignment]]
    pending: deque = field(default_factory=deque)

    def next_block(self) -> int | None:
        return self.pending.popleft() if self.pending else None

    @property
    def drained(self) -> bool:
        return not self.pending


def assign_blocks_to_sms(num_blocks: int, plan: BlockPlan, hw: HardwareConfig) -> LaunchSchedule:
    """SM ``i`` initially gets blocks ``i, p+i, 2p+i, ...`` in slot order.

    A shared slot whose partner slot received no block runs unshared. Blocks
    beyond the initial wave wait in ``pending`` and inherit the status of the
    slot they replace.
    """
    if num_blocks < 1:
        raise ValueError("a kernel launches at least one block")
    p = hw.num_sms
    initial: list[list[SlotAssignment]] = []
    launched = set()
    for i in range(p):
        filled = {}
        for slot in range(plan.total):
            bid = slot * p + i
            if bid < num_blocks:
                filled[slot] = bid
                launched.add(bid)
        row = []
        for slot, bid in sorted(filled.items()):
            partner = plan.partner(slot)
            if partner is not None and partner not in filled:
                row.append(SlotAssignment(bid, slot, SlotKind.UNSHARED, None))
            else:
                row.append(SlotAssignment(bid, slot, plan.slot_kind(slot), partner))
        initial.append(row)
    pending = deque(b for b in range(num_blocks) if b not in launched)
    return LaunchSchedule(initial, pending)
