"""Shared/unshared scratchpad layout.

Each block of a sharing pair owns the low ``boundary`` bytes of its
scratchpad privately; addresses at or above the boundary live in the region
the pair contends for. The allocator picks which variables go high (the
shared set) so that the shared region is live for as few instructions as
possible.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .dataflow import DEFAULT_LOOP_WEIGHT, AccessFacts, access_range_of_set
from .ir import KernelCFG

MAX_VARIABLES = 16


class AllocationError(Exception):
    pass


class InfeasiblePackingError(AllocationError):
    pass


def as_fraction(t) -> Fraction:
    if isinstance(t, Fraction):
        return t
    if isinstance(t, str):
        return Fraction(t)
    return Fraction(t).limit_denominator(1_000_000)


@dataclass(frozen=True)
class SharingConfig:
    """Scratchpad sizes and the sharing threshold ``t``.

    ``boundary`` is the first shared byte address. It defaults to
    ``ceil(t * block_bytes)`` so that the integer test ``addr < boundary``
    agrees with ``addr < t * block_bytes``; ``boundary_override`` replaces it
    (used by fill-mode layouts).
    """

    sm_bytes: int
    block_bytes: int
    t: Fraction = Fraction(1, 10)
    boundary_override: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "t", as_fraction(self.t))
        if not 0 < self.t < 1:
            raise ValueError(f"threshold t must lie in (0, 1), got {self.t}")
        if self.block_bytes < 0 or self.sm_bytes <= 0:
            raise ValueError("scratchpad sizes must be positive")
        if self.block_bytes > self.sm_bytes:
            raise AllocationError(
                f"block needs {self.block_bytes} bytes of scratchpad but the SM has {self.sm_bytes}"
            )
        if self.boundary_override is not None and not 0 <= self.boundary_override <= self.block_bytes:
            raise ValueError("boundary override must lie within the block's scratchpad")

    @property
    def shared_fraction(self) -> Fraction:
        return 1 - self.t

    @property
    def boundary(self) -> int:
        if self.boundary_override is not None:
            return self.boundary_override
        return math.ceil(self.t * self.block_bytes)

    @property
    def unshared_capacity(self) -> int:
        return self.boundary

    @property
    def shared_capacity(self) -> int:
        return self.block_bytes - self.boundary

    @property
    def pair_bytes(self) -> int:
        """Scratchpad footprint of one sharing pair."""
        return self.block_bytes + self.boundary


class Region(enum.Enum):
    UNSHARED = "unshared"
    SHARED = "shared"


def classify_address(addr: int, config: SharingConfig) -> Region:
    if not 0 <= addr < config.block_bytes:
        raise ValueError(f"scratchpad address {addr} outside [0, {config.block_bytes})")
    return Region.UNSHARED if addr < config.boundary else Region.SHARED


@dataclass(frozen=True)
class SharingPlan:
    shared: frozenset[str]
    offsets: dict[str, int]
    boundary: int
    count: int
    subset_counts: dict[tuple[str, ...], int] = field(default_factory=dict, compare=False)

    def address(self, var: str, offset: int) -> int:
        return self.offsets[var] + offset

    def to_json(self) -> dict:
        return {
            "shared": sorted(self.shared),
            "boundary": self.boundary,
            "offsets": dict(self.offsets),
            "count": self.count,
            "subset_counts": {",".join(k) if k else "": v for k, v in self.subset_counts.items()},
        }


def layout(cfg: KernelCFG, shared: frozenset[str], boundary: int) -> dict[str, int]:
    """Unshared variables packed from 0 upward, shared ones packed to end at ``R_tb``.

    Both groups keep declaration order and no padding is inserted.
    """
    total = cfg.scratchpad_bytes
    offsets = {}
    pos = 0
    for v in cfg.variables:
        if v.name not in shared:
            offsets[v.name] = pos
            pos += v.size_bytes
    if pos > boundary:
        raise InfeasiblePackingError(
            f"unshared variables need {pos} bytes but only {boundary} lie below the boundary"
        )
    pos = total - sum(v.size_bytes for v in cfg.variables if v.name in shared)
    for v in cfg.variables:
        if v.name in shared:
            offsets[v.name] = pos
            pos += v.size_bytes
    return offsets


def declaration_layout(cfg: KernelCFG) -> dict[str, int]:
    """Offsets in plain declaration order, as an untransformed kernel would use."""
    offsets, pos = {}, 0
    for v in cfg.variables:
        offsets[v.name] = pos
        pos += v.size_bytes
    return offsets


def shared_set_of_layout(cfg: KernelCFG, offsets: dict[str, int], boundary: int) -> frozenset[str]:
    """Variables with at least one byte at or above the boundary."""
    return frozenset(v.name for v in cfg.variables if offsets[v.name] + v.size_bytes > boundary)


def _feasible(sizes: dict[str, int], subset, config: SharingConfig, strict: bool) -> bool:
    in_s = sum(sizes[v] for v in subset)
    out_s = sum(sizes.values()) - in_s
    if strict:
        return in_s <= config.shared_capacity and out_s <= config.unshared_capacity
    return out_s <= config.unshared_capacity


def select_shared_set(
    cfg: KernelCFG,
    facts: AccessFacts,
    config: SharingConfig,
    *,
    loop_weight: int = DEFAULT_LOOP_WEIGHT,
    strict: bool = False,
) -> SharingPlan:
    """Pick the shared set with the smallest weighted access range.

    A subset is feasible when the variables left out of it fit below the
    boundary. With ``strict`` the subset must also fit in the shared
    capacity, which together forces its size to equal the shared capacity
    exactly. Ties go to fewer variables, then to the lexicographically
    smallest sorted name tuple.
    """
    names = cfg.var_names
    if len(names) > MAX_VARIABLES:
        raise AllocationError(f"{len(names)} scratchpad variables exceeds the limit of {MAX_VARIABLES}")
    if cfg.scratchpad_bytes != config.block_bytes:
        raise AllocationError(
            f"variables total {cfg.scratchpad_bytes} bytes but the config says {config.block_bytes}"
        )
    sizes = {v.name: v.size_bytes for v in cfg.variables}
    subset_counts: dict[tuple[str, ...], int] = {}
    best = None
    for k in range(len(names) + 1):
        for subset in itertools.combinations(sorted(names), k):
            if not _feasible(sizes, subset, config, strict):
                continue
            count = access_range_of_set(cfg, facts, subset, loop_weight).count if subset else 0
            subset_counts[subset] = count
            key = (count, len(subset), subset)
            if best is None or key < best:
                best = key
    if best is None:
        shared_total = config.shared_capacity
        unshared_total = config.unshared_capacity
        raise InfeasiblePackingError(
            "no subset of "
            f"{sorted(sizes.items())} fills exactly the {shared_total}-byte shared region "
            f"while leaving at most {unshared_total} bytes below the boundary"
        )
    count, _, subset = best
    shared = frozenset(subset)
    return SharingPlan(shared, layout(cfg, shared, config.boundary), config.boundary, count, subset_counts)
