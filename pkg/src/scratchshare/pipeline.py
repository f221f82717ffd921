"""End-to-end driver: parse, normalize, analyze, allocate, place, plan, simulate."""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from .alloc import SharingConfig, declaration_layout, select_shared_set, shared_set_of_layout
from .dataflow import DEFAULT_LOOP_WEIGHT, compute_access_facts
from .ir import KernelCFG, Op, parse_kernel
from .launch import BlockPlan, HardwareConfig, compute_block_plan, default_block_count, fill_boundary
from .relssp import Strategy, place
from .sim import LatencyModel, Policy, RunReport, SimConfig, simulate

SCHEMA_VERSION = 1
SEED_ENV = "SCRATCHSHARE_SEED"


class PipelineError(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class Mode:
    name: str
    sharing: bool
    policy: Policy
    optimized_layout: bool
    placement: Strategy


MODES = {
    m.name: m
    for m in (
        Mode("unshared-lrr", False, Policy.LRR, False, Strategy.NONE),
        Mode("unshared-gto", False, Policy.GTO, False, Strategy.NONE),
        Mode("shared-noopt", True, Policy.LRR, False, Strategy.NONE),
        Mode("shared-owf", True, Policy.OWF, False, Strategy.NONE),
        Mode("shared-owf-postdom", True, Policy.OWF, True, Strategy.POSTDOM),
        Mode("shared-owf-opt", True, Policy.OWF, True, Strategy.OPT),
    )
}


@dataclass
class RunConfig:
    """Everything a simulation run needs besides the kernel and the mode."""

    hw: HardwareConfig = field(default_factory=HardwareConfig)
    t: Fraction = Fraction(1, 10)
    blocks: int = 56
    threads_per_block: int = 256
    seed: int = 0
    latencies: dict = field(default_factory=dict)
    branches: dict = field(default_factory=dict)
    active_threads: Optional[int] = None
    max_cycles: int = 5_000_000
    placement: Optional[str] = None
    fill: bool = False
    loop_weight: int = DEFAULT_LOOP_WEIGHT
    strict_alloc: bool = False
    check_invariants: bool = False

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "hw" in data:
            data["hw"] = HardwareConfig(**data["hw"])
        if "t" in data:
            data["t"] = Fraction(str(data["t"]))
        cfg = cls(**data)
        if cfg.placement is not None:
            Strategy(cfg.placement)
        return cfg

    def to_json(self) -> dict:
        d = asdict(self)
        d["t"] = str(self.t)
        return d


def load_config(path: str | os.PathLike | None, *, env: Optional[dict] = None) -> RunConfig:
    """Read a JSON or TOML run config; ``SCRATCHSHARE_SEED`` in ``env`` overrides the seed."""
    env = os.environ if env is None else env
    data: dict = {}
    if path is not None:
        p = Path(path)
        if p.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            data = tomllib.loads(p.read_text())
        else:
            data = json.loads(p.read_text())
    cfg = RunConfig.from_dict(data)
    if env.get(SEED_ENV):
        cfg.seed = int(env[SEED_ENV])
    return cfg


def kernel_hash(source: str) -> str:
    return hashlib.sha256(source.encode()).hexdigest()


@dataclass(frozen=True)
class PreparedRun:
    """The transformed kernel and the launch decisions for one mode."""

    kernel: KernelCFG
    offsets: dict
    sharing: SharingConfig
    plan: BlockPlan
    shared: frozenset
    placement: Strategy


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(name, exc) from exc


def prepare(source: str, config: RunConfig, mode: str | Mode) -> PreparedRun:
    mode = MODES[mode] if isinstance(mode, str) else mode
    cfg = _stage("parse", parse_kernel, source)
    hw = config.hw
    block_bytes = cfg.scratchpad_bytes
    sharing = _stage("plan", SharingConfig, hw.scratchpad_per_sm, block_bytes, config.t)
    if not mode.sharing:
        default = _stage("plan", default_block_count, hw, block_bytes, config.threads_per_block)
        if default < 1:
            raise PipelineError("plan", ValueError("no block fits in an SM"))
        plan = BlockPlan(default, 0, default)
        return PreparedRun(cfg, declaration_layout(cfg), sharing, plan, frozenset(), Strategy.NONE)

    plan = _stage("plan", compute_block_plan, hw, sharing, config.threads_per_block)
    if config.fill and plan.pairs:
        sharing = SharingConfig(hw.scratchpad_per_sm, block_bytes, config.t,
                                boundary_override=fill_boundary(hw, sharing, plan))
    strategy = Strategy(config.placement) if config.placement is not None else mode.placement
    if mode.optimized_layout:
        facts = _stage("analyze", compute_access_facts, cfg)
        choice = _stage("allocate", select_shared_set, cfg, facts, sharing,
                        loop_weight=config.loop_weight, strict=config.strict_alloc)
        offsets, shared = choice.offsets, choice.shared
    else:
        offsets = declaration_layout(cfg)
        shared = shared_set_of_layout(cfg, offsets, sharing.boundary)
    if not plan.pairs:
        # No block ever shares, so relssp would only add instructions.
        strategy = Strategy.NONE
    kernel = _stage("place", place, cfg, shared, strategy)
    return PreparedRun(kernel, offsets, sharing, plan, shared, strategy)


def sim_config(config: RunConfig, policy: Policy) -> SimConfig:
    return SimConfig(
        hw=config.hw,
        policy=policy,
        latency=LatencyModel({Op(k): v for k, v in config.latencies.items()}),
        seed=config.seed,
        branches=config.branches,
        active_threads=config.active_threads,
        max_cycles=config.max_cycles,
        check_invariants=config.check_invariants,
    )


def run_source(source: str, config: RunConfig, mode: str, *, kernel_name: str = "") -> dict:
    """Run one mode on kernel text and return the JSON-ready report."""
    m = MODES[mode]
    prep = prepare(source, config, m)
    report = _stage(
        "simulate", simulate, prep.kernel, prep.offsets, prep.sharing, prep.plan,
        config.blocks, config.threads_per_block, sim_config(config, m.policy),
    )
    return report_to_json(report, prep, config, m, kernel_name or prep.kernel.name, kernel_hash(source))


def run_pipeline(kernel_path: str | os.PathLike, config_path: str | os.PathLike | None, mode: str) -> dict:
    if mode not in MODES:
        raise PipelineError("config", ValueError(f"unknown mode {mode!r}; choose from {sorted(MODES)}"))
    source = Path(kernel_path).read_text()
    config = _stage("config", load_config, config_path)
    return run_source(source, config, mode, kernel_name=Path(kernel_path).stem)


def run_modes(source: str, config: RunConfig, modes, *, jobs: int = 1, kernel_name: str = "") -> list[dict]:
    """Run several modes, possibly in parallel; results come back sorted by mode name."""
    modes = sorted(set(modes))
    if jobs <= 1:
        results = [run_source(source, config, m, kernel_name=kernel_name) for m in modes]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda m: run_source(source, config, m, kernel_name=kernel_name), modes))
    return results


def report_to_json(report: RunReport, prep: PreparedRun, config: RunConfig, mode: Mode,
                   kernel_name: str, khash: str) -> dict:
    ipc = report.ipc
    return {
        "schema": SCHEMA_VERSION,
        "kernel": kernel_name,
        "kernel_hash": khash,
        "mode": mode.name,
        "policy": mode.policy.value,
        "placement": prep.placement.value,
        "config": config.to_json(),
        "plan": {
            **prep.plan.to_json(),
            "boundary": prep.sharing.boundary,
            "block_bytes": prep.sharing.block_bytes,
            "shared": sorted(prep.shared),
            "offsets": dict(prep.offsets),
        },
        "cycles": report.cycles,
        "ipc": {"num": ipc.numerator, "den": ipc.denominator, "value": float(ipc)},
        "busy_cycles": report.busy_cycles,
        "stall_cycles": report.stall_cycles,
        "instructions": {
            "user": report.instr_user,
            "relssp": report.instr_relssp,
            "goto": report.instr_goto,
            "total": report.instructions,
        },
        "warp_issues": report.warp_issues,
        "lock_wait_cycles": report.lock_wait_cycles,
        "phases": report.phase_breakdown(),
    }
