"""Scratchpad sharing between GPU thread-block pairs: compiler passes and a cycle-level SM model."""

from .alloc import SharingConfig, SharingPlan, select_shared_set
from .dataflow import access_range_of_set, compute_access_facts
from .ir import KernelCFG, format_kernel, parse_kernel
from .launch import BlockPlan, HardwareConfig, compute_block_plan, overhead_bits
from .pipeline import MODES, RunConfig, load_config, run_pipeline, run_source
from .relssp import Strategy, place
from .sim import Policy, SimConfig, simulate

__all__ = [
    "BlockPlan", "HardwareConfig", "KernelCFG", "MODES", "Policy", "RunConfig", "SharingConfig",
    "SharingPlan", "SimConfig", "Strategy", "access_range_of_set", "compute_access_facts",
    "compute_block_plan", "format_kernel", "load_config", "overhead_bits", "parse_kernel", "place",
    "run_pipeline", "run_source", "select_shared_set", "simulate",
]
