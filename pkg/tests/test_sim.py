import dataclasses
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfggen import random_sim_case
from scratchshare.alloc import SharingConfig
from scratchshare.ir import Op, parse_kernel
from scratchshare.launch import BlockPlan, HardwareConfig
from scratchshare.pipeline import load_config, run_source
from scratchshare.sim import (
    Access,
    BranchSpec,
    LatencyModel,
    NonTermination,
    ReleaseUnit,
    SimConfig,
    Simulator,
    owf_order,
    simulate,
)

ROOT = Path(__file__).resolve().parent.parent
KERNELS = ROOT / "kernels"


def run(src, *, num_blocks=1, block_size=32, plan=None, boundary=0, schedulers=1, sms=1, **kw):
    kernel = parse_kernel(src)
    plan = plan or BlockPlan(1, 0, 1)
    sharing = SharingConfig(1 << 20, max(kernel.scratchpad_bytes, 1), Fraction(1, 2), boundary_override=boundary)
    offsets = {}
    pos = 0
    for v in kernel.variables:
        offsets[v.name] = pos
        pos += v.size_bytes
    kw.setdefault("record_trace", True)
    kw.setdefault("check_invariants", True)
    config = SimConfig(hw=HardwareConfig(num_sms=sms, schedulers_per_sm=schedulers), **kw)
    sim = Simulator(kernel, offsets, sharing, plan, num_blocks, block_size, config)
    return sim, sim.run()


def issue_cycles(report, bid):
    return [c for c, _, b, *_ in report.trace if b == bid]


TRACE = (KERNELS / "warp_trace.kir").read_text()
TRACE_SETUP = dict(
    num_blocks=3, plan=BlockPlan(2, 1, 1), boundary=32, initial_owner_slots=(0,),
    latency=LatencyModel({Op.LD_SHARED: 5}),
)
# Slot 0 holds the owner O, slot 1 the unshared U, slot 2 the non-owner N.
O, U, N = 0, 1, 2


def test_trace_unshared_first():
    _, r = run(TRACE, policy="uwf", **TRACE_SETUP)
    assert issue_cycles(r, U) == [1, 2, 7]
    assert issue_cycles(r, O) == [3, 4, 9]
    assert issue_cycles(r, N) == [5, 10, 15]
    assert r.finish_cycle(N) == 15


def test_trace_owner_first():
    _, r = run(TRACE, policy="owf", **TRACE_SETUP)
    assert issue_cycles(r, O) == [1, 2, 7]
    assert issue_cycles(r, U) == [3, 4, 9]
    assert issue_cycles(r, N) == [5, 8, 13]
    assert (r.finish_cycle(U), r.finish_cycle(N)) == (9, 13)
    # N is denied at 6 and 7 while O still holds the lock.
    assert r.lock_wait_cycles == 2


def test_exit_only_kernel_costs_one_cycle_per_warp():
    _, r = run("b:\n  exit\n", num_blocks=1, block_size=96)
    assert r.cycles == 3
    assert r.instructions == 96


ADDS = "b:\n" + "  add r1, r2, r3\n" * 6 + "  exit\n"


def test_lrr_rotates_over_ready_warps():
    _, r = run(ADDS, block_size=96, policy="lrr")
    assert [w for _, _, _, w, *_ in r.trace][:6] == [0, 1, 2, 0, 1, 2]


GTO_KERNEL = "b:\n  add r4, r5, r5\n  add r4, r4, r5\n  ld.global r1, [r2]\n  add r3, r1, r1\n  exit\n"


def test_gto_sticks_with_a_warp_until_it_stalls():
    _, r = run(GTO_KERNEL, block_size=96, policy="gto", latency=LatencyModel({Op.LD_GLOBAL: 10}))
    order = [(c, w) for c, _, _, w, *_ in r.trace]
    assert order == [(1, 0), (2, 0), (3, 0), (4, 1), (5, 1), (6, 1), (7, 2), (8, 2), (9, 2),
                     (13, 0), (16, 1), (19, 2)]
    assert r.cycles == 19
    assert r.stall_cycles == 19 - 12


def test_lrr_on_same_kernel():
    _, r = run(GTO_KERNEL, block_size=96, policy="lrr", latency=LatencyModel({Op.LD_GLOBAL: 10}))
    assert [w for _, _, _, w, *_ in r.trace] == [0, 1, 2] * 4
    assert r.cycles == 19


def test_owf_priority_order():
    assert owf_order([(0, "non-owner"), (1, "unshared"), (5, "owner")]) == [5, 1, 0]
    assert owf_order([(3, "unshared"), (1, "unshared"), (2, "unshared")]) == [1, 2, 3]


@pytest.mark.parametrize("policy", ["lrr", "gto", "owf", "uwf"])
def test_single_warp_is_policy_independent(policy):
    _, r = run(GTO_KERNEL, policy=policy, latency=LatencyModel({Op.LD_GLOBAL: 10}))
    assert r.cycles == 13


def test_release_unit_waits_for_every_active_thread():
    unit = ReleaseUnit((1 << 64) - 1)
    assert not unit.execute((1 << 32) - 1)
    assert unit.count == 32
    assert unit.execute(((1 << 32) - 1) << 32)
    assert not unit.execute((1 << 64) - 1)  # fires once per residency


def test_release_unit_ignores_inactive_threads():
    unit = ReleaseUnit((1 << 16) - 1)
    assert unit.execute((1 << 32) - 1)
    assert unit.count == 16


SHARED_THEN_WORK = """
.shared A 64
b:
    ld.shared r1, A[32]
    relssp
    add r2, r1, r1
    add r2, r2, r1
    add r2, r2, r1
    exit
"""


def test_same_cycle_requests_lowest_slot_wins():
    sim, r = run(TRACE, num_blocks=2, plan=BlockPlan(1, 1, 0), boundary=32, schedulers=2, policy="lrr")
    # Both request at cycle 2 and slot 0 wins; slot 1 retries until the owner finishes
    # at cycle 3 and hands over the lock.
    assert issue_cycles(r, 0) == [1, 2, 3]
    assert issue_cycles(r, 1) == [1, 4, 5]
    rec = {b.bid: b for b in r.blocks}
    assert rec[0].acquire == 2 and rec[1].acquire == 4
    assert rec[1].lock_wait == 2


def test_non_owner_proceeds_after_relssp():
    _, r = run(SHARED_THEN_WORK, num_blocks=2, plan=BlockPlan(1, 1, 0), boundary=32, schedulers=2)
    # Owner releases at cycle 2; the lock is free from cycle 3.
    assert issue_cycles(r, 1)[0] == 3
    rec = {b.bid: b for b in r.blocks}
    assert rec[0].release == 2
    assert rec[0].phases == (0, 2, 3)


def test_multiwarp_block_releases_after_last_warp():
    _, r = run(SHARED_THEN_WORK, num_blocks=2, block_size=64, plan=BlockPlan(1, 1, 0), boundary=32,
               schedulers=1, policy="lrr")
    rec = {b.bid: b for b in r.blocks}
    # The owner's warps issue ld, ld, relssp, relssp while the partner's warps are blocked;
    # the gate opens with the second relssp at cycle 4.
    assert [w for _, _, _, w, *_ in r.trace[:4]] == [0, 1, 0, 1]
    assert rec[0].release == 4
    assert min(issue_cycles(r, 1)) == 5


def test_masked_threads_count_and_release():
    _, r = run(SHARED_THEN_WORK, num_blocks=2, plan=BlockPlan(1, 1, 0), boundary=32, schedulers=2,
               active_threads=16)
    assert r.instructions == 2 * 16 * 6
    assert {b.bid: b.release for b in r.blocks}[0] == 2


def test_access_check_paths():
    from scratchshare.launch import SlotKind
    from scratchshare.sim import SimulationError, ThreadBlock

    sim, _ = run(TRACE, num_blocks=2, plan=BlockPlan(1, 1, 0), boundary=32, schedulers=2)
    sm = sim.sms[0]
    a = ThreadBlock(10, 0, SlotKind.SHARED, 1, 1)
    b = ThreadBlock(11, 1, SlotKind.SHARED, 0, 1)
    lone = ThreadBlock(12, 0, SlotKind.UNSHARED, None, 1)
    # The last release of the finished run is still queued for the next cycle.
    sm.lock_of(a).holder = None
    # Below the boundary and unshared blocks never touch the lock.
    assert sim.scratchpad_access(sm, b, 8) is Access.GRANTED
    assert sim.scratchpad_access(sm, lone, 40) is Access.GRANTED
    assert sm.lock_of(a).holder is None
    assert sim.scratchpad_access(sm, a, 40) is Access.GRANTED
    assert sm.lock_of(a).holder == 0
    assert sim.scratchpad_access(sm, b, 40) is Access.RETRY
    assert sim.scratchpad_access(sm, a, 48) is Access.GRANTED
    with pytest.raises(SimulationError):
        sim.scratchpad_access(sm, a, 64)


def test_barrier_waits_for_all_live_warps():
    src = "b:\n  ld.global r1, [r2]\n  add r3, r1, r1\n  bar.sync\n  add r4, r4, r4\n  exit\n"
    _, r = run(src, block_size=64, latency=LatencyModel({Op.LD_GLOBAL: 20}))
    # Warp 0: ld@1, add@21, bar@22; warp 1: ld@2, add@22 loses to ... then bar; both resume after.
    bars = [c for c, _, _, w, label, pos in r.trace if pos == 2]
    after = [c for c, _, _, w, label, pos in r.trace if pos == 3]
    assert min(after) > max(bars)


def test_branch_trip_counts():
    src = "e:\n  mov r1, r0\nl:\n  add r1, r1, r1\n  bra.cond r1, l, x\nx:\n  exit\n"
    _, r = run(src, branches={"l": {"taken": 3}})
    adds = sum(1 for *_, label, pos in r.trace if label == "l" and pos == 0)
    assert adds == 4
    assert BranchSpec.from_json(5).taken == 5


def test_cycle_guard_reports_blocked_state():
    src = "e:\n  mov r1, r0\nl:\n  add r1, r1, r1\n  bra.cond r1, l, x\nx:\n  exit\n"
    with pytest.raises(NonTermination) as info:
        run(src, branches={"l": {"p": 1.0}}, max_cycles=300)
    assert "block 0" in info.value.dump


def test_latency_model_validation():
    with pytest.raises(ValueError):
        LatencyModel({Op.ADD: 0})
    assert LatencyModel()[Op.LD_GLOBAL] == 400


def test_determinism_and_conservation():
    case = random_sim_case(11)
    a = simulate(*case)
    b = simulate(*case)
    assert a == b
    assert sum(t for _, t in a.issued_per_warp.values()) == a.instructions
    assert sum(i for i, _ in a.issued_per_warp.values()) == a.warp_issues
    assert a.busy_cycles + a.stall_cycles == a.cycles * a.num_sms
    assert a.ipc * a.cycles == a.instructions


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_random_sharing_runs_keep_invariants(seed):
    case = random_sim_case(seed)
    r = simulate(*case)
    num_blocks = case[4]
    assert len(r.blocks) == num_blocks
    assert r.busy_cycles + r.stall_cycles == r.cycles * r.num_sms
    for rec in r.blocks:
        assert sum(rec.phases) == rec.finish - rec.launch + 1
        if rec.kind == "unshared":
            assert rec.acquire is None


def _pipeline(kernel, config, mode, **overrides):
    cfg = load_config(ROOT / "configs" / config, env={})
    cfg = dataclasses.replace(cfg, **overrides)
    return run_source((KERNELS / kernel).read_text(), cfg, mode)


def test_untouched_shared_set_keeps_pairs_fully_concurrent():
    rep = _pipeline("heartwall_like.kir", "heartwall_like.json", "shared-owf-opt")
    assert rep["plan"]["pairs"] > 0
    assert rep["phases"]["pre"] == 100.0
    assert rep["lock_wait_cycles"] == 0


def test_optimal_release_reduces_non_owner_waiting():
    opt = _pipeline("directional.kir", "directional.json", "shared-owf-opt")
    none = _pipeline("directional.kir", "directional.json", "shared-owf-opt", placement="none")
    assert none["placement"] == "none" and none["instructions"]["relssp"] == 0
    assert opt["lock_wait_cycles"] <= none["lock_wait_cycles"]
    assert opt["phases"]["post"] > none["phases"]["post"]
