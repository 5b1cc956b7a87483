"""
Built-in comparative scenarios: literal-pool penalty, interrupt
tail-chaining, bit-band semaphores under adversarial interleaving,
soft-error campaigns, and MPU task isolation.

Each scenario runs one or more configurations through the harness,
computes its derived metrics against an analytic ledger or oracle, and
returns a report with embedded pass/fail assertions.
"""

import random

from . import harness
from .asm import assemble
from .harness import deep_merge, load_config, run
from .mpu import MpuRegion


def _assertion(name, passed, detail=""):
    return {"name": name, "passed": bool(passed), "detail": str(detail)}


def _finish(report, assertions):
    report["assertions"] = assertions
    report["passed"] = all(a["passed"] for a in assertions)
    return report


# ===================================================================
# Literal pool penalty
# ===================================================================

def constant_heavy_source(blocks=20, alu_per_block=5):
    """Straight-line code alternating ALU work with one constant load."""
    lines = ["start:"]
    for i in range(blocks):
        lines += ["    add r1, r1, #1"] * alu_per_block
        lines.append(f"    ldr r2, =0x{0x12340000 + i:08x}")
    lines.append("    halt")
    return "\n".join(lines) + "\n"


def expected_pool_margin(blocks, seq, nonseq):
    """Analytic cycle ledger for the pool-vs-movw comparison.

    Per constant, pool mode spends: one pc-relative load (sequential fetch
    + base) plus a data-side pool read at nonsequential cost that also
    restarts the stream, making the next instruction fetch nonsequential.
    Movw mode spends two sequential 32-bit instructions instead:

      pool  = (seq + 1) + nonseq + (nonseq - seq)   per constant
      movw  = 2 * (seq + 1)
      delta = 2 * (nonseq - seq) - 1
    """
    return blocks * (2 * (nonseq - seq) - 1)


def scenario_literal_pool(overrides=None, blocks=20):
    source = constant_heavy_source(blocks)
    base = {"program": {"text": source, "mode": "pool"}}
    cfg_pool = deep_merge(base, overrides or {})
    cfg_movw = deep_merge(cfg_pool, {"program": {"mode": "movw"}})

    pool_report = run(cfg_pool)
    movw_report = run(cfg_movw)

    merged = load_config(cfg_pool)
    flash = next(r for r in merged["memory"]["regions"]
                 if r["kind"] == "flash")
    seq = flash.get("sequential_cycles", 1)
    nonseq = flash.get("nonsequential_cycles", 4)
    expected = expected_pool_margin(blocks, seq, nonseq)
    margin = pool_report["total_cycles"] - movw_report["total_cycles"]
    degradation = 100.0 * margin / movw_report["total_cycles"]

    assertions = [
        _assertion("margin_matches_ledger", margin == expected,
                   f"measured {margin}, ledger {expected}"),
        # r15 differs by construction (the halt sits at a different address)
        _assertion("same_final_state",
                   pool_report["registers"][:15] == movw_report["registers"][:15],
                   "register files r0-r14 match"),
        _assertion("degradation_at_least_15pct", degradation >= 15.0,
                   f"{degradation:.1f}%"),
    ]
    return _finish({
        "scenario": "literal_pool",
        "blocks": blocks,
        "pool_cycles": pool_report["total_cycles"],
        "movw_cycles": movw_report["total_cycles"],
        "margin": margin,
        "expected_margin": expected,
        "degradation_pct": round(degradation, 3),
        "pool_code_size": pool_report["code_size"],
        "movw_code_size": movw_report["code_size"],
    }, assertions)


# ===================================================================
# Tail chaining
# ===================================================================

TAIL_CHAIN_PROGRAM = """\
start:
    movw r0, #400
loop:
    sub r0, r0, #1
    cmp r0, #0
    bne loop
    halt
isr_a:
    nop
    mov pc, lr
isr_b:
    nop
    mov pc, lr
"""


def tail_chain_config(stimulus):
    # code and the vector table live in zero-wait RAM so the comparison is
    # free of flash stream effects
    return {
        "program": {"text": TAIL_CHAIN_PROGRAM, "mode": "movw",
                    "base": 0x20008000},
        "entry": "start",
        "nvic": {
            "lines": [{"id": 0, "priority": 1}, {"id": 1, "priority": 2}],
            "handlers": {0: "isr_a", 1: "isr_b"},
            "stimulus": stimulus,
        },
    }


def scenario_tail_chain(overrides=None):
    chained_cfg = deep_merge(tail_chain_config(
        [{"cycle": 40, "line": 0}, {"cycle": 40, "line": 1}]),
        overrides or {})
    separated_cfg = deep_merge(tail_chain_config(
        [{"cycle": 40, "line": 0}, {"cycle": 1500, "line": 1}]),
        overrides or {})

    chained = run(chained_cfg)
    separated = run(separated_cfg)

    ncfg = load_config(chained_cfg)["nvic"]
    expected_saving = (ncfg["stacking_cycles"] + ncfg["unstack_cycles"]
                       - ncfg["tailchain_cycles"])
    saving = separated["total_cycles"] - chained["total_cycles"]

    assertions = [
        _assertion("chained_one_stack_one_unstack",
                   chained["nvic"] == {"stackings": 1, "unstackings": 1,
                                       "tail_chains": 1},
                   str(chained["nvic"])),
        _assertion("separated_two_stacks",
                   separated["nvic"] == {"stackings": 2, "unstackings": 2,
                                         "tail_chains": 0},
                   str(separated["nvic"])),
        _assertion("saving_equals_ledger", saving == expected_saving,
                   f"measured {saving}, ledger {expected_saving}"),
        _assertion("same_final_state",
                   chained["registers"] == separated["registers"],
                   "register files match"),
    ]
    return _finish({
        "scenario": "tail_chain",
        "chained_cycles": chained["total_cycles"],
        "separated_cycles": separated["total_cycles"],
        "saving": saving,
        "expected_saving": expected_saving,
        "chained_nvic": chained["nvic"],
        "separated_nvic": separated["nvic"],
    }, assertions)


# ===================================================================
# Bit-band semaphore vs read-modify-write under an adversarial ISR
# ===================================================================

SHARED_BYTE = 0x20000100
ALIAS_BIT3 = 0x22000000 + (SHARED_BYTE - 0x20000000) * 8 + 3
ALIAS_BIT5 = 0x22000000 + (SHARED_BYTE - 0x20000000) * 8 + 5

BITBAND_MAIN = f"""\
start:
    ldr r0, =0x{ALIAS_BIT3:08x}
    mov r1, #1
    nop
    strb r1, [r0]
    nop
    halt
isr:
    ldr r0, =0x{ALIAS_BIT5:08x}
    mov r1, #1
    strb r1, [r0]
    mov pc, lr
"""

RMW_MAIN = f"""\
start:
    ldr r0, =0x{SHARED_BYTE:08x}
    ldrb r2, [r0]
    orr r2, r2, #0x08
    strb r2, [r0]
    halt
isr:
    ldr r0, =0x{SHARED_BYTE:08x}
    ldrb r1, [r0]
    orr r1, r1, #0x20
    strb r1, [r0]
    mov pc, lr
"""


def _interleaving_run(source, boundary, overrides=None):
    cfg = {
        "program": {"text": source, "mode": "movw"},
        "entry": "start",
        "nvic": {
            "lines": [{"id": 0, "priority": 1}],
            "handlers": {0: "isr"},
            "stimulus": [{"after_instructions": boundary, "line": 0}],
        },
    }
    report, sim = run(deep_merge(cfg, overrides or {}), return_sim=True)
    return sim.memory.raw_read(SHARED_BYTE, 1), report


def _main_length(source):
    image = assemble(source, mode="movw", base=0)
    count = 0
    for ins in image.instructions:
        count += 1
        if ins.kind.value == "HALT":
            break
    return count


def scenario_bitband_semaphore(overrides=None):
    n_alias = _main_length(BITBAND_MAIN)
    n_rmw = _main_length(RMW_MAIN)

    # boundaries 0..n-1 insert the handler before every main instruction
    # up to (and including) the one just ahead of the halt
    alias_results = {}
    for k in range(n_alias):
        byte, _ = _interleaving_run(BITBAND_MAIN, k, overrides)
        alias_results[k] = byte
    alias_ok = all(v == 0x28 for v in alias_results.values())

    rmw_results = {}
    for k in range(n_rmw):
        byte, _ = _interleaving_run(RMW_MAIN, k, overrides)
        rmw_results[k] = byte
    lost = [k for k, v in rmw_results.items() if v != 0x28]

    assertions = [
        _assertion("alias_all_interleavings_0x28", alias_ok,
                   f"results {sorted(set(alias_results.values()))}"),
        _assertion("rmw_loses_an_update", len(lost) > 0,
                   f"lost at boundaries {lost}"),
    ]
    return _finish({
        "scenario": "bitband_semaphore",
        "alias_results": {str(k): v for k, v in alias_results.items()},
        "rmw_results": {str(k): v for k, v in rmw_results.items()},
        "lost_update_boundaries": lost,
    }, assertions)


# ===================================================================
# Soft-error campaign
# ===================================================================

GOLDEN_WORDS = 8
GOLDEN_ITERATIONS = 12

# every word of the TCM and cached-RAM arrays, and every code line, is
# touched again on each outer iteration, so any flipped valid bit is
# guaranteed to be detected before the run ends
GOLDEN_PROGRAM = f"""\
start:
    ldr r0, =0x10000000    ; tcm array
    ldr r1, =0x20200000    ; cached ram array
    movw r7, #{GOLDEN_ITERATIONS}
outer:
    mov r2, #0
init:
    add r4, r2, #17
    add r4, r4, r7
    lsl r5, r2, #2
    add r5, r5, r0
    str r4, [r5]
    lsl r5, r2, #2
    add r5, r5, r1
    str r4, [r5]
    add r2, r2, #1
    cmp r2, #{GOLDEN_WORDS}
    bne init
    mov r2, #0
inner:
    lsl r5, r2, #2
    add r5, r5, r0
    ldr r4, [r5]
    add r3, r3, r4
    lsl r5, r2, #2
    add r5, r5, r1
    ldr r4, [r5]
    add r3, r3, r4
    add r2, r2, #1
    cmp r2, #{GOLDEN_WORDS}
    bne inner
    sub r7, r7, #1
    cmp r7, #0
    bne outer
    halt
"""


def golden_config(overrides=None):
    cfg = {
        "program": {"text": GOLDEN_PROGRAM, "mode": "movw"},
        "entry": "start",
        "memory": {
            "icache": {"line_count": 16},
            "dcache": {"line_count": 16},
        },
    }
    return deep_merge(cfg, overrides or {})


def scenario_soft_error(seed=1234, count=100, target="mixed", overrides=None):
    """Seeded injection campaign compared against the golden run."""
    base_cfg = golden_config(overrides)
    golden = run(base_cfg)
    warm = golden["total_cycles"] // 4
    span = golden["total_cycles"] // 2
    rng = random.Random(seed)

    if target == "mixed":
        plans = (["icache"] * (count // 3) + ["tcm"] * (count // 3)
                 + ["dcache"] * (count - 2 * (count // 3)))
    else:
        plans = [target] * count

    tally = {"icache_recovered": 0, "tcm_repaired": 0, "dcache_aborted": 0,
             "mismatches": 0, "injections": []}
    for i, kind in enumerate(plans):
        at_cycle = warm + rng.randrange(span)
        bit = rng.randrange(32)
        if kind == "icache":
            spec = {"target": rng.choice(["icache_data", "icache_tag"]),
                    "at_cycle": at_cycle, "bit": bit,
                    "word": rng.randrange(8), "_rng": rng}
        elif kind == "dcache":
            spec = {"target": rng.choice(["dcache_data", "dcache_tag"]),
                    "at_cycle": at_cycle, "bit": bit,
                    "word": rng.randrange(8), "_rng": rng}
        else:
            spec = {"target": "tcm", "at_cycle": at_cycle, "bit": bit,
                    "addr": 0x10000000 + 4 * rng.randrange(GOLDEN_WORDS)}
        cfg = deep_merge(base_cfg, {"faults": {"injections": [spec]}})
        report, sim = run(cfg, return_sim=True)
        outcome = _classify_injection(kind, report, golden)
        tally["injections"].append({"kind": kind, "at_cycle": at_cycle,
                                    "outcome": outcome})
        if outcome == "recovered":
            tally["icache_recovered" if kind == "icache"
                  else "tcm_repaired"] += 1
        elif outcome == "aborted":
            tally["dcache_aborted"] += 1
        else:
            tally["mismatches"] += 1

    expected_ok = sum(1 for p in plans if p in ("icache", "tcm"))
    expected_abort = sum(1 for p in plans if p == "dcache")
    assertions = [
        _assertion("transparent_recoveries",
                   tally["icache_recovered"] + tally["tcm_repaired"]
                   == expected_ok,
                   f"{tally['icache_recovered'] + tally['tcm_repaired']}"
                   f"/{expected_ok}"),
        _assertion("precise_aborts",
                   tally["dcache_aborted"] == expected_abort,
                   f"{tally['dcache_aborted']}/{expected_abort}"),
        _assertion("no_mismatches", tally["mismatches"] == 0,
                   str(tally["mismatches"])),
    ]
    return _finish({
        "scenario": "soft_error",
        "seed": seed,
        "count": count,
        "target": target,
        "golden_cycles": golden["total_cycles"],
        "tally": {k: v for k, v in tally.items() if k != "injections"},
        "injections": tally["injections"],
    }, assertions)


def _classify_injection(kind, report, golden):
    if kind in ("icache", "tcm"):
        same = (report["registers"] == golden["registers"]
                and report["halted"] == "halt")
        slower = report["total_cycles"] > golden["total_cycles"]
        return "recovered" if same and slower else "mismatch"
    if report["halted"] == "data_abort":
        return "aborted"
    return "mismatch"


# ===================================================================
# MPU task isolation
# ===================================================================

TASK_A_BASE = 0x20004000
TASK_B_BASE = 0x20004080
REGION_SIZE = 128
PROBES_PER_REGION = 16


OWN_VALUE = 0xAA    # probes into the task's own region
CROSS_VALUE = 0xEE  # probes into the neighbor; must never land


def _probe_lines(region_base, value):
    lines = [f"    mov r2, #0x{value:02x}"]
    for i in range(PROBES_PER_REGION):
        lines.append(f"    ldr r3, =0x{region_base + 8 * i:08x}")
        lines.append("    strb r2, [r3]")
    return lines


def mpu_isolation_program():
    lines = ["start:",
             "    ldr r0, =0xE0000010",
             "    mov r1, #1",
             "    str r1, [r0]"]       # drop to unprivileged
    lines += ["task_a:"]
    lines += _probe_lines(TASK_A_BASE, OWN_VALUE)    # own region: allowed
    lines += _probe_lines(TASK_B_BASE, CROSS_VALUE)  # neighbor: faults
    lines += ["task_b:"]
    lines += _probe_lines(TASK_B_BASE, OWN_VALUE)
    lines += _probe_lines(TASK_A_BASE, CROSS_VALUE)
    lines += ["    halt"]
    lines += ["timer_isr:",
              "    ldr r0, =0xE0000000",
              "    mov r1, #2",
              "    str r1, [r0, #4]",            # RNR = 2
              f"    ldr r2, =0x{TASK_B_BASE:08x}",
              "    str r2, [r0, #8]",            # RBAR
              f"    ldr r3, =0x{_task_rasr():08x}",
              "    str r3, [r0, #12]",           # RASR
              "    mov pc, lr"]
    lines += ["fault_isr:",
              "    mov pc, lr"]
    return "\n".join(lines) + "\n"


def _task_rasr():
    region = MpuRegion(2, TASK_B_BASE, REGION_SIZE, priv_perms="rw",
                       unpriv_perms="rw")
    return harness.encode_rasr(region)


def _mpu_config(enabled=True):
    # retire arithmetic for the timer switch point: an allowed probe is
    # movw+movh+strb (3 retires); a denied probe is movw+movh plus the
    # fault handler's return (the aborted strb never retires, also 3);
    # each probe block starts with one value load
    setup_retires = 4
    task_a_retires = 2 * (1 + PROBES_PER_REGION * 3)
    switch_at = setup_retires + task_a_retires
    return {
        "program": {"text": mpu_isolation_program(), "mode": "movw"},
        "entry": "start",
        "mpu": {
            "enabled": enabled,
            "background_privileged_allowed": True,
            "regions": [
                {"index": 0, "base": 0x00000000, "size": 0x100000,
                 "priv": "rwx", "unpriv": "rx"},
                {"index": 2, "base": TASK_A_BASE, "size": REGION_SIZE,
                 "priv": "rw", "unpriv": "rw"},
            ],
        },
        "nvic": {
            "lines": [{"id": 0, "priority": 1}, {"id": 7, "priority": 0}],
            "handlers": {0: "timer_isr", 7: "fault_isr"},
            "stimulus": [{"after_instructions": switch_at, "line": 0}],
        },
        "faults": {"fault_line": 7},
    }


def scenario_mpu_isolation(overrides=None):
    report, sim = run(deep_merge(_mpu_config(True), overrides or {}),
                      return_sim=True)

    faults = [r for r in sim.trace.records if r["event"] == "mpu_fault"]
    switch_stamp = None
    for r in sim.trace.records:
        if r["event"] == "irq_entry" and r.get("line") == 0:
            switch_stamp = r["cycle"]
            break
    phase_a = sorted(r["addr"] for r in faults
                     if switch_stamp is None or r["cycle"] < switch_stamp)
    phase_b = sorted(r["addr"] for r in faults
                     if switch_stamp is not None and r["cycle"] >= switch_stamp)
    expect_a = sorted(TASK_B_BASE + 8 * i for i in range(PROBES_PER_REGION))
    expect_b = sorted(TASK_A_BASE + 8 * i for i in range(PROBES_PER_REGION))

    probe_bytes = [sim.memory.raw_read(base + 8 * i, 1)
                   for base in (TASK_A_BASE, TASK_B_BASE)
                   for i in range(PROBES_PER_REGION)]
    own_written = all(b == OWN_VALUE for b in probe_bytes)
    cross_landed = sum(1 for b in probe_bytes if b == CROSS_VALUE)

    disabled_report, disabled_sim = run(
        deep_merge(_mpu_config(False), overrides or {}), return_sim=True)
    disabled_faults = disabled_sim.trace.counts["mpu_fault"]

    assertions = [
        _assertion("task_a_faults_match_map", phase_a == expect_a,
                   f"{len(phase_a)} faults"),
        _assertion("task_b_faults_match_map", phase_b == expect_b,
                   f"{len(phase_b)} faults"),
        _assertion("all_own_region_writes_landed", own_written, ""),
        _assertion("zero_cross_region_writes_landed", cross_landed == 0,
                   f"{cross_landed} landed"),
        _assertion("ran_to_completion", report["halted"] == "halt",
                   report["halted"]),
        _assertion("disabled_mpu_allows_all", disabled_faults == 0,
                   f"{disabled_faults} faults"),
    ]
    return _finish({
        "scenario": "mpu_isolation",
        "fault_count": len(faults),
        "phase_a_faults": len(phase_a),
        "phase_b_faults": len(phase_b),
        "total_cycles": report["total_cycles"],
        "disabled_fault_count": disabled_faults,
    }, assertions)


SCENARIOS = {
    "literal_pool": scenario_literal_pool,
    "tail_chain": scenario_tail_chain,
    "bitband_semaphore": scenario_bitband_semaphore,
    "soft_error": scenario_soft_error,
    "mpu_isolation": scenario_mpu_isolation,
}
