"""
Event trace and cycle ledger shared by the core, memory system and
interrupt controller.

Every cycle the simulator spends is attributed to exactly one record via
its `cycles` field, so summing the trace reproduces the total count.
Informational records (misses, bit-band writes, ...) carry cycles=0; their
cost is folded into the owning retire/entry record.
"""

import json
from collections import Counter

RETIRE = "retire"
FETCH_NONSEQ = "fetch_nonseq"
MISS = "miss"
FILL = "fill"
IRQ_ENTRY = "irq_entry"
TAIL_CHAIN = "tail_chain"
IRQ_EXIT = "irq_exit"
ABORT = "abort"
REPAIR = "repair"
BITBAND_WRITE = "bitband_write"
MPU_FAULT = "mpu_fault"
BREAKPOINT = "breakpoint"
LDM_INTERRUPTED = "ldm_interrupted"
DIV_ZERO = "div_zero"
WARNING = "warning"


class Trace:
    """Collects cycle-stamped event records and per-kind counters.

    `clock` is bound by the simulator to its cycle counter so components
    can emit without knowing about each other.
    """

    def __init__(self, keep_records=True):
        self.records = []
        self.counts = Counter()
        self.keep_records = keep_records
        self.clock = lambda: 0

    def emit(self, kind, cycles=0, pc=None, **detail):
        self.counts[kind] += 1
        if self.keep_records:
            rec = {"cycle": self.clock(), "event": kind, "cycles": cycles}
            if pc is not None:
                rec["pc"] = pc
            rec.update(detail)
            self.records.append(rec)

    def cycle_sum(self):
        return sum(r["cycles"] for r in self.records)

    def of_kind(self, kind):
        return [r for r in self.records if r["event"] == kind]

    def to_jsonl(self):
        return "\n".join(json.dumps(r, sort_keys=True) for r in self.records)
