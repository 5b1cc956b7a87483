"""
Interrupt controller: prioritized pend/arbitrate, hardware context
stacking and unstacking, tail-chaining of back-to-back interrupts, and a
non-maskable line option.

Cost model (all parameters configurable):
  entry      = max(stacking_cycles, vector_fetch) + pipeline_refill
               (the vector is fetched concurrently with the stacking burst)
  tail-chain = max(tailchain_cycles, vector_fetch) + pipeline_refill
  return     = unstack_cycles
               (the refill overlaps the unstack burst - the return address
               pops early - which keeps the saving for a two-interrupt
               burst at exactly stacking + unstack - tailchain)
"""

from . import events
from .isa import EXC_RETURN, LR, PC, SP, u32

FRAME_WORDS = 8  # R0-R3, R12, LR, return address, status
FRAME_BYTES = FRAME_WORDS * 4


class NvicError(Exception):
    pass


class InterruptLine:
    def __init__(self, line_id, priority=0, enabled=True, nmi=False):
        if not 0 <= priority <= 255:
            raise NvicError(f"line {line_id}: priority {priority} out of range")
        self.id = line_id
        self.priority = priority
        self.enabled = enabled
        self.nmi = nmi
        self.pending = False
        self.active = False

    def effective_priority(self):
        return -1 if self.nmi else self.priority


class Nvic:
    def __init__(self, lines=(), vector_table_base=0x20000000,
                 stacking_cycles=8, unstack_cycles=8, tailchain_cycles=4,
                 pipeline_refill=2):
        self.lines = {}
        for line in lines:
            if line.id in self.lines:
                raise NvicError(f"duplicate line id {line.id}")
            self.lines[line.id] = line
        self.vector_table_base = vector_table_base
        self.stacking_cycles = stacking_cycles
        self.unstack_cycles = unstack_cycles
        self.tailchain_cycles = tailchain_cycles
        self.pipeline_refill = pipeline_refill
        self.active_stack = []
        self.stimulus = []  # (cycle, after_instructions, line_id), sorted
        self.stackings = 0
        self.unstackings = 0
        self.tail_chains = 0

    def add_line(self, line):
        if line.id in self.lines:
            raise NvicError(f"duplicate line id {line.id}")
        self.lines[line.id] = line

    def pend(self, line_id):
        line = self.lines.get(line_id)
        if line is None:
            raise NvicError(f"pend on unknown line {line_id}")
        line.pending = True  # idempotent: pending is a bit, not a counter

    def schedule(self, line_id, cycle=None, after_instructions=None):
        if line_id not in self.lines:
            raise NvicError(f"stimulus for unknown line {line_id}")
        self.stimulus.append((cycle, after_instructions, line_id))

    def poll(self, cycle, retired=0):
        """Apply any scheduled stimulus that has come due."""
        due = []
        for item in self.stimulus:
            c, n, line_id = item
            if (c is not None and cycle >= c) or (n is not None and retired >= n):
                due.append(item)
        for item in due:
            self.stimulus.remove(item)
            self.pend(item[2])

    def current_priority(self):
        if not self.active_stack:
            return 256
        return min(self.lines[i].effective_priority()
                   for i in self.active_stack)

    def arbitrate(self):
        """Highest-priority takeable pending line id, or None.

        Lower numeric priority wins; ties go to the lowest line id; a
        non-maskable line ignores its enable bit and outranks every
        configurable priority.
        """
        threshold = self.current_priority()
        best = None
        for line_id in sorted(self.lines):
            line = self.lines[line_id]
            if not line.pending or line.active:
                continue
            if not line.enabled and not line.nmi:
                continue
            pri = line.effective_priority()
            if pri < threshold and (best is None or pri < best[0]):
                best = (pri, line_id)
        return None if best is None else best[1]

    # ===============================================================
    # Entry / return
    # ===============================================================

    def _vector_fetch(self, memory, line_id, pc):
        addr = self.vector_table_base + 4 * line_id
        return memory.read(addr, 4, pc=pc)

    def _push_frame(self, machine, memory):
        # hardware preamble: exempt from MPU checks, burst-costed as
        # stacking_cycles rather than per-beat
        sp = u32(machine.regs[SP] - FRAME_BYTES)
        machine.regs[SP] = sp
        frame = [machine.regs[0], machine.regs[1], machine.regs[2],
                 machine.regs[3], machine.regs[12], machine.regs[LR],
                 machine.pc, machine.pack_status()]
        for i, word in enumerate(frame):
            memory.raw_write(sp + 4 * i, 4, word)

    def _pop_frame(self, machine, memory):
        sp = machine.regs[SP]
        words = [memory.raw_read(sp + 4 * i, 4) for i in range(FRAME_WORDS)]
        machine.regs[0], machine.regs[1] = words[0], words[1]
        machine.regs[2], machine.regs[3] = words[2], words[3]
        machine.regs[12] = words[4]
        machine.regs[LR] = words[5]
        machine.regs[PC] = words[6]
        machine.unpack_status(words[7])
        machine.regs[SP] = u32(sp + FRAME_BYTES)

    def _start_handler(self, machine, memory, line_id, trace):
        line = self.lines[line_id]
        line.pending = False
        line.active = True
        self.active_stack.append(line_id)
        vector, vec_cycles = self._vector_fetch(memory, line_id, machine.pc)
        machine.pc = vector
        machine.regs[LR] = EXC_RETURN
        machine.privileged = True
        machine.it.remaining = 0
        return vec_cycles

    def exception_entry(self, machine, memory, line_id, trace):
        """Push the 8-word frame and start the handler; returns cycles.

        The caller positions machine.pc at the resume address before the
        call; that value is stacked as the return address.
        """
        self._push_frame(machine, memory)
        self.stackings += 1
        vec_cycles = self._start_handler(machine, memory, line_id, trace)
        cost = max(self.stacking_cycles, vec_cycles) + self.pipeline_refill
        trace.emit(events.IRQ_ENTRY, cycles=cost, pc=machine.pc, line=line_id)
        return cost

    def exception_return(self, machine, memory, trace):
        """Handler finished: tail-chain into a pending line or unstack.

        Returns (cycles, chained_line_or_None).
        """
        if not self.active_stack:
            raise NvicError("exception return with no active handler")
        finished = self.active_stack.pop()
        self.lines[finished].active = False
        nxt = self.arbitrate()
        if nxt is not None:
            vec_cycles = self._start_handler(machine, memory, nxt, trace)
            cost = max(self.tailchain_cycles, vec_cycles) + self.pipeline_refill
            self.tail_chains += 1
            trace.emit(events.TAIL_CHAIN, cycles=cost, pc=machine.pc,
                       line=nxt, after=finished)
            return cost, nxt
        self._pop_frame(machine, memory)
        self.unstackings += 1
        cost = self.unstack_cycles
        trace.emit(events.IRQ_EXIT, cycles=cost, pc=machine.pc, line=finished)
        return cost, None
