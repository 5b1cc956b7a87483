"""
Fetch-decode-execute loop binding the ISA to the memory system, MPU and
interrupt controller.

Cycle ledger per retired instruction: fetch cycles from the memory system,
plus a base cost of 1, plus data-side memory cycles, plus a 2-cycle
pipeline refill per taken branch.  Exception entry/exit costs are carried
by their own trace records.

Interrupts are sampled at instruction boundaries and at load/store-multiple
line-fill boundaries only.
"""

from . import events
from .events import Trace
from .isa import (EXC_RETURN_MASK, EXC_RETURN_TAG, LR, MASK32, PC,
                  Cond, Instruction, MachineState, Op, bit_reverse,
                  bitfield_clear, bitfield_extract, bitfield_insert,
                  cond_holds, hw_divide, mov_high, mov_wide, shift_left,
                  shift_right, u32)
from .memory import DEVICE, AccessFault

BRANCH_REFILL = 2

RETIRED = "retired"
INTERRUPT = "interrupt"
FAULT = "fault"
HALTED = "halted"


class Abort(Exception):
    """A faulting access: delivered as a data/prefetch abort or a halt."""

    def __init__(self, kind, addr, cycles_done=0):
        super().__init__(f"{kind} at 0x{addr:08x}")
        self.kind = kind
        self.addr = addr
        self.cycles_done = cycles_done


class LdmInterrupted(Exception):
    def __init__(self, cycles_done):
        self.cycles_done = cycles_done


class Simulator:
    def __init__(self, memory, nvic=None, mpu=None, trace=None,
                 fault_line=None):
        self.memory = memory
        self.nvic = nvic
        self.mpu = mpu
        self.trace = trace if trace is not None else memory.trace
        self.memory.trace = self.trace
        self.trace.clock = lambda: self.cycles
        self.machine = MachineState()
        self.program = {}
        self.cycles = 0
        self.retired = 0
        self.halted = None
        self.halt_detail = {}
        self.fault_line = fault_line
        self._pc_written = False
        self._side_cycles = 0

    def load_program(self, image):
        """Install an assembled image: bytes into memory, IR by address."""
        self.memory.load_image(image.base, image.data)
        for ins in image.instructions:
            self.program[ins.addr] = ins
        self.machine.pc = image.entry_point

    def load_instructions(self, instructions, entry=None):
        """Install hand-built IR (tests); memory bytes are not touched."""
        for ins in instructions:
            self.program[ins.addr] = ins
        if entry is not None:
            self.machine.pc = entry

    def run(self, cycle_limit=10_000_000):
        while self.halted is None and self.cycles < cycle_limit:
            self.step()
        timed_out = self.halted is None
        if timed_out:
            self.halted = "timeout"
        return not timed_out

    # ===============================================================
    # One step: interrupt boundary, fetch, predication, execute
    # ===============================================================

    def step(self):
        if self.halted is not None:
            return HALTED
        m = self.machine
        if self.nvic is not None:
            self.nvic.poll(self.cycles, self.retired)
            line = self.nvic.arbitrate()
            if line is not None:
                cost = self.nvic.exception_entry(m, self.memory, line,
                                                 self.trace)
                self.cycles += cost
                return INTERRUPT

        pc = m.pc
        if pc % 2:
            self._halt("misaligned_pc", addr=pc)
            return HALTED

        instr = self.program.get(pc)
        patch = self.memory.fetch_lookup(pc)
        if patch is not None:
            if patch.mode == "breakpoint":
                self.trace.emit(events.BREAKPOINT, pc=pc, entry=patch.index)
                self._halt("breakpoint", addr=pc)
                return HALTED
            if patch.instruction is not None:
                instr = patch.instruction

        if self.mpu is not None:
            size = instr.size if instr is not None else 2
            reason = self.mpu.check_access(pc, size, "x", m.privileged)
            if reason is not None:
                self.trace.emit(events.MPU_FAULT, pc=pc, addr=pc, access="x",
                                reason=reason, privileged=m.privileged)
                return self._abort_path("prefetch_abort", pc, pc, 0,
                                        resume=pc + (instr.size if instr else 2))

        if instr is None:
            # mapped but holds no instruction: bad jump or data execution
            try:
                self.memory.fetch_cycles(pc, 2, pc=pc)
                self._halt("invalid_instruction", addr=pc)
            except AccessFault as e:
                self.trace.emit(events.ABORT, pc=pc, addr=e.addr,
                                reason=e.kind, cycles=0)
                self._halt(e.kind, addr=e.addr)
            return HALTED

        try:
            fetch_cost = self.memory.fetch_cycles(pc, instr.size, pc=pc)
        except AccessFault as e:
            self.trace.emit(events.ABORT, pc=pc, addr=e.addr, reason=e.kind,
                            cycles=0)
            self._halt(e.kind, addr=e.addr)
            return HALTED

        cost = fetch_cost + 1
        self._pc_written = False
        self._side_cycles = 0
        skipped = False
        if m.it.active and instr.kind != Op.IT:
            if not m.it.advance():
                skipped = True  # consumed as an architectural no-op
        if not skipped:
            try:
                cost += self._execute(instr)
            except LdmInterrupted as e:
                self.trace.emit(events.LDM_INTERRUPTED, pc=pc,
                                cycles=fetch_cost + 1 + e.cycles_done)
                self.cycles += fetch_cost + 1 + e.cycles_done
                return INTERRUPT
            except Abort as e:
                return self._abort_path(e.kind, pc, e.addr,
                                        fetch_cost + 1 + e.cycles_done,
                                        resume=pc + instr.size)

        self.retired += 1
        self.trace.emit(events.RETIRE, cycles=cost, pc=pc,
                        op=instr.kind.value, skipped=skipped)
        self.cycles += cost + self._side_cycles
        if not self._pc_written:
            m.pc = pc + instr.size
        if self.halted is not None:
            return HALTED
        return RETIRED

    def _halt(self, reason, **detail):
        self.halted = reason
        self.halt_detail = detail

    def _abort_path(self, kind, pc, addr, cycles_done, resume):
        """Record the abort, then enter the fault handler or halt."""
        self.trace.emit(events.ABORT, pc=pc, addr=addr, reason=kind,
                        cycles=cycles_done)
        self.cycles += cycles_done
        if (self.fault_line is not None and self.nvic is not None
                and self.fault_line in self.nvic.lines):
            if self.fault_line in self.nvic.active_stack:
                self._halt("double_fault", addr=addr)
                return HALTED
            self.machine.pc = resume  # faulting access dropped
            cost = self.nvic.exception_entry(self.machine, self.memory,
                                             self.fault_line, self.trace)
            self.cycles += cost
            return FAULT
        self._halt(kind, addr=addr)
        return HALTED

    # ===============================================================
    # Data-side access helpers (MPU consulted first)
    # ===============================================================

    def _mpu_check(self, addr, size, kind, cycles_done=0):
        if self.mpu is None:
            return
        reason = self.mpu.check_access(addr, size, kind, self.machine.privileged)
        if reason is not None:
            self.trace.emit(events.MPU_FAULT, pc=self.machine.pc, addr=addr,
                            access=kind, reason=reason,
                            privileged=self.machine.privileged)
            raise Abort("data_abort", addr, cycles_done)

    def _read(self, addr, width, cycles_done=0):
        if addr % width:
            raise Abort("alignment", addr, cycles_done)
        self._mpu_check(addr, width, "r", cycles_done)
        try:
            return self.memory.read(addr, width, pc=self.machine.pc)
        except AccessFault as e:
            raise Abort(e.kind, e.addr, cycles_done) from None

    def _write(self, addr, width, value, cycles_done=0):
        if addr % width:
            raise Abort("alignment", addr, cycles_done)
        self._mpu_check(addr, width, "w", cycles_done)
        try:
            return self.memory.write(addr, width, value, pc=self.machine.pc)
        except AccessFault as e:
            raise Abort(e.kind, e.addr, cycles_done) from None

    # ===============================================================
    # Execution
    # ===============================================================

    def _rval(self, reg):
        if reg == PC:
            # reading the program counter yields the next instruction
            return u32(self.machine.pc + self._current_size)
        return self.machine.regs[reg]

    def _operand2(self, instr):
        if instr.rm is not None:
            return self._rval(instr.rm)
        return u32(instr.imm)

    def _write_reg(self, reg, value):
        value = u32(value)
        if reg == PC:
            return self._write_pc(value)
        self.machine.regs[reg] = value
        return 0

    def _write_pc(self, value):
        self._pc_written = True
        if (value & EXC_RETURN_MASK) == EXC_RETURN_TAG \
                and self.nvic is not None and self.nvic.active_stack:
            cost, _ = self.nvic.exception_return(self.machine, self.memory,
                                                 self.trace)
            self._side_cycles += cost
            return 0
        self.machine.pc = value & ~1
        return BRANCH_REFILL

    def _execute(self, instr):
        """Returns extra cycles beyond fetch + base."""
        self._current_size = instr.size
        m = self.machine
        kind = instr.kind

        if kind == Op.NOP:
            return 0
        if kind == Op.HALT:
            self._halt("halt")
            return 0
        if kind == Op.MOV:
            return self._write_reg(instr.rd, self._operand2(instr))
        if kind == Op.MOVW:
            return self._write_reg(instr.rd, mov_wide(instr.imm))
        if kind == Op.MOVH:
            return self._write_reg(instr.rd,
                                   mov_high(m.regs[instr.rd], instr.imm))
        if kind == Op.ADD:
            return self._write_reg(instr.rd,
                                   self._rval(instr.rn) + self._operand2(instr))
        if kind == Op.SUB:
            return self._write_reg(instr.rd,
                                   self._rval(instr.rn) - self._operand2(instr))
        if kind == Op.AND:
            return self._write_reg(instr.rd,
                                   self._rval(instr.rn) & self._operand2(instr))
        if kind == Op.ORR:
            return self._write_reg(instr.rd,
                                   self._rval(instr.rn) | self._operand2(instr))
        if kind == Op.EOR:
            return self._write_reg(instr.rd,
                                   self._rval(instr.rn) ^ self._operand2(instr))
        if kind == Op.LSL:
            return self._write_reg(instr.rd,
                                   shift_left(self._rval(instr.rn),
                                              self._operand2(instr)))
        if kind == Op.LSR:
            return self._write_reg(instr.rd,
                                   shift_right(self._rval(instr.rn),
                                               self._operand2(instr)))
        if kind == Op.CMP:
            m.set_flags_from_sub(self._rval(instr.rn), self._operand2(instr))
            return 0
        if kind in (Op.UDIV, Op.SDIV):
            q, div0 = hw_divide(kind == Op.SDIV, m.regs[instr.rn],
                                m.regs[instr.rm])
            if div0:
                self.trace.emit(events.DIV_ZERO, pc=m.pc, rn=instr.rn)
            m.regs[instr.rd] = q
            return 0
        if kind == Op.BFI:
            m.regs[instr.rd] = bitfield_insert(m.regs[instr.rd],
                                               m.regs[instr.rn],
                                               instr.lsb, instr.width)
            return 0
        if kind == Op.BFC:
            m.regs[instr.rd] = bitfield_clear(m.regs[instr.rd], instr.lsb,
                                              instr.width)
            return 0
        if kind == Op.UBFX:
            m.regs[instr.rd] = bitfield_extract(m.regs[instr.rn], instr.lsb,
                                                instr.width)
            return 0
        if kind == Op.RBIT:
            m.regs[instr.rd] = bit_reverse(m.regs[instr.rn])
            return 0
        if kind == Op.B:
            if cond_holds(instr.cond, m.n, m.z, m.c, m.v):
                self._pc_written = True
                m.pc = instr.target
                return BRANCH_REFILL
            return 0
        if kind == Op.BL:
            m.regs[LR] = u32(instr.addr + instr.size)
            self._pc_written = True
            m.pc = instr.target
            return BRANCH_REFILL
        if kind == Op.IT:
            if m.it.active:
                self._halt("nested_it", addr=instr.addr)
                return 0
            truth = cond_holds(instr.cond, m.n, m.z, m.c, m.v)
            m.it.begin(instr.cond, instr.pattern, truth)
            return 0
        if kind == Op.TB:
            return self._exec_table_branch(instr)
        if kind in (Op.LDR, Op.LDRB, Op.LDRH):
            width = {Op.LDR: 4, Op.LDRB: 1, Op.LDRH: 2}[kind]
            addr = self._effective_addr(instr)
            value, cycles = self._read(addr, width)
            return cycles + self._write_reg(instr.rd, value)
        if kind in (Op.STR, Op.STRB, Op.STRH):
            width = {Op.STR: 4, Op.STRB: 1, Op.STRH: 2}[kind]
            addr = self._effective_addr(instr)
            return self._write(addr, width, m.regs[instr.rd])
        if kind == Op.LDM:
            return self._exec_ldm_stm(instr, store=False)
        if kind == Op.STM:
            return self._exec_ldm_stm(instr, store=True)
        raise RuntimeError(f"unhandled opcode {kind}")

    def _effective_addr(self, instr):
        if instr.pool_load or instr.rn is None:
            return instr.target  # pc-relative load resolved to the pool slot
        return u32(self.machine.regs[instr.rn] + (instr.imm or 0))

    def _exec_table_branch(self, instr):
        m = self.machine
        idx = m.regs[instr.rn]
        table = instr.table or []
        if idx >= len(table):
            # the assembler-emitted guard was bypassed
            self._halt("table_index_out_of_range", addr=instr.addr, index=idx)
            return 0
        if instr.target is not None:
            # the table lives in the image right after the instruction;
            # dispatching reads it through the data side
            target, cycles = self._read(u32(instr.target + 4 * idx), 4)
        else:
            target, cycles = table[idx], 0
        self._pc_written = True
        m.pc = target & ~1
        return cycles + BRANCH_REFILL

    def _exec_ldm_stm(self, instr, store):
        m = self.machine
        base = m.regs[instr.rn]
        if base % 4:
            raise Abort("alignment", base)
        regs = sorted(instr.reglist)
        n = len(regs)
        # device memory is exempt from restart: a re-run would re-trigger
        # side effects, so such transfers complete without interruption
        restartable = all(
            (r := self.memory.region_at(base + 4 * i)) is None
            or r.kind != DEVICE for i in range(n))
        cost = 0
        fills_seen = self.trace.counts[events.FILL]
        pc_value = None
        for i, reg in enumerate(regs):
            addr = u32(base + 4 * i)
            if store:
                cost += self._write(addr, 4, self._rval(reg), cycles_done=cost)
            else:
                value, c = self._read(addr, 4, cycles_done=cost)
                cost += c
                if reg == PC:
                    pc_value = value
                else:
                    m.regs[reg] = value
            if restartable and i < n - 1 and self.nvic is not None:
                filled = self.trace.counts[events.FILL] > fills_seen
                if filled:
                    fills_seen = self.trace.counts[events.FILL]
                    self.nvic.poll(self.cycles + cost, self.retired)
                    if self.nvic.arbitrate() is not None:
                        # abandon: no writeback, restart from the beginning
                        m.restart_pc = instr.addr
                        raise LdmInterrupted(cost)
        if instr.writeback:
            m.regs[instr.rn] = u32(base + 4 * n)
        m.restart_pc = None
        if pc_value is not None:
            cost += self._write_pc(pc_value)
        return cost
