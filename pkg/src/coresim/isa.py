"""
Instruction-level IR for a dual-width (16/32-bit) embedded core.

Instructions are kept at IR level: each carries its operands plus an
encoded width in bits.  Real binary encodings are out of scope; the width
only drives addressing and code-size accounting.
"""

from enum import Enum, IntEnum

MASK32 = 0xFFFFFFFF

SP = 13
LR = 14
PC = 15

# Magic link-register value planted on exception entry.  A program-counter
# write of any value in this range triggers exception return instead of a
# branch (the handler's ordinary `mov pc, lr` return does the job).
EXC_RETURN = 0xFFFFFFF9
EXC_RETURN_MASK = 0xFFFFFF00
EXC_RETURN_TAG = 0xFFFFFF00


def u32(v):
    return v & MASK32


def s32(v):
    v &= MASK32
    return v - 0x100000000 if v & 0x80000000 else v


class Cond(IntEnum):
    EQ = 0
    NE = 1
    CS = 2
    CC = 3
    MI = 4
    PL = 5
    VS = 6
    VC = 7
    HI = 8
    LS = 9
    GE = 10
    LT = 11
    GT = 12
    LE = 13
    AL = 14


def cond_holds(cond, n, z, c, v):
    """Standard condition-code truth value against the N/Z/C/V flags."""
    if cond == Cond.EQ:
        return z
    if cond == Cond.NE:
        return not z
    if cond == Cond.CS:
        return c
    if cond == Cond.CC:
        return not c
    if cond == Cond.MI:
        return n
    if cond == Cond.PL:
        return not n
    if cond == Cond.VS:
        return v
    if cond == Cond.VC:
        return not v
    if cond == Cond.HI:
        return c and not z
    if cond == Cond.LS:
        return (not c) or z
    if cond == Cond.GE:
        return n == v
    if cond == Cond.LT:
        return n != v
    if cond == Cond.GT:
        return (not z) and n == v
    if cond == Cond.LE:
        return z or n != v
    return True  # AL


class Op(Enum):
    MOV = "MOV"
    MOVW = "MOVW"
    MOVH = "MOVH"
    ADD = "ADD"
    SUB = "SUB"
    AND = "AND"
    ORR = "ORR"
    EOR = "EOR"
    LSL = "LSL"
    LSR = "LSR"
    CMP = "CMP"
    UDIV = "UDIV"
    SDIV = "SDIV"
    BFI = "BFI"
    BFC = "BFC"
    UBFX = "UBFX"
    RBIT = "RBIT"
    B = "B"
    BL = "BL"
    IT = "IT"
    TB = "TB"
    LDR = "LDR"
    STR = "STR"
    LDRB = "LDRB"
    STRB = "STRB"
    LDRH = "LDRH"
    STRH = "STRH"
    LDM = "LDM"
    STM = "STM"
    NOP = "NOP"
    HALT = "HALT"


class Instruction:
    """One IR-level instruction plus its encoded width (16 or 32 bits).

    Operand fields are populated per opcode; unused ones stay None.
    `target` holds a resolved absolute address for B/BL and the pool slot
    for literal loads; `table` holds resolved case addresses for TB.
    """

    __slots__ = (
        "kind", "rd", "rn", "rm", "imm", "lsb", "width", "reglist",
        "writeback", "cond", "target", "table", "pattern", "pool_load",
        "width_bits", "addr", "text",
    )

    def __init__(self, kind, rd=None, rn=None, rm=None, imm=None, lsb=None,
                 width=None, reglist=None, writeback=False, cond=Cond.AL,
                 target=None, table=None, pattern=None, pool_load=False,
                 width_bits=16, addr=None, text=""):
        self.kind = kind
        self.rd = rd
        self.rn = rn
        self.rm = rm
        self.imm = imm
        self.lsb = lsb
        self.width = width
        self.reglist = reglist
        self.writeback = writeback
        self.cond = cond
        self.target = target
        self.table = table
        self.pattern = pattern
        self.pool_load = pool_load
        self.width_bits = width_bits
        self.addr = addr
        self.text = text

    @property
    def size(self):
        return self.width_bits // 8

    def __repr__(self):
        at = f"0x{self.addr:08x}: " if self.addr is not None else ""
        return f"<{at}{self.text or self.kind.value}>"

    def to_dict(self):
        d = {"kind": self.kind.value, "width_bits": self.width_bits}
        if self.addr is not None:
            d["addr"] = self.addr
        for key in ("rd", "rn", "rm", "imm", "lsb", "width", "target"):
            val = getattr(self, key)
            if val is not None:
                d[key] = val
        if self.reglist is not None:
            d["reglist"] = list(self.reglist)
        if self.writeback:
            d["writeback"] = True
        if self.cond != Cond.AL:
            d["cond"] = self.cond.name
        if self.table is not None:
            d["table"] = list(self.table)
        if self.pattern is not None:
            d["pattern"] = ["T" if t else "E" for t in self.pattern]
        if self.pool_load:
            d["pool_load"] = True
        if self.text:
            d["text"] = self.text
        return d

    @classmethod
    def from_dict(cls, d):
        ins = cls(Op(d["kind"]), width_bits=d["width_bits"])
        ins.addr = d.get("addr")
        for key in ("rd", "rn", "rm", "imm", "lsb", "width", "target"):
            setattr(ins, key, d.get(key))
        if "reglist" in d:
            ins.reglist = list(d["reglist"])
        ins.writeback = d.get("writeback", False)
        ins.cond = Cond[d.get("cond", "AL")]
        if "table" in d:
            ins.table = list(d["table"])
        if "pattern" in d:
            ins.pattern = [s == "T" for s in d["pattern"]]
        ins.pool_load = d.get("pool_load", False)
        ins.text = d.get("text", "")
        return ins


# ===================================================================
# Pure data-processing operations.  None of these touch the flags.
# ===================================================================

def bitfield_insert(rd_old, rn, lsb, width):
    """Replace rd_old[lsb+width-1:lsb] with rn[width-1:0]; other bits keep."""
    mask = ((1 << width) - 1) << lsb
    return (rd_old & ~mask | ((rn << lsb) & mask)) & MASK32


def bitfield_clear(rd_old, lsb, width):
    mask = ((1 << width) - 1) << lsb
    return rd_old & ~mask & MASK32


def bitfield_extract(rn, lsb, width):
    return (rn >> lsb) & ((1 << width) - 1)


def bit_reverse(rn):
    """Output bit i equals input bit 31-i."""
    r = 0
    rn &= MASK32
    for _ in range(32):
        r = (r << 1) | (rn & 1)
        rn >>= 1
    return r


def hw_divide(signed, rn, rm):
    """Quotient truncated toward zero; divide by zero yields 0.

    Returns (quotient, divide_by_zero) so the caller can trace the event.
    """
    if (rm & MASK32) == 0:
        return 0, True
    if signed:
        a, b = s32(rn), s32(rm)
        q = abs(a) // abs(b)
        if (a < 0) != (b < 0):
            q = -q
        return u32(q), False
    return (rn & MASK32) // (rm & MASK32), False


def mov_wide(imm16):
    """Load a 16-bit immediate into the low half, clearing the top."""
    return imm16 & 0xFFFF


def mov_high(rd_old, imm16):
    """Load a 16-bit immediate into the top half, keeping the low half."""
    return ((imm16 & 0xFFFF) << 16) | (rd_old & 0xFFFF)


def shift_left(rn, amount):
    amount &= 0xFF
    if amount >= 32:
        return 0
    return (rn << amount) & MASK32


def shift_right(rn, amount):
    amount &= 0xFF
    if amount >= 32:
        return 0
    return (rn & MASK32) >> amount


# ===================================================================
# Predication state
# ===================================================================

class ItState:
    """Predication block state set up by an IT instruction.

    The base condition is evaluated once, when IT executes, and the truth
    value is latched; a flag write inside the block cannot flip later
    slots (this keeps predicated and branch-form code equivalent).
    """

    __slots__ = ("base_cond", "pattern", "remaining", "cond_true")

    def __init__(self, base_cond=Cond.AL, pattern=(), remaining=0,
                 cond_true=False):
        self.base_cond = base_cond
        self.pattern = list(pattern)  # True = then-slot, False = else-slot
        self.remaining = remaining
        self.cond_true = cond_true

    @property
    def active(self):
        return self.remaining > 0

    def begin(self, base_cond, pattern, cond_true):
        if not 1 <= len(pattern) <= 4 or not pattern[0]:
            raise ValueError("IT pattern must be 1-4 slots starting with then")
        self.base_cond = base_cond
        self.pattern = list(pattern)
        self.remaining = len(pattern)
        self.cond_true = cond_true

    def advance(self):
        """Consume one slot; returns True when that slot should execute."""
        slot_then = self.pattern[len(self.pattern) - self.remaining]
        self.remaining -= 1
        return self.cond_true if slot_then else not self.cond_true

    def encode(self):
        if not self.active:
            return 0
        bits = 1
        bits |= int(self.base_cond) << 1
        for i, t in enumerate(self.pattern):
            if t:
                bits |= 1 << (5 + i)
        bits |= len(self.pattern) << 9
        bits |= self.remaining << 12
        bits |= int(self.cond_true) << 15
        return bits

    @classmethod
    def decode(cls, bits):
        st = cls()
        if not bits & 1:
            return st
        st.base_cond = Cond((bits >> 1) & 0xF)
        length = (bits >> 9) & 0x7
        st.pattern = [bool(bits & (1 << (5 + i))) for i in range(length)]
        st.remaining = (bits >> 12) & 0x7
        st.cond_true = bool(bits & (1 << 15))
        return st


class MachineState:
    """Register file, flags, predication state and privilege level."""

    def __init__(self):
        self.regs = [0] * 16
        self.n = False
        self.z = False
        self.c = False
        self.v = False
        self.it = ItState()
        self.privileged = True
        self.restart_pc = None  # address of an interrupted LDM/STM

    @property
    def pc(self):
        return self.regs[PC]

    @pc.setter
    def pc(self, value):
        self.regs[PC] = u32(value)

    def set_flags_from_sub(self, a, b):
        """CMP: flags from a - b (the only flag-setting operation)."""
        a &= MASK32
        b &= MASK32
        res = (a - b) & MASK32
        self.n = bool(res & 0x80000000)
        self.z = res == 0
        self.c = a >= b
        self.v = ((a ^ b) & (a ^ res) & 0x80000000) != 0

    def pack_status(self):
        """Flags + IT state + privilege, as one stackable status word."""
        w = (int(self.n) | (int(self.z) << 1) | (int(self.c) << 2)
             | (int(self.v) << 3) | (int(self.privileged) << 4))
        w |= self.it.encode() << 8
        return w

    def unpack_status(self, w):
        self.n = bool(w & 1)
        self.z = bool(w & 2)
        self.c = bool(w & 4)
        self.v = bool(w & 8)
        self.privileged = bool(w & 16)
        self.it = ItState.decode(w >> 8)
