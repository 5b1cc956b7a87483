"""
Two-pass assembler for the simulator's dialect.

Line oriented, ';' comments, case-insensitive mnemonics, registers r0-r15
with sp/lr/pc aliases.  Directives: .org, .word, .pool, .table, .mode.

The dialect mimics compiler output: `ldr rd, =value` lowers either to a
pc-relative load from the nearest following literal pool (pool mode) or to
a movw/movh pair (movw mode); `tb` dispatches get an automatic
compare-and-branch bounds guard; conditional branches pick the 16-bit form
when the target lies within +-256 bytes.

Instruction widths come from a fixed table (real encodings are out of
scope); branch widths are settled by iterated relaxation, growing 16-bit
forms until every short branch is in range.
"""

import json
import struct

from .isa import Cond, Instruction, Op, u32

POOL_REACH_LIMIT = 4096
SHORT_BRANCH_RANGE = 256
LONG_BRANCH_RANGE = 1 << 20

REG_ALIASES = {"sp": 13, "lr": 14, "pc": 15}

_OP_ORDINALS = {op: i for i, op in enumerate(Op)}


class AsmError(Exception):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


# ===================================================================
# Statements (internal representation between the passes)
# ===================================================================

class _Stmt:
    align = 2

    def __init__(self, line):
        self.line = line
        self.addr = None


class _InstrStmt(_Stmt):
    def __init__(self, line, proto, label_refs=None):
        super().__init__(line)
        self.proto = proto          # Instruction with unresolved targets
        self.label_refs = label_refs or {}
        self.width_bits = None
        self.in_it_block = False

    @property
    def size(self):
        return self.width_bits // 8


class _WordStmt(_Stmt):
    align = 4

    def __init__(self, line, values):
        super().__init__(line)
        self.values = values  # ints or label names

    @property
    def size(self):
        return 4 * len(self.values)


class _PoolStmt(_Stmt):
    align = 4

    def __init__(self, line):
        super().__init__(line)
        self.entries = []  # (value_or_label, addr) filled during layout

    @property
    def size(self):
        return 4 * len(self.entries)


class _OrgStmt(_Stmt):
    align = 1

    def __init__(self, line, target_addr):
        super().__init__(line)
        self.target_addr = target_addr
        self.size = 0


class _LabelStmt(_Stmt):
    align = 1
    size = 0

    def __init__(self, line, name):
        super().__init__(line)
        self.name = name


class _AlignPad(_Stmt):
    """Zero filler inserted during layout; size recomputed every pass."""
    align = 1

    def __init__(self, owner):
        super().__init__(owner)
        self.size = 0


# ===================================================================
# Operand parsing
# ===================================================================

def parse_register(tok, line):
    t = tok.strip().lower()
    if t in REG_ALIASES:
        return REG_ALIASES[t]
    if t.startswith("r") and t[1:].isdigit():
        n = int(t[1:])
        if 0 <= n <= 15:
            return n
    raise AsmError(f"bad register {tok!r}", line)


def parse_int(tok, line):
    t = tok.strip().lower().lstrip("#")
    try:
        return int(t, 0)
    except ValueError:
        raise AsmError(f"bad integer {tok!r}", line) from None


def is_label_token(tok):
    t = tok.strip()
    return (t and not t.startswith(("#", "[", "{", "=")) and
            not t[0].isdigit() and not t.startswith("-"))


def split_operands(text):
    """Split on top-level commas, keeping [..] and {..} intact."""
    parts = []
    depth = 0
    cur = ""
    for ch in text:
        if ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append(cur.strip())
            cur = ""
        else:
            cur += ch
    if cur.strip():
        parts.append(cur.strip())
    return parts


def parse_reglist(tok, line):
    t = tok.strip()
    if not (t.startswith("{") and t.endswith("}")):
        raise AsmError(f"expected register list, got {tok!r}", line)
    regs = set()
    for part in t[1:-1].split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            lo_s, hi_s = part.split("-", 1)
            lo = parse_register(lo_s, line)
            hi = parse_register(hi_s, line)
            if hi < lo:
                raise AsmError(f"bad register range {part!r}", line)
            regs.update(range(lo, hi + 1))
        else:
            regs.add(parse_register(part, line))
    if not regs:
        raise AsmError("empty register list", line)
    return sorted(regs)


def parse_mem_operand(tok, line):
    """[rn] or [rn, #imm] -> (rn, imm)."""
    t = tok.strip()
    if not (t.startswith("[") and t.endswith("]")):
        raise AsmError(f"expected memory operand, got {tok!r}", line)
    inner = split_operands(t[1:-1])
    rn = parse_register(inner[0], line)
    imm = 0
    if len(inner) == 2:
        imm = parse_int(inner[1], line)
    elif len(inner) > 2:
        raise AsmError(f"bad memory operand {tok!r}", line)
    return rn, imm


# ===================================================================
# Width table
# ===================================================================

def _low(*regs):
    return all(r is not None and r < 8 for r in regs)


def instruction_width(proto):
    """Fixed width in bits, or None for branches (distance-dependent)."""
    k = proto.kind
    if k in (Op.MOVW, Op.MOVH, Op.BFI, Op.BFC, Op.UBFX, Op.RBIT,
             Op.UDIV, Op.SDIV, Op.TB, Op.BL):
        return 32
    if k in (Op.IT, Op.NOP, Op.HALT):
        return 16
    if k == Op.B:
        return None
    if k == Op.MOV:
        if proto.rm is not None:
            return 16
        return 16 if _low(proto.rd) and proto.imm < 256 else 32
    if k in (Op.ADD, Op.SUB):
        if proto.rm is not None:
            return 16 if _low(proto.rd, proto.rn, proto.rm) else 32
        if proto.rd == proto.rn and _low(proto.rd) and proto.imm < 256:
            return 16
        return 16 if _low(proto.rd, proto.rn) and proto.imm < 8 else 32
    if k in (Op.AND, Op.ORR, Op.EOR):
        if proto.rm is not None and proto.rd == proto.rn \
                and _low(proto.rd, proto.rm):
            return 16
        return 32
    if k in (Op.LSL, Op.LSR):
        if proto.rm is None:
            return 16 if _low(proto.rd, proto.rn) else 32
        return 16 if proto.rd == proto.rn and _low(proto.rd, proto.rm) else 32
    if k == Op.CMP:
        if proto.rm is not None:
            return 16
        return 16 if _low(proto.rn) and proto.imm < 256 else 32
    if k in (Op.LDR, Op.STR, Op.LDRB, Op.STRB, Op.LDRH, Op.STRH):
        if proto.pool_load:
            return 16 if _low(proto.rd) else 32
        limit = {Op.LDR: 124, Op.STR: 124, Op.LDRB: 31, Op.STRB: 31,
                 Op.LDRH: 62, Op.STRH: 62}[k]
        if _low(proto.rd, proto.rn) and 0 <= (proto.imm or 0) <= limit:
            return 16
        return 32
    if k in (Op.LDM, Op.STM):
        if _low(proto.rn) and all(r < 8 for r in proto.reglist):
            return 16
        return 32
    raise AsmError(f"no width rule for {k}")


# ===================================================================
# Program image
# ===================================================================

class ProgramImage:
    def __init__(self, base, data, instructions, symbols, pools, mode,
                 counts):
        self.base = base
        self.data = data
        self.instructions = instructions
        self.symbols = symbols
        self.pools = pools
        self.mode = mode
        self.count16 = counts["n16"]
        self.count32 = counts["n32"]
        self.pool_bytes = counts["pool_bytes"]
        self.data_bytes = counts["data_bytes"]
        self.pad_bytes = counts.get("pad_bytes", 0)

    @property
    def entry_point(self):
        for name in ("start", "_start", "main"):
            if name in self.symbols:
                return self.symbols[name]
        return self.base

    @property
    def total_bytes(self):
        return len(self.data)

    def instruction_at(self, addr):
        for ins in self.instructions:
            if ins.addr == addr:
                return ins
        return None

    def size_report(self):
        """Exact byte accounting plus the hypothetical all-32-bit size.

        code + pool + data + pad always equals the image size; the
        hypothetical size recounts every instruction at 32 bits.
        """
        code = 2 * self.count16 + 4 * self.count32
        all32 = 4 * (self.count16 + self.count32) + self.pool_bytes \
            + self.data_bytes + self.pad_bytes
        return {
            "count16": self.count16,
            "count32": self.count32,
            "code_bytes": code,
            "pool_bytes": self.pool_bytes,
            "data_bytes": self.data_bytes,
            "pad_bytes": self.pad_bytes,
            "total_bytes": self.total_bytes,
            "all32_bytes": all32,
            "density_ratio": self.total_bytes / all32 if all32 else 1.0,
        }

    def to_sidecar(self):
        return {
            "base": self.base,
            "entry_point": self.entry_point,
            "mode": self.mode,
            "symbols": self.symbols,
            "instructions": [ins.to_dict() for ins in self.instructions],
            "pools": self.pools,
            "sizes": self.size_report(),
        }

    @classmethod
    def from_sidecar(cls, sidecar, data):
        instructions = [Instruction.from_dict(d)
                        for d in sidecar["instructions"]]
        sizes = sidecar["sizes"]
        return cls(sidecar["base"], bytes(data), instructions,
                   sidecar["symbols"], sidecar["pools"], sidecar["mode"],
                   {"n16": sizes["count16"], "n32": sizes["count32"],
                    "pool_bytes": sizes["pool_bytes"],
                    "data_bytes": sizes["data_bytes"],
                    "pad_bytes": sizes.get("pad_bytes", 0)})


def code_size_report(image):
    return image.size_report()


def save_image(image, path):
    with open(path, "wb") as f:
        f.write(image.data)
    with open(str(path) + ".json", "w") as f:
        json.dump(image.to_sidecar(), f, indent=2, sort_keys=True)


def load_image(path):
    with open(str(path) + ".json") as f:
        sidecar = json.load(f)
    with open(path, "rb") as f:
        data = f.read()
    return ProgramImage.from_sidecar(sidecar, data)


# ===================================================================
# Assembler
# ===================================================================

IT_PATTERNS = {"it": "T", "itt": "TT", "ite": "TE", "ittt": "TTT",
               "itte": "TTE", "itet": "TET", "itee": "TEE",
               "itttt": "TTTT", "ittte": "TTTE", "ittet": "TTET",
               "ittee": "TTEE", "itett": "TETT", "itete": "TETE",
               "iteet": "TEET", "iteee": "TEEE"}

COND_NAMES = {c.name.lower(): c for c in Cond}


class Assembler:
    def __init__(self, source, mode="pool", base=0):
        if mode not in ("pool", "movw"):
            raise AsmError(f"unknown mode {mode!r}")
        self.source = source
        self.mode = mode
        self.base = base
        self.stmts = []
        self.symbols = {}
        self._label_refs = []  # (name, line) for early checking

    # -------------------------------------------------------------
    # Parse
    # -------------------------------------------------------------

    def parse(self):
        mode = self.mode
        defined = set()
        for num, raw in enumerate(self.source.splitlines(), start=1):
            line = raw.split(";", 1)[0].strip()
            while line and ":" in line.split()[0]:
                name, _, line = line.partition(":")
                name = name.strip()
                line = line.strip()
                if not name.isidentifier():
                    raise AsmError(f"bad label {name!r}", num)
                if name in defined:
                    raise AsmError(f"duplicate label {name!r}", num)
                defined.add(name)
                self.stmts.append(_LabelStmt(num, name))
            if not line:
                continue
            if line.startswith("."):
                mode = self._parse_directive(line, num, mode)
            else:
                self._parse_instruction(line, num, mode)
        self.stmts.append(_PoolStmt(0))  # implicit end-of-unit pool
        self._validate_it_blocks()
        self._check_labels()

    def _parse_directive(self, line, num, mode):
        parts = line.split(None, 1)
        name = parts[0].lower()
        rest = parts[1] if len(parts) > 1 else ""
        if name == ".org":
            self.stmts.append(_OrgStmt(num, parse_int(rest, num)))
        elif name == ".word":
            values = []
            for tok in split_operands(rest):
                if is_label_token(tok):
                    values.append(tok)
                    self._label_refs.append((tok, num))
                else:
                    values.append(u32(parse_int(tok, num)))
            if not values:
                raise AsmError(".word needs at least one value", num)
            self.stmts.append(_WordStmt(num, values))
        elif name == ".pool":
            self.stmts.append(_PoolStmt(num))
        elif name == ".table":
            labels = [tok for tok in split_operands(rest)]
            if not labels:
                raise AsmError(".table needs at least one label", num)
            for tok in labels:
                self._label_refs.append((tok, num))
            self.stmts.append(_WordStmt(num, labels))
        elif name == ".mode":
            m = rest.strip().lower()
            if m not in ("pool", "movw"):
                raise AsmError(f"bad .mode {rest!r}", num)
            return m
        else:
            raise AsmError(f"unknown directive {name}", num)
        return mode

    def _parse_instruction(self, line, num, mode):
        parts = line.split(None, 1)
        mnem = parts[0].lower()
        operands = split_operands(parts[1]) if len(parts) > 1 else []
        text = " ".join(line.split())

        if mnem in IT_PATTERNS:
            if len(operands) != 1:
                raise AsmError("IT needs a condition", num)
            cond = COND_NAMES.get(operands[0].lower())
            if cond is None:
                raise AsmError(f"bad condition {operands[0]!r}", num)
            pattern = [ch == "T" for ch in IT_PATTERNS[mnem]]
            if cond == Cond.AL and not all(pattern):
                raise AsmError("else slots need a real condition", num)
            self._emit(num, Instruction(Op.IT, cond=cond, pattern=pattern,
                                        text=text))
            return
        if mnem == "bl":
            self._emit_branch(num, Op.BL, Cond.AL, operands, text)
            return
        if mnem == "b" or (mnem.startswith("b") and mnem[1:] in COND_NAMES):
            cond = Cond.AL if mnem == "b" else COND_NAMES[mnem[1:]]
            self._emit_branch(num, Op.B, cond, operands, text)
            return

        handler = getattr(self, f"_ins_{mnem}", None)
        if handler is None:
            raise AsmError(f"unknown mnemonic {mnem!r}", num)
        handler(num, operands, text, mode)

    def _emit(self, num, proto, label_refs=None):
        self.stmts.append(_InstrStmt(num, proto, label_refs))

    def _emit_branch(self, num, kind, cond, operands, text):
        if len(operands) != 1 or not is_label_token(operands[0]):
            raise AsmError(f"{kind.value} needs a label", num)
        self._label_refs.append((operands[0], num))
        self._emit(num, Instruction(kind, cond=cond, text=text),
                   {"target": operands[0]})

    # individual mnemonics -----------------------------------------

    def _ins_nop(self, num, ops, text, mode):
        if ops:
            raise AsmError("nop takes no operands", num)
        self._emit(num, Instruction(Op.NOP, text=text))

    def _ins_halt(self, num, ops, text, mode):
        if ops:
            raise AsmError("halt takes no operands", num)
        self._emit(num, Instruction(Op.HALT, text=text))

    def _two_op(self, num, ops, text, kind):
        """rd, (rm | #imm) forms (mov, and the 2-address aliases)."""
        if len(ops) != 2:
            raise AsmError(f"{kind.value} needs 2 operands", num)
        rd = parse_register(ops[0], num)
        if ops[1].startswith("#"):
            imm = u32(parse_int(ops[1], num))
            self._emit(num, Instruction(kind, rd=rd, rn=rd, imm=imm,
                                        text=text))
        else:
            rm = parse_register(ops[1], num)
            self._emit(num, Instruction(kind, rd=rd, rn=rd, rm=rm, text=text))

    def _three_op(self, num, ops, text, kind):
        """rd, rn, (rm|#imm); 2-operand shorthand folds rn = rd."""
        if len(ops) == 2:
            return self._two_op(num, ops, text, kind)
        if len(ops) != 3:
            raise AsmError(f"{kind.value} needs 2 or 3 operands", num)
        rd = parse_register(ops[0], num)
        rn = parse_register(ops[1], num)
        if ops[2].startswith("#"):
            imm = u32(parse_int(ops[2], num))
            self._emit(num, Instruction(kind, rd=rd, rn=rn, imm=imm,
                                        text=text))
        else:
            rm = parse_register(ops[2], num)
            self._emit(num, Instruction(kind, rd=rd, rn=rn, rm=rm, text=text))

    def _ins_mov(self, num, ops, text, mode):
        if len(ops) != 2:
            raise AsmError("mov needs 2 operands", num)
        rd = parse_register(ops[0], num)
        if ops[1].startswith("#"):
            self._emit(num, Instruction(Op.MOV, rd=rd,
                                        imm=u32(parse_int(ops[1], num)),
                                        text=text))
        else:
            self._emit(num, Instruction(Op.MOV, rd=rd,
                                        rm=parse_register(ops[1], num),
                                        text=text))

    def _mov_half(self, num, ops, text, kind):
        if len(ops) != 2 or not ops[1].startswith("#"):
            raise AsmError(f"{kind.value} needs rd, #imm16", num)
        imm = parse_int(ops[1], num)
        if not 0 <= imm < 1 << 16:
            raise AsmError(f"immediate {imm} out of 16-bit range", num)
        self._emit(num, Instruction(kind, rd=parse_register(ops[0], num),
                                    imm=imm, text=text))

    def _ins_movw(self, num, ops, text, mode):
        self._mov_half(num, ops, text, Op.MOVW)

    def _ins_movh(self, num, ops, text, mode):
        self._mov_half(num, ops, text, Op.MOVH)

    def _ins_add(self, num, ops, text, mode):
        self._three_op(num, ops, text, Op.ADD)

    def _ins_sub(self, num, ops, text, mode):
        self._three_op(num, ops, text, Op.SUB)

    def _ins_and(self, num, ops, text, mode):
        self._three_op(num, ops, text, Op.AND)

    def _ins_orr(self, num, ops, text, mode):
        self._three_op(num, ops, text, Op.ORR)

    def _ins_eor(self, num, ops, text, mode):
        self._three_op(num, ops, text, Op.EOR)

    def _ins_lsl(self, num, ops, text, mode):
        self._three_op(num, ops, text, Op.LSL)

    def _ins_lsr(self, num, ops, text, mode):
        self._three_op(num, ops, text, Op.LSR)

    def _ins_cmp(self, num, ops, text, mode):
        if len(ops) != 2:
            raise AsmError("cmp needs 2 operands", num)
        rn = parse_register(ops[0], num)
        if ops[1].startswith("#"):
            self._emit(num, Instruction(Op.CMP, rn=rn,
                                        imm=u32(parse_int(ops[1], num)),
                                        text=text))
        else:
            self._emit(num, Instruction(Op.CMP, rn=rn,
                                        rm=parse_register(ops[1], num),
                                        text=text))

    def _div(self, num, ops, text, kind):
        if len(ops) != 3:
            raise AsmError(f"{kind.value} needs rd, rn, rm", num)
        self._emit(num, Instruction(kind, rd=parse_register(ops[0], num),
                                    rn=parse_register(ops[1], num),
                                    rm=parse_register(ops[2], num),
                                    text=text))

    def _ins_udiv(self, num, ops, text, mode):
        self._div(num, ops, text, Op.UDIV)

    def _ins_sdiv(self, num, ops, text, mode):
        self._div(num, ops, text, Op.SDIV)

    def _bitfield(self, num, ops, text, kind, has_rn):
        want = 4 if has_rn else 3
        if len(ops) != want:
            raise AsmError(f"{kind.value} needs {want} operands", num)
        rd = parse_register(ops[0], num)
        rn = parse_register(ops[1], num) if has_rn else None
        lsb = parse_int(ops[-2], num)
        width = parse_int(ops[-1], num)
        if width < 1 or lsb < 0 or lsb + width > 32:
            raise AsmError(
                f"bad bit field lsb={lsb} width={width}", num)
        self._emit(num, Instruction(kind, rd=rd, rn=rn, lsb=lsb, width=width,
                                    text=text))

    def _ins_bfi(self, num, ops, text, mode):
        self._bitfield(num, ops, text, Op.BFI, has_rn=True)

    def _ins_bfc(self, num, ops, text, mode):
        self._bitfield(num, ops, text, Op.BFC, has_rn=False)

    def _ins_ubfx(self, num, ops, text, mode):
        self._bitfield(num, ops, text, Op.UBFX, has_rn=True)

    def _ins_rbit(self, num, ops, text, mode):
        if len(ops) != 2:
            raise AsmError("rbit needs rd, rn", num)
        self._emit(num, Instruction(Op.RBIT, rd=parse_register(ops[0], num),
                                    rn=parse_register(ops[1], num),
                                    text=text))

    def _load_store(self, num, ops, text, kind, mode):
        if len(ops) != 2:
            raise AsmError(f"{kind.value} needs 2 operands", num)
        rd = parse_register(ops[0], num)
        if ops[1].startswith("="):
            if kind != Op.LDR:
                raise AsmError("=constant only valid with ldr", num)
            self._lower_constant_load(num, rd, ops[1][1:].strip(), text, mode)
            return
        rn, imm = parse_mem_operand(ops[1], num)
        self._emit(num, Instruction(kind, rd=rd, rn=rn, imm=imm, text=text))

    def _lower_constant_load(self, num, rd, expr, text, mode):
        if is_label_token(expr):
            value = expr  # resolved to the label's address at layout
            self._label_refs.append((expr, num))
        else:
            value = u32(parse_int(expr, num))
        if mode == "movw":
            # constant carried immediately within the instruction stream
            symbolic = isinstance(value, str)
            self._emit(num, Instruction(Op.MOVW, rd=rd,
                                        imm=0 if symbolic else value & 0xFFFF,
                                        text=f"movw half of: {text}"),
                       {"movw_label": value} if symbolic else None)
            self._emit(num, Instruction(Op.MOVH, rd=rd,
                                        imm=0 if symbolic else value >> 16,
                                        text=f"movh half of: {text}"),
                       {"movh_label": value} if symbolic else None)
        else:
            self._emit(num, Instruction(Op.LDR, rd=rd, pool_load=True,
                                        text=text),
                       {"pool_value": value})

    def _ins_ldr(self, num, ops, text, mode):
        self._load_store(num, ops, text, Op.LDR, mode)

    def _ins_str(self, num, ops, text, mode):
        self._load_store(num, ops, text, Op.STR, mode)

    def _ins_ldrb(self, num, ops, text, mode):
        self._load_store(num, ops, text, Op.LDRB, mode)

    def _ins_strb(self, num, ops, text, mode):
        self._load_store(num, ops, text, Op.STRB, mode)

    def _ins_ldrh(self, num, ops, text, mode):
        self._load_store(num, ops, text, Op.LDRH, mode)

    def _ins_strh(self, num, ops, text, mode):
        self._load_store(num, ops, text, Op.STRH, mode)

    def _ldm_stm(self, num, ops, text, kind):
        if len(ops) != 2:
            raise AsmError(f"{kind.value} needs base, {{list}}", num)
        base_tok = ops[0].strip()
        writeback = base_tok.endswith("!")
        rn = parse_register(base_tok.rstrip("!"), num)
        reglist = parse_reglist(ops[1], num)
        if writeback and rn in reglist:
            raise AsmError("base register in list with writeback", num)
        self._emit(num, Instruction(kind, rn=rn, reglist=reglist,
                                    writeback=writeback, text=text))

    def _ins_ldm(self, num, ops, text, mode):
        self._ldm_stm(num, ops, text, Op.LDM)

    def _ins_stm(self, num, ops, text, mode):
        self._ldm_stm(num, ops, text, Op.STM)

    def _ins_tb(self, num, ops, text, mode):
        if len(ops) < 3:
            raise AsmError("tb needs rn, default, case...", num)
        rn = parse_register(ops[0], num)
        default = ops[1]
        cases = ops[2:]
        for tok in [default] + cases:
            if not is_label_token(tok):
                raise AsmError(f"expected label, got {tok!r}", num)
            self._label_refs.append((tok, num))
        # automatic bounds guard, then the dispatch with its inline table
        self._emit(num, Instruction(Op.CMP, rn=rn, imm=len(cases),
                                    text=f"cmp r{rn}, #{len(cases)} ; guard"))
        self._emit(num, Instruction(Op.B, cond=Cond.CS,
                                    text=f"bcs {default} ; guard"),
                   {"target": default})
        tb = _InstrStmt(num, Instruction(Op.TB, rn=rn, text=text),
                        {"table": cases})
        tb.align = 4  # keeps the inline table word-aligned
        self.stmts.append(tb)
        self.stmts.append(_WordStmt(num, list(cases)))

    # -------------------------------------------------------------
    # Validation
    # -------------------------------------------------------------

    def _validate_it_blocks(self):
        instrs = [(i, s) for i, s in enumerate(self.stmts)
                  if isinstance(s, _InstrStmt)]
        for pos, (i, s) in enumerate(instrs):
            if s.proto.kind != Op.IT:
                continue
            block_len = len(s.proto.pattern)
            block = instrs[pos + 1:pos + 1 + block_len]
            if len(block) < block_len:
                raise AsmError("IT block runs past end of unit", s.line)
            prev_index = i
            for slot, (j, member) in enumerate(block):
                for between in self.stmts[prev_index + 1:j]:
                    if isinstance(between, _LabelStmt):
                        raise AsmError("label inside IT block",
                                       between.line)
                    if not isinstance(between, _InstrStmt):
                        raise AsmError("directive inside IT block",
                                       between.line)
                prev_index = j
                kind = member.proto.kind
                if kind == Op.IT:
                    raise AsmError("nested IT block", member.line)
                if kind in (Op.B, Op.BL, Op.TB) and slot != block_len - 1:
                    raise AsmError("branch only allowed in final IT slot",
                                   member.line)
                if kind == Op.B and member.proto.cond != Cond.AL:
                    raise AsmError("conditional branch inside IT block",
                                   member.line)
                member.in_it_block = True

    def _check_labels(self):
        defined = {s.name for s in self.stmts if isinstance(s, _LabelStmt)}
        for name, line in self._label_refs:
            if name not in defined:
                raise AsmError(f"undefined label {name!r}", line)

    # -------------------------------------------------------------
    # Layout: addresses, widths, pools
    # -------------------------------------------------------------

    def layout(self):
        for s in self.stmts:
            if isinstance(s, _InstrStmt):
                s.width_bits = instruction_width(s.proto) or 16
        for _ in range(len(self.stmts) + 2):
            self._assign_addresses()
            if not self._grow_branches():
                break
        else:
            raise AsmError("branch width relaxation did not converge")
        self._assign_addresses()
        self._check_pool_reach()

    def _assign_addresses(self):
        self.symbols = {}
        cursor = self.base
        pending_pool = []    # (stmt, value) loads awaiting the next flush
        pending_labels = []  # labels bind after the next statement's padding
        self._pads = {}
        for idx, s in enumerate(self.stmts):
            if isinstance(s, _OrgStmt):
                if s.target_addr < cursor:
                    raise AsmError(".org moves backwards", s.line)
                cursor = s.target_addr
                continue
            if isinstance(s, _LabelStmt):
                pending_labels.append(s)
                continue
            if isinstance(s, _PoolStmt) and not any(
                    True for _ in pending_pool):
                s.entries = []
                self._pads[idx] = 0
                s.addr = cursor
                continue  # an empty flush takes no space at all
            pad = (-cursor) % s.align
            self._pads[idx] = pad
            cursor += pad
            s.addr = cursor
            for lbl in pending_labels:
                lbl.addr = cursor
                self.symbols[lbl.name] = cursor
            pending_labels = []
            if isinstance(s, _PoolStmt):
                s.entries = []
                seen = {}
                for load_stmt, value in pending_pool:
                    key = value
                    if key not in seen:
                        seen[key] = cursor + 4 * len(s.entries)
                        s.entries.append((value, seen[key]))
                    load_stmt.proto.target = seen[key]
                pending_pool = []
            elif isinstance(s, _InstrStmt) and "pool_value" in s.label_refs:
                pending_pool.append((s, s.label_refs["pool_value"]))
            cursor += s.size
        for lbl in pending_labels:
            lbl.addr = cursor
            self.symbols[lbl.name] = cursor
        self.end_addr = cursor

    def _grow_branches(self):
        grew = False
        for s in self.stmts:
            if not isinstance(s, _InstrStmt) or s.proto.kind != Op.B:
                continue
            target = self.symbols[s.label_refs["target"]]
            disp = target - s.addr
            if s.width_bits == 16 and abs(disp) > SHORT_BRANCH_RANGE:
                s.width_bits = 32
                grew = True
            if abs(disp) > LONG_BRANCH_RANGE:
                raise AsmError(f"branch target out of range ({disp} bytes)",
                               s.line)
        return grew

    def _check_pool_reach(self):
        for s in self.stmts:
            if isinstance(s, _InstrStmt) and s.proto.pool_load:
                dist = s.proto.target - s.addr
                if not 0 <= dist <= POOL_REACH_LIMIT:
                    raise AsmError(
                        f"literal pool {dist} bytes away (limit "
                        f"{POOL_REACH_LIMIT}); insert a .pool directive",
                        s.line)

    # -------------------------------------------------------------
    # Emission
    # -------------------------------------------------------------

    def _resolve(self, token_or_value, line):
        if isinstance(token_or_value, str):
            if token_or_value not in self.symbols:
                raise AsmError(f"undefined label {token_or_value!r}", line)
            return self.symbols[token_or_value]
        return token_or_value

    def emit(self):
        data = bytearray(self.end_addr - self.base)
        instructions = []
        pools = []
        n16 = n32 = pool_bytes = data_bytes = pad_bytes = 0

        for idx, s in enumerate(self.stmts):
            pad_bytes += self._pads.get(idx, 0)
            if isinstance(s, _InstrStmt):
                ins = s.proto
                ins.addr = s.addr
                ins.width_bits = s.width_bits
                self._resolve_instr(s)
                off = s.addr - self.base
                data[off:off + s.size] = self._pseudo_bytes(ins)
                instructions.append(ins)
                if s.width_bits == 16:
                    n16 += 1
                else:
                    n32 += 1
            elif isinstance(s, _WordStmt):
                off = s.addr - self.base
                for i, v in enumerate(s.values):
                    word = u32(self._resolve(v, s.line))
                    data[off + 4 * i:off + 4 * i + 4] = struct.pack("<I", word)
                data_bytes += s.size
            elif isinstance(s, _PoolStmt):
                off = s.addr - self.base
                entries = []
                for i, (v, addr) in enumerate(s.entries):
                    word = u32(self._resolve(v, s.line))
                    data[off + 4 * i:off + 4 * i + 4] = struct.pack("<I", word)
                    entries.append({"addr": addr, "value": word})
                if entries:
                    pools.append({"addr": s.addr, "entries": entries})
                pool_bytes += s.size

        return ProgramImage(
            self.base, bytes(data), instructions, dict(self.symbols), pools,
            self.mode, {"n16": n16, "n32": n32, "pool_bytes": pool_bytes,
                        "data_bytes": data_bytes, "pad_bytes": pad_bytes})

    def _resolve_instr(self, s):
        ins = s.proto
        refs = s.label_refs
        if "target" in refs:
            ins.target = self._resolve(refs["target"], s.line)
        if "movw_label" in refs:
            ins.imm = self._resolve(refs["movw_label"], s.line) & 0xFFFF
        if "movh_label" in refs:
            ins.imm = self._resolve(refs["movh_label"], s.line) >> 16
        if "pool_value" in refs:
            pass  # target already points at the pool slot
        if "table" in refs:
            ins.table = [self._resolve(t, s.line) for t in refs["table"]]
            ins.target = s.addr + ins.size  # inline table follows

    @staticmethod
    def _pseudo_bytes(ins):
        # placeholder encoding: deterministic, never decoded (the simulator
        # executes the IR); real opcode encodings are out of scope
        tag = 0xD0 | (ins.width_bits // 16)
        if ins.size == 2:
            return struct.pack("<BB", _OP_ORDINALS[ins.kind], tag)
        return struct.pack("<BBH", _OP_ORDINALS[ins.kind], tag, 0xFFFF)


def assemble(source, mode="pool", base=0):
    """Assemble one source unit into a loadable program image."""
    a = Assembler(source, mode=mode, base=base)
    a.parse()
    a.layout()
    return a.emit()
