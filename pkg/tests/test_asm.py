"""Assembler: widths, pools, lowering modes, errors, determinism."""

import pytest

from conftest import make_sim
from coresim.asm import (AsmError, assemble, code_size_report,
                         instruction_width, load_image, save_image)
from coresim.isa import Cond, Instruction, Op


def run_image(image, cycles=100000):
    sim = make_sim()
    sim.load_program(image)
    sim.run(cycles)
    return sim


def test_two_instruction_program_size():
    image = assemble("mov r0, #1\nhalt\n")
    report = code_size_report(image)
    assert report["count16"] == 2 and report["count32"] == 0
    assert report["total_bytes"] == 4
    assert report["all32_bytes"] == 8
    assert report["density_ratio"] == 0.5


def test_width_table_spot_checks():
    assert instruction_width(Instruction(Op.MOV, rd=0, imm=5)) == 16
    assert instruction_width(Instruction(Op.MOV, rd=9, imm=5)) == 32
    assert instruction_width(Instruction(Op.MOV, rd=0, imm=999)) == 32
    assert instruction_width(Instruction(Op.MOV, rd=12, rm=14)) == 16
    assert instruction_width(Instruction(Op.ADD, rd=1, rn=1, imm=200)) == 16
    assert instruction_width(Instruction(Op.ADD, rd=1, rn=2, imm=200)) == 32
    assert instruction_width(Instruction(Op.ADD, rd=1, rn=2, rm=3)) == 16
    assert instruction_width(Instruction(Op.ADD, rd=1, rn=2, rm=9)) == 32
    assert instruction_width(Instruction(Op.LDR, rd=1, rn=2, imm=64)) == 16
    assert instruction_width(Instruction(Op.LDR, rd=1, rn=2, imm=400)) == 32
    assert instruction_width(Instruction(Op.LDM, rn=0, reglist=[1, 2])) == 16
    assert instruction_width(Instruction(Op.LDM, rn=0, reglist=[1, 9])) == 32
    for kind in (Op.MOVW, Op.MOVH, Op.BFI, Op.BFC, Op.UBFX, Op.RBIT,
                 Op.UDIV, Op.SDIV):
        proto = Instruction(kind, rd=0, rn=0, rm=0, imm=0, lsb=0, width=1)
        assert instruction_width(proto) == 32
    assert instruction_width(Instruction(Op.IT, pattern=[True])) == 16
    assert instruction_width(Instruction(Op.NOP)) == 16


def test_constant_load_movw_mode():
    image = assemble("ldr r0, =0x12345678\nhalt\n", mode="movw")
    kinds = [i.kind for i in image.instructions]
    assert kinds == [Op.MOVW, Op.MOVH, Op.HALT]
    report = image.size_report()
    assert report["pool_bytes"] == 0
    assert report["code_bytes"] == 4 + 4 + 2
    sim = run_image(image)
    assert sim.machine.regs[0] == 0x12345678


def test_constant_load_pool_mode():
    image = assemble("ldr r0, =0x12345678\nhalt\n", mode="pool")
    kinds = [i.kind for i in image.instructions]
    assert kinds == [Op.LDR, Op.HALT]
    assert image.instructions[0].width_bits == 16
    report = image.size_report()
    assert report["pool_bytes"] == 4
    sim = run_image(image)
    assert sim.machine.regs[0] == 0x12345678


def test_pool_deduplicates_constants():
    src = "ldr r0, =0xCAFE0000\nldr r1, =0xCAFE0000\nhalt\n.pool\n"
    image = assemble(src, mode="pool")
    assert image.size_report()["pool_bytes"] == 4
    assert image.instructions[0].target == image.instructions[1].target
    sim = run_image(image)
    assert sim.machine.regs[0] == sim.machine.regs[1] == 0xCAFE0000


def test_empty_pool_emits_nothing():
    image = assemble("mov r0, #1\n.pool\nhalt\n")
    assert image.size_report()["pool_bytes"] == 0
    assert image.pools == []


def test_mid_code_pool_serves_earlier_loads():
    src = """
start:
    ldr r0, =0xAABBCCDD
    b over
.pool
over:
    halt
"""
    image = assemble(src, mode="pool")
    assert image.pools[0]["addr"] < image.symbols["over"]
    sim = run_image(image)
    assert sim.machine.regs[0] == 0xAABBCCDD


def test_label_address_constant():
    src = "ldr r0, =data\nhalt\ndata:\n.word 0x1234\n"
    image = assemble(src, mode="movw")
    sim = run_image(image)
    assert sim.machine.regs[0] == image.symbols["data"]


def test_pool_out_of_reach_reports_error():
    lines = ["ldr r0, =0x11223344"]
    lines += ["nop"] * 3000  # 6000 bytes to the implicit end pool
    lines += ["halt"]
    with pytest.raises(AsmError) as e:
        assemble("\n".join(lines), mode="pool")
    assert ".pool" in str(e.value)


def test_duplicate_label_rejected():
    with pytest.raises(AsmError) as e:
        assemble("a:\nnop\na:\nhalt\n")
    assert "duplicate" in str(e.value)


def test_undefined_label_rejected():
    with pytest.raises(AsmError) as e:
        assemble("b nowhere\nhalt\n")
    assert "undefined" in str(e.value)


def test_branch_width_by_distance():
    near = assemble("start:\nnop\nbeq start\nhalt\n")
    assert [i.width_bits for i in near.instructions
            if i.kind == Op.B] == [16]
    lines = ["start:"] + ["nop"] * 200 + ["beq start", "halt"]
    far = assemble("\n".join(lines))
    branch = [i for i in far.instructions if i.kind == Op.B][0]
    assert branch.width_bits == 32
    assert branch.target == far.symbols["start"]


def test_branch_beyond_long_range_rejected():
    src = "start:\nnop\n.org 0x200000\nb start\nhalt\n"
    with pytest.raises(AsmError):
        assemble(src)


def test_assembly_is_deterministic():
    src = """
start:
    ldr r0, =0x55AA55AA
    movw r1, #100
loop:
    sub r1, r1, #1
    cmp r1, #0
    bne loop
    halt
"""
    a = assemble(src, mode="pool")
    b = assemble(src, mode="pool")
    assert a.data == b.data
    assert a.to_sidecar() == b.to_sidecar()


def test_branch_targets_match_symbol_table():
    src = """
start:
    b middle
front:
    nop
    halt
middle:
    bne front
    bl front
    halt
"""
    image = assemble(src)
    for ins in image.instructions:
        if ins.kind in (Op.B, Op.BL):
            assert ins.target in image.symbols.values()


def test_mode_equivalence_under_execution():
    src = """
start:
    ldr r0, =0x12345678
    ldr r1, =0xCAFEBABE
    add r2, r0, r1
    ldr r3, =0x000F0000
    and r4, r2, r3
    halt
"""
    sims = [run_image(assemble(src, mode=m)) for m in ("pool", "movw")]
    assert sims[0].machine.regs[:13] == sims[1].machine.regs[:13]
    sizes = [assemble(src, mode=m).size_report() for m in ("pool", "movw")]
    assert sizes[0]["total_bytes"] != sizes[1]["total_bytes"]


def test_it_assembles_and_validates():
    image = assemble("cmp r0, #0\nite eq\nmov r1, #1\nmov r1, #2\nhalt\n")
    it = [i for i in image.instructions if i.kind == Op.IT][0]
    assert it.cond == Cond.EQ and it.pattern == [True, False]

    with pytest.raises(AsmError):
        assemble("it eq\nit ne\nnop\nhalt\n")          # nested
    with pytest.raises(AsmError):
        assemble("itt eq\nb out\nnop\nout:\nhalt\n")   # branch mid-block
    with pytest.raises(AsmError):
        assemble("it eq\n")                            # runs off the end
    with pytest.raises(AsmError):
        assemble("ite al\nnop\nnop\nhalt\n")           # else needs a cond
    with pytest.raises(AsmError):
        assemble("it eq\nlab:\nnop\nhalt\n")           # label inside


def test_bitfield_operand_validation():
    with pytest.raises(AsmError):
        assemble("bfi r0, r1, #30, #4\nhalt\n")   # lsb+width > 32
    with pytest.raises(AsmError):
        assemble("ubfx r0, r1, #0, #0\nhalt\n")   # width < 1
    assemble("bfc r0, #31, #1\nhalt\n")


def test_ldm_writeback_base_in_list_rejected():
    with pytest.raises(AsmError):
        assemble("ldm r1!, {r0-r2}\nhalt\n")
    assemble("ldm r1, {r0-r2}\nhalt\n")


def test_table_branch_emits_guard_and_table():
    src = """
start:
    tb r0, fallback, case0, case1
case0:
    mov r1, #10
    halt
case1:
    mov r1, #20
    halt
fallback:
    mov r1, #99
    halt
"""
    image = assemble(src)
    kinds = [i.kind for i in image.instructions[:3]]
    assert kinds == [Op.CMP, Op.B, Op.TB]
    guard_branch = image.instructions[1]
    assert guard_branch.cond == Cond.CS
    assert guard_branch.target == image.symbols["fallback"]
    tb = image.instructions[2]
    assert tb.addr % 4 == 0 and tb.table == [image.symbols["case0"],
                                             image.symbols["case1"]]
    for idx, expect in ((0, 10), (1, 20), (2, 99), (200, 99)):
        sim = make_sim()
        sim.load_program(image)
        sim.machine.regs[0] = idx
        sim.run()
        assert sim.machine.regs[1] == expect, idx


def test_switch_matches_if_else_chain_oracle():
    table_src = """
start:
    tb r0, other, c0, c1, c2, c3, c4
c0: mov r1, #100
    halt
c1: mov r1, #101
    halt
c2: mov r1, #102
    halt
c3: mov r1, #103
    halt
c4: mov r1, #104
    halt
other:
    mov r1, #55
    halt
"""
    chain_src = """
start:
    cmp r0, #0
    beq c0
    cmp r0, #1
    beq c1
    cmp r0, #2
    beq c2
    cmp r0, #3
    beq c3
    cmp r0, #4
    beq c4
    mov r1, #55
    halt
c0: mov r1, #100
    halt
c1: mov r1, #101
    halt
c2: mov r1, #102
    halt
c3: mov r1, #103
    halt
c4: mov r1, #104
    halt
"""
    table = assemble(table_src)
    chain = assemble(chain_src)
    for idx in range(5):
        a = make_sim()
        a.load_program(table)
        a.machine.regs[0] = idx
        a.run()
        b = make_sim()
        b.load_program(chain)
        b.machine.regs[0] = idx
        b.run()
        assert a.machine.regs[1] == b.machine.regs[1] == 100 + idx


def test_org_and_word_directives():
    src = """
start:
    ldr r0, =table
    ldr r1, [r0]
    halt
.org 0x100
table:
.word 0xFEEDF00D, start
"""
    image = assemble(src, mode="movw")
    assert image.symbols["table"] == 0x100
    sim = run_image(image)
    assert sim.machine.regs[1] == 0xFEEDF00D


def test_org_backwards_rejected():
    with pytest.raises(AsmError):
        assemble(".org 0x100\nnop\n.org 0x50\nhalt\n")


def test_mode_directive_switches_lowering():
    src = """
.mode movw
    ldr r0, =0x11112222
.mode pool
    ldr r1, =0x33334444
    halt
"""
    image = assemble(src, mode="pool")
    kinds = [i.kind for i in image.instructions]
    assert kinds == [Op.MOVW, Op.MOVH, Op.LDR, Op.HALT]
    assert image.size_report()["pool_bytes"] == 4


def test_width_accounting_sums_to_image_size():
    src = """
start:
    ldr r0, =0x01020304
    movw r5, #1000
loop:
    sub r5, r5, #1
    cmp r5, #0
    bne loop
    tb r5, out, out
out:
    halt
.word 123
"""
    image = assemble(src, mode="pool")
    r = image.size_report()
    assert r["code_bytes"] + r["pool_bytes"] + r["data_bytes"] \
        + r["pad_bytes"] == r["total_bytes"] == len(image.data)


def test_sidecar_round_trip(tmp_path):
    src = "start:\nldr r0, =0xABCD1234\nbl fn\nhalt\nfn:\nmov pc, lr\n"
    image = assemble(src, mode="pool")
    path = tmp_path / "prog.bin"
    save_image(image, path)
    loaded = load_image(path)
    assert loaded.data == image.data
    assert loaded.symbols == image.symbols
    assert [i.to_dict() for i in loaded.instructions] \
        == [i.to_dict() for i in image.instructions]
    sim = run_image(loaded)
    assert sim.machine.regs[0] == 0xABCD1234


def test_case_insensitive_and_aliases():
    image = assemble("MOV R0, #1\nMov r1, #2\nmov SP, r0\nhalt\n")
    assert image.instructions[2].rd == 13


def test_unknown_mnemonic_rejected():
    with pytest.raises(AsmError):
        assemble("frobnicate r0\nhalt\n")
