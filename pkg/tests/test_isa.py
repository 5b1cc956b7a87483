"""Oracle checks for the pure instruction operations."""

import random

from coresim.isa import (Cond, ItState, MachineState, bit_reverse,
                         bitfield_clear, bitfield_extract, bitfield_insert,
                         cond_holds, hw_divide, mov_high, mov_wide)

# independent truth-table oracle, written straight from the flag definitions
COND_ORACLE = {
    Cond.EQ: lambda n, z, c, v: z,
    Cond.NE: lambda n, z, c, v: not z,
    Cond.CS: lambda n, z, c, v: c,
    Cond.CC: lambda n, z, c, v: not c,
    Cond.MI: lambda n, z, c, v: n,
    Cond.PL: lambda n, z, c, v: not n,
    Cond.VS: lambda n, z, c, v: v,
    Cond.VC: lambda n, z, c, v: not v,
    Cond.HI: lambda n, z, c, v: c and not z,
    Cond.LS: lambda n, z, c, v: not (c and not z),
    Cond.GE: lambda n, z, c, v: n == v,
    Cond.LT: lambda n, z, c, v: n != v,
    Cond.GT: lambda n, z, c, v: not z and n == v,
    Cond.LE: lambda n, z, c, v: not (not z and n == v),
    Cond.AL: lambda n, z, c, v: True,
}


def bfi_oracle(rd_old, rn, lsb, width):
    bits = [(rd_old >> i) & 1 for i in range(32)]
    for j in range(width):
        bits[lsb + j] = (rn >> j) & 1
    return sum(b << i for i, b in enumerate(bits))


def bfc_oracle(rd_old, lsb, width):
    bits = [(rd_old >> i) & 1 for i in range(32)]
    for j in range(width):
        bits[lsb + j] = 0
    return sum(b << i for i, b in enumerate(bits))


def rbit_oracle(x):
    r = 0
    for i in range(32):
        if x & (1 << i):
            r |= 1 << (31 - i)
    return r


def trunc_div_oracle(a, b):
    # truncation derived from floor division, not from the sign-flip path
    # the implementation takes
    q = a // b
    if q < 0 and q * b != a:
        q += 1
    return q


def test_cond_all_unconditional():
    for flags in range(16):
        n, z, c, v = (bool(flags & 8), bool(flags & 4),
                      bool(flags & 2), bool(flags & 1))
        assert cond_holds(Cond.AL, n, z, c, v)


def test_cond_eq_follows_z():
    assert cond_holds(Cond.EQ, False, True, False, False)
    assert not cond_holds(Cond.EQ, False, False, False, False)


def test_cond_gt_example():
    assert cond_holds(Cond.GT, False, False, False, False)


def test_cond_truth_table_exhaustive():
    for cond in Cond:
        for flags in range(16):
            n, z, c, v = (bool(flags & 8), bool(flags & 4),
                          bool(flags & 2), bool(flags & 1))
            assert cond_holds(cond, n, z, c, v) == COND_ORACLE[cond](n, z, c, v), \
                f"{cond.name} with n={n} z={z} c={c} v={v}"


def test_bfi_trivial_cases():
    assert bitfield_insert(0xFFFFFFFF, 0x00000000, 8, 8) == 0xFFFF00FF
    assert bitfield_clear(0xFFFFFFFF, 0, 32) == 0x00000000
    assert bitfield_extract(0x12345678, 12, 8) == 0x00000045


def test_bitfield_ops_match_bit_loop_oracle():
    rng = random.Random(99)
    for _ in range(3000):
        rd = rng.getrandbits(32)
        rn = rng.getrandbits(32)
        lsb = rng.randrange(32)
        width = rng.randrange(1, 33 - lsb)
        assert bitfield_insert(rd, rn, lsb, width) == bfi_oracle(rd, rn, lsb, width)
        assert bitfield_clear(rd, lsb, width) == bfc_oracle(rd, lsb, width)
        assert bitfield_extract(rn, lsb, width) == (rn >> lsb) % (1 << width)


def test_bfc_equals_bfi_of_zero():
    rng = random.Random(5)
    for _ in range(2000):
        x = rng.getrandbits(32)
        lsb = rng.randrange(32)
        width = rng.randrange(1, 33 - lsb)
        assert bitfield_clear(x, lsb, width) == bitfield_insert(x, 0, lsb, width)


def test_ubfx_of_bfi_recovers_value():
    rng = random.Random(6)
    for _ in range(2000):
        v = rng.getrandbits(32)
        lsb = rng.randrange(32)
        width = rng.randrange(1, 33 - lsb)
        assert bitfield_extract(bitfield_insert(0, v, lsb, width), lsb, width) \
            == v % (1 << width)


def test_rbit_fixed_points_and_mirror():
    assert bit_reverse(0x00000000) == 0x00000000
    assert bit_reverse(0x00000001) == 0x80000000
    assert bit_reverse(0x12345678) == rbit_oracle(0x12345678) == 0x1E6A2C48


def test_rbit_involution():
    rng = random.Random(7)
    for _ in range(2000):
        x = rng.getrandbits(32)
        assert bit_reverse(bit_reverse(x)) == x
        assert bit_reverse(x) == rbit_oracle(x)


def test_divide_trivial():
    assert hw_divide(False, 100, 7) == (14, False)
    assert hw_divide(True, (-7) & 0xFFFFFFFF, 2) == ((-3) & 0xFFFFFFFF, False)


def test_divide_by_zero_returns_zero_and_flags_event():
    q, div0 = hw_divide(False, 1234, 0)
    assert q == 0 and div0
    q, div0 = hw_divide(True, 0xFFFFFFFF, 0)
    assert q == 0 and div0


def test_divide_matches_truncation_oracle():
    rng = random.Random(8)
    for _ in range(5000):
        a = rng.getrandbits(32)
        b = rng.getrandbits(32) or 1
        q, _ = hw_divide(False, a, b)
        assert q == a // b
        sa = a - (1 << 32) if a & 0x80000000 else a
        sb = b - (1 << 32) if b & 0x80000000 else b
        q, _ = hw_divide(True, a, b)
        assert q == trunc_div_oracle(sa, sb) & 0xFFFFFFFF


def test_mov_halves():
    assert mov_wide(0x1234) == 0x00001234
    assert mov_high(0x00001234, 0x5678) == 0x56781234
    assert mov_wide(0xFFFF) == 0x0000FFFF


def test_movw_movh_compose_any_constant():
    rng = random.Random(9)
    for _ in range(5000):
        c = rng.getrandbits(32)
        assert mov_high(mov_wide(c & 0xFFFF), c >> 16) == c


def test_movw_zero_extends_over_old_value():
    assert mov_wide(0x1234) == 0x00001234  # old 0xDEADBEEF is discarded


def test_it_state_advance_pattern():
    st = ItState()
    st.begin(Cond.EQ, [True, False, True], cond_true=True)
    assert st.active and st.remaining == 3
    assert st.advance() is True    # then slot, cond true
    assert st.advance() is False   # else slot
    assert st.advance() is True
    assert not st.active


def test_it_state_encode_decode_round_trip():
    st = ItState()
    st.begin(Cond.GT, [True, False, False, True], cond_true=False)
    st.advance()
    bits = st.encode()
    back = ItState.decode(bits)
    assert back.base_cond == st.base_cond
    assert back.pattern == st.pattern
    assert back.remaining == st.remaining
    assert back.cond_true == st.cond_true
    assert ItState.decode(ItState().encode()).active is False


def test_status_word_round_trip():
    m = MachineState()
    m.n, m.z, m.c, m.v = True, False, True, True
    m.privileged = False
    m.it.begin(Cond.NE, [True, True], cond_true=True)
    w = m.pack_status()
    m2 = MachineState()
    m2.unpack_status(w)
    assert (m2.n, m2.z, m2.c, m2.v) == (True, False, True, True)
    assert m2.privileged is False
    assert m2.it.pattern == [True, True] and m2.it.remaining == 2
    assert m2.it.cond_true is True
