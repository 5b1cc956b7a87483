"""Memory system: bit-banding, flash streaming, caches, FPB, soft errors."""

import random

import pytest

from conftest import make_memory
from coresim.events import FILL, MISS, REPAIR, WARNING
from coresim.memory import (ConfigError, AccessFault, Cache, MemorySystem,
                            Region, SoftErrorInjection)

RAM = 0x20000000
ALIAS = 0x22000000
DRAM = 0x20200000
TCM = 0x10000000


# ===================================================================
# Bit banding
# ===================================================================

def test_translate_zero_offset():
    mem = make_memory()
    assert mem.translate_bitband(ALIAS) == (RAM, 0)


def test_translate_formula_example():
    mem = make_memory()
    assert mem.translate_bitband(0x22000803) == (0x20000100, 3)


def test_translate_last_byte_of_8mib_alias():
    mem = make_memory()
    assert mem.translate_bitband(ALIAS + 0x7FFFFF) == (RAM + 0xFFFFF, 7)


def test_translate_outside_alias_is_none():
    mem = make_memory()
    assert mem.translate_bitband(RAM) is None
    assert mem.translate_bitband(ALIAS + 0x800000) is None


def test_alias_geometry_enforced():
    with pytest.raises(ConfigError):
        MemorySystem([
            Region("t", "bitband_target", 0x20000000, 0x1000),
            Region("a", "bitband_alias", 0x22000000, 0x1000, target="t"),
        ])
    with pytest.raises(ConfigError):
        Region("t", "bitband_target", 0x20000000, 0x200000)  # > 1 MiB


def test_alias_write_sets_single_bit():
    mem = make_memory()
    mem.raw_write(0x20000100, 1, 0x00)
    mem.write(0x22000803, 1, 0x01)  # set bit 3
    assert mem.raw_read(0x20000100, 1) == 0x08


def test_alias_write_clears_single_bit():
    mem = make_memory()
    mem.raw_write(0x20000100, 1, 0xFF)
    mem.write(0x22000800, 1, 0x00)  # clear bit 0
    assert mem.raw_read(0x20000100, 1) == 0xFE


def test_alias_read_returns_bit():
    mem = make_memory()
    mem.raw_write(0x20000100, 1, 0x08)
    assert mem.read(0x22000803, 1)[0] == 1
    assert mem.read(0x22000802, 1)[0] == 0


def test_alias_write_matches_mask_merge_oracle():
    mem = make_memory()
    rng = random.Random(11)
    for _ in range(3000):
        byte = rng.getrandbits(8)
        bit = rng.randrange(8)
        setbit = rng.randrange(2)
        offset = rng.randrange(1 << 20)
        mem.raw_write(RAM + offset, 1, byte)
        mem.write(ALIAS + offset * 8 + bit, 1, setbit)
        expect = (byte & ~(1 << bit)) | (setbit << bit)
        assert mem.raw_read(RAM + offset, 1) == expect


def test_alias_round_trip_every_bit():
    mem = make_memory()
    rng = random.Random(12)
    byte = rng.getrandbits(8)
    mem.raw_write(0x20000040, 1, byte)
    for bit in range(8):
        assert mem.read(ALIAS + 0x40 * 8 + bit, 1)[0] == (byte >> bit) & 1
        mem.write(ALIAS + 0x40 * 8 + bit, 1, 1)
        assert mem.raw_read(0x20000040, 1) >> bit & 1 == 1


def test_alias_write_only_touches_addressed_bit():
    mem = make_memory()
    rng = random.Random(13)
    for _ in range(500):
        byte = rng.getrandbits(8)
        bit = rng.randrange(8)
        mem.raw_write(0x20000200, 1, byte)
        mem.write(ALIAS + 0x200 * 8 + bit, 1, rng.randrange(2))
        after = mem.raw_read(0x20000200, 1)
        assert (after ^ byte) & ~(1 << bit) == 0


# ===================================================================
# Flash stream
# ===================================================================

def test_stream_sequential_after_start():
    mem = make_memory()
    flash = mem.region_named("flash")
    first = mem.fetch_cycles(0x0, 2)
    assert first == flash.nonsequential_cycles
    total = sum(mem.fetch_cycles(0x2 + 2 * i, 2) for i in range(4))
    assert total == 4 * flash.sequential_cycles


def test_pool_read_breaks_stream():
    mem = make_memory()
    mem.fetch_cycles(0x0, 2)
    assert mem.fetch_cycles(0x2, 2) == 1
    _, cycles = mem.read(0x800, 4)  # literal pool off in the map
    assert cycles == 4
    assert mem.fetch_cycles(0x4, 2) == 4  # stream must restart
    assert mem.fetch_cycles(0x6, 2) == 1


def test_branch_pays_nonsequential():
    mem = make_memory()
    mem.fetch_cycles(0x0, 2)
    assert mem.fetch_cycles(0x100, 2) == 4
    assert mem.fetch_cycles(0x102, 2) == 1


def test_flash_timing_invariant_checked():
    with pytest.raises(ConfigError):
        Region("f", "flash", 0, 0x1000, sequential_cycles=5,
               nonsequential_cycles=2)


def test_unmapped_access_raises_bus_fault():
    mem = make_memory()
    with pytest.raises(AccessFault) as e:
        mem.read(0x90000000, 4)
    assert e.value.kind == "bus_fault"
    with pytest.raises(AccessFault):
        mem.write(0x00000000, 4, 1)  # flash is read-only


# ===================================================================
# Cache conformance
# ===================================================================

def _dcache_mem():
    cache = Cache(line_count=16, fill_cycles_per_line=12)
    return make_memory(dcache=cache), cache


def test_aligned_8_word_read_touches_one_line():
    mem, cache = _dcache_mem()
    for i in range(8):
        mem.read(DRAM + 4 * i, 4)
    assert mem.trace.counts[FILL] == 1


def test_10_word_reads_touch_2_or_3_lines_never_more():
    for offset_words in range(8):
        mem, cache = _dcache_mem()
        base = DRAM + 4 * offset_words
        for i in range(10):
            mem.read(base + 4 * i, 4)
        fills = mem.trace.counts[FILL]
        span = (offset_words + 10 + 7) // 8 - offset_words // 8
        assert fills == span
        assert 2 <= fills <= 3
    # starting at word 7 of a line is the documented 3-miss worst case
    mem, cache = _dcache_mem()
    for i in range(10):
        mem.read(DRAM + 28 + 4 * i, 4)
    assert mem.trace.counts[FILL] == 3


def test_cache_hit_costs_hit_cycles():
    mem, cache = _dcache_mem()
    _, miss_cost = mem.read(DRAM, 4)
    _, hit_cost = mem.read(DRAM, 4)
    assert miss_cost == 12 and hit_cost == 1


def test_fill_cycles_derived_from_flash_timing():
    flash = Region("f", "flash", 0, 0x1000, sequential_cycles=1,
                   nonsequential_cycles=4, fetch_width=4)
    cache = Cache(line_count=8, flash_region=flash)
    assert cache.fill_cycles_per_line == 4 + 8 * 1
    wide = Region("f", "flash", 0, 0x1000, sequential_cycles=1,
                  nonsequential_cycles=4, fetch_width=8)
    assert Cache(line_count=8, flash_region=wide).fill_cycles_per_line == 4 + 4


def test_write_through_keeps_memory_authoritative():
    mem, cache = _dcache_mem()
    mem.read(DRAM, 4)
    mem.write(DRAM, 4, 0xCAFEF00D)
    assert mem.read(DRAM, 4)[0] == 0xCAFEF00D
    assert mem.raw_read(DRAM, 4) == 0xCAFEF00D


# ===================================================================
# Soft errors
# ===================================================================

def test_icache_data_flip_refills_line():
    cache = Cache(line_count=16, fill_cycles_per_line=12)
    mem = make_memory(icache=cache)
    mem.fetch_cycles(0x40, 4)  # fill
    line = cache.line_of(0x40)
    assert mem.inject_soft_error(
        SoftErrorInjection("icache_data", line=line, word=2, bit=5))
    cost = mem.fetch_cycles(0x40, 4)
    assert cost == 12  # invalidated and re-loaded
    assert cache.data_err[line] is None
    assert mem.fetch_cycles(0x40, 4) == 1  # clean again


def test_icache_tag_flip_reads_as_miss():
    cache = Cache(line_count=16, fill_cycles_per_line=12)
    mem = make_memory(icache=cache)
    mem.fetch_cycles(0x80, 4)
    line = cache.line_of(0x80)
    mem.inject_soft_error(SoftErrorInjection("icache_tag", line=line))
    before = mem.trace.counts[MISS]
    assert mem.fetch_cycles(0x80, 4) == 12
    assert mem.trace.counts[MISS] == before + 1


def test_dcache_flip_causes_precise_abort():
    mem, cache = _dcache_mem()
    mem.read(DRAM + 8, 4)
    line = cache.line_of(DRAM + 8)
    mem.inject_soft_error(SoftErrorInjection("dcache_data", line=line, bit=3))
    with pytest.raises(AccessFault) as e:
        mem.read(DRAM + 8, 4)
    assert e.value.kind == "data_abort"
    assert e.value.addr == DRAM + 8


def test_tcm_hold_and_repair():
    mem = make_memory()
    mem.raw_write(TCM + 0x10, 4, 0x13572468)
    mem.inject_soft_error(SoftErrorInjection("tcm", addr=TCM + 0x10, bit=7))
    assert mem.raw_read(TCM + 0x10, 4) == 0x13572468 ^ 0x80
    value, cycles = mem.read(TCM + 0x10, 4)
    assert value == 0x13572468          # corrected from the golden copy
    assert cycles == 1 + 4              # read plus repair stall
    assert mem.trace.counts[REPAIR] == 1
    assert mem.read(TCM + 0x10, 4)[1] == 1  # no second stall


def test_injection_on_invalid_line_warns():
    cache = Cache(line_count=16)
    mem = make_memory(icache=cache)
    assert not mem.inject_soft_error(
        SoftErrorInjection("icache_data", line=3))
    assert mem.trace.counts[WARNING] == 1


def test_injection_campaign_replays_with_seed():
    def campaign(seed):
        rng = random.Random(seed)
        cache = Cache(line_count=16)
        mem = make_memory(icache=cache)
        for i in range(8):
            mem.fetch_cycles(0x40 * i, 4)
        flips = []
        for _ in range(20):
            line = rng.choice(cache.valid_lines())
            inj = SoftErrorInjection("icache_data", line=line,
                                     word=rng.randrange(8),
                                     bit=rng.randrange(32))
            mem.inject_soft_error(inj)
            flips.append((inj.line, inj.word, inj.bit))
            mem.fetch_cycles(0x40 * line, 4)  # recover
        return flips

    assert campaign(42) == campaign(42)
    assert campaign(42) != campaign(43)


# ===================================================================
# Flash patch / breakpoint unit
# ===================================================================

def test_fpb_eight_entries_and_capacity():
    mem = make_memory()
    for i in range(8):
        mem.fpb.configure(i, 0x40 * i, "breakpoint")
    with pytest.raises(ConfigError):
        mem.fpb.configure(8, 0x1000, "breakpoint")


def test_fpb_requires_word_alignment():
    mem = make_memory()
    with pytest.raises(ConfigError):
        mem.fpb.configure(0, 0x42, "breakpoint")


def test_fpb_remap_substitutes_data_reads():
    mem = make_memory()
    mem.raw_write(0x200, 4, 0x11111111)
    mem.fpb.configure(0, 0x200, "remap", value=0xAABBCCDD)
    assert mem.read(0x200, 4)[0] == 0xAABBCCDD
    assert mem.read(0x201, 1)[0] == 0xCC
    assert mem.read(0x204, 4)[0] == mem.raw_read(0x204, 4)


def test_fpb_lookup_matches_containing_word():
    mem = make_memory()
    mem.fpb.configure(2, 0x100, "breakpoint")
    assert mem.fetch_lookup(0x100).index == 2
    assert mem.fetch_lookup(0x102).index == 2
    assert mem.fetch_lookup(0x104) is None
    assert mem.fetch_lookup(RAM) is None  # only flash fetches consult it
