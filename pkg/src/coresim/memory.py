"""
Memory system: region map, bit-band aliasing, flash fetch streaming,
direct-mapped caches with parity-shadow soft errors, TCM hold-and-repair,
and the flash patch / breakpoint unit.

Timing contract per region kind:
  flash  - prefetch stream: an access at the expected stream address costs
           sequential_cycles, anything else costs nonsequential_cycles and
           restarts the stream there.
  ram    - flat read_cycles / write_cycles.
  tcm    - flat, plus a repair stall when a parity-marked word is touched.
  device - flat; optional handler callbacks for memory-mapped control.
  cached regions route through the instruction or data cache when one is
  configured: hit_cycles on hit, fill_cycles_per_line on a line fill.
"""

from . import events
from .events import Trace
from .isa import u32

FLASH = "flash"
RAM = "ram"
TCM = "tcm"
BITBAND_TARGET = "bitband_target"
BITBAND_ALIAS = "bitband_alias"
DEVICE = "device"

EXECUTABLE_KINDS = (FLASH, RAM, TCM, BITBAND_TARGET)

LINE_WORDS = 8  # cache line length is fixed at eight words
LINE_BYTES = LINE_WORDS * 4


class ConfigError(Exception):
    pass


class AccessFault(Exception):
    """Raised by the memory system for bus faults and data aborts."""

    def __init__(self, kind, addr, detail=""):
        super().__init__(f"{kind} at 0x{addr:08x}" + (f" ({detail})" if detail else ""))
        self.kind = kind
        self.addr = addr
        self.detail = detail


class Region:
    def __init__(self, name, kind, base, length, writable=None, cached=False,
                 sequential_cycles=1, nonsequential_cycles=4, fetch_width=4,
                 read_cycles=1, write_cycles=1, target=None):
        if length <= 0:
            raise ConfigError(f"region {name}: length must be positive")
        if kind not in (FLASH, RAM, TCM, BITBAND_TARGET, BITBAND_ALIAS, DEVICE):
            raise ConfigError(f"region {name}: unknown kind {kind!r}")
        self.name = name
        self.kind = kind
        self.base = base
        self.length = length
        if writable is None:
            writable = kind != FLASH
        self.writable = writable
        self.cached = cached
        self.read_cycles = read_cycles
        self.write_cycles = write_cycles
        self.target = target  # bitband_alias: name of its target region
        if kind == FLASH:
            if not nonsequential_cycles >= sequential_cycles >= 1:
                raise ConfigError(
                    f"region {name}: need nonsequential >= sequential >= 1")
            self.sequential_cycles = sequential_cycles
            self.nonsequential_cycles = nonsequential_cycles
            self.fetch_width = fetch_width
            self.stream_pos = None  # next address the prefetch stream expects
        if kind == BITBAND_TARGET and length > 1 << 20:
            raise ConfigError(f"region {name}: bit-band target exceeds 1 MiB")

    @property
    def end(self):
        return self.base + self.length

    def contains(self, addr):
        return self.base <= addr < self.end

    def stream_access(self, addr, width, trace=None, pc=None):
        """Flash prefetch stream cost; resets the stream on a break."""
        if addr == self.stream_pos:
            cost = self.sequential_cycles
        else:
            cost = self.nonsequential_cycles
            if trace is not None:
                trace.emit(events.FETCH_NONSEQ, pc=pc, addr=addr)
        self.stream_pos = addr + width
        return cost


class Cache:
    """Direct-mapped cache, 8 words per line, write-through, no data store.

    Recovery policy keeps corrupted data from ever being consumed, so only
    tags, valid bits and the parity-error shadows need to be modeled.
    """

    def __init__(self, line_count=64, fill_cycles_per_line=None,
                 hit_cycles=1, flash_region=None):
        if line_count & (line_count - 1) or line_count <= 0:
            raise ConfigError("cache line_count must be a power of two")
        self.line_count = line_count
        self.hit_cycles = hit_cycles
        if fill_cycles_per_line is None:
            # derive from flash timing: one stream restart plus one
            # sequential beat per fetch_width chunk of the line
            if flash_region is not None:
                beats = LINE_BYTES // flash_region.fetch_width
                fill_cycles_per_line = (flash_region.nonsequential_cycles
                                        + beats * flash_region.sequential_cycles)
            else:
                fill_cycles_per_line = 12
        self.fill_cycles_per_line = fill_cycles_per_line
        self.valid = [False] * line_count
        self.tags = [0] * line_count
        self.data_err = [None] * line_count  # (word, bit) shadow or None
        self.tag_err = [False] * line_count

    def index_tag(self, addr):
        line = (addr // LINE_BYTES) % self.line_count
        tag = addr // (LINE_BYTES * self.line_count)
        return line, tag

    def line_of(self, addr):
        return self.index_tag(addr)[0]

    def fill(self, line, tag):
        self.valid[line] = True
        self.tags[line] = tag
        self.data_err[line] = None
        self.tag_err[line] = False

    def invalidate(self, line):
        self.valid[line] = False
        self.data_err[line] = None
        self.tag_err[line] = False

    def valid_lines(self):
        return [i for i in range(self.line_count) if self.valid[i]]


class FpbEntry:
    __slots__ = ("index", "address", "mode", "value", "instruction")

    def __init__(self, index, address, mode, value=None, instruction=None):
        self.index = index
        self.address = address
        self.mode = mode  # "remap" | "breakpoint"
        self.value = value
        self.instruction = instruction


class FlashPatchUnit:
    """Up to eight flash words remapped to substitute values or breakpoints."""

    SLOTS = 8

    def __init__(self):
        self.entries = {}

    def configure(self, index, match_address, mode, value=None,
                  instruction=None):
        if not 0 <= index < self.SLOTS:
            raise ConfigError(f"flash patch entry {index} out of range (0-7)")
        if match_address % 4:
            raise ConfigError(
                f"flash patch address 0x{match_address:08x} not word aligned")
        if mode not in ("remap", "breakpoint"):
            raise ConfigError(f"flash patch mode {mode!r} unknown")
        for e in self.entries.values():
            if e.index != index and e.address == match_address:
                raise ConfigError(
                    f"flash patch address 0x{match_address:08x} already used")
        self.entries[index] = FpbEntry(index, match_address, mode, value,
                                       instruction)

    def lookup(self, addr):
        word = addr & ~3
        for e in self.entries.values():
            if e.address == word:
                return e
        return None


class SoftErrorInjection:
    """One deliberate bit flip in a cache or TCM structure."""

    TARGETS = ("icache_data", "icache_tag", "dcache_data", "dcache_tag", "tcm")

    def __init__(self, target, line=None, word=None, bit=0, addr=None):
        if target not in self.TARGETS:
            raise ConfigError(f"soft error target {target!r} unknown")
        self.target = target
        self.line = line
        self.word = word
        self.bit = bit
        self.addr = addr  # tcm target: byte address of the word


class MemorySystem:
    def __init__(self, regions, icache=None, dcache=None,
                 tcm_repair_stall_cycles=4, trace=None):
        self.regions = list(regions)
        self.trace = trace if trace is not None else Trace(keep_records=False)
        self.icache = icache
        self.dcache = dcache
        self.tcm_repair_stall_cycles = tcm_repair_stall_cycles
        self.store = {}
        self.device_handlers = {}  # region name -> handler(addr, width, value)
        self.tcm_shadow = {}       # word address -> (bit, golden word)
        self.fpb = FlashPatchUnit()
        self._check_layout()
        for r in self.regions:
            if r.kind != BITBAND_ALIAS:
                self.store[r.name] = bytearray(r.length)

    def _check_layout(self):
        spans = sorted((r.base, r.end, r) for r in self.regions)
        for (b1, e1, r1), (b2, e2, r2) in zip(spans, spans[1:]):
            if b2 < e1:
                raise ConfigError(f"regions {r1.name} and {r2.name} overlap")
        aliases = [r for r in self.regions if r.kind == BITBAND_ALIAS]
        targets = {r.name: r for r in self.regions if r.kind == BITBAND_TARGET}
        if len(aliases) > 1 or (aliases and len(targets) != 1):
            raise ConfigError("exactly one bit-band alias/target pair allowed")
        for a in aliases:
            t = targets.get(a.target)
            if t is None:
                raise ConfigError(f"alias {a.name}: target {a.target!r} missing")
            if a.length != 8 * t.length:
                raise ConfigError(
                    f"alias {a.name}: length must be 8x target length")
            a.target_region = t
        self._alias = aliases[0] if aliases else None

    # ===============================================================
    # Region lookup and raw byte access
    # ===============================================================

    def region_at(self, addr):
        for r in self.regions:
            if r.contains(addr):
                return r
        return None

    def region_named(self, name):
        for r in self.regions:
            if r.name == name:
                return r
        raise ConfigError(f"no region named {name!r}")

    def raw_read(self, addr, width):
        """Backing-store read with no timing, caching or fault modeling."""
        r = self.region_at(addr)
        if r is None or r.kind == BITBAND_ALIAS:
            raise AccessFault("bus_fault", addr, "unmapped")
        buf = self.store[r.name]
        off = addr - r.base
        return int.from_bytes(buf[off:off + width], "little")

    def raw_write(self, addr, width, value):
        r = self.region_at(addr)
        if r is None or r.kind == BITBAND_ALIAS:
            raise AccessFault("bus_fault", addr, "unmapped")
        buf = self.store[r.name]
        off = addr - r.base
        buf[off:off + width] = u32(value).to_bytes(4, "little")[:width]

    def load_image(self, base, data):
        for i, byte in enumerate(data):
            self.raw_write(base + i, 1, byte)

    def register_device_handler(self, region_name, handler):
        self.region_named(region_name)
        self.device_handlers[region_name] = handler

    # ===============================================================
    # Bit banding
    # ===============================================================

    def translate_bitband(self, addr):
        """Alias address -> (target byte address, bit index), else None."""
        a = self._alias
        if a is None or not a.contains(addr):
            return None
        off = addr - a.base
        return a.target_region.base + off // 8, off % 8

    # ===============================================================
    # Data-side read/write (MPU checks are the caller's job)
    # ===============================================================

    def read(self, addr, width, pc=None):
        """Data read; returns (value, cycles).  Raises AccessFault."""
        r = self.region_at(addr)
        if r is None:
            raise AccessFault("bus_fault", addr, "unmapped")
        if r.kind == BITBAND_ALIAS:
            target, bit = self.translate_bitband(addr)
            byte = self.raw_read(target, 1)
            cycles = self._plain_cycles(r.target_region, target, 1, False, pc)
            return (byte >> bit) & 1, cycles
        if r.kind == DEVICE and r.name in self.device_handlers:
            value, cycles = self.device_handlers[r.name](addr, width, None)
            return u32(value), cycles if cycles else r.read_cycles
        cycles = self._data_cycles(r, addr, width, store=False, pc=pc)
        value = self._read_with_patches(r, addr, width)
        return value, cycles

    def write(self, addr, width, value, pc=None):
        """Data write; returns cycles.  Raises AccessFault."""
        r = self.region_at(addr)
        if r is None:
            raise AccessFault("bus_fault", addr, "unmapped")
        if r.kind == BITBAND_ALIAS:
            # one indivisible read-modify-write of the addressed bit
            target, bit = self.translate_bitband(addr)
            tr = r.target_region
            if not tr.writable:
                raise AccessFault("bus_fault", addr, "write to read-only")
            byte = self.raw_read(target, 1)
            if value & 1:
                byte |= 1 << bit
            else:
                byte &= ~(1 << bit)
            self.raw_write(target, 1, byte)
            self.trace.emit(events.BITBAND_WRITE, pc=pc, addr=addr,
                            target=target, bit=bit, set=value & 1)
            return self._plain_cycles(tr, target, 1, True, pc)
        if not r.writable:
            raise AccessFault("bus_fault", addr, "write to read-only")
        if r.kind == DEVICE and r.name in self.device_handlers:
            _, cycles = self.device_handlers[r.name](addr, width, u32(value))
            return cycles if cycles else r.write_cycles
        cycles = self._data_cycles(r, addr, width, store=True, pc=pc)
        self.raw_write(addr, width, value)
        return cycles

    def _read_with_patches(self, r, addr, width):
        value = self.raw_read(addr, width)
        if r.kind != FLASH or not self.fpb.entries:
            return value
        # substitute remapped word bytes
        out = bytearray(value.to_bytes(4, "little")[:width])
        for i in range(width):
            entry = self.fpb.lookup(addr + i)
            if entry is not None and entry.mode == "remap" and entry.value is not None:
                out[i] = (entry.value >> (((addr + i) & 3) * 8)) & 0xFF
        return int.from_bytes(out, "little")

    def _plain_cycles(self, r, addr, width, store, pc):
        if r.kind == FLASH:
            return r.stream_access(addr, width, self.trace, pc)
        base = r.write_cycles if store else r.read_cycles
        if r.kind == TCM:
            base += self._tcm_scrub(addr, width, pc, store)
        return base

    def _data_cycles(self, r, addr, width, store, pc):
        if r.kind == TCM:
            stall = self._tcm_scrub(addr, width, pc, store)
            return (r.write_cycles if store else r.read_cycles) + stall
        if r.cached and self.dcache is not None:
            return self._cache_access(self.dcache, "dcache", r, addr, pc,
                                      store=store)
        if r.kind == FLASH:
            return r.stream_access(addr, width, self.trace, pc)
        return r.write_cycles if store else r.read_cycles

    def _tcm_scrub(self, addr, width, pc, store):
        """Hold-and-repair: stall, restore the golden word, no exception."""
        stall = 0
        for word in range(addr & ~3, ((addr + width - 1) & ~3) + 4, 4):
            shadow = self.tcm_shadow.pop(word, None)
            if shadow is None:
                continue
            bit, golden = shadow
            self.raw_write(word, 4, golden)
            stall += self.tcm_repair_stall_cycles
            self.trace.emit(events.REPAIR, pc=pc, addr=word, bit=bit,
                            structure="tcm")
        return stall

    # ===============================================================
    # Cache paths
    # ===============================================================

    def _cache_access(self, cache, which, region, addr, pc, store):
        line, tag = cache.index_tag(addr)
        present = cache.valid[line] and cache.tags[line] == tag
        errored = cache.valid[line] and (cache.tag_err[line]
                                         or cache.data_err[line] is not None)
        if errored:
            if which == "dcache":
                # precise abort before corrupted data can reach a register
                cache.invalidate(line)
                raise AccessFault("data_abort", addr, "parity error")
            # instruction side: tag errors read as a miss, data errors
            # invalidate the line; either way the line is refilled
            reason = "tag_parity" if cache.tag_err[line] else "data_parity"
            cache.invalidate(line)
            return self._fill(cache, which, line, tag, addr, pc, reason)
        if present:
            if store:
                # write-through: line stays valid, memory pays the write
                return region.write_cycles
            return cache.hit_cycles
        if store:
            # write-through, no write-allocate
            return region.write_cycles
        return self._fill(cache, which, line, tag, addr, pc, "cold")

    def _fill(self, cache, which, line, tag, addr, pc, reason):
        self.trace.emit(events.MISS, pc=pc, addr=addr, cache=which,
                        reason=reason)
        cache.fill(line, tag)
        flash = self.region_at(addr)
        if flash is not None and flash.kind == FLASH:
            flash.stream_pos = None  # line fill breaks the prefetch stream
        self.trace.emit(events.FILL, pc=pc, addr=addr, cache=which,
                        reason=reason)
        return cache.fill_cycles_per_line

    # ===============================================================
    # Instruction fetch
    # ===============================================================

    def fetch_lookup(self, addr):
        """Flash patch consultation for a fetch; returns entry or None."""
        r = self.region_at(addr)
        if r is None or r.kind != FLASH:
            return None
        return self.fpb.lookup(addr)

    def fetch_cycles(self, addr, width, pc=None):
        """Timing for an instruction fetch of `width` bytes at addr."""
        r = self.region_at(addr)
        if r is None or r.kind not in EXECUTABLE_KINDS:
            raise AccessFault("bus_fault", addr, "fetch from unmapped")
        if r.cached and self.icache is not None:
            return self._cache_access(self.icache, "icache", r, addr, pc,
                                      store=False)
        if r.kind == FLASH:
            return r.stream_access(addr, width, self.trace, pc)
        if r.kind == TCM:
            return r.read_cycles + self._tcm_scrub(addr, width, pc, False)
        return r.read_cycles

    # ===============================================================
    # Soft errors
    # ===============================================================

    def inject_soft_error(self, injection):
        """Flip one stored bit and mark the parity shadow."""
        t = injection.target
        if t == "tcm":
            word = injection.addr & ~3
            r = self.region_at(word)
            if r is None or r.kind != TCM:
                self.trace.emit(events.WARNING, addr=injection.addr,
                                reason="tcm injection outside tcm")
                return False
            golden = self.raw_read(word, 4)
            self.raw_write(word, 4, golden ^ (1 << injection.bit))
            self.tcm_shadow[word] = (injection.bit, golden)
            return True
        cache = self.icache if t.startswith("icache") else self.dcache
        which = "icache" if t.startswith("icache") else "dcache"
        if cache is None:
            self.trace.emit(events.WARNING, reason=f"{which} not configured")
            return False
        line = injection.line
        if line is None or not 0 <= line < cache.line_count \
                or not cache.valid[line]:
            self.trace.emit(events.WARNING, line=line,
                            reason=f"{which} line invalid")
            return False
        if t.endswith("_tag"):
            cache.tag_err[line] = True
        else:
            word = injection.word if injection.word is not None else 0
            cache.data_err[line] = (word % LINE_WORDS, injection.bit % 32)
        return True
