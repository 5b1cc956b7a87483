"""
Scenario harness: configuration loading and validation, system assembly,
the deterministic run loop, and report generation.

Configuration documents are YAML (JSON also parses); reports are JSON with
sorted keys and traces are newline-delimited JSON records, so identical
configuration always produces byte-identical output.
"""

import copy
import json
import random

import yaml

from . import asm, events
from .core import Simulator
from .events import Trace
from .isa import u32
from .memory import (Cache, MemorySystem, Region, SoftErrorInjection,
                     AccessFault)
from .mpu import Mpu, MpuRegion
from .nvic import InterruptLine, Nvic

DEFAULT_CYCLE_LIMIT = 10_000_000

# Memory-mapped MPU control block register offsets (documented interface:
# privileged stores reconfigure protection regions at run time)
MPU_CTRL = 0x00      # bit0 enable, bit1 privileged background allowed
MPU_RNR = 0x04       # region number for the next RBAR/RASR access
MPU_RBAR = 0x08      # region base address
MPU_RASR = 0x0C      # bit0 enable, [5:1] log2(size), [8:6] unpriv rwx, [11:9] priv rwx
MPU_PROC_CTRL = 0x10  # bit0: write 1 to drop to unprivileged execution


class ConfigValidationError(Exception):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def default_config():
    return {
        "memory": {
            "regions": [
                {"name": "flash", "kind": "flash", "base": 0x00000000,
                 "length": 0x100000, "writable": False, "cached": True,
                 "sequential_cycles": 1, "nonsequential_cycles": 4,
                 "fetch_width": 4},
                {"name": "ram", "kind": "bitband_target", "base": 0x20000000,
                 "length": 0x100000, "writable": True, "cached": False,
                 "read_cycles": 1, "write_cycles": 1},
                {"name": "alias", "kind": "bitband_alias", "base": 0x22000000,
                 "length": 0x800000, "target": "ram"},
                {"name": "dram", "kind": "ram", "base": 0x20200000,
                 "length": 0x10000, "writable": True, "cached": True,
                 "read_cycles": 1, "write_cycles": 1},
                {"name": "tcm", "kind": "tcm", "base": 0x10000000,
                 "length": 0x10000, "writable": True,
                 "read_cycles": 1, "write_cycles": 1},
                {"name": "dev", "kind": "device", "base": 0x40000000,
                 "length": 0x1000, "writable": True},
                {"name": "mpu_ctl", "kind": "device", "base": 0xE0000000,
                 "length": 0x40, "writable": True},
            ],
            "icache": None,   # {"line_count": 64, "fill_cycles_per_line": null}
            "dcache": None,
            "tcm_repair_stall_cycles": 4,
            "images": [],
        },
        "mpu": {
            "enabled": False,
            "background_privileged_allowed": True,
            "control_base": 0xE0000000,
            "regions": [],
        },
        "nvic": {
            "vector_table_base": 0x20000000,
            "stacking_cycles": 8,
            "unstack_cycles": 8,
            "tailchain_cycles": 4,
            "pipeline_refill": 2,
            "lines": [],
            "handlers": {},
            "stimulus": [],
        },
        "fpb": {"entries": []},
        "faults": {"fault_line": None, "injections": []},
        "program": None,
        "init": {"sp": 0x20100000, "privileged": True, "registers": {}},
        "entry": None,
        "cycle_limit": DEFAULT_CYCLE_LIMIT,
        "trace": True,
    }


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(source):
    """Load a config document (path or dict) over the defaults."""
    if isinstance(source, dict):
        doc = source
    else:
        with open(source) as f:
            doc = yaml.safe_load(f) or {}
    if not isinstance(doc, dict):
        raise ConfigValidationError("<root>", "config must be a mapping")
    return deep_merge(default_config(), doc)


# ===================================================================
# Validation (field-path errors)
# ===================================================================

def _expect(cond, path, message):
    if not cond:
        raise ConfigValidationError(path, message)


def validate_config(cfg):
    mem = cfg["memory"]
    _expect(isinstance(mem.get("regions"), list) and mem["regions"],
            "memory.regions", "need at least one region")
    names = set()
    for i, r in enumerate(mem["regions"]):
        path = f"memory.regions[{i}]"
        for field in ("name", "kind", "base", "length"):
            _expect(field in r, path, f"missing field {field!r}")
        _expect(r["name"] not in names, path, f"duplicate name {r['name']!r}")
        names.add(r["name"])
        _expect(r["kind"] in ("flash", "ram", "tcm", "bitband_target",
                              "bitband_alias", "device"),
                path + ".kind", f"unknown kind {r['kind']!r}")
        _expect(isinstance(r["base"], int) and r["base"] >= 0,
                path + ".base", "must be a non-negative integer")
        _expect(isinstance(r["length"], int) and r["length"] > 0,
                path + ".length", "must be a positive integer")
        if r["kind"] == "bitband_alias":
            _expect(r.get("target") in names or any(
                x["name"] == r.get("target") for x in mem["regions"]),
                path + ".target", "must name a bitband_target region")
    for which in ("icache", "dcache"):
        c = mem.get(which)
        if c is not None:
            lc = c.get("line_count", 64)
            _expect(isinstance(lc, int) and lc > 0 and not lc & (lc - 1),
                    f"memory.{which}.line_count", "must be a power of two")
    nvic = cfg["nvic"]
    ids = set()
    for i, line in enumerate(nvic["lines"]):
        path = f"nvic.lines[{i}]"
        _expect("id" in line, path, "missing field 'id'")
        _expect(line["id"] not in ids, path, f"duplicate id {line['id']}")
        ids.add(line["id"])
        pri = line.get("priority", 0)
        _expect(0 <= pri <= 255, path + ".priority", "must be 0-255")
    for key, label in nvic["handlers"].items():
        _expect(int(key) in ids, f"nvic.handlers.{key}",
                "handler for unconfigured line")
        _expect(isinstance(label, (str, int)), f"nvic.handlers.{key}",
                "must be a label or address")
    for i, st in enumerate(nvic["stimulus"]):
        path = f"nvic.stimulus[{i}]"
        _expect("line" in st, path, "missing field 'line'")
        _expect(st["line"] in ids, path + ".line",
                f"unconfigured line {st['line']}")
        _expect("cycle" in st or "after_instructions" in st, path,
                "need 'cycle' or 'after_instructions'")
    fault_line = cfg["faults"].get("fault_line")
    if fault_line is not None:
        _expect(fault_line in ids, "faults.fault_line",
                f"unconfigured line {fault_line}")
    for i, inj in enumerate(cfg["faults"]["injections"]):
        path = f"faults.injections[{i}]"
        _expect(inj.get("target") in SoftErrorInjection.TARGETS,
                path + ".target", f"unknown target {inj.get('target')!r}")
    for i, mr in enumerate(cfg["mpu"]["regions"]):
        path = f"mpu.regions[{i}]"
        for field in ("index", "base", "size"):
            _expect(field in mr, path, f"missing field {field!r}")
    limit = cfg["cycle_limit"]
    _expect(isinstance(limit, int) and limit > 0, "cycle_limit",
            "must be a positive integer")
    prog = cfg["program"]
    if prog is not None:
        _expect(any(k in prog for k in ("source", "text", "image")),
                "program", "need 'source', 'text' or 'image'")
        _expect(prog.get("mode", "pool") in ("pool", "movw"),
                "program.mode", "must be 'pool' or 'movw'")
    return cfg


# ===================================================================
# System construction
# ===================================================================

class MpuControlBlock:
    """Memory-mapped MPU configuration registers (privileged access only)."""

    def __init__(self, mpu):
        self.mpu = mpu
        self.sim = None  # bound after the simulator exists
        self.rnr = 0

    def handler(self, addr, width, value):
        off = addr & 0x3F
        privileged = self.sim.machine.privileged if self.sim else True
        if value is None:
            return self._read(off), 1
        if not privileged:
            raise AccessFault("data_abort", addr, "mpu configure unprivileged")
        self._write(off, value)
        return 0, 1

    def _read(self, off):
        if off == MPU_CTRL:
            return int(self.mpu.enabled) | (
                int(self.mpu.background_privileged_allowed) << 1)
        if off == MPU_RNR:
            return self.rnr
        region = self.mpu.regions[self.rnr] if self.rnr < len(self.mpu.regions) else None
        if region is None:
            return 0
        if off == MPU_RBAR:
            return region.base
        if off == MPU_RASR:
            return encode_rasr(region)
        return 0

    def _write(self, off, value):
        if off == MPU_CTRL:
            self.mpu.enabled = bool(value & 1)
            self.mpu.background_privileged_allowed = bool(value & 2)
        elif off == MPU_RNR:
            self.rnr = value % len(self.mpu.regions)
        elif off == MPU_RBAR:
            self._pending_base = value
        elif off == MPU_RASR:
            region = decode_rasr(self.rnr, getattr(self, "_pending_base", 0),
                                 value)
            self.mpu.configure_region(self.rnr, region)
        elif off == MPU_PROC_CTRL:
            if value & 1 and self.sim is not None:
                self.sim.machine.privileged = False


def _perm_bits(perms):
    return (int("r" in perms) | (int("w" in perms) << 1)
            | (int("x" in perms) << 2))


def _bits_perm(bits):
    return "".join(ch for ch, bit in (("r", 1), ("w", 2), ("x", 4))
                   if bits & bit)


def encode_rasr(region):
    return (int(region.enabled)
            | (region.size.bit_length() - 1) << 1
            | _perm_bits(region.unpriv_perms) << 6
            | _perm_bits(region.priv_perms) << 9)


def decode_rasr(index, base, value):
    size = 1 << ((value >> 1) & 0x1F)
    return MpuRegion(index, base, size,
                     priv_perms=_bits_perm((value >> 9) & 7),
                     unpriv_perms=_bits_perm((value >> 6) & 7),
                     enabled=bool(value & 1))


def build_system(cfg):
    """Construct (simulator, image) from a validated config."""
    trace = Trace(keep_records=cfg.get("trace", True))

    regions = []
    flash_region = None
    for rcfg in cfg["memory"]["regions"]:
        region = Region(
            rcfg["name"], rcfg["kind"], rcfg["base"], rcfg["length"],
            writable=rcfg.get("writable"), cached=rcfg.get("cached", False),
            sequential_cycles=rcfg.get("sequential_cycles", 1),
            nonsequential_cycles=rcfg.get("nonsequential_cycles", 4),
            fetch_width=rcfg.get("fetch_width", 4),
            read_cycles=rcfg.get("read_cycles", 1),
            write_cycles=rcfg.get("write_cycles", 1),
            target=rcfg.get("target"))
        regions.append(region)
        if region.kind == "flash" and flash_region is None:
            flash_region = region

    def make_cache(ccfg):
        if ccfg is None:
            return None
        return Cache(line_count=ccfg.get("line_count", 64),
                     fill_cycles_per_line=ccfg.get("fill_cycles_per_line"),
                     hit_cycles=ccfg.get("hit_cycles", 1),
                     flash_region=flash_region)

    memory = MemorySystem(
        regions,
        icache=make_cache(cfg["memory"]["icache"]),
        dcache=make_cache(cfg["memory"]["dcache"]),
        tcm_repair_stall_cycles=cfg["memory"]["tcm_repair_stall_cycles"],
        trace=trace)

    mcfg = cfg["mpu"]
    mpu = Mpu(enabled=mcfg["enabled"],
              background_privileged_allowed=mcfg["background_privileged_allowed"])
    for mr in mcfg["regions"]:
        mpu.configure_region(mr["index"], MpuRegion(
            mr["index"], mr["base"], mr["size"],
            priv_perms=mr.get("priv", "rwx"),
            unpriv_perms=mr.get("unpriv", ""),
            enabled=mr.get("enabled", True)))

    ncfg = cfg["nvic"]
    nvic = Nvic(
        lines=[InterruptLine(l["id"], priority=l.get("priority", 0),
                             enabled=l.get("enabled", True),
                             nmi=l.get("nmi", False))
               for l in ncfg["lines"]],
        vector_table_base=ncfg["vector_table_base"],
        stacking_cycles=ncfg["stacking_cycles"],
        unstack_cycles=ncfg["unstack_cycles"],
        tailchain_cycles=ncfg["tailchain_cycles"],
        pipeline_refill=ncfg["pipeline_refill"])
    for st in ncfg["stimulus"]:
        nvic.schedule(st["line"], cycle=st.get("cycle"),
                      after_instructions=st.get("after_instructions"))

    sim = Simulator(memory, nvic=nvic, mpu=mpu, trace=trace,
                    fault_line=cfg["faults"].get("fault_line"))

    ctl = MpuControlBlock(mpu)
    ctl.sim = sim
    ctl_base = mcfg.get("control_base")
    for region in regions:
        if region.kind == "device" and region.base == ctl_base:
            memory.register_device_handler(region.name, ctl.handler)

    image = _load_program(cfg, sim, memory)
    _poke_vector_table(cfg, sim, memory, image)
    _configure_fpb(cfg, memory, image)

    for img in cfg["memory"]["images"]:
        with open(img["file"], "rb") as f:
            memory.load_image(img["base"], f.read())

    init = cfg["init"]
    sim.machine.regs[13] = init.get("sp", 0x20100000)
    sim.machine.privileged = init.get("privileged", True)
    for reg, value in init.get("registers", {}).items():
        idx = int(str(reg).lower().lstrip("r"))
        sim.machine.regs[idx] = u32(value)
    entry = cfg.get("entry")
    if entry is not None:
        if isinstance(entry, str):
            sim.machine.pc = image.symbols[entry]
        else:
            sim.machine.pc = entry
    return sim, image


def _load_program(cfg, sim, memory):
    prog = cfg["program"]
    if prog is None:
        return None
    if "image" in prog:
        image = asm.load_image(prog["image"])
    else:
        if "text" in prog:
            source = prog["text"]
        else:
            with open(prog["source"]) as f:
                source = f.read()
        base = prog.get("base")
        if base is None:
            base = memory.regions[0].base
        image = asm.assemble(source, mode=prog.get("mode", "pool"), base=base)
    sim.load_program(image)
    return image


def _resolve_addr(value, image, path):
    if isinstance(value, int):
        return value
    if image is not None and value in image.symbols:
        return image.symbols[value]
    raise ConfigValidationError(path, f"cannot resolve address {value!r}")


def _poke_vector_table(cfg, sim, memory, image):
    base = cfg["nvic"]["vector_table_base"]
    for key, label in cfg["nvic"]["handlers"].items():
        addr = _resolve_addr(label, image, f"nvic.handlers.{key}")
        memory.raw_write(base + 4 * int(key), 4, addr)


def _configure_fpb(cfg, memory, image):
    for i, e in enumerate(cfg["fpb"]["entries"]):
        path = f"fpb.entries[{i}]"
        addr = _resolve_addr(e["address"], image, path + ".address")
        instruction = None
        if e.get("patch"):
            patched = asm.assemble(e["patch"], mode="movw", base=addr)
            if len(patched.instructions) != 1:
                raise ConfigValidationError(
                    path + ".patch", "patch must be a single instruction")
            instruction = patched.instructions[0]
        memory.fpb.configure(e["entry"], addr, e["mode"],
                             value=e.get("value"), instruction=instruction)


# ===================================================================
# Run loop and reports
# ===================================================================

def run(config, return_sim=False):
    """Execute one scenario configuration; returns the report dict.

    Deterministic: identical configuration (including seeds) produces a
    byte-identical report and trace.
    """
    cfg = validate_config(load_config(config))
    sim, image = build_system(cfg)

    injections = sorted(cfg["faults"]["injections"],
                        key=lambda i: i.get("at_cycle", 0))
    pending = list(injections)
    limit = cfg["cycle_limit"]
    while sim.halted is None and sim.cycles < limit:
        while pending and sim.cycles >= pending[0].get("at_cycle", 0):
            _apply_injection(sim, pending.pop(0))
        sim.step()
    timed_out = sim.halted is None
    if timed_out:
        sim.halted = "timeout"

    report = build_report(cfg, sim, image, timed_out)
    if return_sim:
        return report, sim
    return report


def _apply_injection(sim, spec):
    target = spec["target"]
    rng = spec.get("_rng")
    if target == "tcm":
        addr = spec.get("addr")
        bit = spec.get("bit", 0)
        inj = SoftErrorInjection("tcm", addr=addr, bit=bit)
    else:
        cache = sim.memory.icache if target.startswith("icache") \
            else sim.memory.dcache
        line = spec.get("line")
        if line is None and rng is not None and cache is not None:
            valid = cache.valid_lines()
            if valid:
                line = valid[rng.randrange(len(valid))]
        inj = SoftErrorInjection(target, line=line,
                                 word=spec.get("word", 0),
                                 bit=spec.get("bit", 0))
    sim.memory.inject_soft_error(inj)


def build_report(cfg, sim, image, timed_out):
    report = {
        "halted": sim.halted,
        "halt_detail": {k: v for k, v in sorted(sim.halt_detail.items())},
        "timeout": timed_out,
        "total_cycles": sim.cycles,
        "retired_instructions": sim.retired,
        "registers": [f"0x{r:08x}" for r in sim.machine.regs],
        "flags": {"n": int(sim.machine.n), "z": int(sim.machine.z),
                  "c": int(sim.machine.c), "v": int(sim.machine.v)},
        "events": {k: sim.trace.counts[k] for k in sorted(sim.trace.counts)},
        "nvic": {"stackings": sim.nvic.stackings if sim.nvic else 0,
                 "unstackings": sim.nvic.unstackings if sim.nvic else 0,
                 "tail_chains": sim.nvic.tail_chains if sim.nvic else 0},
        "code_size": image.size_report() if image else None,
    }
    results = []
    for i, spec in enumerate(cfg.get("assertions", []) or []):
        passed, detail = _evaluate_assertion(spec, report, sim)
        results.append({"name": spec.get("name", f"assertion[{i}]"),
                        "passed": passed, "detail": detail})
    report["assertions"] = results
    report["passed"] = all(r["passed"] for r in results) and not timed_out
    return report


def _evaluate_assertion(spec, report, sim):
    kind = spec.get("kind")
    if kind == "register":
        actual = sim.machine.regs[int(spec["reg"])]
        want = u32(spec["equals"])
        return actual == want, f"r{spec['reg']} = 0x{actual:08x}"
    if kind == "memory":
        actual = sim.memory.raw_read(spec["addr"], spec.get("width", 4))
        want = u32(spec["equals"])
        return actual == want, f"[0x{spec['addr']:08x}] = 0x{actual:08x}"
    if kind == "event_count":
        actual = sim.trace.counts[spec["event"]]
        if "equals" in spec:
            ok = actual == spec["equals"]
        else:
            ok = actual >= spec.get("min", 0) and actual <= spec.get("max",
                                                                     1 << 62)
        return ok, f"{spec['event']} = {actual}"
    if kind == "halted":
        return sim.halted == spec["equals"], f"halted = {sim.halted}"
    return False, f"unknown assertion kind {kind!r}"


def report_to_json(report):
    return json.dumps(report, indent=2, sort_keys=True) + "\n"
