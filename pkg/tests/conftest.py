import pytest

from coresim.core import Simulator
from coresim.events import Trace
from coresim.isa import Instruction
from coresim.memory import MemorySystem, Region

RAM_CODE = 0x20008000


def default_regions():
    return [
        Region("flash", "flash", 0x00000000, 0x100000, writable=False,
               cached=True, sequential_cycles=1, nonsequential_cycles=4),
        Region("ram", "bitband_target", 0x20000000, 0x100000),
        Region("alias", "bitband_alias", 0x22000000, 0x800000, target="ram"),
        Region("dram", "ram", 0x20200000, 0x10000, cached=True),
        Region("tcm", "tcm", 0x10000000, 0x10000),
        Region("dev", "device", 0x40000000, 0x1000),
    ]


def make_memory(icache=None, dcache=None, **kw):
    return MemorySystem(default_regions(), icache=icache, dcache=dcache,
                        trace=Trace(), **kw)


def make_sim(memory=None, **kw):
    memory = memory or make_memory()
    sim = Simulator(memory, trace=memory.trace, **kw)
    sim.machine.regs[13] = 0x20100000
    return sim


def place(instrs, base=RAM_CODE):
    """Assign consecutive addresses to hand-built instructions."""
    addr = base
    for ins in instrs:
        ins.addr = addr
        addr += ins.size
    return instrs


def run_instrs(instrs, base=RAM_CODE, regs=None, flags=None, sim=None):
    """Execute hand-built IR from RAM until halt; returns the simulator."""
    sim = sim or make_sim()
    sim.load_instructions(place(instrs, base), entry=base)
    if regs:
        for i, v in regs.items():
            sim.machine.regs[i] = v
    if flags:
        sim.machine.n, sim.machine.z, sim.machine.c, sim.machine.v = flags
    sim.run(200000)
    return sim


@pytest.fixture
def sim():
    return make_sim()
