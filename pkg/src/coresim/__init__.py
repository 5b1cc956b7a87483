"""
coresim: cycle-accounting instruction-set simulator for a dual-width
embedded core, with a matching assembler and scenario harness.
"""

__version__ = "0.1.0"

from .asm import AsmError, ProgramImage, assemble, code_size_report
from .core import Simulator
from .events import Trace
from .isa import Cond, Instruction, MachineState, Op
from .memory import (AccessFault, Cache, ConfigError, FlashPatchUnit,
                     MemorySystem, Region, SoftErrorInjection)
from .mpu import Mpu, MpuRegion
from .nvic import InterruptLine, Nvic

__all__ = [
    "AsmError", "ProgramImage", "assemble", "code_size_report",
    "Simulator", "Trace", "Cond", "Instruction", "MachineState", "Op",
    "AccessFault", "Cache", "ConfigError", "FlashPatchUnit", "MemorySystem",
    "Region", "SoftErrorInjection", "Mpu", "MpuRegion", "InterruptLine",
    "Nvic",
]
