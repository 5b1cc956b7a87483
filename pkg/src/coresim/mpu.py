"""
Memory protection unit: up to eight power-of-two regions checked on every
access, with per-privilege read/write/execute permissions.  Regions are as
small as 32 bytes, far below the 4 KiB granularity of older designs, so
individual software modules can be isolated from one another.
"""

REGION_COUNT = 8
MIN_REGION_SIZE = 32

READ = "r"
WRITE = "w"
EXECUTE = "x"


class MpuConfigError(Exception):
    pass


class MpuFault(Exception):
    def __init__(self, reason, addr, kind):
        super().__init__(f"mpu {reason} for {kind} at 0x{addr:08x}")
        self.reason = reason  # "no_region" | "perm_denied"
        self.addr = addr
        self.kind = kind


class MpuRegion:
    """One protection region: power-of-two sized, base aligned to size."""

    def __init__(self, index, base, size, priv_perms="rwx",
                 unpriv_perms="", enabled=True):
        if size < MIN_REGION_SIZE or size & (size - 1):
            raise MpuConfigError(
                f"region {index}: size {size} must be a power of two >= 32")
        if base % size:
            raise MpuConfigError(
                f"region {index}: base 0x{base:08x} not aligned to size {size}")
        for p in (priv_perms, unpriv_perms):
            if any(ch not in "rwx" for ch in p):
                raise MpuConfigError(f"region {index}: bad perms {p!r}")
        self.index = index
        self.base = base
        self.size = size
        self.priv_perms = set(priv_perms)
        self.unpriv_perms = set(unpriv_perms)
        self.enabled = enabled

    def contains(self, addr):
        return self.base <= addr < self.base + self.size

    def allows(self, kind, privileged):
        perms = self.priv_perms if privileged else self.unpriv_perms
        return kind in perms


class Mpu:
    """Region registers plus the pure access-check function.

    When disabled every check passes.  On overlap the highest-indexed
    enabled region decides.  With no matching region, privileged accesses
    pass only under the background policy; unprivileged ones always fault.
    """

    def __init__(self, enabled=False, background_privileged_allowed=True):
        self.enabled = enabled
        self.background_privileged_allowed = background_privileged_allowed
        self.regions = [None] * REGION_COUNT

    def configure_region(self, index, region, privileged_caller=True):
        if not privileged_caller:
            raise MpuFault("perm_denied", region.base if region else 0,
                           "configure")
        if not 0 <= index < REGION_COUNT:
            raise MpuConfigError(f"region index {index} out of range")
        self.regions[index] = region

    def check_access(self, addr, size, kind, privileged):
        """Returns None when allowed, or a fault reason string."""
        if not self.enabled:
            return None
        decided = None
        for region in self.regions:  # highest enabled index wins
            if region is not None and region.enabled and region.contains(addr):
                decided = region
        if decided is None:
            if privileged and self.background_privileged_allowed:
                return None
            return "no_region"
        if decided.allows(kind, privileged):
            return None
        return "perm_denied"
