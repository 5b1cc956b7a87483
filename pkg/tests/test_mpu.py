"""Region permission checking."""

import pytest

from coresim.harness import decode_rasr, encode_rasr
from coresim.mpu import Mpu, MpuConfigError, MpuFault, MpuRegion


def two_region_mpu():
    mpu = Mpu(enabled=True, background_privileged_allowed=True)
    mpu.configure_region(0, MpuRegion(0, 0x20000000, 128, priv_perms="rw",
                                      unpriv_perms="rw"))
    mpu.configure_region(1, MpuRegion(1, 0x20000080, 128, priv_perms="rw",
                                      unpriv_perms="r"))
    return mpu


def test_disabled_mpu_allows_everything():
    mpu = Mpu(enabled=False)
    assert mpu.check_access(0xDEADBEE0, 4, "w", privileged=False) is None


def test_boundary_is_exclusive():
    mpu = Mpu(enabled=True, background_privileged_allowed=False)
    mpu.configure_region(0, MpuRegion(0, 0x20000000, 64, unpriv_perms="rw"))
    assert mpu.check_access(0x2000003F, 1, "w", privileged=False) is None
    assert mpu.check_access(0x20000040, 1, "w", privileged=False) == "no_region"


def test_adjacent_task_regions_isolate():
    mpu = two_region_mpu()
    # task B's region only grants unprivileged reads
    assert mpu.check_access(0x20000010, 4, "w", privileged=False) is None
    assert mpu.check_access(0x20000090, 4, "w", privileged=False) == "perm_denied"
    assert mpu.check_access(0x20000090, 4, "r", privileged=False) is None


def test_background_policy_only_for_privileged():
    mpu = Mpu(enabled=True, background_privileged_allowed=True)
    assert mpu.check_access(0x12345678, 4, "r", privileged=True) is None
    assert mpu.check_access(0x12345678, 4, "r", privileged=False) == "no_region"
    mpu.background_privileged_allowed = False
    assert mpu.check_access(0x12345678, 4, "r", privileged=True) == "no_region"


def test_highest_index_wins_on_overlap_exhaustive():
    for lo_perms in ("", "r", "rw", "rwx"):
        for hi_perms in ("", "r", "rw", "rwx"):
            mpu = Mpu(enabled=True, background_privileged_allowed=False)
            mpu.configure_region(0, MpuRegion(0, 0x20000000, 1024,
                                              unpriv_perms=lo_perms))
            mpu.configure_region(5, MpuRegion(5, 0x20000000, 32,
                                              unpriv_perms=hi_perms))
            for kind in "rwx":
                want = None if kind in hi_perms else "perm_denied"
                got = mpu.check_access(0x20000010, 4, kind, privileged=False)
                assert got == want, (lo_perms, hi_perms, kind)
                # outside the small region the low-index one decides
                want = None if kind in lo_perms else "perm_denied"
                assert mpu.check_access(0x20000100, 4, kind,
                                        privileged=False) == want


def test_disabled_region_does_not_decide():
    mpu = Mpu(enabled=True, background_privileged_allowed=False)
    mpu.configure_region(0, MpuRegion(0, 0x20000000, 1024, unpriv_perms="rw"))
    mpu.configure_region(7, MpuRegion(7, 0x20000000, 32, unpriv_perms="",
                                      enabled=False))
    assert mpu.check_access(0x20000000, 4, "w", privileged=False) is None


def test_minimum_region_32_bytes_below_4k():
    region = MpuRegion(0, 0x20000000, 32)
    assert region.size == 32 < 4096
    with pytest.raises(MpuConfigError):
        MpuRegion(0, 0x20000000, 16)


def test_alignment_and_power_of_two_enforced():
    with pytest.raises(MpuConfigError):
        MpuRegion(0, 0x20000010, 32)   # base not aligned to size
    with pytest.raises(MpuConfigError):
        MpuRegion(0, 0x20000000, 96)   # not a power of two
    MpuRegion(0, 0x20000000, 4096)     # fine


def test_unprivileged_configure_faults():
    mpu = Mpu(enabled=True)
    region = MpuRegion(0, 0x20000000, 32)
    with pytest.raises(MpuFault) as e:
        mpu.configure_region(0, region, privileged_caller=False)
    assert e.value.reason == "perm_denied"


def test_check_is_pure():
    mpu = two_region_mpu()
    args = (0x20000090, 4, "w", False)
    results = {mpu.check_access(*args) for _ in range(10)}
    assert results == {"perm_denied"}


def test_rasr_encode_decode_round_trip():
    region = MpuRegion(3, 0x20004000, 128, priv_perms="rw",
                       unpriv_perms="rwx", enabled=True)
    back = decode_rasr(3, 0x20004000, encode_rasr(region))
    assert back.base == region.base and back.size == region.size
    assert back.priv_perms == region.priv_perms
    assert back.unpriv_perms == region.unpriv_perms
    assert back.enabled == region.enabled
