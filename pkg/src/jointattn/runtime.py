"""Process-level tuning for long training runs."""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
# glibc refuses mmap thresholds above 32 MiB on 64-bit builds
_MMAP_LIMIT = 32 * 1024 * 1024
_TRIM_LIMIT = 512 * 1024 * 1024

_tuned = False


def keep_freed_memory() -> bool:
    """Stop glibc from returning every freed activation buffer to the OS.

    Training allocates and frees megabyte-sized temporaries at a high rate.
    With default settings each one is a fresh ``mmap`` and pays its page
    faults again, which costs more than the arithmetic on small networks.
    Returns True when the allocator accepted the new thresholds; a no-op
    off glibc.
    """
    global _tuned
    if _tuned:
        return True
    if not sys.platform.startswith("linux"):
        return False
    name = ctypes.util.find_library("c")
    if name is None:
        return False
    try:
        libc = ctypes.CDLL(name)
        ok = libc.mallopt(_M_MMAP_THRESHOLD, _MMAP_LIMIT) and libc.mallopt(_M_TRIM_THRESHOLD, _TRIM_LIMIT)
    except (OSError, AttributeError):
        return False
    _tuned = bool(ok)
    return _tuned
