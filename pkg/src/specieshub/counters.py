"""Canonical hardware-counter key set.

The 29 perf counter names collected for dynamic characterization. Absent
counters are omitted from behavior/feature documents, never zero-filled.
"""

COUNTER_NAMES = (
    "cycles",
    "instructions",
    "cache-references",
    "cache-misses",
    "L1-dcache-loads",
    "L1-dcache-load-misses",
    "L1-dcache-prefetches",
    "L1-dcache-prefetch-misses",
    "LLC-prefetches",
    "LLC-prefetch-misses",
    "dTLB-stores",
    "dTLB-store-misses",
    "branches",
    "branch-misses",
    "bus-cycles",
    "L1-dcache-stores",
    "L1-dcache-store-misses",
    "L1-icache-loads",
    "L1-icache-load-misses",
    "LLC-loads",
    "LLC-load-misses",
    "LLC-stores",
    "LLC-store-misses",
    "dTLB-loads",
    "dTLB-load-misses",
    "iTLB-loads",
    "iTLB-load-misses",
    "branch-loads",
    "branch-load-misses",
)
