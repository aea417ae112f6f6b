"""Repeated-measurement characterization.

Timings from shared machines are noisy; a measurement is trusted only when
its coefficient of variation stays under a threshold (default 3%) and,
given enough samples, a Jarque-Bera screen does not reject normality.
Speedups are only ever computed between reliable summaries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import EmptySamples, UnreliableInput

DEFAULT_RELIABILITY_THRESHOLD = 0.03

# chi^2(2) upper 5% point; Jarque-Bera needs a handful of samples to mean anything
JB_CUTOFF = 5.99
JB_MIN_SAMPLES = 8

NORMAL_PASS = "pass"
NORMAL_FAIL = "fail"
NORMAL_SKIPPED = "skipped"


@dataclass(frozen=True)
class SampleSet:
    values: tuple[float, ...]
    unit: str = "s"

    def __post_init__(self):
        if not self.values:
            raise EmptySamples("sample set is empty")
        for v in self.values:
            if not math.isfinite(v) or v <= 0:
                raise EmptySamples(f"sample {v!r} is not a finite positive value")


@dataclass(frozen=True)
class StatSummary:
    expected: float
    variation: float
    normal: str
    reliable: bool
    n: int
    unit: str = "s"


def jarque_bera(values) -> float:
    """Jarque-Bera statistic from population moments; 0 for degenerate samples."""
    n = len(values)
    mu = sum(values) / n
    m2 = sum((v - mu) ** 2 for v in values) / n
    if m2 == 0.0:
        return 0.0
    m3 = sum((v - mu) ** 3 for v in values) / n
    m4 = sum((v - mu) ** 4 for v in values) / n
    skew = m3 / m2**1.5
    kurt = m4 / m2**2
    return n / 6.0 * (skew**2 + (kurt - 3.0) ** 2 / 4.0)


def characterize(
    samples: SampleSet, reliability_threshold: float = DEFAULT_RELIABILITY_THRESHOLD
) -> StatSummary:
    """Summarize repeated measurements of one quantity.

    expected is the arithmetic mean; variation is sample stddev (n-1) over
    the mean, defined 0 for a single sample. The normality screen runs from
    JB_MIN_SAMPLES samples on; a failed screen forces reliable=False even
    under the variation bound (the raw samples stay around for a human).
    """
    vals = samples.values
    n = len(vals)
    mean = sum(vals) / n
    if n == 1:
        variation = 0.0
    else:
        var = sum((v - mean) ** 2 for v in vals) / (n - 1)
        variation = math.sqrt(var) / mean
    if n < JB_MIN_SAMPLES:
        normal = NORMAL_SKIPPED
    else:
        normal = NORMAL_FAIL if jarque_bera(vals) > JB_CUTOFF else NORMAL_PASS
    reliable = variation < reliability_threshold and normal != NORMAL_FAIL
    return StatSummary(
        expected=mean,
        variation=variation,
        normal=normal,
        reliable=reliable,
        n=n,
        unit=samples.unit,
    )


def speedup(reference: StatSummary, candidate: StatSummary) -> float:
    """reference.expected / candidate.expected; > 1 means the candidate is faster."""
    if not reference.reliable or not candidate.reliable:
        raise UnreliableInput("speedup requires two reliable summaries")
    if reference.unit != candidate.unit:
        raise UnreliableInput(
            f"unit mismatch: {reference.unit!r} vs {candidate.unit!r}"
        )
    return reference.expected / candidate.expected
