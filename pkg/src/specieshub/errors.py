"""Domain exceptions shared across the package.

Every error a caller is expected to handle derives from SpeciesHubError,
so the CLI can map "domain error" to exit code 1 in one place.
"""


class SpeciesHubError(Exception):
    """Base class for all domain errors."""


# ── knowledge repo ────────────────────────────────────────────────


class MalformedCid(SpeciesHubError):
    """CID text does not split into exactly three non-empty segments."""


class InvalidAlias(SpeciesHubError):
    """Alias violates the entry-id grammar or collides with uid syntax."""


class DuplicateAlias(SpeciesHubError):
    """Alias already bound to another entry of the same kind."""


class StorageFailure(SpeciesHubError):
    """Underlying filesystem operation failed."""


class UnknownEntry(SpeciesHubError):
    """No entry with the given uid or alias exists."""


# ── statistics ────────────────────────────────────────────────────


class EmptySamples(SpeciesHubError):
    """Sample set is empty or contains non-positive values."""


class UnreliableInput(SpeciesHubError):
    """Speedup requested over summaries that are not reliable."""


# ── pareto ────────────────────────────────────────────────────────


class DimensionMismatch(SpeciesHubError):
    """Behavior point does not conform to the objective spec."""


# ── flagspace ─────────────────────────────────────────────────────


class UnstableProbe(SpeciesHubError):
    """Repeated probes of the same choice disagree beyond tolerance."""


# ── measurement ───────────────────────────────────────────────────


class ToolchainMissing(SpeciesHubError):
    """The requested toolchain binary is not available on this host."""


class BuildTimeout(SpeciesHubError):
    """Build exceeded its wall-clock budget."""


class RunTimeout(SpeciesHubError):
    """A single run exceeded its wall-clock budget."""


# ── autotune / clustering ─────────────────────────────────────────


class UntunableKey(SpeciesHubError):
    """Reference measurement failed; the key cannot be tuned."""


class NoFrontier(SpeciesHubError):
    """No recorded frontier for the requested tuning key."""


# ── predict ───────────────────────────────────────────────────────


class DegenerateData(SpeciesHubError):
    """Training set is empty or otherwise unusable."""


class MissingFeature(SpeciesHubError):
    """Feature vector lacks a feature the model tests."""


# ── dispatch ──────────────────────────────────────────────────────


class UnextractableFeature(SpeciesHubError):
    """A dispatch-tree feature has no runtime extractor."""


# ── crowd service ─────────────────────────────────────────────────


class MalformedSubmission(SpeciesHubError):
    """Result submission body is structurally invalid."""


class NoKnowledge(SpeciesHubError):
    """Neither a frontier nor a predictive model covers the query."""
