"""Compiler optimization-flag spaces and choice vectors.

A choice is a base level plus boolean flag settings and integer parameter
values. Its string form follows the
``<base> -fflag ... -fno-flag ... --param name=value`` convention; a
reduced winner is written with only its influential on-flags plus the
``-fno-ALL`` meta token (expanded to explicit ``-fno-`` flags for real
compiler invocations).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .errors import SpeciesHubError, UnstableProbe

ON = "on"
OFF = "off"

NO_ALL_TOKEN = "-fno-ALL"

META = "meta"
EXPANDED = "expanded"


@dataclass(frozen=True)
class FlagSpace:
    compiler: str
    version: str
    base_levels: tuple[str, ...]
    booleans: tuple[str, ...]
    params: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        names = list(self.booleans) + list(self.params)
        if len(set(names)) != len(names):
            raise SpeciesHubError("flag and parameter names must be unique")
        if not self.base_levels:
            raise SpeciesHubError("flag space needs at least one base level")
        for name, (lo, hi) in self.params.items():
            if lo > hi:
                raise SpeciesHubError(f"empty range for parameter {name!r}")

    def to_doc(self) -> dict:
        return {
            "compiler": self.compiler,
            "version": self.version,
            "base_levels": list(self.base_levels),
            "booleans": list(self.booleans),
            "params": {k: [lo, hi] for k, (lo, hi) in self.params.items()},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "FlagSpace":
        return cls(
            compiler=doc["compiler"],
            version=doc.get("version", ""),
            base_levels=tuple(doc["base_levels"]),
            booleans=tuple(doc["booleans"]),
            params={k: (int(lo), int(hi)) for k, (lo, hi) in doc.get("params", {}).items()},
        )


def load_flagspace(path: Path | str) -> FlagSpace:
    return FlagSpace.from_doc(json.loads(Path(path).read_text(encoding="utf-8")))


def builtin_flagspace(name: str) -> FlagSpace:
    """Load one of the flag-space data files shipped with the package."""
    ref = resources.files("specieshub").joinpath(f"data/flagspaces/{name}.json")
    try:
        text = ref.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise SpeciesHubError(f"no built-in flag space named {name!r}") from None
    return FlagSpace.from_doc(json.loads(text))


@dataclass(frozen=True)
class ChoiceVector:
    base: str
    settings: dict[str, str] = field(default_factory=dict)
    param_values: dict[str, int] = field(default_factory=dict)
    no_all: bool = False

    def __post_init__(self):
        for name, state in self.settings.items():
            if state not in (ON, OFF):
                raise SpeciesHubError(f"flag {name!r} has invalid state {state!r}")

    @property
    def on_flags(self) -> tuple[str, ...]:
        return tuple(sorted(n for n, s in self.settings.items() if s == ON))

    @property
    def off_flags(self) -> tuple[str, ...]:
        return tuple(sorted(n for n, s in self.settings.items() if s == OFF))

    def to_doc(self) -> dict:
        return {
            "base": self.base,
            "on": list(self.on_flags),
            "off": list(self.off_flags),
            "params": dict(sorted(self.param_values.items())),
            "no_all": self.no_all,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "ChoiceVector":
        settings = {n: ON for n in doc.get("on", [])}
        settings.update({n: OFF for n in doc.get("off", [])})
        return cls(
            base=doc["base"],
            settings=settings,
            param_values={k: int(v) for k, v in doc.get("params", {}).items()},
            no_all=bool(doc.get("no_all", False)),
        )


def validate_choice(space: FlagSpace, choice: ChoiceVector) -> None:
    if choice.base not in space.base_levels:
        raise SpeciesHubError(f"base {choice.base!r} not in space")
    for name in choice.settings:
        if name not in space.booleans:
            raise SpeciesHubError(f"flag {name!r} not in space")
    for name, value in choice.param_values.items():
        if name not in space.params:
            raise SpeciesHubError(f"parameter {name!r} not in space")
        lo, hi = space.params[name]
        if not lo <= value <= hi:
            raise SpeciesHubError(f"parameter {name!r}={value} outside {lo}..{hi}")


def sample(space: FlagSpace, rng: random.Random | int, density: float = 0.5) -> ChoiceVector:
    """Draw a random choice; deterministic for a fixed seed.

    Each boolean is set (on or off, evenly) with probability ``density``
    and left unset otherwise; each parameter is included with probability
    ``density`` with a uniform value from its range.
    """
    if not 0.0 < density <= 1.0:
        raise SpeciesHubError(f"density {density} outside (0, 1]")
    if isinstance(rng, int):
        rng = random.Random(rng)
    base = rng.choice(space.base_levels)
    settings = {}
    for name in space.booleans:
        if rng.random() < density:
            settings[name] = ON if rng.random() < 0.5 else OFF
    param_values = {}
    for name in sorted(space.params):
        if rng.random() < density:
            lo, hi = space.params[name]
            param_values[name] = rng.randint(lo, hi)
    return ChoiceVector(base=base, settings=settings, param_values=param_values)


def render(choice: ChoiceVector, mode: str = META, space: FlagSpace | None = None) -> str:
    """String form of a choice.

    META keeps the literal ``-fno-ALL`` token for reduced choices; EXPANDED
    spells out ``-fno-`` for every boolean of the space that is not on,
    which is the form handed to a real compiler.
    """
    tokens = [choice.base]
    tokens += [f"-f{name}" for name in choice.on_flags]
    if choice.no_all:
        if mode == EXPANDED:
            if space is None:
                raise SpeciesHubError("expanded render of a -fno-ALL choice needs the flag space")
            on = set(choice.on_flags)
            tokens += [f"-fno-{name}" for name in space.booleans if name not in on]
    else:
        tokens += [f"-fno-{name}" for name in choice.off_flags]
    for name in sorted(choice.param_values):
        tokens += ["--param", f"{name}={choice.param_values[name]}"]
    if choice.no_all and mode == META:
        tokens.append(NO_ALL_TOKEN)
    return " ".join(tokens)


def parse(text: str) -> ChoiceVector:
    """Invert a meta-mode render."""
    tokens = text.split()
    if not tokens:
        raise SpeciesHubError("empty choice string")
    base = tokens[0]
    settings: dict[str, str] = {}
    params: dict[str, int] = {}
    no_all = False
    i = 1
    while i < len(tokens):
        tok = tokens[i]
        if tok == NO_ALL_TOKEN:
            no_all = True
        elif tok == "--param":
            i += 1
            if i >= len(tokens) or "=" not in tokens[i]:
                raise SpeciesHubError(f"malformed --param in {text!r}")
            name, _, value = tokens[i].partition("=")
            params[name] = int(value)
        elif tok.startswith("-fno-"):
            settings[tok[len("-fno-"):]] = OFF
        elif tok.startswith("-f"):
            settings[tok[len("-f"):]] = ON
        else:
            raise SpeciesHubError(f"unrecognized token {tok!r} in {text!r}")
        i += 1
    return ChoiceVector(base=base, settings=settings, param_values=params, no_all=no_all)


def canonical_key(choice: ChoiceVector) -> str:
    """Cluster identity of a reduced winner: base + sorted on-set + params + -fno-ALL."""
    return render(replace(choice, no_all=True), mode=META)


def reduce(choice: ChoiceVector, probe, tolerance: float = 0.02) -> ChoiceVector:
    """Strip a winning choice down to its influential flags.

    Greedy one-at-a-time elimination in descending flag-name order: a flag
    (or parameter) is dropped when removing it keeps the probed primary
    objective within ``tolerance`` (relative) of the original probe. The
    result has ``no_all=True``. Interacting flags may keep a non-minimal
    set; probes are assumed deterministic enough that two probes of the
    same choice agree within tolerance, otherwise UnstableProbe is raised.
    """
    if tolerance <= 0:
        raise SpeciesHubError("tolerance must be positive")
    baseline = probe(choice)
    again = probe(choice)
    if abs(again - baseline) > tolerance * abs(baseline):
        raise UnstableProbe(
            f"probe of the same choice gave {baseline} then {again}"
        )

    current = ChoiceVector(
        base=choice.base,
        settings={n: ON for n in choice.on_flags},
        param_values=dict(choice.param_values),
        no_all=True,
    )
    for name in sorted(current.on_flags, reverse=True):
        trial_settings = {n: s for n, s in current.settings.items() if n != name}
        trial = replace(current, settings=trial_settings)
        if abs(probe(trial) - baseline) <= tolerance * abs(baseline):
            current = trial
    for name in sorted(current.param_values, reverse=True):
        trial_params = {n: v for n, v in current.param_values.items() if n != name}
        trial = replace(current, param_values=trial_params)
        if abs(probe(trial) - baseline) <= tolerance * abs(baseline):
            current = trial
    return current
