"""Non-dominated solution archives.

Only the winning (choice, behavior) pairs per tuning key are kept: a
candidate enters the frontier iff nothing already there dominates it, and
entering evicts everything it dominates. Maximize dimensions are handled
by sign normalization; everything below works on minimize-normalized
points. Frontiers are small (tens of points), so the incremental linear
scan is the primary path.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

from .errors import DimensionMismatch

MINIMIZE = "minimize"
MAXIMIZE = "maximize"

ACCEPTED = "accepted"
DOMINATED = "dominated"
DUPLICATE = "duplicate"


@dataclass(frozen=True)
class ObjectiveSpec:
    dims: tuple[tuple[str, str], ...]

    def __post_init__(self):
        if not self.dims:
            raise DimensionMismatch("objective spec needs at least one dimension")
        names = [n for n, _ in self.dims]
        if len(set(names)) != len(names):
            raise DimensionMismatch("objective dimension names must be unique")
        for _, direction in self.dims:
            if direction not in (MINIMIZE, MAXIMIZE):
                raise DimensionMismatch(f"unknown direction {direction!r}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.dims)

    def signs(self) -> tuple[int, ...]:
        return tuple(1 if d == MINIMIZE else -1 for _, d in self.dims)

    def to_doc(self) -> list:
        return [[n, d] for n, d in self.dims]

    @classmethod
    def from_doc(cls, doc) -> "ObjectiveSpec":
        return cls(tuple((n, d) for n, d in doc))


@dataclass(frozen=True)
class FrontierSolution:
    choice: object
    behavior: tuple[float, ...]
    experiment: str | None = None
    timestamp: float = 0.0
    equivalents: tuple[object, ...] = ()
    canonical: str | None = None  # reduced -fno-ALL form of the choice, once known


@dataclass(frozen=True)
class Frontier:
    spec: ObjectiveSpec
    solutions: tuple[FrontierSolution, ...] = ()

    def __len__(self) -> int:
        return len(self.solutions)

    def behavior_points(self) -> set[tuple[float, ...]]:
        return {s.behavior for s in self.solutions}


def _check_point(spec: ObjectiveSpec, point) -> tuple[float, ...]:
    pt = tuple(float(v) for v in point)
    if len(pt) != len(spec.dims):
        raise DimensionMismatch(
            f"point has {len(pt)} values, spec has {len(spec.dims)} dims"
        )
    for v in pt:
        if v != v or v in (float("inf"), float("-inf")):
            raise DimensionMismatch(f"non-finite behavior value {v!r}")
    return pt


def dominates(spec: ObjectiveSpec, a, b) -> bool:
    """True iff a is at least as good as b everywhere and strictly better once."""
    pa = _check_point(spec, a)
    pb = _check_point(spec, b)
    signs = spec.signs()
    at_least = True
    strictly = False
    for s, x, y in zip(signs, pa, pb):
        if s * x > s * y:
            at_least = False
            break
        if s * x < s * y:
            strictly = True
    return at_least and strictly


def insert(
    frontier: Frontier, candidate: FrontierSolution
) -> tuple[Frontier, str]:
    """Try a candidate against the frontier; returns (new frontier, verdict).

    An exact behavior tie keeps the earlier solution: the newcomer's choice
    is recorded as an equivalent-choice annotation (when it differs) and
    the verdict is DUPLICATE either way, so callers never treat a tie as a
    fresh win.
    """
    spec = frontier.spec
    point = _check_point(spec, candidate.behavior)
    candidate = replace(candidate, behavior=point)
    signs = spec.signs()
    norm = tuple(s * v for s, v in zip(signs, point))

    for i, sol in enumerate(frontier.solutions):
        other = tuple(s * v for s, v in zip(signs, sol.behavior))
        if other == norm:
            if sol.choice == candidate.choice or candidate.choice in sol.equivalents:
                return frontier, DUPLICATE
            annotated = replace(
                sol, equivalents=sol.equivalents + (candidate.choice,)
            )
            sols = frontier.solutions[:i] + (annotated,) + frontier.solutions[i + 1 :]
            return Frontier(spec, sols), DUPLICATE
        if _norm_dominates(other, norm):
            return frontier, DOMINATED

    survivors = tuple(
        sol
        for sol in frontier.solutions
        if not _norm_dominates(norm, tuple(s * v for s, v in zip(signs, sol.behavior)))
    )
    return Frontier(spec, survivors + (candidate,)), ACCEPTED


def _norm_dominates(a: tuple, b: tuple) -> bool:
    strictly = False
    for x, y in zip(a, b):
        if x > y:
            return False
        if x < y:
            strictly = True
    return strictly


def frontier_of(points, spec: ObjectiveSpec) -> Frontier:
    """Fold insert over (choice, point) pairs; order does not affect the result set."""
    frontier = Frontier(spec)
    for choice, point in points:
        frontier, _ = insert(
            frontier, FrontierSolution(choice=choice, behavior=tuple(point))
        )
    return frontier


def solution_to_doc(sol: FrontierSolution, spec: ObjectiveSpec, choice_doc=None) -> dict:
    behavior = {name: v for name, v in zip(spec.names, sol.behavior)}
    return {
        "behavior": behavior,
        "choice": choice_doc(sol.choice) if choice_doc else sol.choice,
        "equivalents": [choice_doc(c) if choice_doc else c for c in sol.equivalents],
        "experiment": sol.experiment,
        "timestamp": sol.timestamp,
        "canonical": sol.canonical,
    }


def frontier_to_doc(frontier: Frontier, choice_doc=None) -> dict:
    return {
        "objective": frontier.spec.to_doc(),
        "solutions": [
            solution_to_doc(s, frontier.spec, choice_doc) for s in frontier.solutions
        ],
    }


def frontier_from_doc(doc: dict, choice_from_doc=None) -> Frontier:
    spec = ObjectiveSpec.from_doc(doc["objective"])
    sols = []
    for sdoc in doc["solutions"]:
        behavior = tuple(float(sdoc["behavior"][name]) for name in spec.names)
        choice = sdoc["choice"]
        equivalents = sdoc.get("equivalents", [])
        if choice_from_doc:
            choice = choice_from_doc(choice)
            equivalents = [choice_from_doc(c) for c in equivalents]
        sols.append(
            FrontierSolution(
                choice=choice,
                behavior=behavior,
                experiment=sdoc.get("experiment"),
                timestamp=sdoc.get("timestamp", 0.0),
                equivalents=tuple(equivalents),
                canonical=sdoc.get("canonical"),
            )
        )
    return Frontier(spec, tuple(sols))


def new_solution(choice, behavior, experiment: str | None = None) -> FrontierSolution:
    return FrontierSolution(
        choice=choice,
        behavior=tuple(float(v) for v in behavior),
        experiment=experiment,
        timestamp=time.time(),
    )
