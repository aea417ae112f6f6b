"""Random exploration loop over (species, dataset, platform, compiler) keys.

Each iteration samples a flag combination, measures it, compares against
the cached base-level reference, and feeds the result through the Pareto
filter of the key's frontier. Winners are reduced to their influential
flag set before their canonical form is persisted. Budgets are spread
uniformly at random over keys; everything is deterministic for a fixed
seed and mock toolchain.
"""

from __future__ import annotations

import hashlib
import json
import random
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import flagspace as fs
from . import measure as ms
from . import pareto, stats
from .errors import SpeciesHubError, UnstableProbe, UntunableKey
from .repo import EntryId, Repo, _locked

DEFAULT_OBJECTIVE = pareto.ObjectiveSpec(
    (
        ("exec_time_s", pareto.MINIMIZE),
        ("binary_size_bytes", pareto.MINIMIZE),
        ("compile_time_s", pareto.MINIMIZE),
        ("failed", pareto.MINIMIZE),
    )
)


@dataclass(frozen=True)
class TuneKey:
    species: str
    dataset: str
    platform: str
    compiler: str

    def label(self) -> str:
        return f"{self.species}:{self.dataset}:{self.platform}@{self.compiler}"


@dataclass
class TuneConfig:
    objective: pareto.ObjectiveSpec = DEFAULT_OBJECTIVE
    repeats: int = 3
    density: float = 0.5
    budget: int = 100
    seed: int = 0
    reduce_tolerance: float = 0.02
    run_timeout: float = ms.DEFAULT_RUN_TIMEOUT
    build_timeout: float = ms.DEFAULT_BUILD_TIMEOUT


@dataclass
class TuneContext:
    repo: Repo
    space: fs.FlagSpace
    toolchain: object
    work_root: Path | None = None


@dataclass
class ExperimentOutcome:
    record: EntryId | None
    verdict: str
    speedup: float | None = None


@dataclass
class CampaignReport:
    per_key: dict[str, dict] = field(default_factory=dict)
    iterations: int = 0

    def to_doc(self) -> dict:
        return {"type": "campaign-report", "iterations": self.iterations, "per_key": self.per_key}


# ── frontier persistence ──────────────────────────────────────────


def _key_where(ctx: TuneContext, key: TuneKey) -> dict:
    species = ctx.repo.load("species", key.species)
    dataset = ctx.repo.load("dataset", key.dataset)
    return {
        "species": species.uid,
        "dataset": dataset.uid,
        "platform": key.platform,
        "compiler": key.compiler,
    }


def frontier_entry(ctx: TuneContext, key: TuneKey, config: TuneConfig) -> EntryId:
    """The solution entry holding the key's frontier; created on first use.

    Creation is serialized under a kind-level lock so concurrent callers
    (coordinator handler threads, parallel campaigns) never split one key
    over two entries.
    """
    where = _key_where(ctx, key)
    found = ctx.repo.find("solution", where)
    if found:
        return found[0].id
    with _locked(ctx.repo.root / "solution" / ".create.lock"):
        found = ctx.repo.find("solution", where)
        if found:
            return found[0].id
        meta = dict(where)
        meta["frontier"] = pareto.frontier_to_doc(pareto.Frontier(config.objective))
        meta["untunable"] = False
        meta["confirmations"] = 0
        return ctx.repo.create("solution", meta)


def load_frontier(repo: Repo, solution_ref: str) -> pareto.Frontier:
    entry = repo.load("solution", solution_ref)
    return pareto.frontier_from_doc(
        entry.meta["frontier"], choice_from_doc=fs.ChoiceVector.from_doc
    )


def _behavior_point(behavior: ms.BehaviorVector, spec: pareto.ObjectiveSpec):
    values = {
        "exec_time_s": behavior.exec_time_s,
        "binary_size_bytes": behavior.binary_size_bytes,
        "compile_time_s": behavior.compile_time_s,
        "max_rss_bytes": behavior.max_rss_bytes,
        "failed": behavior.failed,
    }
    point = []
    for name in spec.names:
        v = values.get(name)
        if v is None:
            return None
        point.append(float(v))
    return tuple(point)


# ── operations ────────────────────────────────────────────────────


def reference_behavior(ctx: TuneContext, key: TuneKey, config: TuneConfig) -> ms.BehaviorVector:
    """Measure (once, cached) the bare base level the key's speedups compare against.

    The reference is itself a solution: it seeds the frontier, so sampled
    choices that merely match it come back dominated or duplicate.
    """
    ref_choice = fs.ChoiceVector(base=ctx.space.base_levels[0])
    state = ms.capture_state(key.platform)
    behavior, exp_id = ms.measure(
        ctx.repo,
        key.species,
        ref_choice,
        key.dataset,
        state,
        config.repeats,
        ctx.toolchain,
        space=ctx.space,
        work_root=ctx.work_root,
        run_timeout=config.run_timeout,
        build_timeout=config.build_timeout,
        extra_meta={"reference": True},
    )
    sol = frontier_entry(ctx, key, config)
    if behavior.failed:
        with ctx.repo.mutate("solution", sol.uid) as meta:
            meta["untunable"] = True
        return behavior
    point = _behavior_point(behavior, config.objective)
    if point is None:
        return behavior
    candidate = pareto.FrontierSolution(
        choice=ref_choice, behavior=point, experiment=exp_id.uid, timestamp=time.time()
    )
    with ctx.repo.mutate("solution", sol.uid) as meta:
        frontier = pareto.frontier_from_doc(
            meta["frontier"], choice_from_doc=fs.ChoiceVector.from_doc
        )
        frontier, verdict = pareto.insert(frontier, candidate)
        if verdict == pareto.ACCEPTED:
            canonical = _canonicalize(ctx, key, config, state, ref_choice)
            frontier = _set_canonical(frontier, ref_choice, canonical)
        meta["frontier"] = pareto.frontier_to_doc(frontier, choice_doc=lambda c: c.to_doc())
    return behavior


def _probe_for(ctx: TuneContext, key: TuneKey, config: TuneConfig, state: ms.StateVector):
    """Exec-time probe used by winner reduction; measurement dedup makes it stable."""

    def probe(choice: fs.ChoiceVector) -> float:
        behavior, _ = ms.measure(
            ctx.repo,
            key.species,
            choice,
            key.dataset,
            state,
            config.repeats,
            ctx.toolchain,
            space=ctx.space,
            work_root=ctx.work_root,
            run_timeout=config.run_timeout,
            build_timeout=config.build_timeout,
        )
        if behavior.failed or behavior.exec_time_s is None:
            return float("inf")
        return behavior.exec_time_s

    return probe


def iterate(
    ctx: TuneContext, key: TuneKey, config: TuneConfig, rng: random.Random
) -> ExperimentOutcome:
    """One tuning step: sample, measure, compare, update the frontier."""
    sol_id = frontier_entry(ctx, key, config)
    sol_entry = ctx.repo.load("solution", sol_id.uid)
    if sol_entry.meta.get("untunable"):
        raise UntunableKey(key.label())

    reference = reference_behavior(ctx, key, config)
    if reference.failed:
        raise UntunableKey(key.label())

    choice = fs.sample(ctx.space, rng, config.density)
    state = ms.capture_state(key.platform)
    behavior, exp_id = ms.measure(
        ctx.repo,
        key.species,
        choice,
        key.dataset,
        state,
        config.repeats,
        ctx.toolchain,
        space=ctx.space,
        work_root=ctx.work_root,
        run_timeout=config.run_timeout,
        build_timeout=config.build_timeout,
    )

    speedup = None
    if reference.reliable and behavior.reliable and behavior.samples and reference.samples:
        speedup = stats.speedup(
            stats.characterize(reference.samples), stats.characterize(behavior.samples)
        )

    if behavior.failed:
        return ExperimentOutcome(record=exp_id, verdict="failed")
    point = _behavior_point(behavior, config.objective)
    if point is None:
        return ExperimentOutcome(record=exp_id, verdict="failed")

    candidate = pareto.FrontierSolution(
        choice=choice, behavior=point, experiment=exp_id.uid, timestamp=time.time()
    )
    with ctx.repo.mutate("solution", sol_id.uid) as meta:
        frontier = pareto.frontier_from_doc(
            meta["frontier"], choice_from_doc=fs.ChoiceVector.from_doc
        )
        frontier, verdict = pareto.insert(frontier, candidate)
        if verdict == pareto.ACCEPTED:
            canonical = _canonicalize(ctx, key, config, state, choice)
            frontier = _set_canonical(frontier, choice, canonical)
        meta["frontier"] = pareto.frontier_to_doc(frontier, choice_doc=lambda c: c.to_doc())
    return ExperimentOutcome(record=exp_id, verdict=verdict, speedup=speedup)


def _canonicalize(ctx, key, config, state, choice) -> str | None:
    probe = _probe_for(ctx, key, config, state)
    try:
        reduced = fs.reduce(choice, probe, tolerance=config.reduce_tolerance)
    except UnstableProbe:
        return None
    return fs.render(reduced, mode=fs.META)


def _set_canonical(frontier: pareto.Frontier, choice, canonical: str | None) -> pareto.Frontier:
    sols = tuple(
        replace(s, canonical=canonical) if s.choice == choice else s
        for s in frontier.solutions
    )
    return pareto.Frontier(frontier.spec, sols)


def campaign(ctx: TuneContext, keys: list[TuneKey], config: TuneConfig) -> CampaignReport:
    """Spread ``config.budget`` iterations uniformly at random over the keys."""
    if not keys:
        raise UntunableKey("campaign needs at least one key")
    rng = random.Random(config.seed)
    report = CampaignReport()
    status: dict[str, dict] = {}
    for key in keys:
        label = key.label()
        status[label] = {
            "frontier_size": 0,
            "best_speedup": None,
            "best_canonical": None,
            "failures": 0,
            "iterations": 0,
            "untunable": False,
        }
        try:
            reference = reference_behavior(ctx, key, config)
            if reference.failed:
                status[label]["untunable"] = True
        except SpeciesHubError:
            status[label]["untunable"] = True

    tunable = [k for k in keys if not status[k.label()]["untunable"]]
    for _ in range(config.budget):
        if not tunable:
            break
        key = rng.choice(tunable)
        label = key.label()
        status[label]["iterations"] += 1
        try:
            outcome = iterate(ctx, key, config, rng)
        except UntunableKey:
            status[label]["untunable"] = True
            tunable = [k for k in tunable if k.label() != label]
            continue
        if outcome.verdict == "failed":
            status[label]["failures"] += 1
        if outcome.speedup is not None:
            best = status[label]["best_speedup"]
            if best is None or outcome.speedup > best:
                status[label]["best_speedup"] = outcome.speedup

    for key in keys:
        label = key.label()
        if status[label]["untunable"]:
            continue
        sol_id = frontier_entry(ctx, key, config)
        frontier = load_frontier(ctx.repo, sol_id.uid)
        status[label]["frontier_size"] = len(frontier)
        best = _best_solution(frontier)
        if best is not None:
            status[label]["best_canonical"] = best.canonical
    report.per_key = status
    report.iterations = config.budget
    doc = report.to_doc()
    signature = hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()
    if not ctx.repo.find("cluster", {"type": "campaign-report", "signature": signature}):
        ctx.repo.create(
            "cluster", {"type": "campaign-report", "signature": signature, "report": doc}
        )
    return report


def _best_solution(frontier: pareto.Frontier) -> pareto.FrontierSolution | None:
    """Frontier solution minimizing the primary objective (exec time when present)."""
    if not frontier.solutions:
        return None
    names = frontier.spec.names
    idx = names.index("exec_time_s") if "exec_time_s" in names else 0
    return min(frontier.solutions, key=lambda s: s.behavior[idx])
