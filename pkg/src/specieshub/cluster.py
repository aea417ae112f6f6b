"""Optimization classes over species.

Species sharing the same canonical reduced winner form one cluster.
Per-cluster statistics follow the strict threshold semantics: a species
counts as improved when its speedup exceeds 1.1, as a slowdown below 0.96,
and as neutral inside [0.96, 1.1]. A cluster with no slowdowns anywhere is
a candidate to replace the default base level; picking each cluster's best
member yields a minimal representative benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from . import flagspace as fs
from . import measure as ms
from .errors import NoFrontier
from .tune import TuneConfig, TuneContext, TuneKey, _best_solution, frontier_entry, load_frontier

IMPROVED_ABOVE = 1.1
SLOWDOWN_BELOW = 0.96


@dataclass(frozen=True)
class OptimizationCluster:
    canonical: str
    members: tuple[tuple[str, float], ...]  # (species uid, best speedup)
    max_speedup: float
    n_improved: int = 0
    n_slowdown: int = 0
    n_neutral: int = 0
    evaluated: int = 0

    def to_doc(self) -> dict:
        return {
            "canonical": self.canonical,
            "members": [[s, sp] for s, sp in self.members],
            "max_speedup": self.max_speedup,
            "n_improved": self.n_improved,
            "n_slowdown": self.n_slowdown,
            "n_neutral": self.n_neutral,
            "evaluated": self.evaluated,
        }


def best_choice(ctx: TuneContext, key: TuneKey, config: TuneConfig):
    """The frontier solution minimizing exec time, with its speedup vs. the reference.

    Returns (choice, speedup, canonical). Speedup is the ratio of recorded
    expected exec times; None when either side lacks one.
    """
    sol_id = frontier_entry(ctx, key, config)
    frontier = load_frontier(ctx.repo, sol_id.uid)
    best = _best_solution(frontier)
    if best is None:
        raise NoFrontier(key.label())
    ref_exec = _reference_exec(ctx, key)
    idx = {name: i for i, name in enumerate(frontier.spec.names)}
    exec_time = best.behavior[idx["exec_time_s"]] if "exec_time_s" in idx else best.behavior[0]
    speedup = ref_exec / exec_time if ref_exec and exec_time else None
    return best.choice, speedup, best.canonical


def _reference_exec(ctx: TuneContext, key: TuneKey) -> float | None:
    species = ctx.repo.load("species", key.species)
    dataset = ctx.repo.load("dataset", key.dataset)
    found = ctx.repo.find(
        "experiment",
        {
            "species": species.uid,
            "dataset": dataset.uid,
            "platform": key.platform,
            "reference": True,
        },
    )
    for entry in found:
        exec_time = entry.meta.get("behavior", {}).get("exec_time_s")
        if exec_time:
            return exec_time
    return None


def collect_best_choices(
    ctx: TuneContext, keys: list[TuneKey], config: TuneConfig
) -> list[tuple[str, str, float]]:
    """One (species uid, canonical, speedup) triple per species.

    When a species was tuned under several keys, its best-speedup key wins,
    so the later grouping partitions species.
    """
    best_per_species: dict[str, tuple[str, float]] = {}
    for key in keys:
        try:
            _, speedup, canonical = best_choice(ctx, key, config)
        except NoFrontier:
            continue
        if canonical is None or speedup is None:
            continue
        uid = ctx.repo.load("species", key.species).uid
        prev = best_per_species.get(uid)
        if prev is None or speedup > prev[1]:
            best_per_species[uid] = (canonical, speedup)
    return [(uid, c, s) for uid, (c, s) in sorted(best_per_species.items())]


def build_clusters(best: list[tuple[str, str, float]]) -> list[OptimizationCluster]:
    """Group species by string-identical canonical choice, best speedup first."""
    groups: dict[str, list[tuple[str, float]]] = {}
    for species_uid, canonical, speedup in best:
        groups.setdefault(canonical, []).append((species_uid, speedup))
    clusters = []
    for canonical, members in groups.items():
        members = sorted(members)
        clusters.append(
            OptimizationCluster(
                canonical=canonical,
                members=tuple(members),
                max_speedup=max(sp for _, sp in members),
            )
        )
    clusters.sort(key=lambda c: (-c.max_speedup, c.canonical))
    return clusters


def cluster_stats(
    cluster: OptimizationCluster, speedups: dict[str, float]
) -> OptimizationCluster:
    """Fill threshold counts from the cluster's choice evaluated across species.

    Strict inequalities on both sides: exactly 1.1 or 0.96 is neutral.
    """
    n_improved = sum(1 for s in speedups.values() if s > IMPROVED_ABOVE)
    n_slowdown = sum(1 for s in speedups.values() if s < SLOWDOWN_BELOW)
    n_neutral = len(speedups) - n_improved - n_slowdown
    max_speedup = max(
        [cluster.max_speedup] + [s for s in speedups.values()]
    )
    return replace(
        cluster,
        n_improved=n_improved,
        n_slowdown=n_slowdown,
        n_neutral=n_neutral,
        evaluated=len(speedups),
        max_speedup=max_speedup,
    )


def safe_default_candidates(clusters: list[OptimizationCluster]) -> list[OptimizationCluster]:
    """Clusters that slowed nothing down, ordered by how many species they improve."""
    safe = [c for c in clusters if c.evaluated > 0 and c.n_slowdown == 0]
    safe.sort(key=lambda c: (-c.n_improved, c.canonical))
    return safe


def representative_benchmark(clusters: list[OptimizationCluster]) -> list[str]:
    """One species per cluster: the max-speedup member, uid order breaking ties."""
    out = []
    for cluster in clusters:
        top = max(sp for _, sp in cluster.members)
        out.append(min(uid for uid, sp in cluster.members if sp == top))
    return out


def cross_evaluate(
    ctx: TuneContext,
    keys: list[TuneKey],
    config: TuneConfig,
    canonical: str,
) -> dict[str, float]:
    """Measure a canonical choice on every key's species; speedups vs. each reference."""
    choice = fs.parse(canonical)
    speedups: dict[str, float] = {}
    for key in keys:
        species = ctx.repo.load("species", key.species)
        ref_exec = _reference_exec(ctx, key)
        if ref_exec is None:
            continue
        state = ms.capture_state(key.platform)
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
        if behavior.failed or not behavior.exec_time_s:
            continue
        prev = speedups.get(species.uid)
        ratio = ref_exec / behavior.exec_time_s
        if prev is None or ratio > prev:
            speedups[species.uid] = ratio
    return speedups


def evaluate_clusters(
    ctx: TuneContext,
    keys: list[TuneKey],
    config: TuneConfig,
    clusters: list[OptimizationCluster],
    top_k: int = 20,
) -> list[OptimizationCluster]:
    """Cross-evaluate the top-k clusters by max speedup; the full cross product
    is a data-center-scale job, so the rest keep empty stats."""
    out = []
    for i, cluster in enumerate(clusters):
        if i < top_k:
            speedups = cross_evaluate(ctx, keys, config, cluster.canonical)
            out.append(cluster_stats(cluster, speedups))
        else:
            out.append(cluster)
    return out
