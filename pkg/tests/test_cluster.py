import pytest

from specieshub.cluster import (
    OptimizationCluster,
    best_choice,
    build_clusters,
    cluster_stats,
    collect_best_choices,
    cross_evaluate,
    representative_benchmark,
    safe_default_candidates,
)
from specieshub.errors import NoFrontier
from specieshub.measure import MockToolchain
from specieshub.tune import TuneConfig, TuneContext, TuneKey, campaign
from tests.conftest import add_mock_dataset, add_mock_species, mock_space


def planted_suite(repo, n_species=10, pivot=5):
    """Species 0..pivot-1 respond to flag 'a', the rest to flag 'b'."""
    keys = []
    for i in range(n_species):
        effect = {"a": 0.8} if i < pivot else {"b": 0.8}
        scenario = {
            "base_time": 1.0,
            "flag_effects": effect,
            "dataset_terms": {},
            "size_per_flag": 16,
        }
        add_mock_species(repo, f"species-{i:02d}", scenario)
        add_mock_dataset(repo, f"data-{i:02d}")
        keys.append(TuneKey(f"species-{i:02d}", f"data-{i:02d}", "host1", "mock-gcc"))
    space = mock_space(["a", "b", "junk"])
    ctx = TuneContext(repo=repo, space=space, toolchain=MockToolchain())
    return ctx, keys


def cluster_fixture(canonical="-O3 -fa -fno-ALL", members=(("u1", 1.2),)):
    return OptimizationCluster(
        canonical=canonical, members=tuple(members), max_speedup=max(m[1] for m in members)
    )


def test_planted_two_flag_suite_yields_two_clusters(repo):
    ctx, keys = planted_suite(repo)
    campaign(ctx, keys, TuneConfig(repeats=2, budget=300, seed=4))
    best = collect_best_choices(ctx, keys, TuneConfig(repeats=2))
    clusters = build_clusters(best)
    assert len(clusters) == 2
    assert {c.canonical for c in clusters} == {"-O3 -fa -fno-ALL", "-O3 -fb -fno-ALL"}
    assert sorted(len(c.members) for c in clusters) == [5, 5]
    # partition: every tuned species appears exactly once
    seen = [uid for c in clusters for uid, _ in c.members]
    assert len(seen) == len(set(seen)) == 10


def test_best_choice_prefers_the_primary_objective(repo):
    ctx, keys = planted_suite(repo, n_species=1, pivot=1)
    campaign(ctx, keys, TuneConfig(repeats=2, budget=120, seed=2))
    choice, speedup, canonical = best_choice(ctx, keys[0], TuneConfig(repeats=2))
    assert "a" in choice.on_flags
    assert speedup == pytest.approx(1.25)
    assert canonical == "-O3 -fa -fno-ALL"


def test_best_choice_without_frontier(repo):
    add_mock_species(repo, "sp", {"base_time": 1.0})
    add_mock_dataset(repo, "d1")
    ctx = TuneContext(repo=repo, space=mock_space(["a"]), toolchain=MockToolchain())
    with pytest.raises(NoFrontier):
        best_choice(ctx, TuneKey("sp", "d1", "h", "mock-gcc"), TuneConfig())


def test_cluster_stats_threshold_semantics():
    cluster = cluster_fixture()
    updated = cluster_stats(
        cluster, {"s1": 1.17, "s2": 0.96, "s3": 0.955, "s4": 1.1, "s5": 1.3}
    )
    assert updated.n_improved == 2  # 1.17 and 1.3; 1.1 exactly is neutral
    assert updated.n_slowdown == 1  # 0.955; 0.96 exactly is neutral
    assert updated.n_neutral == 2
    assert updated.evaluated == 5
    assert updated.max_speedup >= 1.3
    assert updated.n_improved + updated.n_slowdown + updated.n_neutral == updated.evaluated


def test_cluster_stats_mirrors_the_if_conversion_shape():
    # 7 improved / 11 slowed down, with a 1.17 peak somewhere in the improved set
    speedups = {f"i{k}": 1.12 + 0.01 * k for k in range(6)}
    speedups["peak"] = 1.17
    speedups.update({f"s{k}": 0.90 for k in range(11)})
    updated = cluster_stats(cluster_fixture(), speedups)
    assert updated.n_improved == 7
    assert updated.n_slowdown == 11
    assert updated.max_speedup >= 1.17


def test_safe_default_candidates_require_zero_slowdowns():
    with_slowdown = cluster_stats(cluster_fixture(), {"x": 1.3, "y": 0.5})
    assert safe_default_candidates([with_slowdown]) == []
    safe_small = cluster_stats(cluster_fixture("-O3 -fa -fno-ALL"), {"x": 1.2, "y": 1.0})
    safe_big = cluster_stats(cluster_fixture("-O3 -fb -fno-ALL"), {"x": 1.2, "y": 1.15})
    out = safe_default_candidates([safe_small, safe_big])
    assert [c.canonical for c in out] == ["-O3 -fb -fno-ALL", "-O3 -fa -fno-ALL"]


def test_universally_beneficial_flag_is_the_only_safe_default(repo):
    ctx, keys = planted_suite(repo, n_species=4, pivot=4)  # all species love 'a'
    config = TuneConfig(repeats=2)
    campaign(ctx, keys, TuneConfig(repeats=2, budget=160, seed=3))
    clusters = build_clusters(collect_best_choices(ctx, keys, config))
    assert len(clusters) == 1
    speedups = cross_evaluate(ctx, keys, config, clusters[0].canonical)
    evaluated = cluster_stats(clusters[0], speedups)
    safe = safe_default_candidates([evaluated])
    assert [c.canonical for c in safe] == ["-O3 -fa -fno-ALL"]
    assert evaluated.n_slowdown == 0
    assert evaluated.n_improved == 4


def test_representative_benchmark_picks_max_speedup_members():
    c1 = cluster_fixture("-O3 -fa -fno-ALL", (("u2", 1.3), ("u1", 1.1)))
    c2 = cluster_fixture("-O3 -fb -fno-ALL", (("u4", 1.2), ("u3", 1.2)))
    reps = representative_benchmark([c1, c2])
    assert reps == ["u2", "u3"]  # ties break toward the smaller uid
    assert representative_benchmark([c1, c2]) == reps


def test_clusters_sorted_by_max_speedup():
    best = [
        ("u1", "-O3 -fa -fno-ALL", 1.1),
        ("u2", "-O3 -fb -fno-ALL", 1.9),
        ("u3", "-O3 -fa -fno-ALL", 1.3),
    ]
    clusters = build_clusters(best)
    assert [c.canonical for c in clusters] == ["-O3 -fb -fno-ALL", "-O3 -fa -fno-ALL"]
    assert clusters[1].max_speedup == 1.3


def test_build_clusters_of_nothing():
    assert build_clusters([]) == []
