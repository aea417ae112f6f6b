"""Acceptance gate: one test per release criterion, at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. Everything here is desk-scale and deterministic: planted mock
scenarios stand in for the data-center-sized corpora the approach targets.
"""

import itertools
import json
import math
import random
import subprocess
import sys
import time
import urllib.request
from contextlib import contextmanager

import pytest

from specieshub import cluster as cl
from specieshub import dispatch as dp
from specieshub import predict
from specieshub.flagspace import ON, ChoiceVector, render, reduce as reduce_choice
from specieshub.measure import MockToolchain, SpeciesDescriptor, StateVector
from specieshub.pareto import ObjectiveSpec, frontier_of
from specieshub.repo import Repo
from specieshub.service import Coordinator, Worker, WorkerConfig, plan_units
from specieshub.stats import SampleSet, characterize, speedup
from specieshub.tune import TuneConfig, TuneContext, TuneKey, campaign, frontier_entry, load_frontier
from tests.conftest import add_mock_dataset, add_mock_species, mock_space


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


# ── 1. Pareto oracle equivalence ──────────────────────────────────


def brute_force_points(points, spec):
    signs = spec.signs()
    norm = sorted({tuple(s * v for s, v in zip(signs, p)) for p in points})
    keep = set()
    for a in norm:
        dominated = False
        for b in norm:
            if b == a:
                continue
            if all(x <= y for x, y in zip(b, a)) and any(x < y for x, y in zip(b, a)):
                dominated = True
                break
        if not dominated:
            keep.add(tuple(s * v for s, v in zip(signs, a)))
    return keep


def test_pareto_oracle_equivalence():
    with criterion("pareto-oracle-equivalence"):
        rng = random.Random(2024)
        t0 = time.monotonic()
        for i in range(200):
            n = rng.randint(1, 500)
            dims = rng.randint(2, 5)
            spec = ObjectiveSpec(
                tuple((f"d{k}", rng.choice(("minimize", "maximize"))) for k in range(dims))
            )
            points = [
                (
                    f"c{j}",
                    tuple(rng.choice((0.0, 0.5, rng.random())) for _ in range(dims)),
                )
                for j in range(n)
            ]
            got = frontier_of(points, spec).behavior_points()
            want = brute_force_points([p for _, p in points], spec)
            assert got == want, f"instance {i} diverged from the oracle"
        elapsed = time.monotonic() - t0
        assert elapsed < 10.0, f"took {elapsed:.1f}s"


# ── 2. Flag-reduction recovery ────────────────────────────────────


def test_flag_reduction_recovery():
    with criterion("flag-reduction-recovery"):
        names = [f"flag{i:02d}" for i in range(20)]
        t0 = time.monotonic()
        recovered = 0
        for trial in range(100):
            rng = random.Random(trial)
            planted = set(rng.sample(names, rng.randint(1, 3)))
            effects = {
                name: rng.choice((rng.uniform(0.6, 0.9), rng.uniform(1.15, 1.6)))
                for name in planted
            }
            scenario = {"base_time": 1.0, "flag_effects": effects, "dataset_terms": {}}
            toolchain = MockToolchain(scenario)
            species = SpeciesDescriptor(
                uid="00000000000000aa",
                sources=(),
                build_template="cc {FLAGS} -o {OUT}",
                run_template="{BIN}",
            )
            probe = lambda choice: toolchain.exec_time(species, choice, ())
            start = ChoiceVector(base="-O3", settings={n: ON for n in names})
            reduced = reduce_choice(start, probe, tolerance=0.02)
            if set(reduced.on_flags) == planted and not reduced.param_values:
                recovered += 1
        elapsed = time.monotonic() - t0
        assert recovered >= 95, f"recovered only {recovered}/100"
        assert elapsed < 5.0, f"took {elapsed:.1f}s"


# ── 3. Tuning convergence on mock ─────────────────────────────────

CONVERGENCE_SCENARIO = {
    "base_time": 1.0,
    "flag_effects": {"turbo": 0.5, "drag": 1.25},
    "dataset_terms": {},
    "size_per_flag": 64,
}


def run_convergence_campaign(tmp_path, tag):
    repo = Repo.init(tmp_path / f"repo-{tag}")
    add_mock_species(repo, "sp", CONVERGENCE_SCENARIO)
    add_mock_dataset(repo, "d1")
    space = mock_space(["turbo", "drag", "noise"])
    ctx = TuneContext(repo=repo, space=space, toolchain=MockToolchain())
    key = TuneKey("sp", "d1", "host1", "mock-gcc")
    report = campaign(ctx, [key], TuneConfig(repeats=3, budget=200, seed=7))
    return report.to_doc(), key.label()


def test_tuning_convergence_on_mock(tmp_path):
    with criterion("tuning-convergence-mock"):
        booleans = ("turbo", "drag", "noise")
        best_time = min(
            math.prod(CONVERGENCE_SCENARIO["flag_effects"].get(n, 1.0) for n in subset)
            for r in range(len(booleans) + 1)
            for subset in itertools.combinations(booleans, r)
        )
        oracle = CONVERGENCE_SCENARIO["base_time"] / best_time
        assert oracle == 2.0
        doc1, label = run_convergence_campaign(tmp_path, "a")
        doc2, _ = run_convergence_campaign(tmp_path, "b")
        assert doc1["per_key"][label]["best_speedup"] == oracle
        assert doc1 == doc2, "campaign is not deterministic under a fixed seed"


# ── 4. Clustering partition and thresholds ────────────────────────


def test_clustering_partition_and_thresholds(tmp_path):
    with criterion("clustering-partition-thresholds"):
        repo = Repo.init(tmp_path / "repo")
        keys = []
        for i in range(10):
            effects = {"a": 0.8} if i < 5 else {"b": 0.8}
            add_mock_species(
                repo,
                f"species-{i:02d}",
                {"base_time": 1.0, "flag_effects": effects, "dataset_terms": {},
                 "size_per_flag": 16},
            )
            add_mock_dataset(repo, f"data-{i:02d}")
            keys.append(TuneKey(f"species-{i:02d}", f"data-{i:02d}", "host1", "mock-gcc"))
        ctx = TuneContext(
            repo=repo, space=mock_space(["a", "b", "junk"]), toolchain=MockToolchain()
        )
        campaign(ctx, keys, TuneConfig(repeats=2, budget=300, seed=4))
        clusters = cl.build_clusters(cl.collect_best_choices(ctx, keys, TuneConfig(repeats=2)))
        assert len(clusters) == 2
        assert sorted(len(c.members) for c in clusters) == [5, 5]
        members = [uid for c in clusters for uid, _ in c.members]
        assert len(members) == len(set(members)) == 10

        # threshold semantics exactly as published: strict on both sides
        probe = cl.cluster_stats(clusters[0], {"x": 1.17, "y": 0.96, "z": 0.955})
        assert probe.n_improved == 1  # 1.17
        assert probe.n_slowdown == 1  # 0.955
        assert probe.n_neutral == 1  # 0.96 exactly
        assert probe.max_speedup >= 1.17


# ── 5. Prediction sanity ──────────────────────────────────────────


def test_prediction_sanity():
    with criterion("prediction-sanity"):
        separable = [
            predict.FeatureVector(species=f"s{i}", static={"ft29": float(i)})
            for i in range(5)
        ] + [
            predict.FeatureVector(species=f"s{i+5}", static={"ft29": 100.0 + i})
            for i in range(5)
        ]
        labels = ["A"] * 5 + ["B"] * 5
        accuracy, misses = predict.loocv(separable, labels, "tree")
        assert accuracy == 1.0 and not misses

        means = []
        for seed in range(20):
            rng = random.Random(seed)
            features = [
                predict.FeatureVector(
                    species=f"r{i}", static={"fx": rng.random(), "fy": rng.random()}
                )
                for i in range(30)
            ]
            shuffled = ["A", "B"] * 15
            rng.shuffle(shuffled)
            acc, _ = predict.loocv(features, shuffled, "tree", max_depth=3)
            means.append(acc)
        mean = sum(means) / len(means)
        assert 0.35 <= mean <= 0.65, f"shuffled-label mean accuracy {mean:.3f}"

        rng = random.Random(1)
        planted, planted_labels = [], []
        for i in range(16):
            signal = rng.random() * 10
            planted.append(
                predict.FeatureVector(
                    species=f"p{i}",
                    static={
                        "ft29": signal,
                        "ft1": rng.random(),
                        "ft2": rng.random(),
                    },
                )
            )
            planted_labels.append("A" if signal < 5 else "B")
        ranked = predict.feature_ablation(planted, planted_labels, "tree")
        assert ranked[0][0] == "ft29", f"ablation ranked {ranked[0][0]} first"


# ── 6. Dispatch quality ───────────────────────────────────────────


def test_dispatch_quality():
    with criterion("dispatch-quality"):
        variant_set = dp.VariantSet(
            species="threshold-filter",
            variants=(
                dp.Variant("day", ChoiceVector(base="-O3", settings={"if-conversion": ON}, no_all=True)),
                dp.Variant("night", ChoiceVector(base="-O3", no_all=True)),
            ),
        )

        def times(hour):
            return {"day": 1.0, "night": 1.2} if 6 <= hour < 20 else {"day": 1.3, "night": 1.0}

        states = [
            StateVector(platform_id="cam", wallclock_context={"hour_of_day": h, "cpu_count": 4})
            for h in range(24)
        ]
        runs, warnings = dp.label_runs(
            variant_set,
            [{"rows": 480.0}],
            states,
            lambda v, d, s: (times(s.wallclock_context["hour_of_day"])[v.label], True),
        )
        assert not warnings
        tree = dp.build_dispatch_tree(runs, max_depth=3)
        rng = random.Random(60)
        held_out = []
        for _ in range(200):
            hour = rng.randrange(24)
            held_out.append(({"hour_of_day": float(hour), "cpu_count": 4.0}, times(hour)))
        correct, time_ratio = dp.evaluate_dispatch(tree, held_out)
        assert correct >= 0.95, f"classified {correct:.3f}"
        assert time_ratio >= 0.99, f"dispatched time ratio {time_ratio:.4f}"


# ── 7. Crowd end-to-end ───────────────────────────────────────────

CROWD_SCENARIO = {
    "base_time": 1.0,
    "flag_effects": {"turbo": 0.5, "drag": 1.21},
    "dataset_terms": {},
    "size_per_flag": 32,
}


def seed_crowd_repo(root):
    repo = Repo.init(root)
    add_mock_species(repo, "sp", CROWD_SCENARIO)
    add_mock_dataset(repo, "d1")
    return repo


def frontier_fingerprint(repo, space):
    ctx = TuneContext(repo=repo, space=space, toolchain=None)
    key = TuneKey("sp", "d1", "host1", "mock-gcc")
    frontier = load_frontier(repo, frontier_entry(ctx, key, TuneConfig()).uid)
    return sorted(
        (render(sol.choice), sol.behavior, tuple(sorted(render(c) for c in sol.equivalents)))
        for sol in frontier.solutions
    )


def test_crowd_end_to_end(tmp_path):
    with criterion("crowd-end-to-end"):
        t0 = time.monotonic()
        root = tmp_path / "crowd"
        seed_crowd_repo(root)
        space = mock_space(["turbo", "drag", "noise"])
        space_file = tmp_path / "space.json"
        space_file.write_text(json.dumps(space.to_doc()))

        serve_cmd = [
            sys.executable, "-m", "specieshub.cli", "--repo", str(root), "serve",
            "--listen", "127.0.0.1:0", "--key", "sp:d1:host1", "--compiler", "mock-gcc",
            "--flagspace", str(space_file), "--budget", "60", "--seed", "5", "--repeats", "2",
        ]
        server = subprocess.Popen(serve_cmd, stdout=subprocess.PIPE, text=True)
        workers = []
        try:
            banner = json.loads(server.stdout.readline())
            assert banner["units"] == 60
            url = "http://" + banner["listening"]
            for w in range(3):
                workers.append(
                    subprocess.Popen(
                        [
                            sys.executable, "-m", "specieshub.cli", "--repo", str(root),
                            "work", "--coordinator", url,
                            "--compilers", "mock-gcc", "--worker-id", f"w{w}",
                            "--work", str(tmp_path / f"work{w}"),
                            "--max-idle", "6", "--duplicate-submit",
                        ]
                    )
                )
            for w in workers:
                assert w.wait(timeout=45) == 0
            status = json.loads(urllib.request.urlopen(url + "/v1/status", timeout=10).read())
        finally:
            server.terminate()
            server.wait(timeout=10)
            for w in workers:
                if w.poll() is None:
                    w.kill()

        assert status["states"] == {"done": 60}
        # every unit was submitted twice; the duplicates had no effect
        assert status["counters"]["rejected_duplicate"] == 60
        assert status["counters"]["accepted"] == 60
        assert status["counters"]["frontier_updates"] <= status["counters"]["accepted"]

        # single-process baseline over the identical seeded units
        baseline_root = tmp_path / "baseline"
        baseline_repo = seed_crowd_repo(baseline_root)
        coordinator = Coordinator(baseline_repo, space, TuneConfig(repeats=2))
        units = plan_units(
            baseline_repo, TuneKey("sp", "d1", "host1", "mock-gcc"), space, 60, 5, repeats=2
        )
        coordinator.add_units(units)
        executor = Worker(
            WorkerConfig(
                coordinator_url="http://unused",
                capabilities={"compilers": ["mock-gcc"]},
                work_dir=tmp_path / "baseline-work",
                repo_root=baseline_root,
            )
        )
        caps = {"compilers": ["mock-gcc"]}
        while (unit := coordinator.pull_work("solo", caps)) is not None:
            coordinator.submit_result(executor.execute(unit))

        crowd_frontier = frontier_fingerprint(Repo(root), space)
        solo_frontier = frontier_fingerprint(baseline_repo, space)
        assert crowd_frontier == solo_frontier
        elapsed = time.monotonic() - t0
        assert elapsed < 60.0, f"took {elapsed:.1f}s"


# ── 8. Statistics rule ────────────────────────────────────────────


def test_statistics_rule():
    with criterion("statistics-rule"):
        flat = characterize(SampleSet((10.0,) * 5))
        assert flat.expected == 10.0 and flat.variation == 0.0 and flat.reliable

        noisy = characterize(SampleSet((1.0, 1.1)))
        assert noisy.variation == pytest.approx(math.sqrt(0.005) / 1.05, abs=1e-12)
        assert noisy.variation > 0.03 and not noisy.reliable

        # right at the 3% bound: strictly-below is reliable, above is not
        # (for samples (m-d, m, m+d) the sample stddev is exactly d)
        for cv, expect in ((0.0299, True), (0.0301, False)):
            summary = characterize(SampleSet((1.0 - cv, 1.0, 1.0 + cv)))
            assert summary.variation == pytest.approx(cv, rel=1e-12)
            assert summary.reliable is expect

        ref = characterize(SampleSet((1.17,) * 3))
        cand = characterize(SampleSet((1.0,) * 3))
        assert speedup(ref, cand) == pytest.approx(1.17)

        rng = random.Random(8)
        for _ in range(200):
            values = tuple(0.5 + rng.random() for _ in range(rng.randint(2, 12)))
            k = rng.choice((1e-3, 0.1, 3.0, 1e3))
            base = characterize(SampleSet(values))
            scaled = characterize(SampleSet(tuple(v * k for v in values)))
            assert abs(scaled.variation - base.variation) < 1e-12
            assert scaled.expected == pytest.approx(base.expected * k, rel=1e-12)
