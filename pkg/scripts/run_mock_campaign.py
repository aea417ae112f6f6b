#!/usr/bin/env python3
"""End-to-end demo on the mock toolchain: tune a planted suite of species,
cluster the winners, train a cluster predictor, and print the advice a new
species would get. Needs no compiler; finishes in seconds.

Usage: python scripts/run_mock_campaign.py [--budget N] [--seed S] [--keep DIR]
"""

import argparse
import json
import tempfile
from pathlib import Path

from specieshub import cluster as cl
from specieshub import predict
from specieshub.flagspace import FlagSpace
from specieshub.measure import MockToolchain
from specieshub.repo import Repo
from specieshub.service import Coordinator
from specieshub.tune import TuneConfig, TuneContext, TuneKey, campaign

PLANTED = {
    # species name fragment -> the flag that genuinely helps it
    "imaging": {"if-conversion": 0.82},
    "linalg": {"unroll-loops": 0.76},
    "textproc": {"gcse": 0.88},
}


def build_suite(repo: Repo):
    keys = []
    for family, effects in PLANTED.items():
        for i in range(3):
            alias = f"{family}-{i}"
            repo.create(
                "species",
                {
                    "build_template": "cc {FLAGS} {SRC} -o {OUT}",
                    "run_template": "{BIN} {DATASET} {OUT}",
                    "validate": "none",
                    "sources": [],
                    "tags": [family],
                    "mock_scenario": {
                        "base_time": 1.0,
                        "flag_effects": effects,
                        "dataset_terms": {},
                        "size_per_flag": 48,
                    },
                    "reference_outputs": {},
                },
                alias=alias,
            )
            repo.create("dataset", {"features": {}, "tags": []}, alias=f"{alias}-data")
            keys.append(TuneKey(alias, f"{alias}-data", "demo-host", "mock-gcc"))
    return keys


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--budget", type=int, default=400)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--keep", help="repository directory to keep (default: temp)")
    args = parser.parse_args()

    workdir = Path(args.keep) if args.keep else Path(tempfile.mkdtemp(prefix="sh-demo-"))
    repo = Repo.init(workdir / "repo")
    keys = build_suite(repo)
    space = FlagSpace(
        compiler="mock-gcc",
        version="1",
        base_levels=("-O3",),
        booleans=("gcse", "if-conversion", "unroll-loops", "peel-loops", "web"),
    )
    ctx = TuneContext(repo=repo, space=space, toolchain=MockToolchain())
    config = TuneConfig(repeats=3, budget=args.budget, seed=args.seed)

    print(f"tuning {len(keys)} keys with budget {args.budget} ...")
    report = campaign(ctx, keys, config)
    for label, row in sorted(report.per_key.items()):
        print(f"  {label:45s} best speedup {row['best_speedup']}  -> {row['best_canonical']}")

    clusters = cl.build_clusters(cl.collect_best_choices(ctx, keys, config))
    print(f"\n{len(clusters)} optimization clusters:")
    evaluated = cl.evaluate_clusters(ctx, keys, config, clusters, top_k=5)
    for c in evaluated:
        print(
            f"  {c.canonical:35s} members={len(c.members)} max={c.max_speedup:.2f} "
            f"improved={c.n_improved} slowdowns={c.n_slowdown}"
        )
    print("safe default candidates:", [c.canonical for c in cl.safe_default_candidates(evaluated)])
    print("representative benchmark:", cl.representative_benchmark(clusters))

    # features that mirror the planted structure, then advise an unseen species
    features, labels = [], []
    best = {uid: canon for uid, canon, _ in cl.collect_best_choices(ctx, keys, config)}
    for key in keys:
        uid = repo.load("species", key.species).uid
        family = repo.load("species", key.species).meta["tags"][0]
        signal = {"imaging": 1.0, "linalg": 5.0, "textproc": 9.0}[family]
        features.append(predict.FeatureVector(species=uid, static={"ft29": signal}))
        labels.append(best[uid])
    accuracy, _ = predict.loocv(features, labels, "tree")
    model = predict.train_tree(features, labels)
    repo.create(
        "model",
        {
            "type": "cluster-model",
            "model": model.to_doc(),
            "platform": "demo-host",
            "compiler": "mock-gcc",
            "loocv_accuracy": accuracy,
            "timestamp": 0.0,
        },
    )
    print(f"\ncluster predictor LOOCV accuracy: {accuracy:.2f}")
    coordinator = Coordinator(repo, space)
    advice = coordinator.advise(features={"ft29": 4.5}, platform="demo-host")
    print("advice for an unseen linalg-looking species:")
    print(json.dumps(advice, indent=2))
    print(f"\nrepository kept at {repo.root}" if args.keep else f"\nscratch repo: {repo.root}")


if __name__ == "__main__":
    main()
