#!/usr/bin/env python3
"""Tune real corpus kernels with the system C compiler through the CLI.

Imports the requested kernels into a repository, runs a tuning campaign
per kernel on its small dataset, then prints each frontier and the cluster
report. Expect a few minutes for the default budget; results are cached in
the repository, so re-runs are cheap.

Usage: python scripts/tune_corpus.py [--repo DIR] [--budget N] [--kernel NAME]...
"""

import argparse
import json
import subprocess
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SH = [sys.executable, "-m", "specieshub.cli"]

TUNE_DATASET = {
    "threshold-filter": "tfilter-small",
    "matmul": "matmul-large",
    "fir-filter": "fir-large",
    "quicksort": "qsort-small",
    "string-search": "ssearch-small",
}


def sh(repo, *args, json_out=True):
    cmd = [*SH, "--repo", str(repo)]
    if json_out:
        cmd.append("--json")
    cmd += [str(a) for a in args]
    result = subprocess.run(cmd, capture_output=True, text=True)
    if result.returncode != 0:
        sys.exit(f"command failed: {' '.join(cmd)}\n{result.stderr}")
    return json.loads(result.stdout) if json_out and result.stdout.strip() else None


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repo", default="tuned-corpus")
    parser.add_argument("--budget", type=int, default=50)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument(
        "--kernel", action="append", choices=sorted(TUNE_DATASET), default=None,
        help="kernel(s) to tune; default: threshold-filter",
    )
    args = parser.parse_args()
    kernels = args.kernel or ["threshold-filter"]

    repo = Path(args.repo)
    sh(repo, "repo", "init")
    key_args = []
    for kernel in kernels:
        sh(repo, "repo", "import", "--dir", ROOT / "corpus" / kernel)
        key_args += ["--key", f"{kernel}:{TUNE_DATASET[kernel]}:local-host"]
        print(f"imported {kernel}")

    print(f"tuning (budget {args.budget}, repeats {args.repeats}) ...")
    report = sh(
        repo, "tune", *key_args,
        "--compiler", "gcc", "--budget", args.budget, "--seed", args.seed,
        "--repeats", args.repeats, "--density", 0.4, "--reduce-tolerance", 0.08,
    )
    for label, row in sorted(report["per_key"].items()):
        print(f"  {label}")
        print(f"    frontier size {row['frontier_size']}, best speedup {row['best_speedup']}")
        print(f"    canonical winner: {row['best_canonical']}")

    clusters = sh(repo, "cluster", "--compiler", "gcc", "--platform", "local-host")
    print("\ncluster report:")
    print(json.dumps(clusters["clusters"], indent=2))
    print(f"\nrepository: {repo.resolve()}")
    print("frontier CSV: ", end="")
    print(f"`python -m specieshub.cli --repo {repo} report frontier "
          f"--key {kernels[0]}:{TUNE_DATASET[kernels[0]]}:local-host --compiler gcc --format csv`")


if __name__ == "__main__":
    main()
