#!/usr/bin/env python3
"""Regenerate corpus datasets, reference outputs, and meta.json files.

Datasets are drawn from fixed seeds, so this script is a no-op on a clean
checkout. Reference outputs come from a -O0 oracle build of each kernel
(optimized builds must reproduce them bitwise). Run with --check to verify
the shipped files instead of rewriting them.
"""

from __future__ import annotations

import argparse
import json
import random
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent

CC = "cc"
ORACLE_FLAGS = ["-std=c99", "-O0"]

# per-kernel timing knob: repeats baked into the run template, calibrated so
# even the small datasets stay >= 50 ms on a 1 GHz-class core
REPEATS = {
    "threshold-filter": 700,
    "matmul": 35,
    "fir-filter": 90,
    "quicksort": 13,
    "string-search": 200,
}


def pgm_bytes(width, height, seed):
    rng = random.Random(seed)
    header = f"P5\n{width} {height}\n255\n".encode()
    return header + bytes(rng.randrange(256) for _ in range(width * height))


def matrix_text(rows, cols, seed=None, identity=False):
    if identity:
        body = "\n".join(
            " ".join("1" if i == j else "0" for j in range(cols)) for i in range(rows)
        )
    else:
        rng = random.Random(seed)
        body = "\n".join(
            " ".join(str(rng.randrange(100)) for _ in range(cols)) for i in range(rows)
        )
    return f"{rows} {cols}\n{body}\n"


def signal_text(n, k, seed):
    rng = random.Random(seed)
    values = "\n".join(str(rng.randrange(-50, 51)) for _ in range(n))
    taps = "\n".join(str(rng.randrange(-4, 5)) for _ in range(k))
    return f"{n} {k}\n{values}\n{taps}\n"


def int_list_text(n, seed):
    rng = random.Random(seed)
    return f"{n}\n" + "\n".join(str(rng.randrange(-1_000_000, 1_000_000)) for _ in range(n)) + "\n"


def haystack_text(size, seed, pattern="needle-xyz"):
    rng = random.Random(seed)
    alphabet = "abcdefghij \n"
    chunks = []
    written = 0
    while written < size:
        run = "".join(rng.choice(alphabet) for _ in range(997))
        if rng.random() < 0.4:
            run += pattern
        chunks.append(run)
        written += len(run)
    return pattern + "\n" + "".join(chunks)


def kernels():
    return {
        "threshold-filter": {
            "tags": ["image", "filter", "neural-activation"],
            "runtime_features": ["rows", "cols", "hour_of_day", "cpu_count"],
            "datasets": [
                ("tfilter-small", "data/small.pgm", pgm_bytes(256, 256, 101),
                 {"rows": 256, "cols": 256}),
                ("tfilter-large", "data/large.pgm", pgm_bytes(640, 480, 102),
                 {"rows": 480, "cols": 640}),
            ],
        },
        "matmul": {
            "tags": ["linear-algebra", "dense"],
            "runtime_features": ["rows", "cols", "hour_of_day", "cpu_count"],
            "datasets": [
                ("matmul-identity", "data/identity.txt",
                 (matrix_text(64, 64, identity=True) + matrix_text(64, 64, seed=201)).encode(),
                 {"rows": 64, "cols": 64}),
                ("matmul-large", "data/large.txt",
                 (matrix_text(144, 144, seed=202) + matrix_text(144, 144, seed=203)).encode(),
                 {"rows": 144, "cols": 144}),
            ],
        },
        "fir-filter": {
            "tags": ["dsp", "convolution"],
            "runtime_features": ["length", "taps", "hour_of_day", "cpu_count"],
            "datasets": [
                ("fir-small", "data/small.txt", signal_text(4096, 32, 301).encode(),
                 {"length": 4096, "taps": 32}),
                ("fir-large", "data/large.txt", signal_text(32768, 64, 302).encode(),
                 {"length": 32768, "taps": 64}),
            ],
        },
        "quicksort": {
            "tags": ["sorting"],
            "runtime_features": ["length", "hour_of_day", "cpu_count"],
            "datasets": [
                ("qsort-small", "data/small.txt", int_list_text(12_000, 401).encode(),
                 {"length": 12_000}),
                ("qsort-large", "data/large.txt", int_list_text(120_000, 402).encode(),
                 {"length": 120_000}),
            ],
        },
        "string-search": {
            "tags": ["text", "search"],
            "runtime_features": ["length", "hour_of_day", "cpu_count"],
            "datasets": [
                ("ssearch-small", "data/small.txt", haystack_text(60_000, 501).encode(),
                 {"length": 60_000}),
                ("ssearch-large", "data/large.txt", haystack_text(400_000, 502).encode(),
                 {"length": 400_000}),
            ],
        },
    }


def build_oracle(kernel_dir: Path, out_dir: Path) -> Path:
    binary = out_dir / f"{kernel_dir.name}-O0"
    subprocess.run(
        [CC, *ORACLE_FLAGS, str(kernel_dir / "kernel.c"), "-o", str(binary)],
        check=True,
    )
    return binary


def reference_output(binary: Path, dataset: Path, out_dir: Path) -> bytes:
    out = out_dir / "ref.out"
    subprocess.run([str(binary), str(dataset), str(out), "1"], check=True)
    return out.read_bytes()


def meta_doc(name: str, spec: dict) -> dict:
    return {
        "species": {
            "alias": name,
            "tags": spec["tags"],
            "build_template": "cc -std=c99 {FLAGS} {SRC} -o {OUT}",
            "run_template": "{BIN} {DATASET} {OUT} " + str(REPEATS[name]),
            "validate": "byte-compare-reference",
            "runtime_features": spec["runtime_features"],
        },
        "sources": ["kernel.c"],
        "datasets": [
            {
                "alias": alias,
                "file": rel,
                "ref": "ref/" + Path(rel).stem + ".out",
                "features": features,
            }
            for alias, rel, _, features in spec["datasets"]
        ],
    }


def run(check: bool) -> int:
    failures = []
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        for name, spec in kernels().items():
            kdir = ROOT / name
            binary = build_oracle(kdir, tmp)
            expected_meta = json.dumps(meta_doc(name, spec), indent=2, sort_keys=True) + "\n"
            outputs = {"meta.json": expected_meta.encode()}
            for alias, rel, data, _features in spec["datasets"]:
                outputs[rel] = data
                scratch = tmp / alias
                scratch.mkdir()
                (scratch / "in.dat").write_bytes(data)
                ref = reference_output(binary, scratch / "in.dat", scratch)
                outputs["ref/" + Path(rel).stem + ".out"] = ref
            for rel, data in outputs.items():
                path = kdir / rel
                if check:
                    if not path.exists() or path.read_bytes() != data:
                        failures.append(str(path))
                else:
                    path.parent.mkdir(parents=True, exist_ok=True)
                    path.write_bytes(data)
            print(f"{name}: {'checked' if check else 'wrote'} {len(outputs)} files")
    if failures:
        print("stale or divergent files:\n  " + "\n  ".join(failures), file=sys.stderr)
        return 1
    return 0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--check", action="store_true", help="verify instead of rewrite")
    args = parser.parse_args()
    if shutil.which(CC) is None:
        print("no C compiler on PATH", file=sys.stderr)
        return 2
    return run(args.check)


if __name__ == "__main__":
    sys.exit(main())
