import shutil
import subprocess
from pathlib import Path

import pytest

CORPUS = Path(__file__).resolve().parent.parent
KERNELS = ("threshold-filter", "matmul", "fir-filter", "quicksort", "string-search")

requires_cc = pytest.mark.skipif(shutil.which("cc") is None, reason="no system C compiler")


def build_kernel(name: str, out_dir: Path, opt: str = "-O3", extra=()) -> Path:
    binary = out_dir / f"{name}{opt}"
    cmd = ["cc", "-std=c99", opt, *extra, str(CORPUS / name / "kernel.c"), "-o", str(binary)]
    subprocess.run(cmd, check=True, capture_output=True)
    return binary


def run_kernel(binary: Path, dataset: Path, out: Path, *args) -> None:
    subprocess.run([str(binary), str(dataset), str(out), *map(str, args)], check=True)
