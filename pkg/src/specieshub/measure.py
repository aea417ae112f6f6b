"""The behavior function: build a species with a choice, run it on a
dataset, validate output, and record a behavior vector.

Toolchains are pluggable. The mock adapter computes deterministic costs
from a scenario document so the whole pipeline is testable without a
compiler; the local adapter shells out build/run command templates and
times real executions. Experiments are persisted with full provenance and
deduplicated by a content signature, so re-running an identical
measurement reuses the recorded entry instead of duplicating it.
"""

from __future__ import annotations

import hashlib
import json
import os
import resource
import shutil
import subprocess
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import stats
from .counters import COUNTER_NAMES
from .errors import SpeciesHubError, ToolchainMissing
from .flagspace import EXPANDED, ChoiceVector, FlagSpace, render
from .repo import Entry, EntryId, Repo, _locked

DEFAULT_BUILD_TIMEOUT = 300.0
DEFAULT_RUN_TIMEOUT = 60.0

VALIDATE_BYTES = "byte-compare-reference"
VALIDATE_NONE = "none"


# ── domain types ──────────────────────────────────────────────────


@dataclass(frozen=True)
class SpeciesDescriptor:
    uid: str
    sources: tuple[str, ...]
    build_template: str
    run_template: str
    validate: str = VALIDATE_NONE
    reference_outputs: dict[str, str] = field(default_factory=dict)
    tags: tuple[str, ...] = ()
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for ph in ("{FLAGS}", "{OUT}"):
            if ph not in self.build_template:
                raise SpeciesHubError(f"build template lacks {ph}")
        if "{BIN}" not in self.run_template:
            raise SpeciesHubError("run template lacks {BIN}")
        if self.validate not in (VALIDATE_BYTES, VALIDATE_NONE):
            raise SpeciesHubError(f"unknown validation mode {self.validate!r}")

    @classmethod
    def from_entry(cls, entry: Entry) -> "SpeciesDescriptor":
        m = entry.meta
        return cls(
            uid=entry.uid,
            sources=tuple(m.get("sources", [])),
            build_template=m["build_template"],
            run_template=m["run_template"],
            validate=m.get("validate", VALIDATE_NONE),
            reference_outputs=dict(m.get("reference_outputs", {})),
            tags=tuple(m.get("tags", [])),
            meta=m,
        )


@dataclass(frozen=True)
class StateVector:
    platform_id: str
    cpu_model: str = ""
    frequency_policy: str = ""
    env: dict[str, str] = field(default_factory=dict)
    wallclock_context: dict[str, int] = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {
            "platform_id": self.platform_id,
            "cpu_model": self.cpu_model,
            "frequency_policy": self.frequency_policy,
            "env": dict(self.env),
            "wallclock_context": dict(self.wallclock_context),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "StateVector":
        return cls(
            platform_id=doc["platform_id"],
            cpu_model=doc.get("cpu_model", ""),
            frequency_policy=doc.get("frequency_policy", ""),
            env=dict(doc.get("env", {})),
            wallclock_context=dict(doc.get("wallclock_context", {})),
        )


def capture_state(platform_id: str, hour_of_day: int | None = None) -> StateVector:
    """Snapshot the local host context. Frequency policy is recorded, never set."""
    cpu_model = ""
    try:
        for line in Path("/proc/cpuinfo").read_text().splitlines():
            if line.lower().startswith("model name"):
                cpu_model = line.split(":", 1)[1].strip()
                break
    except OSError:
        pass
    policy = ""
    gov = Path("/sys/devices/system/cpu/cpu0/cpufreq/scaling_governor")
    try:
        policy = gov.read_text().strip()
    except OSError:
        pass
    if hour_of_day is None:
        hour_of_day = time.localtime().tm_hour
    return StateVector(
        platform_id=platform_id,
        cpu_model=cpu_model,
        frequency_policy=policy,
        wallclock_context={"hour_of_day": hour_of_day, "cpu_count": os.cpu_count() or 1},
    )


@dataclass(frozen=True)
class BehaviorVector:
    exec_time_s: float | None
    compile_time_s: float | None
    binary_size_bytes: int | None
    max_rss_bytes: int | None
    failed: int
    energy_j: float | None = None  # reserved; never measured here
    counters: dict[str, int] | None = None
    samples: stats.SampleSet | None = None
    reliable: bool = False
    variation: float | None = None

    def to_doc(self) -> dict:
        doc = {
            "exec_time_s": self.exec_time_s,
            "compile_time_s": self.compile_time_s,
            "binary_size_bytes": self.binary_size_bytes,
            "max_rss_bytes": self.max_rss_bytes,
            "failed": self.failed,
            "reliable": self.reliable,
            "variation": self.variation,
        }
        if self.energy_j is not None:
            doc["energy_j"] = self.energy_j
        if self.counters is not None:
            doc["counters"] = dict(self.counters)
        if self.samples is not None:
            doc["samples"] = list(self.samples.values)
            doc["unit"] = self.samples.unit
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "BehaviorVector":
        samples = None
        if doc.get("samples"):
            samples = stats.SampleSet(tuple(doc["samples"]), unit=doc.get("unit", "s"))
        return cls(
            exec_time_s=doc.get("exec_time_s"),
            compile_time_s=doc.get("compile_time_s"),
            binary_size_bytes=doc.get("binary_size_bytes"),
            max_rss_bytes=doc.get("max_rss_bytes"),
            failed=int(doc.get("failed", 0)),
            energy_j=doc.get("energy_j"),
            counters=doc.get("counters"),
            samples=samples,
            reliable=bool(doc.get("reliable", False)),
            variation=doc.get("variation"),
        )


@dataclass
class BuildResult:
    ok: bool
    compile_time_s: float
    binary_size_bytes: int
    log: str
    binary: Path | None = None
    choice: ChoiceVector | None = None


@dataclass
class RunOutcome:
    exit_code: int
    wall_time_s: float
    max_rss_bytes: int
    log: str = ""
    timed_out: bool = False
    counters: dict[str, int] | None = None


# ── toolchain adapters ────────────────────────────────────────────

DEFAULT_MOCK_SCENARIO = {
    "base_time": 1.0,
    "flag_effects": {},
    "dataset_terms": {},
    "size_per_flag": 64,
}


class MockToolchain:
    """Deterministic behavior model driven by a scenario document.

    exec_time = base_time * product(flag_effects over on-flags) + dataset
    term. A species meta may embed its own scenario under "mock_scenario",
    which takes precedence over the adapter-level one.
    """

    name = "mock"

    def __init__(self, scenario: dict | None = None):
        self.scenario = scenario or DEFAULT_MOCK_SCENARIO

    @property
    def fingerprint(self) -> str:
        return "mock-1"

    def _scenario_for(self, species: SpeciesDescriptor) -> dict:
        sc = species.meta.get("mock_scenario") or self.scenario
        return {**DEFAULT_MOCK_SCENARIO, **sc}

    def exec_time(self, species: SpeciesDescriptor, choice: ChoiceVector, dataset_keys=()) -> float:
        sc = self._scenario_for(species)
        t = float(sc["base_time"])
        effects = sc["flag_effects"]
        for name in choice.on_flags:
            t *= float(effects.get(name, 1.0))
        terms = sc["dataset_terms"]
        for key in dataset_keys:
            if key is not None and key in terms:
                t += float(terms[key])
                break
        return t

    def build(self, species, choice, flags, workdir, timeout=DEFAULT_BUILD_TIMEOUT):
        sc = self._scenario_for(species)
        n_on = len(choice.on_flags)
        if any(f in sc.get("build_fail_flags", []) for f in choice.on_flags):
            return BuildResult(
                ok=False,
                compile_time_s=0.01,
                binary_size_bytes=0,
                log="mock: planted build failure",
                choice=choice,
            )
        return BuildResult(
            ok=True,
            compile_time_s=0.05 + 0.005 * len(choice.settings),
            binary_size_bytes=10_000 + int(sc["size_per_flag"]) * n_on,
            log="mock build",
            choice=choice,
        )

    def run_once(self, species, build, dataset_keys, dataset_path, out_path, timeout, env=None):
        choice = build.choice
        sc = self._scenario_for(species)
        if any(f in sc.get("run_fail_flags", []) for f in choice.on_flags):
            return RunOutcome(exit_code=1, wall_time_s=0.0, max_rss_bytes=0, log="mock: planted run failure")
        t = self.exec_time(species, choice, dataset_keys)
        if out_path is not None:
            Path(out_path).write_bytes(b"mock-output\n")
        return RunOutcome(exit_code=0, wall_time_s=t, max_rss_bytes=1 << 20)


class LocalToolchain:
    """Executes the species' build/run command templates through the shell.

    ``profiler``, when configured, is called as profiler(cmd, cwd, env) after
    each timed run and returns raw hardware counters; absent counters are
    omitted, never zero-filled.
    """

    name = "local"

    def __init__(self, cc: str = "cc", version: str | None = None, profiler=None):
        self.cc = cc
        self.profiler = profiler
        if shutil.which(cc) is None:
            raise ToolchainMissing(f"compiler {cc!r} not found on PATH")
        if version is None:
            try:
                out = subprocess.run(
                    [cc, "--version"], capture_output=True, text=True, timeout=10
                ).stdout.splitlines()
                version = out[0].strip() if out else ""
            except OSError:
                version = ""
        self.version = version

    @property
    def fingerprint(self) -> str:
        return f"{self.cc}:{self.version}"

    def build(self, species, choice, flags, workdir, timeout=DEFAULT_BUILD_TIMEOUT):
        workdir = Path(workdir)
        out = workdir / "a.bin"
        srcs = " ".join(str(workdir / s) for s in species.sources)
        cmd = (
            species.build_template.replace("{CC}", self.cc)
            .replace("{FLAGS}", flags)
            .replace("{SRC}", srcs)
            .replace("{OUT}", str(out))
        )
        code, wall, _rss, log, timed_out = _run_shell(cmd, workdir, timeout)
        ok = code == 0 and out.exists() and not timed_out
        if timed_out:
            log += "\n[build timeout]"
        return BuildResult(
            ok=ok,
            compile_time_s=wall,
            binary_size_bytes=out.stat().st_size if out.exists() else 0,
            log=log,
            binary=out if ok else None,
            choice=choice,
        )

    def run_once(self, species, build, dataset_keys, dataset_path, out_path, timeout, env=None):
        cmd = (
            species.run_template.replace("{BIN}", str(build.binary))
            .replace("{DATASET}", str(dataset_path) if dataset_path else "")
            .replace("{OUT}", str(out_path))
        )
        code, wall, rss, log, timed_out = _run_shell(
            cmd, Path(build.binary).parent, timeout, extra_env=env
        )
        if timed_out:
            log += "\n[run timeout]"
        counters = None
        if self.profiler is not None and code == 0 and not timed_out:
            raw = self.profiler(cmd, Path(build.binary).parent, env)
            counters = {k: int(v) for k, v in raw.items() if k in COUNTER_NAMES} or None
        return RunOutcome(
            exit_code=code, wall_time_s=wall, max_rss_bytes=rss, log=log,
            timed_out=timed_out, counters=counters,
        )


def _run_shell(cmd: str, cwd: Path, timeout: float, extra_env: dict | None = None):
    env = dict(os.environ)
    if extra_env:
        env.update(extra_env)
    t0 = time.perf_counter()
    timed_out = False
    try:
        proc = subprocess.run(
            cmd,
            shell=True,
            cwd=str(cwd),
            env=env,
            capture_output=True,
            text=True,
            timeout=timeout,
        )
        code = proc.returncode
        log = (proc.stdout or "") + (proc.stderr or "")
    except subprocess.TimeoutExpired as exc:
        code = -1
        timed_out = True
        log = (exc.stdout or b"").decode(errors="replace") if exc.stdout else ""
    wall = time.perf_counter() - t0
    # upper bound: max RSS over all reaped children of this process
    rss_kib = resource.getrusage(resource.RUSAGE_CHILDREN).ru_maxrss
    return code, wall, rss_kib * 1024, log, timed_out


def toolchain_for(compiler: str, scenario: dict | None = None):
    """Map a tuning-key compiler string to an adapter instance."""
    if compiler.startswith("mock"):
        return MockToolchain(scenario)
    return LocalToolchain(cc=compiler.split("-")[0] if compiler[:1].isalpha() else compiler)


# ── operations ────────────────────────────────────────────────────


def choice_signature(choice: ChoiceVector) -> str:
    return json.dumps(choice.to_doc(), sort_keys=True)


def experiment_signature(
    species_uid: str,
    dataset_uid: str | None,
    platform: str,
    toolchain_fingerprint: str,
    choice: ChoiceVector,
    repeats: int,
) -> str:
    blob = json.dumps(
        {
            "species": species_uid,
            "dataset": dataset_uid,
            "platform": platform,
            "toolchain": toolchain_fingerprint,
            "choice": choice.to_doc(),
            "repeats": repeats,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


def build(
    species: SpeciesDescriptor,
    choice: ChoiceVector,
    toolchain,
    workdir: Path,
    space: FlagSpace | None = None,
    sources_dir: Path | None = None,
    timeout: float = DEFAULT_BUILD_TIMEOUT,
) -> BuildResult:
    """Produce a runnable artifact for (species, choice) in workdir."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if sources_dir is not None:
        for name in species.sources:
            src = Path(sources_dir) / name
            dst = workdir / name
            dst.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(src, dst)
    if choice.no_all and space is None:
        raise SpeciesHubError("a -fno-ALL choice needs its flag space to build")
    flags = render(choice, mode=EXPANDED, space=space)
    return toolchain.build(species, choice, flags, workdir, timeout)


def run(
    species: SpeciesDescriptor,
    build_result: BuildResult,
    dataset_keys: tuple,
    dataset_path: Path | None,
    repeats: int,
    toolchain,
    workdir: Path,
    reference_path: Path | None = None,
    timeout: float = DEFAULT_RUN_TIMEOUT,
    run_lock: Path | None = None,
    env: dict | None = None,
) -> BehaviorVector:
    """Execute a built artifact ``repeats`` times and characterize the timings."""
    if not build_result.ok:
        return BehaviorVector(
            exec_time_s=None,
            compile_time_s=build_result.compile_time_s,
            binary_size_bytes=None,
            max_rss_bytes=None,
            failed=1,
        )
    if repeats < 1:
        raise SpeciesHubError("repeats must be >= 1")
    samples = []
    failed = 0
    max_rss = 0
    counters = None
    out_path = Path(workdir) / "out.dat"
    for _ in range(repeats):
        if run_lock is not None:
            with _locked(run_lock):
                outcome = toolchain.run_once(
                    species, build_result, dataset_keys, dataset_path, out_path, timeout, env
                )
        else:
            outcome = toolchain.run_once(
                species, build_result, dataset_keys, dataset_path, out_path, timeout, env
            )
        max_rss = max(max_rss, outcome.max_rss_bytes)
        if outcome.counters:
            counters = outcome.counters
        if outcome.exit_code != 0 or outcome.timed_out:
            failed = 1
            continue
        if outcome.wall_time_s > 0:
            samples.append(outcome.wall_time_s)
        if species.validate == VALIDATE_BYTES and reference_path is not None:
            if not out_path.exists() or out_path.read_bytes() != Path(reference_path).read_bytes():
                failed = 1

    sample_set = stats.SampleSet(tuple(samples)) if samples else None
    summary = stats.characterize(sample_set) if sample_set else None
    return BehaviorVector(
        exec_time_s=summary.expected if summary else None,
        compile_time_s=build_result.compile_time_s,
        binary_size_bytes=build_result.binary_size_bytes,
        max_rss_bytes=max_rss,
        failed=failed,
        counters=counters,
        samples=sample_set,
        reliable=bool(summary and summary.reliable and not failed),
        variation=summary.variation if summary else None,
    )


def measure(
    repo: Repo,
    species_ref: str,
    choice: ChoiceVector,
    dataset_ref: str | None,
    state: StateVector,
    repeats: int,
    toolchain,
    space: FlagSpace | None = None,
    work_root: Path | None = None,
    run_timeout: float = DEFAULT_RUN_TIMEOUT,
    build_timeout: float = DEFAULT_BUILD_TIMEOUT,
    reuse: bool = True,
    extra_meta: dict | None = None,
) -> tuple[BehaviorVector, EntryId]:
    """Full behavior measurement, persisted as an experiment entry.

    The experiment meta alone suffices to re-issue the identical call;
    identical calls (same signature) reuse the recorded entry.
    """
    species_entry = repo.load("species", species_ref)
    species = SpeciesDescriptor.from_entry(species_entry)
    dataset_entry = repo.load("dataset", dataset_ref) if dataset_ref else None
    dataset_uid = dataset_entry.uid if dataset_entry else None

    sig = experiment_signature(
        species.uid, dataset_uid, state.platform_id, toolchain.fingerprint, choice, repeats
    )
    if reuse:
        entry = _lookup_signature(repo, sig)
        if entry is not None:
            return BehaviorVector.from_doc(entry.meta["behavior"]), entry.id

    meta = {
        "signature": sig,
        "species": species.uid,
        "dataset": dataset_uid,
        "platform": state.platform_id,
        "toolchain": {"name": toolchain.name, "fingerprint": toolchain.fingerprint},
        "choice": choice.to_doc(),
        "repeats": repeats,
        "state": state.to_doc(),
        "status": "running",
        "timestamp": time.time(),
    }
    if extra_meta:
        meta.update(extra_meta)
    entry_id = repo.create("experiment", meta)

    work_root = Path(work_root) if work_root else Path(tempfile.gettempdir()) / "specieshub-work"
    workdir = work_root / entry_id.uid
    workdir.mkdir(parents=True, exist_ok=True)

    dataset_path = None
    dataset_keys: tuple = ()
    if dataset_entry is not None:
        dataset_keys = (dataset_ref, dataset_entry.id.alias, dataset_entry.uid)
        payload = dataset_entry.meta.get("file")
        if payload:
            dataset_path = repo.file_path("dataset", dataset_entry.uid, payload)

    reference_path = None
    ref_name = None
    if dataset_entry is not None:
        ref_name = species.reference_outputs.get(dataset_entry.uid)
        if ref_name is None and dataset_entry.id.alias:
            ref_name = species.reference_outputs.get(dataset_entry.id.alias)
    if ref_name:
        reference_path = repo.file_path("species", species.uid, ref_name)

    build_result = build(
        species,
        choice,
        toolchain,
        workdir,
        space=space,
        sources_dir=repo.entry_dir("species", species.uid),
        timeout=build_timeout,
    )
    run_lock = host_run_lock() if isinstance(toolchain, LocalToolchain) else None
    behavior = run(
        species,
        build_result,
        dataset_keys,
        dataset_path,
        repeats,
        toolchain,
        workdir,
        reference_path=reference_path,
        timeout=run_timeout,
        run_lock=run_lock,
    )

    meta["status"] = "done"
    meta["behavior"] = behavior.to_doc()
    if not build_result.ok:
        meta["build_log"] = build_result.log[-4000:]
    repo.update("experiment", entry_id.uid, meta)
    _index_signature(repo, sig, entry_id.uid)
    shutil.rmtree(workdir, ignore_errors=True)
    return behavior, entry_id


def host_run_lock() -> Path:
    """Host-wide lock serializing timed runs across processes (timing integrity)."""
    root = Path(tempfile.gettempdir()) / "specieshub-work"
    root.mkdir(parents=True, exist_ok=True)
    return root / ".host-run.lock"


def _sig_path(repo: Repo, sig: str) -> Path:
    return repo.root / "experiment" / ".sig" / sig


def _index_signature(repo: Repo, sig: str, uid: str) -> None:
    # lookup cache only; the experiment meta stays the source of truth
    path = _sig_path(repo, sig)
    path.parent.mkdir(exist_ok=True)
    tmp = path.with_name(f".tmp-{uid}")
    tmp.write_text(uid)
    os.replace(tmp, path)


def _lookup_signature(repo: Repo, sig: str):
    path = _sig_path(repo, sig)
    if not path.exists():
        return None
    uid = path.read_text().strip()
    try:
        entry = repo.load("experiment", uid)
    except Exception:
        return None
    if entry.meta.get("signature") == sig and "behavior" in entry.meta:
        return entry
    return None


def normalized_counters(counters: dict[str, int]) -> dict[str, float]:
    """Per-instruction normalization of raw counters, filtered to the canonical set."""
    instructions = counters.get("instructions")
    out = {}
    for name in COUNTER_NAMES:
        if name not in counters:
            continue
        value = counters[name]
        if instructions and name != "instructions":
            out[name] = value / instructions
        else:
            out[name] = float(value)
    return out
