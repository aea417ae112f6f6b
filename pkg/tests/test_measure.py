import shutil

import pytest

from specieshub.errors import SpeciesHubError, ToolchainMissing
from specieshub.flagspace import ON, ChoiceVector, parse, render, sample
from specieshub.measure import (
    LocalToolchain,
    MockToolchain,
    SpeciesDescriptor,
    capture_state,
    measure,
    toolchain_for,
)
from tests.conftest import add_mock_dataset, add_mock_species, mock_space, wire_reference_output

SCENARIO = {
    "base_time": 1.0,
    "flag_effects": {"fast": 0.5, "slow": 1.5},
    "dataset_terms": {"big": 0.25},
    "size_per_flag": 64,
    "build_fail_flags": ["explode"],
}


def descriptor(meta=None):
    base = {
        "build_template": "cc {FLAGS} {SRC} -o {OUT}",
        "run_template": "{BIN} {DATASET} {OUT}",
        "validate": "none",
        "sources": [],
        "mock_scenario": SCENARIO,
    }
    base.update(meta or {})
    return SpeciesDescriptor(
        uid="0000000000000001",
        sources=tuple(base["sources"]),
        build_template=base["build_template"],
        run_template=base["run_template"],
        validate=base["validate"],
        meta=base,
    )


def test_descriptor_requires_placeholders():
    with pytest.raises(SpeciesHubError):
        SpeciesDescriptor(
            uid="0000000000000001", sources=(), build_template="cc -o out",
            run_template="{BIN}",
        )


def test_mock_build_size_tracks_flag_count(tmp_path):
    tc = MockToolchain()
    species = descriptor()
    for n in (0, 1, 4):
        choice = ChoiceVector(base="-O3", settings={f"f{i}": ON for i in range(n)})
        result = tc.build(species, choice, "", tmp_path)
        assert result.ok
        assert result.binary_size_bytes == 10_000 + 64 * n


def test_mock_planted_build_failure(tmp_path):
    tc = MockToolchain()
    result = tc.build(descriptor(), ChoiceVector(base="-O3", settings={"explode": ON}), "", tmp_path)
    assert not result.ok
    assert "failure" in result.log


def test_mock_exec_time_formula(tmp_path):
    tc = MockToolchain()
    species = descriptor()
    choice = ChoiceVector(base="-O3", settings={"fast": ON, "slow": ON})
    assert tc.exec_time(species, choice, ("big",)) == pytest.approx(1.0 * 0.5 * 1.5 + 0.25)
    assert tc.exec_time(species, choice, ("other",)) == pytest.approx(0.75)


def test_measure_is_pure_and_reuses_the_experiment(repo):
    species = add_mock_species(repo, "sp", SCENARIO)
    dataset = add_mock_dataset(repo, "d1")
    state = capture_state("host1")
    choice = ChoiceVector(base="-O3", settings={"fast": ON})
    b1, e1 = measure(repo, "sp", choice, "d1", state, 3, MockToolchain())
    b2, e2 = measure(repo, "sp", choice, "d1", state, 3, MockToolchain())
    assert b1.exec_time_s == b2.exec_time_s == 0.5
    assert b1.variation == 0.0
    assert b1.reliable
    assert e1.uid == e2.uid
    assert len(repo.find("experiment")) == 1


def test_uninfluential_flag_means_identical_exec_time(repo):
    add_mock_species(repo, "sp", SCENARIO)
    add_mock_dataset(repo, "d1")
    state = capture_state("host1")
    a = ChoiceVector(base="-O3", settings={"fast": ON})
    b = ChoiceVector(base="-O3", settings={"fast": ON, "ghost": ON})
    ba, _ = measure(repo, "sp", a, "d1", state, 1, MockToolchain())
    bb, _ = measure(repo, "sp", b, "d1", state, 1, MockToolchain())
    assert ba.exec_time_s == bb.exec_time_s


def test_failed_build_records_log(repo):
    add_mock_species(repo, "sp", SCENARIO)
    add_mock_dataset(repo, "d1")
    state = capture_state("host1")
    behavior, exp_id = measure(
        repo, "sp", ChoiceVector(base="-O3", settings={"explode": ON}), "d1", state, 2,
        MockToolchain(),
    )
    assert behavior.failed == 1
    assert behavior.exec_time_s is None
    assert not behavior.reliable
    entry = repo.load("experiment", exp_id.uid)
    assert "failure" in entry.meta["build_log"]


def test_validation_mismatch_fails_the_run(repo):
    add_mock_species(repo, "sp", SCENARIO, validate="byte-compare-reference")
    add_mock_dataset(repo, "d1")
    wire_reference_output(repo, "sp", "d1", b"something else\n")
    state = capture_state("host1")
    behavior, _ = measure(repo, "sp", ChoiceVector(base="-O3"), "d1", state, 2, MockToolchain())
    assert behavior.failed == 1
    assert not behavior.reliable


def test_validation_match_passes(repo):
    add_mock_species(repo, "sp", SCENARIO, validate="byte-compare-reference")
    add_mock_dataset(repo, "d1")
    wire_reference_output(repo, "sp", "d1", b"mock-output\n")
    state = capture_state("host1")
    behavior, _ = measure(repo, "sp", ChoiceVector(base="-O3"), "d1", state, 2, MockToolchain())
    assert behavior.failed == 0


def test_string_round_trip_does_not_perturb_behavior(repo):
    add_mock_species(repo, "sp", SCENARIO)
    add_mock_dataset(repo, "d1")
    state = capture_state("host1")
    space = mock_space(["fast", "slow", "ghost"])
    choice = sample(space, 9, density=0.8)
    direct, _ = measure(repo, "sp", choice, "d1", state, 1, MockToolchain())
    round_tripped, _ = measure(
        repo, "sp", parse(render(choice)), "d1", state, 1, MockToolchain()
    )
    assert direct.exec_time_s == round_tripped.exec_time_s


def test_experiment_provenance_allows_replay(repo):
    add_mock_species(repo, "sp", SCENARIO)
    add_mock_dataset(repo, "d1")
    state = capture_state("host1", hour_of_day=12)
    choice = ChoiceVector(base="-O3", settings={"fast": ON})
    behavior, exp_id = measure(repo, "sp", choice, "d1", state, 2, MockToolchain())
    meta = repo.load("experiment", exp_id.uid).meta
    replay_choice = ChoiceVector.from_doc(meta["choice"])
    replayed, _ = measure(
        repo,
        meta["species"],
        replay_choice,
        meta["dataset"],
        capture_state(meta["platform"]),
        meta["repeats"],
        MockToolchain(),
        reuse=False,
    )
    assert replayed.exec_time_s == behavior.exec_time_s
    assert replayed.binary_size_bytes == behavior.binary_size_bytes


def test_samples_have_repeat_entries(repo):
    add_mock_species(repo, "sp", SCENARIO)
    add_mock_dataset(repo, "d1")
    behavior, _ = measure(
        repo, "sp", ChoiceVector(base="-O3"), "d1", capture_state("h"), 5, MockToolchain()
    )
    assert behavior.samples is not None
    assert len(behavior.samples.values) == 5


def test_toolchain_factory():
    assert isinstance(toolchain_for("mock-gcc"), MockToolchain)
    with pytest.raises(ToolchainMissing):
        toolchain_for("no-such-cc-binary")


@pytest.mark.skipif(shutil.which("cc") is None, reason="no system C compiler")
def test_local_toolchain_builds_and_times_a_real_binary(repo, tmp_path):
    source = tmp_path / "tiny.c"
    source.write_text(
        "#include <stdio.h>\n"
        "int main(int argc, char **argv) {\n"
        "    volatile long s = 0;\n"
        "    for (long i = 0; i < 2000000; i++) s += i;\n"
        "    if (argc > 2) { FILE *f = fopen(argv[2], \"w\");"
        " if (!f) return 1; fprintf(f, \"%ld\\n\", s); fclose(f); }\n"
        "    return 0;\n"
        "}\n"
    )
    meta = {
        "build_template": "cc -std=c99 {FLAGS} {SRC} -o {OUT}",
        "run_template": "{BIN} {DATASET} {OUT}",
        "validate": "none",
        "sources": ["tiny.c"],
        "tags": [],
        "reference_outputs": {},
    }
    species_id = repo.create("species", meta, alias="tiny")
    repo.add_file("species", species_id.uid, "tiny.c", source.read_bytes())
    add_mock_dataset(repo, "d1")
    behavior, _ = measure(
        repo, "tiny", ChoiceVector(base="-O3"), "d1", capture_state("ci"), 2, LocalToolchain()
    )
    assert behavior.failed == 0
    assert behavior.binary_size_bytes > 0
    assert behavior.exec_time_s and behavior.exec_time_s > 0
    assert behavior.compile_time_s > 0


def test_profiler_counters_are_filtered_to_the_canonical_set(repo, tmp_path):
    import shutil as _shutil

    if _shutil.which("cc") is None:
        pytest.skip("no system C compiler")
    source = tmp_path / "t.c"
    source.write_text("int main(void){return 0;}\n")
    meta = {
        "build_template": "cc -std=c99 {FLAGS} {SRC} -o {OUT}",
        "run_template": "{BIN}",
        "validate": "none",
        "sources": ["t.c"],
        "reference_outputs": {},
    }
    species_id = repo.create("species", meta, alias="probe")
    repo.add_file("species", species_id.uid, "t.c", source.read_bytes())

    def fake_profiler(cmd, cwd, env):
        return {"cycles": 1000, "instructions": 400, "not-a-counter": 7}

    toolchain = LocalToolchain(profiler=fake_profiler)
    behavior, _ = measure(
        repo, "probe", ChoiceVector(base="-O3"), None, capture_state("h"), 1, toolchain
    )
    assert behavior.counters == {"cycles": 1000, "instructions": 400}


def test_normalized_counters_divide_by_instructions():
    from specieshub.measure import normalized_counters

    norm = normalized_counters({"cycles": 1000, "instructions": 400, "branches": 100})
    assert norm["instructions"] == 400.0
    assert norm["cycles"] == 2.5
    assert norm["branches"] == 0.25


@pytest.mark.skipif(shutil.which("cc") is None, reason="no system C compiler")
def test_real_build_failure_captures_the_compiler_exit(repo, tmp_path):
    source = tmp_path / "t.c"
    source.write_text("int main(void){return 0;}\n")
    meta = {
        "build_template": "cc -std=c99 {FLAGS} -fdefinitely-not-a-flag {SRC} -o {OUT}",
        "run_template": "{BIN}",
        "validate": "none",
        "sources": ["t.c"],
        "reference_outputs": {},
    }
    species_id = repo.create("species", meta, alias="broken")
    repo.add_file("species", species_id.uid, "t.c", source.read_bytes())
    behavior, exp_id = measure(
        repo, "broken", ChoiceVector(base="-O3"), None, capture_state("h"), 1, LocalToolchain()
    )
    assert behavior.failed == 1
    log = repo.load("experiment", exp_id.uid).meta["build_log"]
    assert "definitely-not-a-flag" in log
