import pytest

from specieshub.flagspace import FlagSpace
from specieshub.repo import Repo


@pytest.fixture
def repo(tmp_path):
    return Repo.init(tmp_path / "repo")


def mock_space(booleans, params=None, compiler="mock-gcc"):
    return FlagSpace(
        compiler=compiler,
        version="1",
        base_levels=("-O3",),
        booleans=tuple(booleans),
        params=params or {},
    )


def add_mock_species(repo, alias, scenario, validate="none", reference=None):
    """Create a species entry whose behavior is fully described by a mock scenario."""
    meta = {
        "build_template": "cc {FLAGS} {SRC} -o {OUT}",
        "run_template": "{BIN} {DATASET} {OUT}",
        "validate": validate,
        "sources": [],
        "tags": ["mock"],
        "mock_scenario": scenario,
        "reference_outputs": {},
    }
    species_id = repo.create("species", meta, alias=alias)
    return species_id


def add_mock_dataset(repo, alias, features=None):
    return repo.create("dataset", {"features": features or {}, "tags": []}, alias=alias)


def wire_reference_output(repo, species_ref, dataset_ref, content: bytes):
    """Attach a reference payload so byte-compare validation has a target."""
    species = repo.load("species", species_ref)
    dataset = repo.load("dataset", dataset_ref)
    name = f"ref-{dataset.uid}.out"
    repo.add_file("species", species.uid, name, content)
    meta = species.meta
    meta.setdefault("reference_outputs", {})[dataset.uid] = name
    repo.update("species", species.uid, meta)
