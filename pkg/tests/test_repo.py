import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specieshub.errors import DuplicateAlias, InvalidAlias, MalformedCid, UnknownEntry
from specieshub.repo import (
    Repo,
    canonical_json,
    is_uid,
    is_valid_alias,
    resolve_cid,
)


def test_resolve_cid_splits_three_segments():
    cid = resolve_cid("local:species:threshold-filter")
    assert (cid.repo, cid.kind, cid.entry) == ("local", "species", "threshold-filter")


def test_resolve_cid_two_segments_is_malformed():
    with pytest.raises(MalformedCid):
        resolve_cid("local:species")


def test_resolve_cid_rejects_empty_segment():
    with pytest.raises(MalformedCid):
        resolve_cid("local::species")
    with pytest.raises(MalformedCid):
        resolve_cid("")


def test_resolve_cid_uid_segment_is_recognized_as_uid():
    cid = resolve_cid("local:species:1a2b3c4d5e6f7a8b")
    assert is_uid(cid.entry)
    assert not is_valid_alias(cid.entry)


alias_segments = st.from_regex(r"[a-z0-9][a-z0-9._-]{0,20}", fullmatch=True).filter(
    lambda s: not is_uid(s)
)


@given(st.tuples(alias_segments, alias_segments, alias_segments))
def test_cid_round_trip(segments):
    text = ":".join(segments)
    assert resolve_cid(text).serialize() == text


def test_create_returns_hex_uid_and_alias(repo):
    entry_id = repo.create("species", {"name": "threshold"}, alias="threshold-filter")
    assert is_uid(entry_id.uid)
    assert entry_id.alias == "threshold-filter"
    assert repo.load("species", entry_id.uid).meta == {"name": "threshold"}
    assert repo.load("species", "threshold-filter").uid == entry_id.uid


def test_duplicate_alias_rejected(repo):
    repo.create("species", {}, alias="dup")
    with pytest.raises(DuplicateAlias):
        repo.create("species", {"other": 1}, alias="dup")


def test_alias_may_not_look_like_a_uid(repo):
    with pytest.raises(InvalidAlias):
        repo.create("species", {}, alias="1a2b3c4d5e6f7a8b")
    with pytest.raises(InvalidAlias):
        repo.create("species", {}, alias="Not-Valid")


def test_thousand_creations_yield_distinct_uids(repo):
    uids = {repo.create("experiment", {"i": i}).uid for i in range(1000)}
    assert len(uids) == 1000


def test_find_on_empty_store(repo):
    assert repo.find("solution") == []
    assert repo.find("solution", {"compiler": "gcc-4.6.3"}) == []


def test_find_matches_key_path_equality_in_uid_order(repo):
    a = repo.create("solution", {"compiler": "gcc-4.6.3", "n": 1})
    b = repo.create("solution", {"compiler": "llvm-3.4", "n": 2})
    c = repo.create("solution", {"compiler": "gcc-4.6.3", "n": 3})
    hits = repo.find("solution", {"compiler": "gcc-4.6.3"})
    assert [e.uid for e in hits] == sorted([a.uid, c.uid])
    assert len(repo.find("solution")) == 3
    assert b.uid in {e.uid for e in repo.find("solution")}


def test_find_supports_dotted_key_paths(repo):
    repo.create("experiment", {"state": {"platform": "x1"}})
    repo.create("experiment", {"state": {"platform": "x2"}})
    assert len(repo.find("experiment", {"state.platform": "x1"})) == 1


json_documents = st.recursive(
    st.one_of(
        st.text(max_size=12),
        st.integers(min_value=-(2**40), max_value=2**40),
        st.floats(allow_nan=False, allow_infinity=False, width=32),
        st.booleans(),
    ),
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(st.text(max_size=8), children, max_size=4),
    ),
    max_leaves=12,
)


@settings(max_examples=60, deadline=None)
@given(meta=st.dictionaries(st.text(max_size=8), json_documents, max_size=4))
def test_create_load_round_trip(tmp_path_factory, meta):
    repo = Repo.init(tmp_path_factory.mktemp("rt") / "repo")
    entry_id = repo.create("features", meta)
    assert repo.load("features", entry_id.uid).meta == meta


def test_update_last_writer_wins(repo):
    entry_id = repo.create("species", {"v": 1}, alias="sp")
    repo.update("species", "sp", {"v": 2})
    repo.update("species", entry_id.uid, {"v": 3})
    assert repo.load("species", "sp").meta == {"v": 3}


def test_no_partial_meta_visible_after_updates(repo):
    entry_id = repo.create("species", {"v": 0})
    for i in range(20):
        repo.update("species", entry_id.uid, {"v": i, "blob": "x" * 500})
    edir = repo.entry_dir("species", entry_id.uid)
    assert not [p for p in edir.iterdir() if p.name.startswith(".tmp-")]
    json.loads((edir / "meta.json").read_text())


def test_mutate_read_modify_write(repo):
    entry_id = repo.create("solution", {"count": 0})
    with repo.mutate("solution", entry_id.uid) as meta:
        meta["count"] += 1
    assert repo.load("solution", entry_id.uid).meta["count"] == 1


def test_payload_files(repo):
    entry_id = repo.create("species", {}, alias="k")
    repo.add_file("species", "k", "kernel.c", b"int main(){}")
    path = repo.file_path("species", entry_id.uid, "kernel.c")
    assert path.read_bytes() == b"int main(){}"
    assert repo.load("species", "k").files == ["kernel.c"]


def test_payload_path_traversal_rejected(repo):
    repo.create("species", {}, alias="k")
    from specieshub.errors import StorageFailure

    with pytest.raises(StorageFailure):
        repo.add_file("species", "k", "../escape", b"x")


def test_unknown_entry(repo):
    with pytest.raises(UnknownEntry):
        repo.load("species", "missing-alias")
    with pytest.raises(UnknownEntry):
        repo.load("species", "0123456789abcdef")


def test_canonical_json_is_sorted_and_indented():
    text = canonical_json({"b": 1, "a": [1, 2]})
    assert text == '{\n  "a": [\n    1,\n    2\n  ],\n  "b": 1\n}\n'


def test_resolve_against_store(repo):
    entry_id = repo.create("species", {"x": 1}, alias="thresh")
    assert repo.resolve("local:species:thresh").uid == entry_id.uid
