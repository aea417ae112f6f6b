"""Filesystem-backed repository of addressable entries.

Every tracked object (species, dataset, platform, experiment, solution,
cluster, model, features) lives under ``<root>/<kind>/<uid>/`` as a
canonical ``meta.json`` plus optional payload files. Entries are addressed
by a 16-hex uid or a human alias, and globally by a three-segment CID
``repo:kind:entry``.

Writers serialize per entry via advisory file locks and publish meta
updates with write-to-temp + atomic rename, so concurrent processes on one
host never observe a half-written document.
"""

from __future__ import annotations

import fcntl
import json
import os
import random
import re
import secrets
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    DuplicateAlias,
    InvalidAlias,
    MalformedCid,
    StorageFailure,
    UnknownEntry,
)

KINDS = (
    "species",
    "dataset",
    "platform",
    "experiment",
    "solution",
    "cluster",
    "model",
    "features",
)

_UID_RE = re.compile(r"[0-9a-f]{16}")
_ALIAS_RE = re.compile(r"[a-z0-9][a-z0-9._-]*")

REPO_ENV_VAR = "SH_REPO"


def is_uid(text: str) -> bool:
    return bool(_UID_RE.fullmatch(text))


def is_valid_alias(text: str) -> bool:
    # An alias must never be mistakable for a uid.
    return bool(_ALIAS_RE.fullmatch(text)) and not is_uid(text)


@dataclass(frozen=True)
class EntryId:
    uid: str
    alias: str | None = None

    def __post_init__(self):
        if not is_uid(self.uid):
            raise InvalidAlias(f"uid {self.uid!r} is not 16 lowercase hex chars")
        if self.alias is not None and not is_valid_alias(self.alias):
            raise InvalidAlias(f"alias {self.alias!r} violates the alias grammar")


@dataclass(frozen=True)
class Cid:
    """Three-segment collective identifier: repo:kind:entry."""

    repo: str
    kind: str
    entry: str

    def serialize(self) -> str:
        return f"{self.repo}:{self.kind}:{self.entry}"


def resolve_cid(text: str) -> Cid:
    """Split a CID string into its three segments.

    Pure parsing: no store access. Each segment may be a uid or an alias;
    resolution against a store happens later.
    """
    if not text:
        raise MalformedCid("empty CID")
    parts = text.split(":")
    if len(parts) != 3 or any(not p for p in parts):
        raise MalformedCid(f"CID must have exactly 3 non-empty segments: {text!r}")
    return Cid(*parts)


@dataclass
class Entry:
    id: EntryId
    kind: str
    meta: dict
    files: list[str] = field(default_factory=list)

    @property
    def uid(self) -> str:
        return self.id.uid


def canonical_json(doc) -> str:
    """Canonical serialized form: sorted keys, 2-space indent, UTF-8, final newline."""
    return json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise StorageFailure(str(exc)) from exc


@contextmanager
def _locked(lock_path: Path):
    lock_path.parent.mkdir(parents=True, exist_ok=True)
    with open(lock_path, "w") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


class Repo:
    """One repository root on the local filesystem."""

    def __init__(self, root: Path | str, uid_rng: random.Random | None = None):
        self.root = Path(root)
        if not (self.root / ".shrepo").exists():
            raise UnknownEntry(f"{self.root} is not an initialized repository")
        self._uid_rng = uid_rng

    @classmethod
    def init(cls, root: Path | str, uid_rng: random.Random | None = None) -> "Repo":
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        marker = root / ".shrepo"
        if not marker.exists():
            _atomic_write(marker, canonical_json({"format": 1}))
        for kind in KINDS:
            (root / kind).mkdir(exist_ok=True)
        return cls(root, uid_rng=uid_rng)

    @classmethod
    def open(cls, root: Path | str | None = None) -> "Repo":
        if root is None:
            root = os.environ.get(REPO_ENV_VAR)
        if root is None:
            raise UnknownEntry(f"no repository given (flag --repo or ${REPO_ENV_VAR})")
        return cls(root)

    # ── identity ──────────────────────────────────────────────────

    def _fresh_uid(self, kind: str) -> str:
        for _ in range(64):
            if self._uid_rng is not None:
                uid = "".join(self._uid_rng.choice("0123456789abcdef") for _ in range(16))
            else:
                uid = secrets.token_hex(8)
            if not (self.root / kind / uid).exists():
                return uid
        raise StorageFailure("could not draw a fresh uid")

    def _kind_dir(self, kind: str) -> Path:
        if kind not in KINDS:
            raise UnknownEntry(f"unknown entry kind {kind!r}")
        return self.root / kind

    def _alias_index(self, kind: str) -> dict:
        path = self._kind_dir(kind) / ".alias"
        if not path.exists():
            return {}
        return json.loads(path.read_text(encoding="utf-8"))

    # ── core operations ───────────────────────────────────────────

    def create(self, kind: str, meta: dict, alias: str | None = None) -> EntryId:
        """Persist a new entry; returns its identity.

        The uid is drawn fresh; the alias (when given) must satisfy the
        alias grammar and be unused within (repo, kind).
        """
        kdir = self._kind_dir(kind)
        if alias is not None and not is_valid_alias(alias):
            raise InvalidAlias(f"alias {alias!r} violates the alias grammar")
        with _locked(kdir / ".alias.lock"):
            index = self._alias_index(kind)
            if alias is not None and alias in index:
                raise DuplicateAlias(f"{kind} alias {alias!r} already taken")
            uid = self._fresh_uid(kind)
            edir = kdir / uid
            try:
                edir.mkdir()
            except OSError as exc:
                raise StorageFailure(str(exc)) from exc
            entry_id = EntryId(uid=uid, alias=alias)
            self._write_meta(kind, uid, meta, alias)
            if alias is not None:
                index[alias] = uid
                _atomic_write(kdir / ".alias", canonical_json(index))
        return entry_id

    def _write_meta(self, kind: str, uid: str, meta: dict, alias: str | None) -> None:
        doc = {"alias": alias, "kind": kind, "meta": meta, "uid": uid}
        _atomic_write(self.root / kind / uid / "meta.json", canonical_json(doc))

    def load(self, kind: str, ref: str) -> Entry:
        """Load an entry by uid or alias."""
        uid = self._resolve_ref(kind, ref)
        edir = self._kind_dir(kind) / uid
        meta_path = edir / "meta.json"
        if not meta_path.exists():
            raise UnknownEntry(f"{kind}:{ref} not found")
        doc = json.loads(meta_path.read_text(encoding="utf-8"))
        files = sorted(
            p.name
            for p in edir.iterdir()
            if p.is_file() and p.name not in ("meta.json", ".lock") and not p.name.startswith(".tmp-")
        )
        return Entry(
            id=EntryId(uid=doc["uid"], alias=doc.get("alias")),
            kind=kind,
            meta=doc["meta"],
            files=files,
        )

    def _resolve_ref(self, kind: str, ref: str) -> str:
        if is_uid(ref):
            return ref
        uid = self._alias_index(kind).get(ref)
        if uid is None:
            raise UnknownEntry(f"{kind}:{ref} not found")
        return uid

    def exists(self, kind: str, ref: str) -> bool:
        try:
            self.load(kind, ref)
            return True
        except UnknownEntry:
            return False

    def update(self, kind: str, ref: str, meta: dict) -> None:
        """Replace an entry's meta document (atomic, last writer wins)."""
        uid = self._resolve_ref(kind, ref)
        edir = self._kind_dir(kind) / uid
        if not (edir / "meta.json").exists():
            raise UnknownEntry(f"{kind}:{ref} not found")
        with _locked(edir / ".lock"):
            doc = json.loads((edir / "meta.json").read_text(encoding="utf-8"))
            self._write_meta(kind, uid, meta, doc.get("alias"))

    @contextmanager
    def mutate(self, kind: str, ref: str):
        """Read-modify-write an entry's meta under its writer lock.

        Yields the current meta dict; the (possibly mutated) dict is
        persisted on clean exit. This is the cross-process serialization
        point for frontier updates.
        """
        uid = self._resolve_ref(kind, ref)
        edir = self._kind_dir(kind) / uid
        with _locked(edir / ".lock"):
            doc = json.loads((edir / "meta.json").read_text(encoding="utf-8"))
            meta = doc["meta"]
            yield meta
            self._write_meta(kind, uid, meta, doc.get("alias"))

    def find(self, kind: str, where: dict | None = None) -> list[Entry]:
        """All entries of a kind whose meta matches every key-path equality.

        Key paths use dots (``state.platform``). Stable order by uid.
        Richer queries are the caller's job.
        """
        out = []
        kdir = self._kind_dir(kind)
        for edir in sorted(kdir.iterdir()):
            if not edir.is_dir() or not is_uid(edir.name):
                continue
            try:
                entry = self.load(kind, edir.name)
            except UnknownEntry:
                continue  # mid-creation: directory claimed, meta not yet published
            if where is None or all(
                _key_path(entry.meta, path) == value for path, value in where.items()
            ):
                out.append(entry)
        return out

    # ── payload files ─────────────────────────────────────────────

    def add_file(self, kind: str, ref: str, name: str, data: bytes) -> Path:
        """Attach a payload file beside the entry's meta."""
        _check_relative(name)
        uid = self._resolve_ref(kind, ref)
        path = self._kind_dir(kind) / uid / name
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=str(path.parent), prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except OSError as exc:
            raise StorageFailure(str(exc)) from exc
        return path

    def file_path(self, kind: str, ref: str, name: str) -> Path:
        _check_relative(name)
        uid = self._resolve_ref(kind, ref)
        path = self._kind_dir(kind) / uid / name
        if not path.exists():
            raise UnknownEntry(f"{kind}:{ref} has no payload file {name!r}")
        return path

    def entry_dir(self, kind: str, ref: str) -> Path:
        return self._kind_dir(kind) / self._resolve_ref(kind, ref)

    # ── CID resolution against this store ─────────────────────────

    def resolve(self, cid: Cid | str) -> Entry:
        if isinstance(cid, str):
            cid = resolve_cid(cid)
        return self.load(cid.kind, cid.entry)


def _key_path(meta, path: str):
    node = meta
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def _check_relative(name: str) -> None:
    p = Path(name)
    if p.is_absolute() or ".." in p.parts:
        raise StorageFailure(f"payload path {name!r} must be relative without '..'")
