"""Crowd-tuning coordinator and worker client.

The coordinator pre-samples work units (key + choice) from a seed, leases
them to pulling workers whose capabilities match, and folds submitted
results into the per-key frontiers. Expected results (dominated, matching
current knowledge) are only counted; raw experiment records are persisted
for frontier changes and anomalies, which keeps the repository from
drowning in confirmations.

Transport is HTTP/1.1 with JSON bodies under /v1; workers never write the
knowledge repository directly.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
import time
import urllib.parse
import urllib.request
from dataclasses import dataclass, replace
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from . import flagspace as fs
from . import measure as ms
from . import pareto, predict
from .errors import MalformedSubmission, NoKnowledge, SpeciesHubError
from .repo import Repo
from .stats import DEFAULT_RELIABILITY_THRESHOLD
from .tune import TuneConfig, TuneContext, TuneKey, frontier_entry

DEFAULT_LEASE_SECONDS = 15 * 60
MAX_REQUEUES = 3

QUEUED = "queued"
LEASED = "leased"
DONE = "done"
PARKED = "parked"


def species_digest(repo: Repo, species_ref: str) -> str:
    """Digest over the species' payload files; pins what workers must build."""
    entry = repo.load("species", species_ref)
    edir = repo.entry_dir("species", entry.uid)
    h = hashlib.sha256()
    for name in sorted(entry.files):
        h.update(name.encode())
        h.update(b"\0")
        h.update((edir / name).read_bytes())
        h.update(b"\0")
    return h.hexdigest()


@dataclass
class WorkUnit:
    unit_id: str
    key: TuneKey
    choice: fs.ChoiceVector
    flags_expanded: str
    repeats: int
    deadline: float
    digest: str
    state: str = QUEUED
    worker: str | None = None
    requeues: int = 0

    def to_doc(self) -> dict:
        return {
            "unit_id": self.unit_id,
            "key": {
                "species": self.key.species,
                "dataset": self.key.dataset,
                "platform": self.key.platform,
                "compiler": self.key.compiler,
            },
            "choice": self.choice.to_doc(),
            "flags_expanded": self.flags_expanded,
            "repeats": self.repeats,
            "deadline": self.deadline,
            "digest": self.digest,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "WorkUnit":
        k = doc["key"]
        return cls(
            unit_id=doc["unit_id"],
            key=TuneKey(k["species"], k["dataset"], k["platform"], k["compiler"]),
            choice=fs.ChoiceVector.from_doc(doc["choice"]),
            flags_expanded=doc.get("flags_expanded", ""),
            repeats=int(doc["repeats"]),
            deadline=float(doc["deadline"]),
            digest=doc["digest"],
        )


def plan_units(
    repo: Repo,
    key: TuneKey,
    space: fs.FlagSpace,
    budget: int,
    seed: int,
    repeats: int,
    density: float = 0.5,
) -> list[WorkUnit]:
    """Deterministic unit plan for one key: same seed, same choices.

    Deadlines are assigned at lease time, not here."""
    rng = random.Random(seed)
    digest = species_digest(repo, key.species)
    species_uid = repo.load("species", key.species).uid
    dataset_uid = repo.load("dataset", key.dataset).uid
    resolved = TuneKey(species_uid, dataset_uid, key.platform, key.compiler)
    units = []
    for i in range(budget):
        choice = fs.sample(space, rng, density)
        units.append(
            WorkUnit(
                unit_id=f"u{seed:04x}-{i:06d}",
                key=resolved,
                choice=choice,
                flags_expanded=fs.render(choice, mode=fs.EXPANDED, space=space),
                repeats=repeats,
                deadline=0.0,  # set at lease time
                digest=digest,
            )
        )
    return units


class Coordinator:
    """Validates submissions and owns all knowledge-repository writes."""

    def __init__(
        self,
        repo: Repo,
        space: fs.FlagSpace,
        config: TuneConfig | None = None,
        lease_seconds: float = DEFAULT_LEASE_SECONDS,
        now_fn=time.time,
    ):
        self.repo = repo
        self.space = space
        self.config = config or TuneConfig()
        self.lease_seconds = lease_seconds
        self.now = now_fn
        self.units: dict[str, WorkUnit] = {}
        self.order: list[str] = []
        self.counters = {
            "pulled": 0,
            "accepted": 0,
            "rejected_duplicate": 0,
            "rejected_unknown": 0,
            "rejected_expired": 0,
            "rejected_digest": 0,
            "frontier_updates": 0,
            "summarized": 0,
            "anomalies": 0,
        }
        self.worker_anomalies: dict[str, int] = {}
        self._lock = threading.Lock()

    # ── queue ─────────────────────────────────────────────────────

    def add_units(self, units: list[WorkUnit]) -> None:
        with self._lock:
            for u in units:
                self.units[u.unit_id] = u
                self.order.append(u.unit_id)

    def pull_work(self, worker_id: str, capabilities: dict) -> WorkUnit | None:
        """First compatible queued (or lease-expired) unit, leased to the worker."""
        compilers = set(capabilities.get("compilers", []))
        now = self.now()
        with self._lock:
            for uid in self.order:
                unit = self.units[uid]
                if unit.key.compiler not in compilers:
                    continue
                if unit.state == QUEUED:
                    pass
                elif unit.state == LEASED and now > unit.deadline:
                    if unit.requeues >= MAX_REQUEUES:
                        unit.state = PARKED
                        continue
                    unit.requeues += 1
                else:
                    continue
                unit.state = LEASED
                unit.worker = worker_id
                unit.deadline = now + self.lease_seconds
                self.counters["pulled"] += 1
                return unit
        return None

    # ── submissions ───────────────────────────────────────────────

    def submit_result(self, sub: dict) -> dict:
        """Fold one worker result into the repository; at most once per unit."""
        for key in ("unit_id", "worker_id", "behavior", "state"):
            if key not in sub:
                raise MalformedSubmission(f"missing field {key!r}")
        unit_id = sub["unit_id"]
        worker_id = sub["worker_id"]
        now = self.now()
        with self._lock:
            unit = self.units.get(unit_id)
            if unit is None:
                self.counters["rejected_unknown"] += 1
                return {"verdict": "rejected", "reason": "unknown-unit"}
            if unit.state == DONE:
                self.counters["rejected_duplicate"] += 1
                return {"verdict": "rejected", "reason": "duplicate"}
            if unit.state == PARKED or (unit.state == LEASED and now > unit.deadline):
                self.counters["rejected_expired"] += 1
                return {"verdict": "rejected", "reason": "expired"}
            if sub.get("sources_digest") and sub["sources_digest"] != unit.digest:
                self.counters["rejected_digest"] += 1
                self._note_anomaly(worker_id)
                return {"verdict": "rejected", "reason": "digest-mismatch"}
            unit.state = DONE
            unit.worker = worker_id

        behavior = ms.BehaviorVector.from_doc(sub["behavior"])
        outcome = self._record(unit, sub, behavior)
        with self._lock:
            self.counters["accepted"] += 1
            self.counters[outcome] += 1
        return {"verdict": "accepted", "outcome": outcome}

    def _note_anomaly(self, worker_id: str) -> None:
        self.worker_anomalies[worker_id] = self.worker_anomalies.get(worker_id, 0) + 1

    def _record(self, unit: WorkUnit, sub: dict, behavior: ms.BehaviorVector) -> str:
        """Frontier changes and anomalies persist raw; the expected is counted."""
        key = unit.key
        sol_id = frontier_entry(
            TuneContext(self.repo, self.space, None), key, self.config
        )
        failed = behavior.failed or behavior.exec_time_s is None
        anomalous = failed or not behavior.reliable
        if anomalous:
            with self._lock:
                self._note_anomaly(sub["worker_id"])
            self._persist_experiment(unit, sub, behavior, anomaly=True)
            return "anomalies"

        point = []
        values = {
            "exec_time_s": behavior.exec_time_s,
            "binary_size_bytes": behavior.binary_size_bytes,
            "compile_time_s": behavior.compile_time_s,
            "max_rss_bytes": behavior.max_rss_bytes,
            "failed": behavior.failed,
        }
        for name in self.config.objective.names:
            v = values.get(name)
            if v is None:
                self._persist_experiment(unit, sub, behavior, anomaly=True)
                return "anomalies"
            point.append(float(v))

        expected = True
        with self.repo.mutate("solution", sol_id.uid) as meta:
            frontier = pareto.frontier_from_doc(
                meta["frontier"], choice_from_doc=fs.ChoiceVector.from_doc
            )
            candidate = pareto.FrontierSolution(
                choice=unit.choice, behavior=tuple(point), timestamp=self.now()
            )
            frontier, verdict = pareto.insert(frontier, candidate)
            if verdict == pareto.ACCEPTED:
                exp_id = self._persist_experiment(unit, sub, behavior)
                sols = tuple(
                    _with_experiment(s, exp_id.uid) if s.choice == unit.choice else s
                    for s in frontier.solutions
                )
                meta["frontier"] = pareto.frontier_to_doc(
                    pareto.Frontier(frontier.spec, sols), choice_doc=lambda c: c.to_doc()
                )
            else:
                expected = self._matches_prediction(frontier, unit.choice, behavior)
                meta["confirmations"] = meta.get("confirmations", 0) + (1 if expected else 0)

        if verdict == pareto.ACCEPTED:
            return "frontier_updates"
        if not expected:
            self._persist_experiment(unit, sub, behavior, anomaly=True)
            return "anomalies"
        return "summarized"

    def _matches_prediction(
        self, frontier: pareto.Frontier, choice: fs.ChoiceVector, behavior: ms.BehaviorVector
    ) -> bool:
        """A dominated result is expected unless a same-choice record disagrees
        beyond the reliability tolerance."""
        for sol in frontier.solutions:
            if sol.choice == choice or choice in sol.equivalents:
                predicted = sol.behavior[0]
                return (
                    abs(behavior.exec_time_s - predicted)
                    <= DEFAULT_RELIABILITY_THRESHOLD * predicted
                )
        return True

    def _persist_experiment(self, unit, sub, behavior, anomaly: bool = False):
        meta = {
            "species": unit.key.species,
            "dataset": unit.key.dataset,
            "platform": unit.key.platform,
            "compiler": unit.key.compiler,
            "choice": unit.choice.to_doc(),
            "behavior": behavior.to_doc(),
            "state": sub.get("state", {}),
            "worker": sub.get("worker_id"),
            "unit": unit.unit_id,
            "toolchain": sub.get("toolchain", ""),
            "anomaly": anomaly,
            "timestamp": self.now(),
        }
        return self.repo.create("experiment", meta)

    # ── advice ────────────────────────────────────────────────────

    def advise(
        self,
        species: str | None = None,
        platform: str | None = None,
        features: dict | None = None,
        weights: dict | None = None,
    ) -> list[dict]:
        """Ranked winning solutions for a species, or a model-predicted
        canonical choice for an unseen one described by features."""
        if species is not None:
            try:
                species_uid = self.repo.load("species", species).uid
            except Exception:
                species_uid = None
            if species_uid is not None:
                where = {"species": species_uid}
                if platform:
                    where["platform"] = platform
                ranked = []
                for entry in self.repo.find("solution", where):
                    frontier = pareto.frontier_from_doc(
                        entry.meta["frontier"], choice_from_doc=fs.ChoiceVector.from_doc
                    )
                    names = frontier.spec.names
                    w = weights or {"exec_time_s": 1.0}
                    for sol in frontier.solutions:
                        score = sum(
                            w.get(name, 0.0) * v for name, v in zip(names, sol.behavior)
                        )
                        ranked.append(
                            {
                                "score": score,
                                "choice": fs.render(sol.choice),
                                "canonical": sol.canonical,
                                "behavior": dict(zip(names, sol.behavior)),
                                "source": "frontier",
                            }
                        )
                if ranked:
                    ranked.sort(key=lambda r: r["score"])
                    return ranked
        if features:
            models = [
                e
                for e in self.repo.find("model", {"type": "cluster-model"})
                if platform is None or e.meta.get("platform") in (None, platform)
            ]
            if models:
                entry = max(models, key=lambda e: e.meta.get("timestamp", 0.0))
                model = predict.DecisionTreeModel.from_doc(entry.meta["model"])
                label = predict.predict(model, dict(features))
                return [
                    {
                        "canonical": label,
                        "source": "model",
                        "model": entry.uid,
                        "confidence": entry.meta.get("loocv_accuracy"),
                    }
                ]
        raise NoKnowledge("no frontier and no applicable model")

    def status(self) -> dict:
        with self._lock:
            states: dict[str, int] = {}
            for unit in self.units.values():
                states[unit.state] = states.get(unit.state, 0) + 1
            return {
                "units": len(self.units),
                "states": states,
                "counters": dict(self.counters),
                "worker_anomalies": dict(self.worker_anomalies),
            }


def _with_experiment(sol: pareto.FrontierSolution, exp_uid: str) -> pareto.FrontierSolution:
    return replace(sol, experiment=exp_uid)


# ── HTTP layer ────────────────────────────────────────────────────


class _Handler(BaseHTTPRequestHandler):
    coordinator: Coordinator  # injected by make_server

    def log_message(self, *args):  # quiet by default
        pass

    def _json(self, code: int, doc) -> None:
        body = json.dumps(doc).encode()
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length) if length else b"{}"
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise MalformedSubmission(str(exc)) from exc

    def do_POST(self):
        try:
            doc = self._body()
            if self.path == "/v1/work/pull":
                unit = self.coordinator.pull_work(
                    doc.get("worker_id", "anonymous"), doc.get("capabilities", {})
                )
                self._json(200, {"unit": unit.to_doc() if unit else None})
            elif self.path == "/v1/work/submit":
                self._json(200, self.coordinator.submit_result(doc))
            else:
                self._json(404, {"error": "unknown endpoint"})
        except MalformedSubmission as exc:
            self._json(400, {"error": str(exc)})
        except Exception as exc:  # defensive: a worker must never hang
            self._json(500, {"error": str(exc)})

    def do_GET(self):
        parsed = urllib.parse.urlparse(self.path)
        try:
            if parsed.path == "/v1/advise":
                q = urllib.parse.parse_qs(parsed.query)
                features = None
                if "features" in q:
                    features = json.loads(q["features"][0])
                try:
                    ranked = self.coordinator.advise(
                        species=q.get("species", [None])[0],
                        platform=q.get("platform", [None])[0],
                        features=features,
                    )
                    self._json(200, {"advice": ranked})
                except NoKnowledge as exc:
                    self._json(404, {"error": str(exc)})
            elif parsed.path == "/v1/status":
                self._json(200, self.coordinator.status())
            else:
                self._json(404, {"error": "unknown endpoint"})
        except Exception as exc:
            self._json(500, {"error": str(exc)})


def make_server(coordinator: Coordinator, host: str = "127.0.0.1", port: int = 0):
    handler = type("BoundHandler", (_Handler,), {"coordinator": coordinator})
    return ThreadingHTTPServer((host, port), handler)


# ── worker client ─────────────────────────────────────────────────


@dataclass
class WorkerConfig:
    coordinator_url: str
    capabilities: dict
    work_dir: Path
    repo_root: Path
    worker_id: str = "worker"
    poll_interval: float = 0.2
    max_idle_polls: int = 5
    duplicate_submit: bool = False  # test hook for at-most-once checks
    mock_scenario: dict | None = None


class Worker:
    """Pulls units, executes them locally, submits behavior vectors.

    Workers read species/dataset payloads from their local repository copy
    but never write knowledge entries; the coordinator owns those.
    """

    def __init__(self, config: WorkerConfig):
        self.config = config
        self.repo = Repo(config.repo_root)
        self.executed = 0

    def _post(self, path: str, doc: dict) -> dict:
        req = urllib.request.Request(
            self.config.coordinator_url + path,
            data=json.dumps(doc).encode(),
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=30) as resp:
                return json.loads(resp.read())
        except urllib.error.URLError as exc:
            raise SpeciesHubError(
                f"coordinator unreachable at {self.config.coordinator_url}: {exc}"
            ) from exc

    def pull(self) -> WorkUnit | None:
        doc = self._post(
            "/v1/work/pull",
            {"worker_id": self.config.worker_id, "capabilities": self.config.capabilities},
        )
        return WorkUnit.from_doc(doc["unit"]) if doc.get("unit") else None

    def execute(self, unit: WorkUnit) -> dict:
        species_entry = self.repo.load("species", unit.key.species)
        species = ms.SpeciesDescriptor.from_entry(species_entry)
        digest = species_digest(self.repo, unit.key.species)
        toolchain = ms.toolchain_for(unit.key.compiler, self.config.mock_scenario)
        workdir = Path(self.config.work_dir) / unit.unit_id
        workdir.mkdir(parents=True, exist_ok=True)
        dataset_entry = self.repo.load("dataset", unit.key.dataset)
        dataset_path = None
        if dataset_entry.meta.get("file"):
            dataset_path = self.repo.file_path(
                "dataset", dataset_entry.uid, dataset_entry.meta["file"]
            )
        sources_dir = self.repo.entry_dir("species", species.uid)
        for name in species.sources:
            dst = workdir / name
            dst.parent.mkdir(parents=True, exist_ok=True)
            dst.write_bytes((sources_dir / name).read_bytes())
        # the coordinator pre-rendered the expanded flag string
        build_result = toolchain.build(
            species, unit.choice, unit.flags_expanded, workdir
        )
        reference_path = None
        ref_name = species.reference_outputs.get(dataset_entry.uid) or (
            dataset_entry.id.alias and species.reference_outputs.get(dataset_entry.id.alias)
        )
        if ref_name:
            reference_path = self.repo.file_path("species", species.uid, ref_name)
        run_lock = None if isinstance(toolchain, ms.MockToolchain) else ms.host_run_lock()
        behavior = ms.run(
            species,
            build_result,
            (unit.key.dataset, dataset_entry.id.alias, dataset_entry.uid),
            dataset_path,
            unit.repeats,
            toolchain,
            workdir,
            reference_path=reference_path,
            run_lock=run_lock,
        )
        state = ms.capture_state(unit.key.platform)
        return {
            "unit_id": unit.unit_id,
            "worker_id": self.config.worker_id,
            "behavior": behavior.to_doc(),
            "state": state.to_doc(),
            "toolchain": toolchain.fingerprint,
            "sources_digest": digest,
        }

    def run_loop(self, max_units: int | None = None) -> dict:
        idle = 0
        outcomes = {"executed": 0, "accepted": 0, "rejected": 0}
        while True:
            if max_units is not None and outcomes["executed"] >= max_units:
                break
            unit = self.pull()
            if unit is None:
                idle += 1
                if idle > self.config.max_idle_polls:
                    break
                time.sleep(self.config.poll_interval)
                continue
            idle = 0
            sub = self.execute(unit)
            outcomes["executed"] += 1
            result = self._post("/v1/work/submit", sub)
            outcomes["accepted" if result["verdict"] == "accepted" else "rejected"] += 1
            if self.config.duplicate_submit:
                again = self._post("/v1/work/submit", sub)
                outcomes["accepted" if again["verdict"] == "accepted" else "rejected"] += 1
        return outcomes
