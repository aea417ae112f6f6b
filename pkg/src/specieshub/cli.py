"""Command-line entry point.

One executable, nine verbs: repo, tune, cluster, predict, dispatch,
serve, work, advise, report. Every verb accepts --repo (or the SH_REPO
environment variable) and --json for machine-parseable output. Exit codes:
0 success, 1 domain error, 2 usage error.

Verbs are idempotent at the repository level: re-running with identical
inputs and seeds updates in place instead of duplicating entries.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path

from . import cluster as cl
from . import dispatch as dp
from . import flagspace as fs
from . import measure as ms
from . import predict, service, tune
from .errors import NoFrontier, SpeciesHubError
from .repo import KINDS, REPO_ENV_VAR, Repo, resolve_cid


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    try:
        doc = args.func(args)
    except (SpeciesHubError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if doc is not None:
        if args.json:
            print(json.dumps(doc, indent=2, sort_keys=True))
        else:
            _print_human(doc)
    return 0


def _print_human(doc) -> None:
    if isinstance(doc, dict):
        for key, value in doc.items():
            print(f"{key}: {json.dumps(value) if isinstance(value, (dict, list)) else value}")
    else:
        print(doc)


def _open_repo(args) -> Repo:
    return Repo.open(args.repo)


def _parse_key(text: str, compiler: str) -> tune.TuneKey:
    cid = resolve_cid(text)
    return tune.TuneKey(cid.repo, cid.kind, cid.entry, compiler)


def _load_space(args) -> fs.FlagSpace:
    if getattr(args, "flagspace", None):
        path = Path(args.flagspace)
        if path.exists():
            return fs.load_flagspace(path)
        return fs.builtin_flagspace(args.flagspace)
    return fs.builtin_flagspace(args.compiler)


def _scenario(args) -> dict | None:
    if getattr(args, "scenario", None):
        return json.loads(Path(args.scenario).read_text())
    return None


def _kv_pairs(items) -> dict:
    out = {}
    for item in items or []:
        key, _, value = item.partition("=")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


# ── repo verb ─────────────────────────────────────────────────────


def cmd_repo_init(args):
    root = args.repo or os.environ.get(REPO_ENV_VAR)
    if root is None:
        raise SpeciesHubError(f"repo init needs --repo or ${REPO_ENV_VAR}")
    return {"initialized": str(Repo.init(root).root)}


def _upsert(repo: Repo, kind: str, alias: str, meta: dict):
    if repo.exists(kind, alias):
        existing = repo.load(kind, alias)
        if existing.meta != meta:
            repo.update(kind, alias, meta)
        return existing.id
    return repo.create(kind, meta, alias=alias)


def cmd_repo_add_species(args):
    repo = _open_repo(args)
    if args.meta_file:
        meta = json.loads(Path(args.meta_file).read_text())
    else:
        meta = {
            "build_template": args.build_template,
            "run_template": args.run_template,
            "validate": args.validate,
            "sources": [Path(s).name for s in args.source or []],
            "tags": args.tag or [],
            "reference_outputs": {},
        }
    if args.mock_scenario:
        meta["mock_scenario"] = json.loads(Path(args.mock_scenario).read_text())
    entry_id = _upsert(repo, "species", args.alias, meta)
    for src in args.source or []:
        repo.add_file("species", entry_id.uid, Path(src).name, Path(src).read_bytes())
    return {"kind": "species", "uid": entry_id.uid, "alias": args.alias}


def cmd_repo_add_dataset(args):
    repo = _open_repo(args)
    meta = {"features": _kv_pairs(args.feature), "tags": args.tag or []}
    if args.file:
        meta["file"] = Path(args.file).name
    entry_id = _upsert(repo, "dataset", args.alias, meta)
    if args.file:
        repo.add_file("dataset", entry_id.uid, Path(args.file).name, Path(args.file).read_bytes())
    return {"kind": "dataset", "uid": entry_id.uid, "alias": args.alias}


def cmd_repo_add_platform(args):
    repo = _open_repo(args)
    state = ms.capture_state(args.alias)
    meta = {"cpu_model": state.cpu_model, "frequency_policy": state.frequency_policy}
    entry_id = _upsert(repo, "platform", args.alias, meta)
    return {"kind": "platform", "uid": entry_id.uid, "alias": args.alias}


def cmd_repo_add_features(args):
    repo = _open_repo(args)
    doc = json.loads(Path(args.file).read_text())
    vector = predict.FeatureVector.from_doc(doc)  # validates
    species_uid = repo.load("species", vector.species).uid
    meta = vector.to_doc()
    meta["species"] = species_uid
    existing = repo.find("features", {"species": species_uid, "provenance": vector.provenance})
    if existing:
        repo.update("features", existing[0].uid, meta)
        return {"kind": "features", "uid": existing[0].uid}
    entry_id = repo.create("features", meta)
    return {"kind": "features", "uid": entry_id.uid}


def cmd_repo_import(args):
    """Import a corpus kernel directory: meta.json + sources + data/ + ref/."""
    repo = _open_repo(args)
    kdir = Path(args.dir)
    doc = json.loads((kdir / "meta.json").read_text())
    sdoc = doc["species"]
    meta = {
        "build_template": sdoc["build_template"],
        "run_template": sdoc["run_template"],
        "validate": sdoc.get("validate", "none"),
        "sources": doc.get("sources", []),
        "tags": sdoc.get("tags", []),
        "runtime_features": sdoc.get("runtime_features", []),
        "reference_outputs": {},
    }
    species_id = _upsert(repo, "species", sdoc["alias"], meta)
    for src in doc.get("sources", []):
        repo.add_file("species", species_id.uid, src, (kdir / src).read_bytes())
    datasets = []
    for ddoc in doc.get("datasets", []):
        dmeta = {
            "features": ddoc.get("features", {}),
            "tags": ddoc.get("tags", []),
            "file": Path(ddoc["file"]).name,
        }
        dataset_id = _upsert(repo, "dataset", ddoc["alias"], dmeta)
        repo.add_file(
            "dataset", dataset_id.uid, Path(ddoc["file"]).name, (kdir / ddoc["file"]).read_bytes()
        )
        if ddoc.get("ref"):
            ref_name = f"ref-{ddoc['alias']}.out"
            repo.add_file("species", species_id.uid, ref_name, (kdir / ddoc["ref"]).read_bytes())
            meta["reference_outputs"][dataset_id.uid] = ref_name
        datasets.append({"alias": ddoc["alias"], "uid": dataset_id.uid})
    repo.update("species", species_id.uid, meta)
    return {"species": {"alias": sdoc["alias"], "uid": species_id.uid}, "datasets": datasets}


def cmd_repo_show(args):
    repo = _open_repo(args)
    cid = resolve_cid(args.cid)
    entry = repo.load(cid.kind, cid.entry)
    return {"uid": entry.uid, "alias": entry.id.alias, "kind": entry.kind,
            "meta": entry.meta, "files": entry.files}


def cmd_repo_find(args):
    repo = _open_repo(args)
    entries = repo.find(args.kind, _kv_pairs(args.where) or None)
    return {"count": len(entries), "entries": [
        {"uid": e.uid, "alias": e.id.alias} for e in entries]}


# ── tune verb ─────────────────────────────────────────────────────


def _tune_context(args, repo: Repo) -> tune.TuneContext:
    space = _load_space(args)
    toolchain = ms.toolchain_for(args.compiler, _scenario(args))
    work = Path(args.work) if args.work else None
    return tune.TuneContext(repo=repo, space=space, toolchain=toolchain, work_root=work)


def cmd_tune(args):
    repo = _open_repo(args)
    ctx = _tune_context(args, repo)
    keys = [_parse_key(k, args.compiler) for k in args.key]
    config = tune.TuneConfig(
        repeats=args.repeats,
        density=args.density,
        budget=args.budget,
        seed=args.seed,
        reduce_tolerance=args.reduce_tolerance,
        run_timeout=args.run_timeout,
    )
    report = tune.campaign(ctx, keys, config)
    return report.to_doc()


# ── cluster verb ──────────────────────────────────────────────────


def _keys_for(repo: Repo, platform: str, compiler: str) -> list[tune.TuneKey]:
    keys = []
    for entry in repo.find("solution", {"platform": platform, "compiler": compiler}):
        meta = entry.meta
        if "species" in meta and "dataset" in meta:
            keys.append(tune.TuneKey(meta["species"], meta["dataset"], platform, compiler))
    return keys


def cmd_cluster(args):
    repo = _open_repo(args)
    ctx = _tune_context(args, repo) if args.evaluate else tune.TuneContext(
        repo=repo, space=_load_space(args), toolchain=None
    )
    config = tune.TuneConfig(repeats=args.repeats)
    keys = _keys_for(repo, args.platform, args.compiler)
    best = cl.collect_best_choices(ctx, keys, config)
    clusters = cl.build_clusters(best)
    if args.evaluate:
        clusters = cl.evaluate_clusters(ctx, keys, config, clusters, top_k=args.top_k)
    doc = {
        "clusters": [c.to_doc() for c in clusters],
        "safe_defaults": [c.canonical for c in cl.safe_default_candidates(clusters)],
        "representative_benchmark": cl.representative_benchmark(clusters) if clusters else [],
    }
    if args.report:
        Path(args.report).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


# ── predict verb ──────────────────────────────────────────────────


def _prediction_data(repo: Repo, args):
    ctx = tune.TuneContext(repo=repo, space=_load_space(args), toolchain=None)
    config = tune.TuneConfig()
    keys = _keys_for(repo, args.platform, args.compiler)
    labels_by_species = {
        uid: canonical for uid, canonical, _ in cl.collect_best_choices(ctx, keys, config)
    }
    features, labels = [], []
    for entry in repo.find("features"):
        vector = predict.FeatureVector.from_doc(entry.meta)
        label = labels_by_species.get(entry.meta["species"])
        if label is not None:
            features.append(vector)
            labels.append(label)
    if len(features) < 2:
        raise NoFrontier("need at least two labeled feature vectors; tune and cluster first")
    return features, labels


def cmd_predict(args):
    repo = _open_repo(args)
    features, labels = _prediction_data(repo, args)
    if args.action == "train":
        accuracy, misses = predict.loocv(
            features, labels, args.model_kind, max_depth=args.max_depth,
            seed=args.seed, repo=repo,
        )
        model = predict.train_tree(features, labels, max_depth=args.max_depth, seed=args.seed)
        sig = hashlib.sha256(
            json.dumps([model.to_doc(), args.platform, args.compiler], sort_keys=True).encode()
        ).hexdigest()
        meta = {
            "type": "cluster-model",
            "model": model.to_doc(),
            "platform": args.platform,
            "compiler": args.compiler,
            "model_kind": args.model_kind,
            "loocv_accuracy": accuracy,
            "signature": sig,
            "timestamp": time.time(),
        }
        existing = repo.find("model", {"signature": sig})
        if existing:
            uid = existing[0].uid
        else:
            uid = repo.create("model", meta).uid
        return {"model": uid, "loocv_accuracy": accuracy, "mispredictions": len(misses)}
    if args.action == "eval":
        accuracy, misses = predict.loocv(
            features, labels, args.model_kind, max_depth=args.max_depth, seed=args.seed
        )
        return {
            "loocv_accuracy": accuracy,
            "mispredictions": [m.to_doc() for m in misses],
        }
    if args.action == "ablate":
        deltas = predict.feature_ablation(
            features, labels, args.model_kind, max_depth=args.max_depth, seed=args.seed
        )
        return {"ablation": [[name, delta] for name, delta in deltas]}
    raise SpeciesHubError(f"unknown predict action {args.action!r}")


# ── dispatch verb ─────────────────────────────────────────────────


def cmd_dispatch(args):
    runs_doc = json.loads(Path(args.runs).read_text())
    runs = [
        dp.LabeledRun(
            features={k: float(v) for k, v in r["features"].items()},
            best_variant=r["best_variant"],
            margin=float(r.get("margin", 1.0)),
            ambiguous=bool(r.get("ambiguous", False)),
        )
        for r in runs_doc
    ]
    variants = []
    for spec_text in args.variant:
        label, _, choice_text = spec_text.partition("=")
        variants.append(dp.Variant(label=label, choice=fs.parse(choice_text)))
    variant_set = dp.VariantSet(species=args.species, variants=tuple(variants))
    tree = dp.build_dispatch_tree(runs, max_depth=args.max_depth)
    declared = list(args.feature or ())
    try:
        species_entry = _open_repo(args).load("species", args.species)
        declared += species_entry.meta.get("runtime_features", [])
    except SpeciesHubError:
        pass  # species need not live in a repository to emit a dispatcher
    artifact = dp.emit_dispatcher(variant_set, tree, declared_features=tuple(declared))
    Path(args.table).write_text(json.dumps(artifact.table, indent=2, sort_keys=True) + "\n")
    if args.stub:
        Path(args.stub).write_text(artifact.stub)
    return {
        "table": args.table,
        "stub": args.stub,
        "tree_depth": tree.depth,
        "features_required": artifact.table["features_required"],
    }


# ── serve / work verbs ────────────────────────────────────────────


def cmd_serve(args):
    repo = _open_repo(args)
    space = _load_space(args)
    coordinator = service.Coordinator(
        repo, space, tune.TuneConfig(repeats=args.repeats), lease_seconds=args.lease
    )
    for key_text in args.key:
        key = _parse_key(key_text, args.compiler)
        units = service.plan_units(
            repo, key, space, args.budget, args.seed, args.repeats, density=args.density,
        )
        coordinator.add_units(units)
    host, _, port = args.listen.partition(":")
    server = service.make_server(coordinator, host, int(port or 0))
    actual = f"{server.server_address[0]}:{server.server_address[1]}"
    print(json.dumps({"listening": actual, "units": len(coordinator.units)}), flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return None


def cmd_work(args):
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
    coordinator_url = args.coordinator or file_cfg.get("coordinator")
    if not coordinator_url:
        raise SpeciesHubError("worker needs --coordinator or a config file")
    capabilities = file_cfg.get("capabilities", {})
    if args.compilers:
        capabilities["compilers"] = args.compilers.split(",")
    work_dir = Path(args.work or file_cfg.get("work_dir") or "work")
    repo_root = args.repo or file_cfg.get("repo")
    config = service.WorkerConfig(
        coordinator_url=coordinator_url.rstrip("/"),
        capabilities=capabilities,
        work_dir=work_dir,
        repo_root=Path(repo_root),
        worker_id=args.worker_id,
        duplicate_submit=args.duplicate_submit,
        max_idle_polls=args.max_idle,
        mock_scenario=_scenario(args),
    )
    worker = service.Worker(config)
    return worker.run_loop(max_units=args.max_units)


# ── advise verb ───────────────────────────────────────────────────


def cmd_advise(args):
    features = json.loads(Path(args.features).read_text()) if args.features else None
    if args.coordinator:
        import urllib.parse
        import urllib.request

        query = {}
        if args.species:
            query["species"] = args.species
        if args.platform:
            query["platform"] = args.platform
        if features:
            query["features"] = json.dumps(features)
        url = args.coordinator.rstrip("/") + "/v1/advise?" + urllib.parse.urlencode(query)
        with urllib.request.urlopen(url, timeout=30) as resp:
            return json.loads(resp.read())
    repo = _open_repo(args)
    space = fs.builtin_flagspace("gcc")
    coordinator = service.Coordinator(repo, space)
    ranked = coordinator.advise(
        species=args.species,
        platform=args.platform,
        features=features,
        weights=_kv_pairs(args.weight) or None,
    )
    return {"advice": ranked}


# ── report verb ───────────────────────────────────────────────────

CSV_HEADER = ["choice", "exec_time_s", "compile_time_s", "binary_size_bytes", "failed"]


def cmd_report(args):
    repo = _open_repo(args)
    key = _parse_key(args.key, args.compiler)
    ctx = tune.TuneContext(repo=repo, space=None, toolchain=None)
    config = tune.TuneConfig()
    sol_id = tune.frontier_entry(ctx, key, config)
    frontier = tune.load_frontier(repo, sol_id.uid)
    names = frontier.spec.names
    rows = []
    for sol in sorted(frontier.solutions, key=lambda s: s.behavior[0]):
        values = dict(zip(names, sol.behavior))
        rows.append(
            {
                "choice": fs.render(sol.choice),
                "exec_time_s": values.get("exec_time_s"),
                "compile_time_s": values.get("compile_time_s"),
                "binary_size_bytes": values.get("binary_size_bytes"),
                "failed": int(values.get("failed", 0)),
                "canonical": sol.canonical,
            }
        )
    if args.json and not args.out:
        return {"format": args.format, "frontier": rows}
    if args.format == "json":
        out = json.dumps({"frontier": rows}, indent=2, sort_keys=True) + "\n"
    elif args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([row[h] for h in CSV_HEADER])
        out = buf.getvalue()
    elif args.format == "gnuplot":
        data = args.out or "frontier.csv"
        out = (
            "# gnuplot script: frontier exec time vs binary size\n"
            "set datafile separator ','\n"
            f"set xlabel 'binary_size_bytes'\nset ylabel 'exec_time_s'\n"
            f"plot '{data}' every ::1 using 4:2 with points title 'frontier'\n"
        )
    else:
        raise SpeciesHubError(f"unknown format {args.format!r}")
    if args.out:
        Path(args.out).write_text(out)
        return {"written": args.out, "solutions": len(rows)}
    sys.stdout.write(out)
    return None


# ── parser ────────────────────────────────────────────────────────


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sh", description="autotuning knowledge hub for computational species"
    )
    parser.add_argument("--repo", default=None, help="repository root (or $SH_REPO)")
    parser.add_argument("--json", action="store_true", help="machine-parseable output")
    sub = parser.add_subparsers(dest="verb")

    p_repo = sub.add_parser("repo", help="manage repository entries")
    repo_sub = p_repo.add_subparsers(dest="action", required=True)

    p = repo_sub.add_parser("init")
    p.set_defaults(func=cmd_repo_init)

    p = repo_sub.add_parser("add-species")
    p.add_argument("--alias", required=True)
    p.add_argument("--meta-file")
    p.add_argument("--build-template", default="cc -std=c99 -W {FLAGS} {SRC} -o {OUT}")
    p.add_argument("--run-template", default="{BIN} {DATASET} {OUT}")
    p.add_argument("--validate", default="none")
    p.add_argument("--source", action="append")
    p.add_argument("--tag", action="append")
    p.add_argument("--mock-scenario")
    p.set_defaults(func=cmd_repo_add_species)

    p = repo_sub.add_parser("add-dataset")
    p.add_argument("--alias", required=True)
    p.add_argument("--file")
    p.add_argument("--feature", action="append", metavar="K=V")
    p.add_argument("--tag", action="append")
    p.set_defaults(func=cmd_repo_add_dataset)

    p = repo_sub.add_parser("add-platform")
    p.add_argument("--alias", required=True)
    p.set_defaults(func=cmd_repo_add_platform)

    p = repo_sub.add_parser("add-features")
    p.add_argument("--file", required=True)
    p.set_defaults(func=cmd_repo_add_features)

    p = repo_sub.add_parser("import")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_repo_import)

    p = repo_sub.add_parser("show")
    p.add_argument("cid")
    p.set_defaults(func=cmd_repo_show)

    p = repo_sub.add_parser("find")
    p.add_argument("--kind", required=True, choices=KINDS)
    p.add_argument("--where", action="append", metavar="K=V")
    p.set_defaults(func=cmd_repo_find)

    p = sub.add_parser("tune", help="random-search campaign over keys")
    p.add_argument("--key", action="append", required=True, metavar="SPECIES:DATASET:PLATFORM")
    p.add_argument("--compiler", required=True)
    p.add_argument("--flagspace")
    p.add_argument("--budget", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--reduce-tolerance", type=float, default=0.02)
    p.add_argument("--run-timeout", type=float, default=ms.DEFAULT_RUN_TIMEOUT)
    p.add_argument("--work")
    p.add_argument("--scenario", help="mock toolchain scenario file")
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("cluster", help="group species by winning optimization")
    p.add_argument("--compiler", required=True)
    p.add_argument("--platform", required=True)
    p.add_argument("--flagspace")
    p.add_argument("--report")
    p.add_argument("--top-k", type=int, default=20)
    p.add_argument("--evaluate", action="store_true", help="cross-evaluate top clusters")
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--work")
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("predict", help="train/evaluate cluster prediction models")
    p.add_argument("action", choices=["train", "eval", "ablate"])
    p.add_argument("--compiler", required=True)
    p.add_argument("--platform", required=True)
    p.add_argument("--flagspace")
    p.add_argument("--model-kind", default="tree", choices=["tree", "knn"])
    p.add_argument("--max-depth", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("dispatch", help="build a multi-version dispatcher")
    p.add_argument("--species", required=True)
    p.add_argument("--runs", required=True, help="labeled runs JSON file")
    p.add_argument("--variant", action="append", required=True, metavar="LABEL=CHOICE")
    p.add_argument("--feature", action="append", help="declared runtime feature")
    p.add_argument("--max-depth", type=int, default=4)
    p.add_argument("--table", required=True, help="dispatch table output path")
    p.add_argument("--stub", help="C stub output path")
    p.set_defaults(func=cmd_dispatch)

    p = sub.add_parser("serve", help="run the crowd-tuning coordinator")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--key", action="append", required=True)
    p.add_argument("--compiler", required=True)
    p.add_argument("--flagspace")
    p.add_argument("--budget", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    p.add_argument("--density", type=float, default=0.5)
    p.add_argument("--lease", type=float, default=service.DEFAULT_LEASE_SECONDS)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("work", help="run a crowd worker against a coordinator")
    p.add_argument("--coordinator")
    p.add_argument("--config", help="worker config JSON {coordinator, capabilities, work_dir, repo}")
    p.add_argument("--worker-id", default="worker")
    p.add_argument("--compilers", help="comma-separated capability list")
    p.add_argument("--work")
    p.add_argument("--max-units", type=int)
    p.add_argument("--max-idle", type=int, default=5)
    p.add_argument("--duplicate-submit", action="store_true")
    p.add_argument("--scenario")
    p.set_defaults(func=cmd_work)

    p = sub.add_parser("advise", help="query winning optimizations")
    p.add_argument("--species")
    p.add_argument("--platform")
    p.add_argument("--features", help="feature JSON file for unseen species")
    p.add_argument("--weight", action="append", metavar="DIM=W")
    p.add_argument("--coordinator", help="query a remote coordinator instead")
    p.set_defaults(func=cmd_advise)

    p = sub.add_parser("report", help="emit frontier reports")
    p.add_argument("what", choices=["frontier"])
    p.add_argument("--key", required=True)
    p.add_argument("--compiler", required=True)
    p.add_argument("--format", default="csv", choices=["csv", "json", "gnuplot"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    return parser


if __name__ == "__main__":
    sys.exit(main())
