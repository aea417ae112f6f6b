"""Adaptive multi-versioned species.

Several differently optimized clones of one species plus a compact
decision tree over cheap runtime features (dataset dimensions and tags,
hour of day, CPU count) make a statically compiled program adapt to its
context. This module labels measured runs by their best variant, trains
the dispatch tree, and emits both a machine-readable dispatch table and a
dependency-free C stub embedding the tree as nested conditionals.

Feature exposure contract: every feature can be overridden through the
environment as SH_FEATURE_<NAME>; hour_of_day and cpu_count also have
built-in extractors in the emitted stub.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import DegenerateData, UnextractableFeature
from .flagspace import ChoiceVector
from .measure import StateVector
from .predict import DecisionTreeModel, FeatureVector, predict, train_tree

BUILTIN_RUNTIME_FEATURES = ("hour_of_day", "cpu_count")

DEFAULT_TIE_TOLERANCE = 0.03


@dataclass(frozen=True)
class Variant:
    label: str
    choice: ChoiceVector
    artifact: str | None = None

    def to_doc(self) -> dict:
        return {
            "label": self.label,
            "choice": self.choice.to_doc() if self.choice else None,
            "artifact": self.artifact,
        }


@dataclass(frozen=True)
class VariantSet:
    species: str
    variants: tuple[Variant, ...]

    def __post_init__(self):
        if len(self.variants) < 2:
            raise DegenerateData("a variant set needs at least two clones")
        labels = [v.label for v in self.variants]
        if len(set(labels)) != len(labels):
            raise DegenerateData("variant labels must be unique")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(v.label for v in self.variants)


@dataclass(frozen=True)
class LabeledRun:
    features: dict[str, float]
    best_variant: str
    margin: float  # speedup of best over second best, >= 1
    ambiguous: bool = False


@dataclass
class DispatchArtifact:
    table: dict
    stub: str


def runtime_features(dataset_features: dict, state: StateVector) -> dict[str, float]:
    out = {k: float(v) for k, v in dataset_features.items()}
    ctx = state.wallclock_context
    if "hour_of_day" in ctx:
        out["hour_of_day"] = float(ctx["hour_of_day"])
    if "cpu_count" in ctx:
        out["cpu_count"] = float(ctx["cpu_count"])
    return out


def label_runs(
    variant_set: VariantSet,
    datasets: list[dict],
    states: list[StateVector],
    measure_fn,
    tolerance: float = DEFAULT_TIE_TOLERANCE,
) -> tuple[list[LabeledRun], list[dict]]:
    """Label every (dataset, state) pair by its fastest variant.

    ``measure_fn(variant, dataset_features, state)`` returns
    (exec_time_s, reliable). Pairs with any unreliable timing are skipped
    with a warning record. A best-vs-second gap inside ``tolerance`` is a
    tie: the first declared variant within tolerance of the minimum wins,
    margin 1.0, flagged ambiguous (later weighted 0 in training).
    """
    runs: list[LabeledRun] = []
    warnings: list[dict] = []
    for di, dataset in enumerate(datasets):
        for si, state in enumerate(states):
            times = {}
            reliable = True
            for variant in variant_set.variants:
                t, ok = measure_fn(variant, dataset, state)
                times[variant.label] = t
                reliable = reliable and ok
            feats = runtime_features(dataset, state)
            if not reliable:
                warnings.append({"dataset": di, "state": si, "reason": "unreliable"})
                continue
            ordered = sorted(times.values())
            best_t, second_t = ordered[0], ordered[1]
            if second_t / best_t < 1.0 + tolerance:
                label = next(
                    v.label
                    for v in variant_set.variants
                    if times[v.label] / best_t < 1.0 + tolerance
                )
                runs.append(
                    LabeledRun(features=feats, best_variant=label, margin=1.0, ambiguous=True)
                )
            else:
                label = min(times, key=lambda lb: (times[lb], lb))
                runs.append(
                    LabeledRun(
                        features=feats, best_variant=label, margin=second_t / best_t
                    )
                )
    return runs, warnings


def build_dispatch_tree(runs: list[LabeledRun], max_depth: int = 4) -> DecisionTreeModel:
    """Train the variant-selection tree; ambiguous runs carry zero weight."""
    usable = [r for r in runs if not r.ambiguous]
    if len(usable) < 2:
        raise DegenerateData("need at least two unambiguous labeled runs")
    features = [
        FeatureVector(species=f"run-{i}", static=dict(r.features), provenance="synthetic")
        for i, r in enumerate(usable)
    ]
    labels = [r.best_variant for r in usable]
    return train_tree(features, labels, max_depth=max_depth)


def evaluate_dispatch(model: DecisionTreeModel, rows) -> tuple[float, float]:
    """(fraction classified best, oracle-time / dispatched-time) over evaluation rows.

    Rows are (features, {label: exec_time}) pairs; a selection tied with
    the minimum counts as correct.
    """
    correct = 0
    t_selected = 0.0
    t_oracle = 0.0
    for feats, times in rows:
        sel = predict(model, feats)
        best = min(times.values())
        t_selected += times[sel]
        t_oracle += best
        if times[sel] <= best * (1 + 1e-12):
            correct += 1
    return correct / len(rows), t_oracle / t_selected


# ── dispatch table + stub emission ────────────────────────────────


def emit_dispatcher(
    variant_set: VariantSet,
    tree: DecisionTreeModel,
    declared_features: tuple[str, ...] = (),
) -> DispatchArtifact:
    """Emit the dispatch table document and the C source stub.

    Every feature the tree tests must be a built-in runtime extractor or a
    feature the species declares (exposed via the SH_FEATURE_* contract);
    anything else raises UnextractableFeature.
    """
    needed = sorted(tree.tested_features())
    available = set(BUILTIN_RUNTIME_FEATURES) | set(declared_features)
    missing = [f for f in needed if f not in available]
    if missing:
        raise UnextractableFeature(", ".join(missing))
    table = {
        "species": variant_set.species,
        "variants": [v.to_doc() for v in variant_set.variants],
        "tree": tree.root,
        "features_required": needed,
    }
    stub = _emit_stub(variant_set, tree, needed)
    return DispatchArtifact(table=table, stub=stub)


def tree_from_table(table: dict) -> DecisionTreeModel:
    """Reconstruct the tree a dispatch table embeds (emit/parse round-trip)."""
    root = table["tree"]
    features: set[str] = set()
    labels: set[str] = set()
    depth = [0]

    def walk(node, d):
        depth[0] = max(depth[0], d)
        if "label" in node:
            labels.add(node["label"])
            return
        features.add(node["feature"])
        walk(node["left"], d + 1)
        walk(node["right"], d + 1)

    walk(root, 0)
    return DecisionTreeModel(
        root=root,
        depth=depth[0],
        feature_names=tuple(sorted(features)),
        labels=tuple(sorted(labels)),
    )


def _c_ident(label: str) -> str:
    ident = re.sub(r"[^A-Za-z0-9_]", "_", label)
    if not ident or ident[0].isdigit():
        ident = "v_" + ident
    return ident


def _feature_fn(name: str) -> str:
    env = "SH_FEATURE_" + re.sub(r"[^A-Za-z0-9]", "_", name).upper()
    body = [f'    const char *s = getenv("{env}");', "    if (s) return atof(s);"]
    if name == "hour_of_day":
        body += [
            "    {",
            "        time_t t = time(0);",
            "        struct tm *lt = localtime(&t);",
            "        return lt ? (double)lt->tm_hour : 0.0;",
            "    }",
        ]
    elif name == "cpu_count":
        body += ["    return (double)sysconf(_SC_NPROCESSORS_ONLN);"]
    else:
        body += ["    return 0.0; /* exposed only via the environment */"]
    return "static double feat_{0}(void)\n{{\n{1}\n}}\n".format(
        _c_ident(name), "\n".join(body)
    )


def _emit_select(node: dict, indent: str) -> list[str]:
    if "label" in node:
        return [f'{indent}return "{node["label"]}";']
    lines = [
        f'{indent}if (feat_{_c_ident(node["feature"])}() < {node["threshold"]:.6f}) {{'
    ]
    lines += _emit_select(node["left"], indent + "    ")
    lines += [f"{indent}}} else {{"]
    lines += _emit_select(node["right"], indent + "    ")
    lines += [f"{indent}}}"]
    return lines


def _emit_stub(variant_set: VariantSet, tree: DecisionTreeModel, needed) -> str:
    lines = [
        f"/* Generated dispatcher for species {variant_set.species!r}.",
        " * Selects one precompiled clone per call from runtime features.",
        " * Plain C99 plus POSIX sysconf, no dependencies; link against the",
        " * variant objects (each clone built with -DKERNEL_ENTRY=variant_<label>).",
        " */",
        "#define _POSIX_C_SOURCE 200112L",
        "#include <stdio.h>",
        "#include <stdlib.h>",
        "#include <string.h>",
        "#include <time.h>",
        "#include <unistd.h>",
        "",
    ]
    for v in variant_set.variants:
        lines.append(f"int variant_{_c_ident(v.label)}(int argc, char **argv);")
    lines.append("")
    for name in needed:
        lines.append(_feature_fn(name))
    lines.append("static const char *select_variant(void)")
    lines.append("{")
    lines += _emit_select(tree.root, "    ")
    lines.append("}")
    lines.append("")
    lines.append("int main(int argc, char **argv)")
    lines.append("{")
    lines.append("    const char *label = select_variant();")
    lines.append('    if (getenv("SH_DISPATCH_TRACE")) {')
    lines.append('        fprintf(stderr, "dispatch=%s\\n", label);')
    lines.append("    }")
    for v in variant_set.variants:
        lines.append(f'    if (strcmp(label, "{v.label}") == 0) {{')
        lines.append(f"        return variant_{_c_ident(v.label)}(argc, argv);")
        lines.append("    }")
    lines.append("    return 70;")
    lines.append("}")
    return "\n".join(lines) + "\n"
