"""Feature vectors and optimization-cluster prediction.

Models are deliberately small and readable: an axis-aligned decision tree
grown with greedy Gini splits, and a k-nearest-neighbour fallback. Both
operate on sparse name->value feature maps (absent treated as 0 during
training). Leave-one-out cross-validation reports accuracy and logs every
misprediction, because the misses are where the next missing feature
hides.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
import time
from dataclasses import dataclass, field

from .counters import COUNTER_NAMES
from .errors import DegenerateData, MissingFeature
from .repo import Repo

PROVENANCES = ("imported", "extracted", "synthetic")

_FT_NAME = re.compile(r"ft[0-9]+")


@dataclass(frozen=True)
class FeatureVector:
    species: str
    static: dict[str, float] = field(default_factory=dict)
    dynamic: dict[str, float] = field(default_factory=dict)
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise DegenerateData(f"unknown provenance {self.provenance!r}")
        for name, value in {**self.static, **self.dynamic}.items():
            if math.isnan(value):
                raise DegenerateData(f"feature {name!r} is NaN")
        for name in self.static:
            if name.startswith("ft") and not _FT_NAME.fullmatch(name):
                raise DegenerateData(f"bad MILEPOST-style name {name!r}")
        unknown = set(self.dynamic) - set(COUNTER_NAMES)
        if unknown:
            raise DegenerateData(f"unknown counters {sorted(unknown)}")

    def values(self) -> dict[str, float]:
        return {**self.static, **self.dynamic}

    def to_doc(self) -> dict:
        return {
            "species": self.species,
            "static": dict(self.static),
            "dynamic": dict(self.dynamic),
            "provenance": self.provenance,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "FeatureVector":
        return cls(
            species=doc["species"],
            static={k: float(v) for k, v in doc.get("static", {}).items()},
            dynamic={k: float(v) for k, v in doc.get("dynamic", {}).items()},
            provenance=doc.get("provenance", "imported"),
        )


@dataclass(frozen=True)
class DecisionTreeModel:
    root: dict
    depth: int
    feature_names: tuple[str, ...]
    labels: tuple[str, ...]
    seed: int = 0
    impurity: str = "gini"

    def to_doc(self) -> dict:
        return {
            "kind": "tree",
            "root": self.root,
            "depth": self.depth,
            "features": list(self.feature_names),
            "labels": list(self.labels),
            "trained": {"seed": self.seed, "impurity": self.impurity},
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "DecisionTreeModel":
        return cls(
            root=doc["root"],
            depth=int(doc["depth"]),
            feature_names=tuple(doc.get("features", [])),
            labels=tuple(doc.get("labels", [])),
            seed=int(doc.get("trained", {}).get("seed", 0)),
            impurity=doc.get("trained", {}).get("impurity", "gini"),
        )

    def tested_features(self) -> set[str]:
        out: set[str] = set()

        def walk(node):
            if "label" in node:
                return
            out.add(node["feature"])
            walk(node["left"])
            walk(node["right"])

        walk(self.root)
        return out


@dataclass(frozen=True)
class MispredictionRecord:
    species: str
    predicted: str
    actual: str
    features: dict[str, float]
    timestamp: float

    def signature(self) -> str:
        blob = json.dumps(
            [self.species, self.predicted, self.actual, sorted(self.features.items())]
        )
        return hashlib.sha256(blob.encode()).hexdigest()

    def to_doc(self) -> dict:
        return {
            "type": "misprediction",
            "species": self.species,
            "predicted": self.predicted,
            "actual": self.actual,
            "features": dict(self.features),
            "timestamp": self.timestamp,
            "signature": self.signature(),
        }


def _check_training_set(features, labels):
    if len(features) != len(labels):
        raise DegenerateData("features and labels differ in length")
    if not features:
        raise DegenerateData("empty training set")
    provs = {f.provenance for f in features}
    if "imported" in provs and "extracted" in provs:
        raise DegenerateData("imported and extracted feature vectors never share a model")


def _gini(labels) -> float:
    n = len(labels)
    if n == 0:
        return 0.0
    counts: dict[str, int] = {}
    for lb in labels:
        counts[lb] = counts.get(lb, 0) + 1
    return 1.0 - sum((c / n) ** 2 for c in counts.values())


def _majority(labels) -> str:
    counts: dict[str, int] = {}
    for lb in labels:
        counts[lb] = counts.get(lb, 0) + 1
    top = max(counts.values())
    return min(lb for lb, c in counts.items() if c == top)


def train_tree(
    features: list[FeatureVector],
    labels: list[str],
    max_depth: int = 6,
    seed: int = 0,
) -> DecisionTreeModel:
    """Grow a CART-style tree with greedy Gini splits.

    Deterministic: candidate splits are midpoints between consecutive
    distinct values, features scanned in name order, and only a strictly
    better gain replaces the incumbent (so ties keep the lowest feature
    name, then the lowest threshold). All-identical labels yield a single
    leaf. ``x[feature] < threshold`` descends left.
    """
    _check_training_set(features, labels)
    names = sorted({n for f in features for n in f.values()})
    rows = [{n: f.values().get(n, 0.0) for n in names} for f in features]

    depth_seen = 0

    def grow(idxs, depth):
        nonlocal depth_seen
        depth_seen = max(depth_seen, depth)
        ys = [labels[i] for i in idxs]
        if len(set(ys)) == 1 or depth >= max_depth:
            return {"label": _majority(ys)}
        parent = _gini(ys)
        best = None  # (gain, feature, threshold, left_idxs, right_idxs)
        for name in names:
            values = sorted({rows[i][name] for i in idxs})
            for lo, hi in zip(values, values[1:]):
                threshold = (lo + hi) / 2.0
                left = [i for i in idxs if rows[i][name] < threshold]
                right = [i for i in idxs if rows[i][name] >= threshold]
                if not left or not right:
                    continue
                child = (
                    len(left) * _gini([labels[i] for i in left])
                    + len(right) * _gini([labels[i] for i in right])
                ) / len(idxs)
                gain = parent - child
                if gain > 1e-12 and (best is None or gain > best[0] + 1e-12):
                    best = (gain, name, threshold, left, right)
        if best is None:
            return {"label": _majority(ys)}
        _, name, threshold, left, right = best
        return {
            "feature": name,
            "threshold": threshold,
            "left": grow(left, depth + 1),
            "right": grow(right, depth + 1),
        }

    root = grow(list(range(len(rows))), 0)
    return DecisionTreeModel(
        root=root,
        depth=depth_seen,
        feature_names=tuple(names),
        labels=tuple(sorted(set(labels))),
        seed=seed,
    )


def predict(model: DecisionTreeModel, f: FeatureVector | dict) -> str:
    """Root-to-leaf descent; strictly-less goes left, the boundary goes right."""
    values = f.values() if isinstance(f, FeatureVector) else f
    node = model.root
    while "label" not in node:
        name = node["feature"]
        if name not in values:
            raise MissingFeature(name)
        node = node["left"] if values[name] < node["threshold"] else node["right"]
    return node["label"]


def knn_predict(
    features: list[FeatureVector],
    labels: list[str],
    f: FeatureVector | dict,
    k: int = 1,
) -> str:
    """Majority label among the k nearest by Euclidean distance (absent = 0).

    Ties: smaller total distance first, then the lexicographically smaller
    label.
    """
    _check_training_set(features, labels)
    query = f.values() if isinstance(f, FeatureVector) else f
    names = sorted({n for fv in features for n in fv.values()} | set(query))
    q = [query.get(n, 0.0) for n in names]
    scored = []
    for i, fv in enumerate(features):
        vals = fv.values()
        d = math.sqrt(sum((vals.get(n, 0.0) - x) ** 2 for n, x in zip(names, q)))
        scored.append((d, labels[i], i))
    scored.sort(key=lambda t: (t[0], t[1], t[2]))
    nearest = scored[: max(1, k)]
    tally: dict[str, tuple[int, float]] = {}
    for d, lb, _ in nearest:
        count, dist = tally.get(lb, (0, 0.0))
        tally[lb] = (count + 1, dist + d)
    return min(tally, key=lambda lb: (-tally[lb][0], tally[lb][1], lb))


def loocv(
    features: list[FeatureVector],
    labels: list[str],
    model_kind: str = "tree",
    max_depth: int = 6,
    seed: int = 0,
    k: int = 1,
    repo: Repo | None = None,
):
    """Leave-one-out cross-validation; every miss is logged.

    Returns (accuracy, mispredictions).
    """
    _check_training_set(features, labels)
    if len(features) < 2:
        raise DegenerateData("cross-validation needs at least 2 samples")
    names = sorted({n for f in features for n in f.values()})
    correct = 0
    misses: list[MispredictionRecord] = []
    for i in range(len(features)):
        train_f = features[:i] + features[i + 1 :]
        train_y = labels[:i] + labels[i + 1 :]
        held = {n: features[i].values().get(n, 0.0) for n in names}
        if model_kind == "tree":
            model = train_tree(train_f, train_y, max_depth=max_depth, seed=seed)
            got = predict(model, held)
        elif model_kind == "knn":
            got = knn_predict(train_f, train_y, held, k=k)
        else:
            raise DegenerateData(f"unknown model kind {model_kind!r}")
        if got == labels[i]:
            correct += 1
        else:
            misses.append(
                MispredictionRecord(
                    species=features[i].species,
                    predicted=got,
                    actual=labels[i],
                    features=held,
                    timestamp=time.time(),
                )
            )
    if repo is not None:
        for record in misses:
            # same miss re-observed on a later run is not a new record
            if not repo.find("model", {"signature": record.signature()}):
                repo.create("model", record.to_doc())
    return correct / len(features), misses


def feature_ablation(
    features: list[FeatureVector],
    labels: list[str],
    model_kind: str = "tree",
    max_depth: int = 6,
    seed: int = 0,
    k: int = 1,
) -> list[tuple[str, float]]:
    """One-at-a-time feature removal; delta = accuracy lost without the feature.

    The most informative feature tops the list; redundant duplicates score
    near zero because their twin covers for them.
    """
    base, _ = loocv(features, labels, model_kind, max_depth=max_depth, seed=seed, k=k)
    names = sorted({n for f in features for n in f.values()})
    deltas = []
    for name in names:
        stripped = [
            FeatureVector(
                species=f.species,
                static={n: v for n, v in f.static.items() if n != name},
                dynamic={n: v for n, v in f.dynamic.items() if n != name},
                provenance=f.provenance,
            )
            for f in features
        ]
        acc, _ = loocv(stripped, labels, model_kind, max_depth=max_depth, seed=seed, k=k)
        deltas.append((name, base - acc))
    deltas.sort(key=lambda t: (-t[1], t[0]))
    return deltas


def features_from_counters(
    species: str, counters: dict[str, int], provenance: str = "extracted"
) -> FeatureVector:
    """Dynamic feature vector from raw hardware counters.

    Counters are normalized per retired instruction for cross-dataset
    comparability; the raw values belong in the experiment record, not here.
    """
    from .measure import normalized_counters

    return FeatureVector(
        species=species, dynamic=normalized_counters(counters), provenance=provenance
    )


# ── crude static fallback extractor ───────────────────────────────

_CALL_RE = re.compile(r"\b([A-Za-z_][A-Za-z0-9_]*)\s*\(")
_KEYWORDS = {
    "if", "for", "while", "do", "switch", "return", "sizeof", "case",
    "else", "int", "char", "double", "float", "void", "long", "short",
}


def extract_source_features(text: str) -> dict[str, float]:
    """Source-level counters used when no imported vector exists.

    Deliberately crude (line/loop/branch/call/subscript counts); tagged
    'extracted' so they are never mixed with imported MILEPOST vectors.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    loop_keywords = len(re.findall(r"\b(for|while|do)\b", text))
    branches = len(re.findall(r"\b(if|else|switch|case)\b", text)) + text.count("?")
    calls = sum(1 for m in _CALL_RE.finditer(text) if m.group(1) not in _KEYWORDS)
    return {
        "src_lines": float(len(lines)),
        "loop_keywords": float(loop_keywords),
        "branch_count": float(branches),
        "call_count": float(calls),
        "array_subscripts": float(text.count("[")),
    }
