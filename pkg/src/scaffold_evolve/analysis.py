"""Post-hoc metrics over evolution trees: sibling diff distance, layer activation, L_D composition."""

from __future__ import annotations

import itertools
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .errors import AmbiguousLayer, EmptyTree, MalformedPath
from .persist import RunRecord
from .scaffold import DEFAULT_LAYER_MAP, PHASE_ORDER, LayerId, LayerMap, attribute_layer

DEFAULT_MAX_FEATURES = 80_000

_TOKEN_RE = re.compile(r"(?<![A-Za-z0-9_])[A-Za-z_][A-Za-z0-9_]*")
_META_PREFIXES = ("@@", "diff ", "index ", "new file mode", "deleted file mode", "\\ No newline")


def _content_lines(diff: str) -> Iterable[str]:
    lines = diff.split("\n")
    for i, line in enumerate(lines):
        if line.startswith(_META_PREFIXES):
            continue
        if line.startswith("--- ") and i + 1 < len(lines) and lines[i + 1].startswith("+++ "):
            continue
        if line.startswith("+++ ") and i > 0 and lines[i - 1].startswith("--- "):
            continue
        yield line


def tokenize_identifiers(diff: str) -> list[str]:
    """Maximal identifier runs not starting with a digit; file headers and hunk markers are skipped."""
    return [tok for line in _content_lines(diff) for tok in _TOKEN_RE.findall(line)]


TokenVector = dict[str, float]


@dataclass(frozen=True)
class TfidfModel:
    """Sublinear-tf, smoothed-idf weighting with L2-normalised vectors."""

    idf: Mapping[str, float]

    @classmethod
    def fit(cls, corpus: Sequence[str], max_features: int = DEFAULT_MAX_FEATURES) -> "TfidfModel":
        if not corpus:
            raise ValueError("corpus must contain at least one document")
        df: Counter[str] = Counter()
        for doc in corpus:
            df.update(set(tokenize_identifiers(doc)))
        kept = sorted(df, key=lambda t: (-df[t], t))[:max_features]
        n = len(corpus)
        return cls({t: math.log((1 + n) / (1 + df[t])) + 1.0 for t in kept})

    def vector(self, doc: str) -> TokenVector:
        counts = Counter(t for t in tokenize_identifiers(doc) if t in self.idf)
        weights = {t: (1.0 + math.log(c)) * self.idf[t] for t, c in counts.items()}
        norm = math.sqrt(sum(w * w for w in weights.values()))
        return {t: w / norm for t, w in weights.items()} if norm > 0 else {}


def cosine_distance(a: TokenVector, b: TokenVector) -> float:
    """1 - cosine of unit vectors; an empty vector is at distance 1 from anything non-empty."""
    if not a or not b:
        return 0.0 if not a and not b else 1.0
    if len(b) < len(a):
        a, b = b, a
    dot = sum(w * b.get(t, 0.0) for t, w in a.items())
    return min(1.0, max(0.0, 1.0 - dot))


def tfidf_cosine_distance(
    d1: str, d2: str, corpus: Sequence[str], max_features: int = DEFAULT_MAX_FEATURES
) -> float:
    model = TfidfModel.fit(corpus, max_features)
    return cosine_distance(model.vector(d1), model.vector(d2))


# -- tree views --------------------------------------------------------------------


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    diff: str
    paths: tuple[str, ...]
    actions: tuple[Mapping[str, object], ...]


def edges(run: RunRecord) -> list[Edge]:
    """Parent-child edges of kept children; discarded (Invalid) children are left out."""
    out = []
    for node in run.nodes:
        if node["parent"] is None or node["status"] == "Invalid":
            continue
        out.append(
            Edge(
                parent=node["parent"],
                child=node["id"],
                diff=run.diffs.get(node["id"], ""),
                paths=tuple(sorted(node.get("changed", {}))),
                actions=tuple(node.get("actions", ())),
            )
        )
    return out


@dataclass(frozen=True)
class SiblingPairStat:
    parent: str
    children: tuple[str, str]
    distance: float


def sibling_distances(run: RunRecord, max_features: int = DEFAULT_MAX_FEATURES) -> list[SiblingPairStat]:
    """Every unordered pair of children sharing a parent; the corpus is every edge diff."""
    all_edges = edges(run)
    if not all_edges:
        return []
    model = TfidfModel.fit([e.diff for e in all_edges], max_features)
    vectors = {e.child: model.vector(e.diff) for e in all_edges}
    by_parent: dict[str, list[str]] = {}
    for e in all_edges:
        by_parent.setdefault(e.parent, []).append(e.child)
    stats = []
    for parent, kids in by_parent.items():
        for a, b in itertools.combinations(kids, 2):
            stats.append(SiblingPairStat(parent, (a, b), cosine_distance(vectors[a], vectors[b])))
    return stats


@dataclass(frozen=True)
class LayerActivationStat:
    layer: LayerId
    activated: int
    total: int

    @property
    def rate(self) -> float:
        return self.activated / self.total if self.total else 0.0


def edge_layers(paths: Iterable[str], layer_map: LayerMap = DEFAULT_LAYER_MAP) -> set[LayerId]:
    layers = set()
    for path in paths:
        try:
            layer = attribute_layer(path, layer_map)
        except (AmbiguousLayer, MalformedPath):
            continue
        if layer is not None:
            layers.add(layer)
    return layers


def layer_activation(run: RunRecord, layer_map: LayerMap = DEFAULT_LAYER_MAP) -> list[LayerActivationStat]:
    """Per layer, how many edges touched at least one of its files (layers overlap per edge)."""
    all_edges = edges(run)
    if not all_edges:
        raise EmptyTree("tree has no parent-child edges")
    hits: Counter[LayerId] = Counter()
    for e in all_edges:
        hits.update(edge_layers(e.paths, layer_map))
    return [LayerActivationStat(layer, hits[layer], len(all_edges)) for layer in PHASE_ORDER]


ACTION_KINDS = ("create", "replace", "delete")


def ld_action_composition(run: RunRecord, layer_map: LayerMap = DEFAULT_LAYER_MAP) -> dict[str, float]:
    """Shares of applied domain-knowledge actions by kind; all zero when there are none."""
    counts: Counter[str] = Counter()
    for e in edges(run):
        for action in e.actions:
            if action.get("outcome") != "Applied":
                continue
            if LayerId.DOMAIN_KNOWLEDGE in edge_layers([str(action["path"])], layer_map):
                counts[str(action["kind"])] += 1
    total = sum(counts[k] for k in ACTION_KINDS)
    return {k: (counts[k] / total if total else 0.0) for k in ACTION_KINDS}


def record_from_tree(tree: object) -> RunRecord:
    """In-memory equivalent of ``load_run`` for a live EvolutionTree."""
    index = tree.to_index()  # type: ignore[attr-defined]
    nodes = tree.nodes  # type: ignore[attr-defined]
    diffs = {nid: n.diff.text for nid, n in nodes.items()}
    reports = {nid: list(n.phases) for nid, n in nodes.items()}
    return RunRecord(index, diffs, reports)


def format_report(run: RunRecord, layer_map: LayerMap = DEFAULT_LAYER_MAP, sep: str = "\t") -> str:
    """Delimiter-separated tables: sibling pairs, layer activation, then L_D composition."""
    rows = [sep.join(("section", "parent", "child_a", "child_b", "distance"))]
    for s in sibling_distances(run):
        rows.append(sep.join(("pair", s.parent, s.children[0], s.children[1], f"{s.distance:.6f}")))
    rows.append("")
    rows.append(sep.join(("section", "layer", "activated", "total", "rate")))
    try:
        for stat in layer_activation(run, layer_map):
            rows.append(sep.join(("layer", stat.layer.value, str(stat.activated), str(stat.total), f"{stat.rate:.6f}")))
    except EmptyTree:
        pass
    rows.append("")
    rows.append(sep.join(("section", *ACTION_KINDS)))
    comp = ld_action_composition(run, layer_map)
    rows.append(sep.join(("composition", *(f"{comp[k]:.6f}" for k in ACTION_KINDS))))
    return "\n".join(rows) + "\n"
