"""Per-sample graphs: a user node, rated items, and KG enrichment paths."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .corpus import NEUTRAL_SENTIMENT, DialogueSample
from .errors import EmptyGraphError
from .kg import KnowledgeGraph, find_item_paths

USER, ITEM, AUX = "user", "item", "aux"
RATING, DIRECT, TWO_HOP, MENTION = "rating", "direct-path", "two-hop-path", "mention"
RATING_LABELS = tuple(f"rate_{s}" for s in range(1, 6))
DEFAULT_MAX_AUX = 64

_PROV_RANK = {RATING: 0, DIRECT: 1, MENTION: 2, TWO_HOP: 3}


def rating_label(score: int) -> str:
    if score not in (1, 2, 3, 4, 5):
        raise ValueError(f"rating {score} outside 1..5")
    return f"rate_{score}"


@dataclass(frozen=True)
class Node:
    kind: str
    entity: Optional[str] = None


@dataclass(frozen=True)
class SampleGraph:
    """Canonically ordered graph: user first, then items and aux nodes by entity name."""

    user: str
    nodes: tuple
    edges: tuple  # (src, label, dst) node indices
    provenance: tuple

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def node_index(self, entity: str) -> int:
        for i, n in enumerate(self.nodes):
            if n.entity == entity:
                return i
        raise KeyError(entity)

    def entity_nodes(self) -> dict[str, int]:
        return {n.entity: i for i, n in enumerate(self.nodes) if n.kind != USER}

    def item_entities(self) -> list[str]:
        return [n.entity for n in self.nodes if n.kind == ITEM]

    def aux_entities(self) -> list[str]:
        return [n.entity for n in self.nodes if n.kind == AUX]

    def ratings(self) -> dict[str, int]:
        out = {}
        for (s, lab, d), prov in zip(self.edges, self.provenance):
            if prov == RATING:
                out[self.nodes[d].entity] = int(lab.split("_")[1])
        return out

    def labels(self) -> set[str]:
        return {lab for _, lab, _ in self.edges}

    def kg_edges(self):
        """Non-rating edges as named triples."""
        for (s, lab, d), prov in zip(self.edges, self.provenance):
            if prov != RATING:
                yield self.nodes[s].entity, lab, self.nodes[d].entity

    def degree(self, i: int) -> int:
        return sum((s == i) + (d == i) for s, _, d in self.edges)

    def to_json(self) -> dict:
        return {
            "user": self.user,
            "nodes": [{"kind": n.kind, "entity": n.entity} for n in self.nodes],
            "edges": [[s, lab, d] for s, lab, d in self.edges],
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SampleGraph":
        return cls(
            obj["user"],
            tuple(Node(n["kind"], n["entity"]) for n in obj["nodes"]),
            tuple((int(s), lab, int(d)) for s, lab, d in obj["edges"]),
            tuple(obj["provenance"]),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


def _assemble(user: str, scores: dict, aux: Iterable[str], kg_edges: dict) -> SampleGraph:
    """``kg_edges`` maps (s, rel, o) entity triples to provenance tags."""
    items = sorted(scores)
    aux = sorted(set(aux) - set(items))
    nodes = [Node(USER)] + [Node(ITEM, e) for e in items] + [Node(AUX, e) for e in aux]
    index = {n.entity: i for i, n in enumerate(nodes) if n.kind != USER}
    edges = {}
    for e in items:
        edges[(0, rating_label(scores[e]), index[e])] = RATING
    for (s, r, o), prov in kg_edges.items():
        key = (index[s], r, index[o])
        if key not in edges or _PROV_RANK[prov] < _PROV_RANK[edges[key]]:
            edges[key] = prov
    ordered = sorted(edges)
    return SampleGraph(user, tuple(nodes), tuple(ordered), tuple(edges[k] for k in ordered))


def _check_scores(picks, kg: KnowledgeGraph) -> dict:
    scores = {}
    for item, score in picks:
        if not kg.is_item(item):
            raise ValueError(f"{item!r} is not an item of the knowledge graph")
        if int(score) != score or not 1 <= score <= 5:
            raise ValueError(f"rating {score!r} outside 1..5")
        scores[item] = int(score)
    return scores


def graph_from_ratings(user, picks: Sequence[tuple], kg: KnowledgeGraph,
                       max_aux_nodes: int = DEFAULT_MAX_AUX) -> SampleGraph:
    """User node plus one ``rate_s`` edge per picked item, then :func:`enrich`."""
    if not picks:
        raise ValueError("picks must be non-empty")
    scores = _check_scores(picks, kg)
    return enrich(_assemble(str(user), scores, (), {}), kg, max_aux_nodes)


def graph_from_dialogue(dialogue: DialogueSample, kg: KnowledgeGraph,
                        max_aux_nodes: int = DEFAULT_MAX_AUX) -> SampleGraph:
    """Graph for a training dialogue.

    Mentioned items get a rating edge labelled by the mention's sentiment
    (last mention wins, neutral when missing). Mentioned non-item entities
    join as aux nodes when a KG triple ties them to a mentioned item.
    """
    mentions = dialogue.mentions
    if not mentions:
        raise EmptyGraphError(f"dialogue {dialogue.id!r} has no entity mentions")
    scores: dict[str, int] = {}
    others = []
    for m in mentions:
        kg.entity_id(m.entity)
        if kg.is_item(m.entity):
            scores[m.entity] = m.sentiment if m.sentiment is not None else NEUTRAL_SENTIMENT
        else:
            others.append(m.entity)
    if not scores:
        raise EmptyGraphError(f"dialogue {dialogue.id!r} mentions no items")
    item_ids = {kg.entity_id(e) for e in scores}
    aux, kg_edges = set(), {}
    for e in dict.fromkeys(others):
        for (s, r, o), other in kg.incident(kg.entity_id(e)):
            if other in item_ids:
                kg_edges[(kg.entities[s], kg.relations[r], kg.entities[o])] = MENTION
                aux.add(e)
    return enrich(_assemble(dialogue.id, scores, aux, kg_edges), kg, max_aux_nodes)


def enrich(graph: SampleGraph, kg: KnowledgeGraph, max_aux_nodes: int = DEFAULT_MAX_AUX) -> SampleGraph:
    """Materialise every direct and two-hop path between each pair of items.

    At most ``max_aux_nodes`` aux nodes survive; new intermediates are admitted
    in ascending entity-name order and two-hop paths through the rest dropped.
    """
    items = graph.item_entities()
    if not items:
        raise ValueError("enrich needs at least one item node")
    present = {n.entity for n in graph.nodes if n.kind != USER}
    kg_edges = {}
    for (s, lab, d), prov in zip(graph.edges, graph.provenance):
        if prov != RATING:
            kg_edges[(graph.nodes[s].entity, lab, graph.nodes[d].entity)] = prov
    hops = []
    for i, a in enumerate(items):
        for b in items[i + 1:]:
            for p in find_item_paths(kg, a, b):
                named = [(kg.entities[s], kg.relations[r], kg.entities[o]) for s, r, o in p.triples]
                if p.kind == "direct":
                    _add(kg_edges, named[0], DIRECT)
                else:
                    hops.append((kg.entities[p.intermediate], named))
    budget = max_aux_nodes - len(graph.aux_entities())
    fresh = sorted({mid for mid, _ in hops} - present)
    admitted = present | set(fresh[:max(budget, 0)])
    for mid, named in hops:
        if mid in admitted:
            for t in named:
                _add(kg_edges, t, TWO_HOP)
    aux = set(graph.aux_entities()) | {mid for mid, _ in hops if mid in admitted and mid not in items}
    return _assemble(graph.user, graph.ratings(), aux, kg_edges)


def _add(edges: dict, triple, prov):
    old = edges.get(triple)
    if old is None or _PROV_RANK[prov] < _PROV_RANK[old]:
        edges[triple] = prov


def dump_graphs(graphs: dict) -> str:
    """``{sample_id: SampleGraph}`` as one JSON document with stable ordering."""
    return json.dumps({"graphs": [{"id": k, **g.to_json()} for k, g in graphs.items()]},
                      sort_keys=True, indent=1) + "\n"


def load_graphs(text: str) -> dict:
    obj = json.loads(text)
    return {g["id"]: SampleGraph.from_json(g) for g in obj["graphs"]}
