"""Knowledge-graph triple store with a bidirectional adjacency index.

Entities and relations are interned to dense integer ids in first-seen
order. The store is immutable after construction, so queries can be shared
freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import NotFoundError, ParseError

OUT, IN = "out", "in"
DIRECTIONS = (OUT, IN, "both")


def default_label(entity: str) -> str:
    return entity.replace("_", " ")


class KnowledgeGraph:
    """Deduplicated triple set plus an item subset and surface labels.

    Build with :meth:`from_triples` or :func:`parse_triples`; the constructor
    expects already-interned data.
    """

    def __init__(self, entities, relations, triples, items=(), labels=None):
        self.entities: tuple[str, ...] = tuple(entities)
        self.relations: tuple[str, ...] = tuple(relations)
        self.triples: tuple[tuple[int, int, int], ...] = tuple(triples)
        self.item_set: frozenset[int] = frozenset(items)
        self._labels: dict[int, str] = dict(labels or {})
        self.entity_index = {e: i for i, e in enumerate(self.entities)}
        self.relation_index = {r: i for i, r in enumerate(self.relations)}
        if len(self.entity_index) != len(self.entities):
            raise ValueError("duplicate entity names")
        n_e, n_r = len(self.entities), len(self.relations)
        for s, r, o in self.triples:
            if not (0 <= s < n_e and 0 <= o < n_e and 0 <= r < n_r):
                raise ValueError(f"triple {(s, r, o)} references an unknown id")
        if any(not 0 <= i < n_e for i in self.item_set):
            raise ValueError("item_set must be a subset of entities")
        self._out: list[list[tuple[int, int]]] = [[] for _ in range(n_e)]
        self._in: list[list[tuple[int, int]]] = [[] for _ in range(n_e)]
        for s, r, o in self.triples:
            self._out[s].append((o, r))
            self._in[o].append((s, r))
        for lst in self._out + self._in:
            lst.sort()

    @classmethod
    def from_triples(cls, triples: Iterable[tuple[str, str, str]], items=(), labels=None):
        entities: dict[str, int] = {}
        relations: dict[str, int] = {}
        seen = set()
        out = []

        def intern(table, key):
            if key not in table:
                table[key] = len(table)
            return table[key]

        for s, r, o in triples:
            t = (intern(entities, s), intern(relations, r), intern(entities, o))
            if t not in seen:
                seen.add(t)
                out.append(t)
        for e in items:
            intern(entities, e)
        labels = labels or {}
        for e in labels:
            intern(entities, e)
        return cls(
            entities,
            relations,
            out,
            items=[entities[e] for e in items],
            labels={entities[e]: lab for e, lab in labels.items()},
        )

    # -- lookups -------------------------------------------------------
    def entity_id(self, entity) -> int:
        if isinstance(entity, str):
            try:
                return self.entity_index[entity]
            except KeyError:
                raise NotFoundError(f"unknown entity {entity!r}") from None
        if not 0 <= int(entity) < len(self.entities):
            raise NotFoundError(f"unknown entity id {entity!r}")
        return int(entity)

    def relation_id(self, relation) -> int:
        if isinstance(relation, str):
            try:
                return self.relation_index[relation]
            except KeyError:
                raise NotFoundError(f"unknown relation {relation!r}") from None
        if not 0 <= int(relation) < len(self.relations):
            raise NotFoundError(f"unknown relation id {relation!r}")
        return int(relation)

    def is_item(self, entity) -> bool:
        try:
            return self.entity_id(entity) in self.item_set
        except NotFoundError:
            return False

    def label(self, entity) -> str:
        i = self.entity_id(entity)
        return self._labels.get(i, default_label(self.entities[i]))

    @property
    def explicit_labels(self) -> dict[str, str]:
        return {self.entities[i]: lab for i, lab in sorted(self._labels.items())}

    def items(self) -> list[str]:
        return [self.entities[i] for i in sorted(self.item_set)]

    def named_triples(self) -> list[tuple[str, str, str]]:
        return [(self.entities[s], self.relations[r], self.entities[o]) for s, r, o in self.triples]

    def has_triple(self, s: str, r: str, o: str) -> bool:
        si, oi = self.entity_index.get(s), self.entity_index.get(o)
        ri = self.relation_index.get(r)
        if si is None or oi is None or ri is None:
            return False
        return (oi, ri) in self._out[si]

    def incident(self, entity: int):
        """All (triple, other-endpoint) pairs touching ``entity`` in either direction."""
        res = [((entity, r, o), o) for o, r in self._out[entity]]
        res += [((s, r, entity), s) for s, r in self._in[entity] if s != entity]
        return res

    def stats(self) -> dict:
        return {
            "entities": len(self.entities),
            "relations": len(self.relations),
            "triples": len(self.triples),
            "items": len(self.item_set),
        }

    def __len__(self):
        return len(self.triples)

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.entities == other.entities
            and self.relations == other.relations
            and self.triples == other.triples
            and self.item_set == other.item_set
            and self._labels == other._labels
        )

    def __repr__(self):
        s = self.stats()
        return (f"KnowledgeGraph(entities={s['entities']}, relations={s['relations']}, "
                f"triples={s['triples']}, items={s['items']})")


@dataclass(frozen=True)
class Path:
    kind: str  # "direct" | "two-hop"
    triples: tuple
    endpoints: tuple
    intermediate: Optional[int] = None

    def __post_init__(self):
        if self.kind == "direct" and (len(self.triples) != 1 or self.intermediate is not None):
            raise ValueError("direct paths carry exactly one triple")
        if self.kind == "two-hop" and (len(self.triples) != 2 or self.intermediate is None):
            raise ValueError("two-hop paths carry two triples and an intermediate")


# -- parsing ------------------------------------------------------------

def parse_triples(text: str, items: Optional[Iterable[str]] = None) -> KnowledgeGraph:
    """Parse the TSV triple format.

    ``subject<TAB>relation<TAB>object`` per line, ``#`` comments,
    ``item:<TAB>entity`` flags an item and ``label:<TAB>entity<TAB>surface``
    sets a surface label. ``items`` is an optional sidecar list.
    """
    entities: dict[str, int] = {}
    relations: dict[str, int] = {}
    triples: list[tuple[int, int, int]] = []
    seen = set()
    item_ids: list[int] = []
    labels: dict[int, str] = {}

    def intern(table, key):
        if key not in table:
            table[key] = len(table)
        return table[key]

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if fields[0] == "item:":
            if len(fields) != 2 or not fields[1]:
                raise ParseError(f"expected 'item:<TAB>entity', got {len(fields)} fields", lineno)
            item_ids.append(intern(entities, fields[1]))
            continue
        if fields[0] == "label:":
            if len(fields) != 3 or not fields[1]:
                raise ParseError(f"expected 'label:<TAB>entity<TAB>surface', got {len(fields)} fields", lineno)
            labels[intern(entities, fields[1])] = fields[2]
            continue
        if len(fields) != 3 or not all(fields):
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
        s, r, o = fields
        t = (intern(entities, s), intern(relations, r), intern(entities, o))
        if t not in seen:
            seen.add(t)
            triples.append(t)
    for e in items or ():
        e = e.strip()
        if e and not e.startswith("#"):
            item_ids.append(intern(entities, e))
    return KnowledgeGraph(entities, relations, triples, items=item_ids, labels=labels)


def parse_item_list(text: str) -> list[str]:
    return [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]


def serialize_triples(kg: KnowledgeGraph) -> str:
    """Inverse of :func:`parse_triples`; preserves interning order exactly."""
    lines = []
    declared = set()

    def declare(eid):
        # entity that would not otherwise be interned at this point
        name = kg.entities[eid]
        if eid in kg.item_set:
            lines.append(f"item:\t{name}")
        else:
            lines.append(f"label:\t{name}\t{kg.label(eid)}")
        declared.add(eid)

    next_id = 0
    for s, r, o in kg.triples:
        for e in (s, o):
            while next_id < e:
                if next_id not in declared:
                    declare(next_id)
                next_id += 1
            if e == next_id:
                next_id += 1
        lines.append(f"{kg.entities[s]}\t{kg.relations[r]}\t{kg.entities[o]}")
    while next_id < len(kg.entities):
        declare(next_id)
        next_id += 1
    for eid in sorted(kg.item_set):
        if eid not in declared:
            lines.append(f"item:\t{kg.entities[eid]}")
    for eid, lab in sorted(kg._labels.items()):
        if eid not in declared or eid in kg.item_set:
            lines.append(f"label:\t{kg.entities[eid]}\t{lab}")
    return "\n".join(lines) + ("\n" if lines else "")


# -- queries ------------------------------------------------------------

def neighbors(kg: KnowledgeGraph, entity, relation=None, direction: str = "both"):
    """One-step neighbours of ``entity`` as ``(neighbor_id, relation_id, direction)``.

    Sorted by neighbour id, then relation id, then direction.
    """
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    e = kg.entity_id(entity)
    r = None if relation is None else kg.relation_id(relation)
    out = []
    if direction in (OUT, "both"):
        out += [(o, rr, OUT) for o, rr in kg._out[e] if r is None or rr == r]
    if direction in (IN, "both"):
        out += [(s, rr, IN) for s, rr in kg._in[e] if r is None or rr == r]
    out.sort(key=lambda t: (t[0], t[1], t[2] != OUT))
    return out


def find_item_paths(kg: KnowledgeGraph, a, b) -> list[Path]:
    """All direct and two-hop paths linking two items.

    Traversal ignores stored edge direction; emitted paths carry the triples
    exactly as stored. Direct paths come first (by triple), then two-hop paths
    ordered by intermediate id.
    """
    ai, bi = kg.entity_id(a), kg.entity_id(b)
    if ai == bi:
        raise ValueError("find_item_paths needs two distinct items")
    for x in (ai, bi):
        if x not in kg.item_set:
            raise ValueError(f"{kg.entities[x]!r} is not an item")
    direct = sorted(t for t, other in kg.incident(ai) if other == bi)
    paths = [Path("direct", (t,), (ai, bi)) for t in direct]
    hops = []
    for t1, mid in kg.incident(ai):
        if mid in (ai, bi):
            continue
        for t2, other in kg.incident(mid):
            if other == bi:
                hops.append((mid, t1, t2))
    hops.sort()
    paths += [Path("two-hop", (t1, t2), (ai, bi), mid) for mid, t1, t2 in hops]
    return paths
