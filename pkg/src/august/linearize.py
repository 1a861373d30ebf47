"""Relation-biased breadth-first ordering of graph nodes.

Within a BFS level nodes are ordered by descending score
``sigmoid(phi_parent^T W_r phi_child)``, where ``W_r`` is the last R-GCN
layer's matrix for the connecting edge (inverse matrix when the edge is
walked against its stored direction). The ordering is a discrete,
gradient-free step; gradients reach the encoder through the gathered rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .encoder import NodeEmbeddings, RgcnParams
from .graph import SampleGraph
from .nn import sigmoid_scalar


@dataclass
class LinearizedSequence:
    order: list
    scores: list  # None for the root and for unreachable nodes
    features: np.ndarray = field(repr=False)
    unreachable: list = field(default_factory=list)

    def __len__(self):
        return len(self.order)

    def to_json(self) -> dict:
        return {"order": list(map(int, self.order)),
                "scores": [None if s is None else float(s) for s in self.scores],
                "unreachable": list(map(int, self.unreachable))}


def rbfs_score(phi_parent, w_r, phi_child) -> float:
    phi_parent = np.asarray(phi_parent, dtype=float)
    phi_child = np.asarray(phi_child, dtype=float)
    w_r = np.asarray(w_r, dtype=float)
    if w_r.shape != (phi_parent.shape[0], phi_child.shape[0]) or phi_parent.ndim != 1:
        raise ValueError(f"incompatible shapes {phi_parent.shape}, {w_r.shape}, {phi_child.shape}")
    return sigmoid_scalar(float(phi_parent @ w_r @ phi_child))


def _adjacency(graph: SampleGraph, params: RgcnParams):
    adj = [[] for _ in range(graph.num_nodes)]
    for s, lab, d in graph.edges:
        adj[s].append((d, params.relations.forward(lab)))
        adj[d].append((s, params.relations.inverse(lab)))
    return adj


def linearize(graph: SampleGraph, emb, params: RgcnParams, root: int = 0) -> LinearizedSequence:
    """Order nodes by RBFS from ``root`` (the user node by convention).

    Children reachable from several parents in the same level take their
    highest score; equal scores fall back to the smaller parent id, and
    equal-score siblings to ascending node id. Unreachable nodes follow in
    ascending id.
    """
    phi = emb.final if isinstance(emb, NodeEmbeddings) else np.asarray(emb, dtype=float)
    n = graph.num_nodes
    if phi.shape[0] != n:
        raise ValueError(f"embeddings have {phi.shape[0]} rows for {n} nodes")
    if not 0 <= root < n:
        raise ValueError(f"root {root} is not a node index")
    w_last = params.w_rel[-1] if params.num_layers else None
    adj = _adjacency(graph, params)

    def score(p, c, r):
        w = w_last[r] if w_last is not None else np.eye(phi.shape[1])
        return rbfs_score(phi[p], w, phi[c])

    visited = {root}
    order, scores = [root], [None]
    level = [root]
    while level:
        best: dict[int, tuple[float, int]] = {}
        for p in sorted(level):
            for c, r in adj[p]:
                if c in visited:
                    continue
                a = score(p, c, r)
                old = best.get(c)
                if old is None or a > old[0] or (a == old[0] and p < old[1]):
                    best[c] = (a, p)
        level = sorted(best, key=lambda c: (-best[c][0], c))
        for c in level:
            visited.add(c)
            order.append(c)
            scores.append(best[c][0])
    unreachable = [i for i in range(n) if i not in visited]
    order += unreachable
    scores += [None] * len(unreachable)
    return LinearizedSequence(order, scores, phi[order], unreachable)


def dump_linearizations(items: dict) -> str:
    return json.dumps({k: v.to_json() for k, v in items.items()}, sort_keys=True, indent=1) + "\n"
