"""Relational graph convolution over a :class:`SampleGraph`.

One layer computes, for every node j,

    phi_j' = act( sum_r sum_{k in N_j^r} W_r phi_k + W_0 phi_j )

with no normalisation constant and no basis decomposition. Every relation
label also gets an inverse label with its own matrix so messages flow both
ways along a stored edge (items -> user included).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InitError
from .graph import RATING_LABELS, USER, SampleGraph
from .nn import FLOAT, glorot
from .rng import substream

ACTIVATIONS = ("relu", "identity")
INIT_SCALE = 0.1


class RelationSpace:
    """Sorted base labels; label ``i`` has inverse index ``i + len(labels)``."""

    def __init__(self, labels):
        self.labels = tuple(sorted(set(labels)))
        self.index = {lab: i for i, lab in enumerate(self.labels)}

    @classmethod
    def from_kg(cls, kg):
        return cls(RATING_LABELS + tuple(kg.relations))

    def __len__(self):
        return 2 * len(self.labels)

    def forward(self, label: str) -> int:
        try:
            return self.index[label]
        except KeyError:
            raise KeyError(f"relation {label!r} has no R-GCN weights") from None

    def inverse(self, label: str) -> int:
        return self.forward(label) + len(self.labels)

    def __eq__(self, other):
        return isinstance(other, RelationSpace) and self.labels == other.labels


@dataclass
class RgcnParams:
    relations: RelationSpace
    w_rel: list  # per layer: (2R, d, d)
    w_self: list  # per layer: (d, d)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.w_rel) != len(self.w_self):
            raise ValueError("w_rel and w_self must have one entry per layer")

    @property
    def num_layers(self) -> int:
        return len(self.w_self)

    @classmethod
    def init(cls, relations: RelationSpace, dim: int, num_layers: int = 2, seed: int = 0,
             activation: str = "relu") -> "RgcnParams":
        rng = substream(seed, "init", "rgcn")
        w_rel = [0.5 * glorot(rng, dim, dim, (len(relations), dim, dim)) for _ in range(num_layers)]
        w_self = [glorot(rng, dim, dim) for _ in range(num_layers)]
        return cls(relations, w_rel, w_self, activation)

    def named(self) -> dict:
        out = {}
        for l in range(self.num_layers):
            out[f"rgcn.{l}.rel"] = self.w_rel[l]
            out[f"rgcn.{l}.self"] = self.w_self[l]
        return out


@dataclass
class NodeEmbeddings:
    layers: list  # layer 0..L, each (n, d)
    pre: list = field(default_factory=list, repr=False)  # pre-activations of layers 1..L

    @property
    def final(self) -> np.ndarray:
        return self.layers[-1]


def edge_arrays(graph: SampleGraph, relations: RelationSpace):
    """Message list ``(src, dst, rel)`` including inverse-relation messages."""
    src, dst, rel = [], [], []
    for s, lab, d in graph.edges:
        src += [s, d]
        dst += [d, s]
        rel += [relations.forward(lab), relations.inverse(lab)]
    return np.array(src, dtype=int), np.array(dst, dtype=int), np.array(rel, dtype=int)


def entity_vector(entity: Optional[str], dim: int, seed: int) -> np.ndarray:
    """Seeded uniform [-0.1, 0.1] row for one entity (``None`` is the user node)."""
    rng = substream(seed, "init", "node", "<user>" if entity is None else "entity:" + entity)
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=dim).astype(FLOAT)


def init_node_embeddings(graph: SampleGraph, dim: int, seed: int = 0, table: Optional[dict] = None):
    """Layer-0 matrix; table lookup for entities when ``table`` is given.

    The user node is always seeded-random.
    """
    rows = []
    for n in graph.nodes:
        if n.kind == USER or table is None:
            rows.append(entity_vector(n.entity, dim, seed))
            continue
        if n.entity not in table:
            raise InitError(f"embedding table has no row for entity {n.entity!r}")
        vec = np.asarray(table[n.entity], dtype=FLOAT)
        if vec.shape != (dim,):
            raise ValueError(f"embedding for {n.entity!r} has shape {vec.shape}, expected ({dim},)")
        rows.append(vec)
    return np.stack(rows) if rows else np.zeros((0, dim))


def parse_embedding_table(text: str) -> dict:
    table = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        name, *vals = line.rstrip("\n").split("\t")
        try:
            table[name] = np.array([float(v) for v in vals], dtype=FLOAT)
        except ValueError:
            raise ValueError(f"line {lineno}: non-numeric embedding value") from None
    dims = {v.shape[0] for v in table.values()}
    if len(dims) > 1:
        raise ValueError(f"embedding rows have mixed widths {sorted(dims)}")
    return table


def _check(graph, x, w_self):
    if x.ndim != 2 or x.shape[0] != graph.num_nodes or x.shape[1] != w_self.shape[0]:
        raise ValueError(f"node matrix shape {x.shape} does not match graph "
                         f"({graph.num_nodes} nodes, dim {w_self.shape[0]})")


def _layer(arrays, x, w_rel, w_self, activation):
    src, dst, rel = arrays
    z = x @ w_self.T
    if len(src):
        msg = np.einsum("eij,ej->ei", w_rel[rel], x[src])
        np.add.at(z, dst, msg)
    out = np.maximum(z, 0.0) if activation == "relu" else z
    return out, z


def rgcn_layer(graph: SampleGraph, x: np.ndarray, params: RgcnParams, layer: int) -> np.ndarray:
    x = np.asarray(x, dtype=FLOAT)
    _check(graph, x, params.w_self[layer])
    arrays = edge_arrays(graph, params.relations)
    return _layer(arrays, x, params.w_rel[layer], params.w_self[layer], params.activation)[0]


def rgcn_forward(graph: SampleGraph, params: RgcnParams, x0: np.ndarray, arrays=None) -> NodeEmbeddings:
    x = np.asarray(x0, dtype=FLOAT)
    if params.num_layers:
        _check(graph, x, params.w_self[0])
    if arrays is None:
        arrays = edge_arrays(graph, params.relations)
    emb = NodeEmbeddings([x])
    for l in range(params.num_layers):
        x, z = _layer(arrays, x, params.w_rel[l], params.w_self[l], params.activation)
        emb.layers.append(x)
        emb.pre.append(z)
    return emb


def rgcn_backward(graph: SampleGraph, params: RgcnParams, emb: NodeEmbeddings, upstream: np.ndarray,
                  arrays=None):
    """Reverse-mode gradients of :func:`rgcn_forward`.

    ``upstream`` is dLoss/d(final layer). Returns ``(grads, dx0)`` where
    ``grads`` maps the names from :meth:`RgcnParams.named` to arrays.
    """
    g = np.asarray(upstream, dtype=FLOAT)
    if g.shape != emb.final.shape:
        raise ValueError(f"upstream gradient shape {g.shape} != output shape {emb.final.shape}")
    if arrays is None:
        arrays = edge_arrays(graph, params.relations)
    src, dst, rel = arrays
    grads = {}
    for l in reversed(range(params.num_layers)):
        x, z = emb.layers[l], emb.pre[l]
        w_rel, w_self = params.w_rel[l], params.w_self[l]
        dz = g * (z > 0) if params.activation == "relu" else g
        dw_self = dz.T @ x
        dx = dz @ w_self
        dw_rel = np.zeros_like(w_rel)
        if len(src):
            dmsg = dz[dst]
            np.add.at(dw_rel, rel, np.einsum("ei,ej->eij", dmsg, x[src]))
            np.add.at(dx, src, np.einsum("ei,eij->ej", dmsg, w_rel[rel]))
        grads[f"rgcn.{l}.rel"] = dw_rel
        grads[f"rgcn.{l}.self"] = dw_self
        g = dx
    return grads, g
