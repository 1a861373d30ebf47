"""Graph-to-dialogue model: R-GCN encoder, RBFS linearization, copy decoder.

All parameters live in one flat ``{name: ndarray}`` dict so the optimizer,
checkpointing and gradient checks treat them uniformly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .align import (
    REAL,
    SYNTHETIC,
    PooledFeatures,
    adv_grad,
    adv_loss,
    align_grad,
    align_loss,
    context_backward,
    context_encode_ids,
    init_context_params,
    init_discriminator_params,
)
from .corpus import DialogueSample
from .encoder import RelationSpace, RgcnParams, edge_arrays, entity_vector, rgcn_backward, rgcn_forward
from .generator import (
    copy_grad,
    copy_loss,
    copy_targets,
    decoder_backward,
    decoder_forward,
    encode_dialogue,
    generate,
    init_decoder_params,
    nll_grad,
    nll_loss,
    run_decoder,
)
from .graph import USER, SampleGraph
from .linearize import linearize
from .nn import FLOAT
from .vocab import Vocab

USER_ROW = "<user>"


@dataclass
class ModelConfig:
    dim: int = 16
    num_layers: int = 2
    activation: str = "relu"
    max_len: int = 64
    max_nodes: int = 96
    ff_mult: int = 4
    disc_hidden: int = 32
    max_aux_nodes: int = 64
    seed: int = 0

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class SampleState:
    graph: SampleGraph
    domain: str
    rows: np.ndarray
    arrays: tuple
    emb: object
    lin: object
    src_tokens: np.ndarray
    dec: object
    target: list
    pooled: PooledFeatures
    l_gen: float = 0.0
    l_copy: float = 0.0
    l_align: float = 0.0
    tokens: int = 0
    copy_mask: dict = field(default_factory=dict)
    ctx: object = None
    node_of: dict = field(default_factory=dict)


class Data2TextModel:
    """Parameters plus per-sample forward/backward for the whole pipeline."""

    def __init__(self, vocab: Vocab, relations: RelationSpace, entities, config: Optional[ModelConfig] = None,
                 params: Optional[dict] = None, embedding_table: Optional[dict] = None):
        self.vocab = vocab
        self.relations = relations
        self.entities = tuple(sorted(entities))
        self.config = config or ModelConfig()
        self.entity_row = {e: i + 1 for i, e in enumerate(self.entities)}
        self.params = params if params is not None else self._init_params(embedding_table)

    def _init_params(self, table) -> dict:
        c = self.config
        ent = np.empty((len(self.entities) + 1, c.dim))
        ent[0] = entity_vector(None, c.dim, c.seed)
        for e, i in self.entity_row.items():
            if table is not None and e in table:
                ent[i] = np.asarray(table[e], dtype=FLOAT)
            else:
                ent[i] = entity_vector(e, c.dim, c.seed)
        p = {"ent": ent}
        p.update(RgcnParams.init(self.relations, c.dim, c.num_layers, c.seed, c.activation).named())
        p.update(init_decoder_params(len(self.vocab), c.dim, c.max_len, c.max_nodes, c.ff_mult, c.seed))
        p.update(init_context_params(len(self.vocab), c.dim, c.seed))
        p.update(init_discriminator_params(c.dim, c.disc_hidden, c.seed))
        return p

    # -- views ---------------------------------------------------------
    @property
    def rgcn(self) -> RgcnParams:
        L = self.config.num_layers
        return RgcnParams(self.relations, [self.params[f"rgcn.{l}.rel"] for l in range(L)],
                          [self.params[f"rgcn.{l}.self"] for l in range(L)], self.config.activation)

    def disc_params(self) -> dict:
        return {k: v for k, v in self.params.items() if k.startswith("disc.")}

    def generator_keys(self, freeze_context: bool = False) -> list:
        return [k for k in self.params
                if not k.startswith("disc.") and not (freeze_context and k.startswith("ctx."))]

    def node_rows(self, graph: SampleGraph) -> np.ndarray:
        rows = []
        for n in graph.nodes:
            if n.kind == USER:
                rows.append(0)
            elif n.entity in self.entity_row:
                rows.append(self.entity_row[n.entity])
            else:
                raise KeyError(f"entity {n.entity!r} has no embedding row")
        return np.array(rows, dtype=int)

    def source_tokens(self, graph: SampleGraph, order) -> np.ndarray:
        toks = []
        for j in order:
            n = graph.nodes[j]
            toks.append(-1 if n.kind == USER else self.vocab.entity_id(n.entity))
        return np.array(toks, dtype=int)

    # -- forward -------------------------------------------------------
    def encode(self, graph: SampleGraph):
        rows = self.node_rows(graph)
        arrays = edge_arrays(graph, self.relations)
        rg = self.rgcn
        emb = rgcn_forward(graph, rg, self.params["ent"][rows], arrays)
        lin = linearize(graph, emb, rg, root=0)
        return rows, arrays, emb, lin

    def forward(self, graph: SampleGraph, dialogue: Optional[DialogueSample] = None,
                domain: Optional[str] = None, synth_tokens=None) -> SampleState:
        """Forward one sample.

        With a dialogue (real domain) the supervised terms are computed.
        Without one the decoder runs on ``synth_tokens`` (self-decoded when
        omitted) and only pooled features are produced.
        """
        domain = domain or (REAL if dialogue is not None else SYNTHETIC)
        rows, arrays, emb, lin = self.encode(graph)
        src = self.source_tokens(graph, lin.order)
        S = lin.features
        st = dict(graph=graph, domain=domain, rows=rows, arrays=arrays, emb=emb, lin=lin, src_tokens=src)
        if dialogue is not None:
            target, mentions = encode_dialogue(dialogue, self.vocab)
            dec = decoder_forward(S, src, target, self.params)
            nll = nll_loss(dec, target)
            mask = copy_targets(target, src)
            state = SampleState(dec=dec, target=target,
                                pooled=PooledFeatures(S.mean(0), dec.features.mean(0), domain), **st)
            state.l_gen, state.tokens = nll.total, nll.tokens
            state.copy_mask = mask
            state.l_copy = copy_loss(dec, target, mask)
            node_of = graph.entity_nodes()
            in_graph = [(p, e) for p, e in mentions if e in node_of]
            if in_graph:
                ctx = context_encode_ids(target, in_graph, self.params)
                phi = {e: emb.final[node_of[e]] for e in ctx.vectors}
                state.ctx, state.node_of = ctx, node_of
                state.l_align = align_loss(phi, ctx.vectors)
            return state
        if synth_tokens is None:
            synth_tokens = generate(S, src, self.params, max_len=max(2, self.config.max_len // 2))
        dec = run_decoder(S, src, synth_tokens, self.params)
        return SampleState(dec=dec, target=list(synth_tokens),
                           pooled=PooledFeatures(S.mean(0), dec.features.mean(0), domain), **st)

    # -- backward ------------------------------------------------------
    def backward(self, state: SampleState, lambdas=(0.8, 0.8, 0.1), d_pooled=None, supervised: bool = True,
                 scale: float = 1.0, adv_scale: Optional[float] = None, gen_weight: float = 1.0) -> dict:
        """Gradients of ``scale * (w L_gen + l1 L_align + l2 L_copy) + adv_scale * l3 * adv``.

        ``d_pooled`` is ``(d_phi', d_psi')`` of the adversarial term;
        ``adv_scale`` defaults to ``scale``; ``w`` is ``gen_weight``.
        """
        l1, l2, l3 = lambdas
        adv_scale = scale if adv_scale is None else adv_scale
        dec = state.dec
        K, n = dec.attn.shape
        d_probs = d_attn = d_gate = None
        d_feat = None
        if supervised and state.domain == REAL and state.copy_mask is not None:
            d_probs = scale * gen_weight * nll_grad(dec, state.target)
            da, dg = copy_grad(dec, state.copy_mask)
            d_attn, d_gate = scale * l2 * da, scale * l2 * dg
        d_phi_pool = None
        if d_pooled is not None:
            d_phi_pool = adv_scale * l3 * np.asarray(d_pooled[0])
            d_feat = np.broadcast_to(adv_scale * l3 * np.asarray(d_pooled[1]) / K, dec.features.shape)
        grads, dS = decoder_backward(dec, self.params, d_probs, d_attn, d_gate, d_feat)
        dphi = np.zeros_like(state.emb.final)
        dphi[state.lin.order] += dS
        if d_phi_pool is not None:
            dphi += d_phi_pool / dphi.shape[0]
        if supervised and state.ctx is not None and l1:
            phi = {e: state.emb.final[state.node_of[e]] for e in state.ctx.vectors}
            g_phi, g_hat = align_grad(phi, state.ctx.vectors)
            for e, g in g_phi.items():
                dphi[state.node_of[e]] += scale * l1 * g
            grads.update(context_backward(state.ctx, {e: scale * l1 * g for e, g in g_hat.items()}, self.params))
        g_rgcn, dx0 = rgcn_backward(state.graph, self.rgcn, state.emb, dphi, state.arrays)
        grads.update(g_rgcn)
        dent = np.zeros_like(self.params["ent"])
        np.add.at(dent, state.rows, dx0)
        grads["ent"] = dent
        return grads

    # -- whole-objective helpers --------------------------------------
    def objective(self, graph, dialogue=None, domain=None, lambdas=(0.8, 0.8, 0.1), adversarial=True,
                  target=None, synth_tokens=None, gen_weight: float = 1.0):
        """Per-sample ``L_over`` with its parts; ``target`` overrides the domain indicator.

        ``gen_weight`` rescales the ``L_gen`` term (1 for the real objective).
        """
        st = self.forward(graph, dialogue, domain, synth_tokens)
        l1, l2, l3 = lambdas
        l_adv = adv_loss(st.pooled, self.disc_params(), target) if adversarial else 0.0
        parts = dict(l_gen=st.l_gen, l_align=st.l_align, l_copy=st.l_copy, l_adv=l_adv)
        total = gen_weight * st.l_gen + l1 * st.l_align + l2 * st.l_copy + (l3 * l_adv if adversarial else 0.0)
        return total, parts, st

    def objective_grad(self, graph, dialogue=None, domain=None, lambdas=(0.8, 0.8, 0.1), adversarial=True,
                       target=None, synth_tokens=None, gen_weight: float = 1.0):
        """``(L_over, parts, grads)`` including discriminator gradients of the adversarial term."""
        total, parts, st = self.objective(graph, dialogue, domain, lambdas, adversarial, target, synth_tokens,
                                         gen_weight)
        d_pooled = None
        disc_grads = {}
        if adversarial:
            disc_grads, dphi, dpsi = adv_grad(st.pooled, self.disc_params(), target)
            d_pooled = (dphi, dpsi)
            disc_grads = {k: lambdas[2] * v for k, v in disc_grads.items()}
        grads = self.backward(st, lambdas, d_pooled, supervised=dialogue is not None, gen_weight=gen_weight)
        grads.update(disc_grads)
        return total, parts, grads

    # -- inference -----------------------------------------------------
    def generate(self, graph: SampleGraph, strategy: str = "greedy", beam_width: int = 1,
                 max_len: Optional[int] = None):
        _, _, _, lin = self.encode(graph)
        src = self.source_tokens(graph, lin.order)
        return generate(lin.features, src, self.params, strategy, beam_width, max_len or self.config.max_len), lin
