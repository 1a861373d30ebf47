"""Graph-conditioned dialogue decoder with a pointer-style copy mechanism.

One causal self-attention block, one cross-attention block over the
linearized node features, a tanh feed-forward layer, then a mixture of a
vocabulary softmax and a pointer distribution over source nodes:

    P(w) = g * P_vocab(w) + (1 - g) * sum_{j : token(j) = w} a_j

Also home to dialogue flattening/segmentation, decoding and the output
validator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import DialogueSample, EntityMention, Turn
from .errors import SegmentationError
from .graph import SampleGraph
from .nn import FLOAT, attention, attention_backward, glorot, sigmoid, softmax, softmax_backward, uniform
from .rng import substream
from .vocab import BOS, EOS, PAD, R, SPEAKER_TOKEN, TOKEN_SPEAKER, U, UNK, Vocab, split_mentions, tokenize

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
ATTN_KEYS = ("q", "k", "v", "o")


# -- flattening ----------------------------------------------------------

def encode_dialogue(d: DialogueSample, v: Vocab):
    """Token ids plus ``(position, entity)`` for every mention."""
    if not d.turns:
        raise ValueError("cannot flatten an empty dialogue")
    ids, mentions = [BOS], []
    for t in d.turns:
        ids.append(SPEAKER_TOKEN[t.speaker])
        for piece, ent in split_mentions(t):
            if ent is None:
                ids.extend(v.word_id(w) for w in tokenize(piece))
            else:
                mentions.append((len(ids), ent))
                ids.append(v.entity_id(ent))
    ids.append(EOS)
    return ids, mentions


def flatten_dialogue(d: DialogueSample, v: Vocab) -> list:
    """``BOS, ([U]|[R]) utterance tokens ..., EOS``."""
    return encode_dialogue(d, v)[0]


def segment(tokens: Sequence[int], v: Vocab, sample_id: str = "generated") -> DialogueSample:
    """Split a token stream back into turns at ``[U]``/``[R]``.

    Tokens before the first speaker token are dropped and counted in
    ``flags["discarded"]``; empty turns are dropped and counted in
    ``flags["empty_turns"]``.
    """
    toks = list(tokens)
    if toks and toks[0] == BOS:
        toks = toks[1:]
    if EOS in toks:
        toks = toks[:toks.index(EOS)]
    toks = [t for t in toks if t != PAD]
    if not any(t in (U, R) for t in toks):
        raise SegmentationError("token stream contains no speaker token")
    flags = {"discarded": 0, "empty_turns": 0}
    turns, speaker, body = [], None, []

    def close():
        if speaker is None:
            return
        if not body:
            flags["empty_turns"] += 1
            return
        text, mentions = "", []
        for tid in body:
            word = v.tokens[tid] if 0 <= tid < len(v) else v.tokens[UNK]
            start = len(text) + (1 if text else 0)
            text = f"{text} {word}" if text else word
            if v.is_entity(tid):
                mentions.append(EntityMention(word, (start, start + len(word)), v.entity_of[tid]))
        turns.append(Turn(TOKEN_SPEAKER[speaker], text, tuple(mentions)))

    for t in toks:
        if t in (U, R):
            close()
            speaker, body = t, []
        elif speaker is None:
            flags["discarded"] += 1
        else:
            body.append(t)
    close()
    if not turns:
        raise SegmentationError("every turn is empty")
    return DialogueSample(sample_id, tuple(turns), flags=flags)


# -- parameters ----------------------------------------------------------

def init_decoder_params(vocab_size: int, dim: int, max_len: int = 64, max_nodes: int = 96,
                        ff_mult: int = 4, seed: int = 0) -> dict:
    rng = substream(seed, "init", "decoder")
    h = ff_mult * dim
    p = {
        "dec.tok": uniform(rng, (vocab_size, dim), 0.1),
        "dec.pos": uniform(rng, (max_len, dim), 0.1),
        "dec.src_pos": uniform(rng, (max_nodes, dim), 0.1),
    }
    for blk in ("sa", "ca"):
        for k in ATTN_KEYS:
            p[f"dec.{blk}.{k}"] = glorot(rng, dim, dim)
    p["dec.ff1"] = glorot(rng, dim, h)
    p["dec.ff1_b"] = np.zeros(h)
    p["dec.ff2"] = glorot(rng, h, dim)
    p["dec.ff2_b"] = np.zeros(dim)
    p["dec.out"] = glorot(rng, dim, vocab_size)
    p["dec.out_b"] = np.zeros(vocab_size)
    p["dec.ptr"] = glorot(rng, dim, dim)
    p["dec.gate"] = uniform(rng, (dim,), 0.1)
    p["dec.gate_b"] = np.zeros(1)
    return p


def _attn(p, blk):
    return [p[f"dec.{blk}.{k}"] for k in ATTN_KEYS]


# -- forward / backward --------------------------------------------------

@dataclass
class StepDistribution:
    p_vocab: np.ndarray
    copy_attention: np.ndarray
    p_gen: float
    probs: np.ndarray


@dataclass
class DecoderPass:
    """Activations of one teacher-forced pass, kept for the backward pass."""

    inputs: np.ndarray
    src_tokens: np.ndarray
    probs: np.ndarray  # (K, V) mixture
    p_vocab: np.ndarray
    attn: np.ndarray  # (K, n) pointer attention
    gate: np.ndarray  # (K,)
    features: np.ndarray  # (K, d) last-layer token features
    cache: dict = field(repr=False, default_factory=dict)

    @property
    def dists(self) -> list:
        return [StepDistribution(self.p_vocab[k], self.attn[k], float(self.gate[k]), self.probs[k])
                for k in range(len(self.gate))]


def _copy_matrix(src_tokens, vocab_size):
    n = len(src_tokens)
    m = np.zeros((n, vocab_size))
    for j, t in enumerate(src_tokens):
        if t >= 0:
            m[j, t] = 1.0
    return m


def _positions(k, table):
    return np.minimum(np.arange(k), table.shape[0] - 1)


def run_decoder(source, src_tokens, inputs, p: dict) -> DecoderPass:
    """Teacher-forced pass over ``inputs``; row k predicts the token after ``inputs[k]``."""
    S = np.asarray(source, dtype=FLOAT)
    src_tokens = np.asarray(src_tokens, dtype=int)
    inputs = np.asarray(inputs, dtype=int)
    if S.ndim != 2 or S.shape[0] == 0:
        raise ValueError("decoder needs a non-empty source sequence")
    if len(src_tokens) != S.shape[0]:
        raise ValueError("src_tokens must align with source rows")
    pointable = src_tokens >= 0
    if not pointable.any():
        raise ValueError("no source node maps to a vocabulary token")
    K, n = len(inputs), S.shape[0]
    d = S.shape[1]
    V = p["dec.out"].shape[1]
    pos = _positions(K, p["dec.pos"])
    spos = _positions(n, p["dec.src_pos"])
    X0 = p["dec.tok"][inputs] + p["dec.pos"][pos]
    causal = np.tril(np.ones((K, K), dtype=bool))
    sa, c_sa = attention(X0, X0, *_attn(p, "sa"), mask=causal)
    H1 = X0 + sa
    Sp = S + p["dec.src_pos"][spos]
    ca, c_ca = attention(H1, Sp, *_attn(p, "ca"))
    H2 = H1 + ca
    T = np.tanh(H2 @ p["dec.ff1"] + p["dec.ff1_b"])
    H3 = H2 + T @ p["dec.ff2"] + p["dec.ff2_b"]
    pv = softmax(H3 @ p["dec.out"] + p["dec.out_b"])
    scale = 1.0 / np.sqrt(d)
    Qp = H3 @ p["dec.ptr"]
    A = softmax((Qp @ Sp.T) * scale, np.broadcast_to(pointable, (K, n)))
    g = sigmoid(H3 @ p["dec.gate"] + p["dec.gate_b"][0])
    M = _copy_matrix(src_tokens, V)
    probs = g[:, None] * pv + (1.0 - g)[:, None] * (A @ M)
    cache = dict(pos=pos, spos=spos, c_sa=c_sa, c_ca=c_ca, H2=H2, T=T, Sp=Sp, Qp=Qp, M=M, scale=scale)
    return DecoderPass(inputs, src_tokens, probs, pv, A, g, H3, cache)


def decoder_forward(source, src_tokens, target, p: dict) -> DecoderPass:
    """Teacher forcing on ``target`` (BOS ... EOS); yields K = len(target) - 1 steps."""
    target = list(target)
    if len(target) < 2:
        raise ValueError("target needs at least BOS and one token")
    return run_decoder(source, src_tokens, target[:-1], p)


def decoder_backward(dp: DecoderPass, p: dict, d_probs=None, d_attn=None, d_gate=None, d_features=None):
    """Gradients of a scalar w.r.t. decoder params and the source rows.

    Upstream terms: ``d_probs`` (K, V) on the mixture, ``d_attn`` (K, n) and
    ``d_gate`` (K,) applied directly to pointer attention and gate, and
    ``d_features`` (K, d) on the last-layer token features.
    Returns ``(grads, d_source)``.
    """
    c = dp.cache
    K, n = dp.attn.shape
    g, pv, A, H3, M = dp.gate, dp.p_vocab, dp.attn, dp.features, c["M"]
    dA = np.zeros_like(A) if d_attn is None else np.array(d_attn, dtype=FLOAT)
    dg = np.zeros_like(g) if d_gate is None else np.array(d_gate, dtype=FLOAT)
    dH3 = np.zeros_like(H3) if d_features is None else np.array(d_features, dtype=FLOAT)
    grads = {}
    if d_probs is not None:
        dP = np.asarray(d_probs, dtype=FLOAT)
        dpv = g[:, None] * dP
        dg += (dP * pv).sum(1) - (dP * (A @ M)).sum(1)
        dA += (1.0 - g)[:, None] * (dP @ M.T)
    else:
        dpv = np.zeros_like(pv)
    dlogits = softmax_backward(pv, dpv)
    grads["dec.out"] = H3.T @ dlogits
    grads["dec.out_b"] = dlogits.sum(0)
    dH3 += dlogits @ p["dec.out"].T
    dgpre = dg * g * (1.0 - g)
    grads["dec.gate"] = H3.T @ dgpre
    grads["dec.gate_b"] = np.array([dgpre.sum()])
    dH3 += np.outer(dgpre, p["dec.gate"])
    dlog = softmax_backward(A, dA) * c["scale"]
    dQp = dlog @ c["Sp"]
    dSp = dlog.T @ c["Qp"]
    grads["dec.ptr"] = H3.T @ dQp
    dH3 += dQp @ p["dec.ptr"].T
    # feed-forward
    T, H2 = c["T"], c["H2"]
    grads["dec.ff2"] = T.T @ dH3
    grads["dec.ff2_b"] = dH3.sum(0)
    dU = (dH3 @ p["dec.ff2"].T) * (1.0 - T * T)
    grads["dec.ff1"] = H2.T @ dU
    grads["dec.ff1_b"] = dU.sum(0)
    dH2 = dH3 + dU @ p["dec.ff1"].T
    # cross-attention
    dxq, dxkv, *dw = attention_backward(dH2, c["c_ca"], *_attn(p, "ca"))
    for k, gw in zip(ATTN_KEYS, dw):
        grads[f"dec.ca.{k}"] = gw
    dH1 = dH2 + dxq
    dSp += dxkv
    # causal self-attention
    dxq, dxkv, *dw = attention_backward(dH1, c["c_sa"], *_attn(p, "sa"))
    for k, gw in zip(ATTN_KEYS, dw):
        grads[f"dec.sa.{k}"] = gw
    dX0 = dH1 + dxq + dxkv
    dtok = np.zeros_like(p["dec.tok"])
    np.add.at(dtok, dp.inputs, dX0)
    grads["dec.tok"] = dtok
    dpos = np.zeros_like(p["dec.pos"])
    np.add.at(dpos, c["pos"], dX0)
    grads["dec.pos"] = dpos
    dspos = np.zeros_like(p["dec.src_pos"])
    np.add.at(dspos, c["spos"], dSp)
    grads["dec.src_pos"] = dspos
    return grads, dSp


# -- losses --------------------------------------------------------------

@dataclass
class NllResult:
    total: float
    per_token: float
    tokens: int
    clamped: int = 0


def _gold_probs(dists, target):
    target = list(target)
    probs = dists.probs if isinstance(dists, DecoderPass) else np.array([s.probs for s in dists])
    if len(probs) != len(target) - 1:
        raise ValueError(f"{len(probs)} distributions for a target of length {len(target)}")
    gold = probs[np.arange(len(probs)), target[1:]]
    return gold


def nll_loss(dists, target) -> NllResult:
    """``-sum_k log P(w_k | w_<k)`` over target positions 1..K."""
    gold = _gold_probs(dists, target)
    clamped = int((gold < PROB_FLOOR).sum())
    if clamped:
        log.warning("%d gold tokens with probability below %g clamped", clamped, PROB_FLOOR)
    total = float(-np.log(np.maximum(gold, PROB_FLOOR)).sum())
    return NllResult(total, total / len(gold), len(gold), clamped)


def nll_grad(dp: DecoderPass, target) -> np.ndarray:
    """dL_gen / d(mixture probabilities)."""
    target = list(target)
    gold = _gold_probs(dp, target)
    d = np.zeros_like(dp.probs)
    k = np.arange(len(gold))
    d[k, target[1:]] = np.where(gold >= PROB_FLOOR, -1.0 / np.maximum(gold, PROB_FLOOR), 0.0)
    return d


def copy_targets(target, src_tokens) -> dict:
    """Target positions whose token is a source entity, mapped to that source position."""
    where = {}
    for j, t in enumerate(src_tokens):
        if t >= 0 and t != UNK:
            where.setdefault(int(t), j)
    return {k: where[t] for k, t in enumerate(target) if k > 0 and t in where}


def _copy_terms(dists, mask):
    if isinstance(dists, DecoderPass):
        attn, gate = dists.attn, dists.gate
    else:
        attn = np.array([s.copy_attention for s in dists])
        gate = np.array([s.p_gen for s in dists])
    rows, cols = [], []
    for k, j in sorted(mask.items()):
        if j is None:
            raise ValueError(f"copyable position {k} has no source annotation")
        if not 1 <= k <= len(gate):
            raise ValueError(f"copyable position {k} outside the target")
        rows.append(k - 1)
        cols.append(j)
    return attn, gate, np.array(rows, dtype=int), np.array(cols, dtype=int)


def copy_loss(dists, target, mask: dict) -> float:
    """``-sum log[(1 - g_k) a_k(source node)]`` over copyable target positions.

    ``mask`` maps a target position (1..K) to its source position.
    """
    attn, gate, rows, cols = _copy_terms(dists, mask)
    if not len(rows):
        return 0.0
    q = (1.0 - gate[rows]) * attn[rows, cols]
    return float(-np.log(np.maximum(q, PROB_FLOOR)).sum())


def copy_grad(dp: DecoderPass, mask: dict):
    """``(d_attn, d_gate)`` of :func:`copy_loss`."""
    attn, gate, rows, cols = _copy_terms(dp, mask)
    d_attn = np.zeros_like(attn)
    d_gate = np.zeros_like(gate)
    if len(rows):
        a = attn[rows, cols]
        ok = (1.0 - gate[rows]) * a >= PROB_FLOOR
        np.add.at(d_attn, (rows, cols), np.where(ok, -1.0 / np.maximum(a, PROB_FLOOR), 0.0))
        np.add.at(d_gate, rows, np.where(ok, 1.0 / np.maximum(1.0 - gate[rows], PROB_FLOOR), 0.0))
    return d_attn, d_gate


# -- decoding ------------------------------------------------------------

def _next_probs(S, src_tokens, prefix, p):
    return run_decoder(S, src_tokens, prefix, p).probs[-1]


def generate(source, src_tokens, p: dict, strategy: str = "greedy", beam_width: int = 1,
             max_len: int = 64) -> list:
    """Autoregressive decoding from BOS until EOS or ``max_len`` tokens.

    Ties go to the smaller token id (greedy) or the lexicographically smaller
    sequence (beam).
    """
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    S = source.features if hasattr(source, "features") else source
    if strategy == "greedy":
        seq = [BOS]
        while len(seq) < max_len:
            probs = _next_probs(S, src_tokens, seq, p)
            seq.append(int(np.argmax(probs)))
            if seq[-1] == EOS:
                break
        return seq
    if strategy != "beam":
        raise ValueError(f"unknown strategy {strategy!r}")
    if beam_width < 1:
        raise ValueError("beam_width must be positive")
    beams = [(0.0, [BOS])]
    done = []
    while beams:
        cands = []
        for score, seq in beams:
            probs = _next_probs(S, src_tokens, seq, p)
            for w in np.flatnonzero(probs > 0):
                cands.append((score + float(np.log(probs[w])), seq + [int(w)]))
        cands.sort(key=lambda c: (-c[0], c[1]))
        top = cands[:beam_width]
        beams = [c for c in top if c[1][-1] != EOS and len(c[1]) < max_len]
        done += [c for c in top if c[1][-1] == EOS or len(c[1]) >= max_len]
        done.sort(key=lambda c: (-c[0], c[1]))
        # log-probabilities only decrease, so a live beam cannot overtake
        if done and (not beams or beams[0][0] <= done[0][0]):
            break
    return done[0][1]


# -- validation ----------------------------------------------------------

@dataclass(frozen=True)
class Issue:
    type: str  # "TypeI" | "TypeII"
    detail: str

    def to_json(self, sample_id: str) -> dict:
        return {"sample_id": sample_id, "type": self.type, "detail": self.detail}


def validate_dialogue(d: DialogueSample, g: SampleGraph, v: Optional[Vocab] = None) -> list:
    """Format errors (type I) and entities absent from the input graph (type II)."""
    issues = []
    flags = d.flags or {}
    if flags.get("discarded"):
        issues.append(Issue("TypeI", f"{flags['discarded']} tokens before the first speaker token"))
    if flags.get("empty_turns"):
        issues.append(Issue("TypeI", f"{flags['empty_turns']} empty turns"))
    for i, t in enumerate(d.turns):
        if not t.text.strip():
            issues.append(Issue("TypeI", f"turn {i} is empty"))
    present = set(g.entity_nodes())
    for ent in dict.fromkeys(m.entity for m in d.mentions):
        if ent not in present:
            issues.append(Issue("TypeII", ent))
    return issues
