"""Context-side entity encoder, alignment loss, domain discriminator, adversarial loss."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import DialogueSample
from .generator import encode_dialogue
from .nn import FLOAT, attention, attention_backward, glorot, sigmoid, uniform
from .rng import substream
from .vocab import PAD, Vocab

log = logging.getLogger(__name__)

REAL, SYNTHETIC = "real", "synthetic"
CTX_KEYS = ("q", "k", "v", "o")


def init_context_params(vocab_size: int, dim: int, seed: int = 0) -> dict:
    rng = substream(seed, "init", "context")
    p = {"ctx.tok": uniform(rng, (vocab_size, dim), 0.1)}
    for k in CTX_KEYS:
        p[f"ctx.{k}"] = glorot(rng, dim, dim)
    return p


def init_discriminator_params(dim: int, hidden: int = 32, seed: int = 0) -> dict:
    rng = substream(seed, "init", "discriminator")
    return {
        "disc.w1": glorot(rng, dim, hidden),
        "disc.b1": np.zeros(hidden),
        "disc.w2": glorot(rng, hidden, 1)[:, 0],
        "disc.b2": np.zeros(1),
    }


# -- context encoder -----------------------------------------------------

@dataclass
class ContextPass:
    ids: np.ndarray
    features: np.ndarray  # (T, d)
    vectors: dict  # entity -> pooled vector
    positions: dict = field(repr=False, default_factory=dict)  # entity -> token positions
    cache: tuple = field(repr=False, default=())


def context_encode_ids(ids, mentions, p: dict) -> ContextPass:
    """Self-attention over token ids (PAD keys masked), then per-entity mean pooling.

    ``mentions`` lists ``(position, entity)``; an entity's vector is the mean
    of the features at its mention positions.
    """
    ids = np.asarray(ids, dtype=int)
    if not len(mentions):
        raise ValueError("context encoding needs at least one mention")
    X = p["ctx.tok"][ids]
    keep = np.broadcast_to(ids != PAD, (len(ids), len(ids)))
    att, cache = attention(X, X, *[p[f"ctx.{k}"] for k in CTX_KEYS], mask=keep)
    H = X + att
    positions: dict = {}
    for pos, ent in mentions:
        positions.setdefault(ent, []).append(pos)
    vectors = {e: H[ps].mean(axis=0) for e, ps in positions.items()}
    return ContextPass(ids, H, vectors, positions, cache)


def context_encode(d: DialogueSample, p: dict, v: Vocab) -> ContextPass:
    ids, mentions = encode_dialogue(d, v)
    return context_encode_ids(ids, mentions, p)


def context_backward(cp: ContextPass, d_vectors: dict, p: dict) -> dict:
    """Gradients of ctx params given dLoss/d(pooled entity vectors)."""
    dH = np.zeros_like(cp.features)
    for ent, g in d_vectors.items():
        ps = cp.positions[ent]
        dH[ps] += np.asarray(g) / len(ps)
    ws = [p[f"ctx.{k}"] for k in CTX_KEYS]
    dxq, dxkv, *dw = attention_backward(dH, cp.cache, *ws)
    dX = dH + dxq + dxkv
    dtok = np.zeros_like(p["ctx.tok"])
    np.add.at(dtok, cp.ids, dX)
    grads = {"ctx.tok": dtok}
    for k, gw in zip(CTX_KEYS, dw):
        grads[f"ctx.{k}"] = gw
    return grads


# -- alignment -----------------------------------------------------------

def align_loss(phi: dict, phi_hat: dict) -> float:
    """``sum_e ||phi_e - phi_hat_e||^2`` over entities present in both maps."""
    keys = sorted(set(phi) & set(phi_hat))
    if not keys:
        log.warning("alignment loss over an empty entity intersection")
        return 0.0
    return float(sum(np.sum((np.asarray(phi[k]) - np.asarray(phi_hat[k])) ** 2) for k in keys))


def align_grad(phi: dict, phi_hat: dict):
    """``(d_phi, d_phi_hat)`` keyed like the inputs' intersection."""
    keys = sorted(set(phi) & set(phi_hat))
    d_phi = {k: 2.0 * (np.asarray(phi[k]) - np.asarray(phi_hat[k])) for k in keys}
    return d_phi, {k: -g for k, g in d_phi.items()}


# -- discriminator -------------------------------------------------------

def _disc_forward(x, p):
    x = np.asarray(x, dtype=FLOAT)
    if x.shape != (p["disc.w1"].shape[0],):
        raise ValueError(f"discriminator expects a vector of length {p['disc.w1'].shape[0]}, got {x.shape}")
    h = np.tanh(x @ p["disc.w1"] + p["disc.b1"])
    out = float(sigmoid(np.array(h @ p["disc.w2"] + p["disc.b2"][0])))
    return out, h


def discriminate(x, p: dict) -> float:
    """Probability that ``x`` comes from the real domain."""
    return _disc_forward(x, p)[0]


def discriminate_backward(x, p: dict, d_out: float):
    """``(grads, dx)`` for upstream ``d_out`` on the discriminator output."""
    out, h = _disc_forward(x, p)
    dz = d_out * out * (1.0 - out)
    dh = dz * p["disc.w2"]
    du = dh * (1.0 - h * h)
    grads = {
        "disc.w2": dz * h,
        "disc.b2": np.array([dz]),
        "disc.w1": np.outer(x, du),
        "disc.b1": du,
    }
    return grads, du @ p["disc.w1"].T


@dataclass
class PooledFeatures:
    phi: np.ndarray  # mean linearized node feature
    psi: np.ndarray  # mean decoder token feature
    domain: str

    def __post_init__(self):
        if self.domain not in (REAL, SYNTHETIC):
            raise ValueError(f"domain must be {REAL!r} or {SYNTHETIC!r}")


def indicator(domain: str) -> float:
    return 1.0 if domain == REAL else 0.0


def adv_loss(f: PooledFeatures, p: dict, target=None) -> float:
    """``(D(phi') - I)^2 + (D(psi') - I)^2``; ``target`` overrides the indicator."""
    t = indicator(f.domain) if target is None else float(target)
    return (discriminate(f.phi, p) - t) ** 2 + (discriminate(f.psi, p) - t) ** 2


def adv_grad(f: PooledFeatures, p: dict, target=None):
    """``(disc_grads, d_phi, d_psi)`` of :func:`adv_loss`."""
    t = indicator(f.domain) if target is None else float(target)
    grads, dvecs = {}, []
    for x in (f.phi, f.psi):
        out = discriminate(x, p)
        g, dx = discriminate_backward(x, p, 2.0 * (out - t))
        for k, v in g.items():
            grads[k] = grads[k] + v if k in grads else v
        dvecs.append(dx)
    return grads, dvecs[0], dvecs[1]
