"""Independent oracles and random-instance builders shared by the tests.

Everything here is written from the definitions, without calling the
package code it checks.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np

from august.corpus import DialogueSample, EntityMention, Turn
from august.encoder import RelationSpace
from august.graph import graph_from_dialogue
from august.kg import parse_triples
from august.model import Data2TextModel, ModelConfig
from august.vocab import Vocab

WORDS = ("hi", "i", "like", "you", "try", "it", "good", ".")


# -- knowledge graphs ----------------------------------------------------

def random_kg_text(rng, n_entities, n_relations=4, n_triples=None, n_items=None):
    n_triples = n_triples if n_triples is not None else int(rng.integers(0, 3 * n_entities + 1))
    n_items = n_items if n_items is not None else int(rng.integers(min(2, n_entities), n_entities + 1))
    names = [f"e{i}" for i in range(n_entities)]
    lines = []
    for _ in range(n_triples):
        s, o = rng.integers(0, n_entities, 2)
        r = rng.integers(0, n_relations)
        lines.append(f"{names[s]}\tr{r}\t{names[o]}")
    items = sorted(rng.choice(n_entities, size=min(n_items, n_entities), replace=False))
    lines += [f"item:\t{names[i]}" for i in items]
    return "\n".join(lines)


def brute_item_paths(triples, items):
    """``{(a, b): {(kind, triples, intermediate)}}`` for every ordered item pair.

    One pass over all triples and all ordered triple pairs.
    """
    items = set(items)
    out = {(a, b): set() for a in items for b in items if a != b}
    for t in triples:
        a, b = t[0], t[2]
        if a != b and a in items and b in items:
            out[a, b].add(("direct", (t,), None))
            out[b, a].add(("direct", (t,), None))
    for t1, t2 in product(triples, repeat=2):
        for a, mid in ((t1[0], t1[2]), (t1[2], t1[0])):
            for m2, b in ((t2[0], t2[2]), (t2[2], t2[0])):
                if m2 == mid and a in items and b in items and a != b and mid not in (a, b):
                    out[a, b].add(("two-hop", (t1, t2), mid))
    return out


def brute_neighbors(triples, e, rel=None, direction="both"):
    out = set()
    for s, r, o in triples:
        if rel is not None and r != rel:
            continue
        if s == e and direction in ("out", "both"):
            out.add((o, r, "out"))
        if o == e and direction in ("in", "both"):
            out.add((s, r, "in"))
    return out


# -- random model instances ---------------------------------------------

def random_dialogue(rng, kg, sid="d", n_turns=None):
    """Dialogue of random filler words with mentions of random KG entities.

    The first turn always mentions an item so a graph can be built.
    """
    n_turns = n_turns or int(rng.integers(1, 4))
    items = sorted(kg.entities[i] for i in kg.item_set)
    others = [e for e in kg.entities if not kg.is_item(e)]
    turns = []
    for k in range(n_turns):
        text, mentions = "", []
        for j in range(int(rng.integers(1, 5))):
            if (k == 0 and j == 0) or rng.random() < 0.3:
                pool = items if (k == 0 and j == 0) or not others or rng.random() < 0.6 else others
                ent = pool[int(rng.integers(0, len(pool)))]
                lab = kg.label(ent)
                start = len(text) + (1 if text else 0)
                text = f"{text} {lab}" if text else lab
                sent = int(rng.integers(1, 6)) if kg.is_item(ent) and rng.random() < 0.8 else None
                mentions.append(EntityMention(lab, (start, start + len(lab)), ent, sent))
            else:
                w = WORDS[int(rng.integers(0, len(WORDS)))]
                text = f"{text} {w}" if text else w
        turns.append(Turn("U" if k % 2 == 0 else "R", text, tuple(mentions)))
    return DialogueSample(sid, tuple(turns))


CANONICAL_WORDS = ("hi", "there", "i", "liked", "it", "try", "this", "one", ".", "?", "!", "good")


def random_canonical_dialogue(rng, kg, v, sid):
    """Dialogue already in the form segment emits: tokens joined by single spaces."""
    ents = sorted(kg.entities)
    turns = []
    for k in range(int(rng.integers(1, 6))):
        text, ms = "", []
        for _ in range(int(rng.integers(1, 7))):
            if rng.random() < 0.3:
                e = ents[int(rng.integers(0, len(ents)))]
                word = v.tokens[v.entity_id(e)]
                start = len(text) + (1 if text else 0)
                ms.append(EntityMention(word, (start, start + len(word)), e))
            else:
                word = CANONICAL_WORDS[int(rng.integers(0, len(CANONICAL_WORDS)))]
            text = f"{text} {word}" if text else word
        turns.append(Turn("UR"[int(rng.integers(0, 2))], text, tuple(ms)))
    return DialogueSample(sid, tuple(turns))


def random_instance(seed, dim=None, noise=0.3):
    """Small model plus one real sample: <= 10 nodes, d <= 8, |V| <= 30."""
    rng = np.random.default_rng(seed)
    n_ent = int(rng.integers(3, 8))
    kg = parse_triples(random_kg_text(rng, n_ent, n_relations=2, n_triples=int(rng.integers(1, 8)),
                                      n_items=int(rng.integers(2, n_ent + 1))))
    d = random_dialogue(rng, kg)
    g = graph_from_dialogue(d, kg)
    vocab = Vocab.build([d], kg)
    dim = dim or int(rng.choice([4, 6, 8]))
    cfg = ModelConfig(dim=dim, max_len=32, max_nodes=12, ff_mult=2, disc_hidden=5, seed=seed)
    model = Data2TextModel(vocab, RelationSpace.from_kg(kg), kg.entities, cfg)
    for k in sorted(model.params):
        model.params[k] = model.params[k] + rng.normal(0.0, noise, model.params[k].shape)
    return kg, g, d, vocab, model


def directional_check(f, params, grads, rng, eps=1e-5, floor=1e-6):
    """Worst relative error of per-tensor directional derivatives.

    For each tensor a random unit direction ``v`` is drawn; the analytic
    value ``<grad, v>`` is compared with ``(f(p + eps v) - f(p - eps v)) / 2 eps``.
    Errors are relative to ``max(|analytic|, |numeric|, floor)``.
    """
    worst, where = 0.0, None
    for k in sorted(params):
        p = params[k]
        v = rng.normal(size=p.shape)
        v /= np.linalg.norm(v) or 1.0
        g = grads.get(k)
        analytic = float(np.sum(g * v)) if g is not None else 0.0
        old = p.copy()
        p += eps * v
        fp = f()
        p[...] = old - eps * v
        fm = f()
        p[...] = old
        numeric = (fp - fm) / (2 * eps)
        rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        if rel > worst:
            worst, where = rel, k
    return worst, where


# -- metric oracles ------------------------------------------------------

def grams(seq, n):
    return [tuple(seq[i:i + n]) for i in range(len(seq) - n + 1)]


def oracle_bleu(cands, refs, n, smooth=True):
    log_sum = 0.0
    for k in range(1, n + 1):
        match = total = 0
        for c, r in zip(cands, refs):
            cg = grams(c, k)
            total += len(cg)
            ref_left = list(grams(r, k))
            for g in cg:
                if g in ref_left:
                    ref_left.remove(g)
                    match += 1
        if match == 0:
            if not smooth:
                return 0.0
            match, total = 1, total + 1
        log_sum += math.log(match / total)
    c_len = sum(map(len, cands))
    r_len = sum(map(len, refs))
    bp = 1.0 if c_len > r_len else math.exp(1 - r_len / c_len)
    return bp * math.exp(log_sum / n)


def oracle_lcs(a, b):
    """Exponential-free but independent: memoised recursion."""
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == len(a) or j == len(b):
            return 0
        if a[i] == b[j]:
            return 1 + go(i + 1, j + 1)
        return max(go(i + 1, j), go(i, j + 1))

    return go(0, 0)


def oracle_rouge_l(cands, refs, beta=1.2):
    total = 0.0
    for c, r in zip(cands, refs):
        lcs = oracle_lcs(tuple(c), tuple(r))
        if lcs:
            p, rec = lcs / len(c), lcs / len(r)
            total += (1 + beta ** 2) * p * rec / (rec + beta ** 2 * p)
    return total / len(cands)


def oracle_cider(cands, refs, max_n=4):
    N = len(refs)
    score = 0.0
    for c, r in zip(cands, refs):
        sims = []
        for n in range(1, max_n + 1):
            vocab = sorted(set(grams(c, n)) | set(grams(r, n)))
            def idf(g):
                df = sum(1 for rr in refs if g in grams(rr, n))
                return math.log(N) - math.log(max(1, df))
            vc = np.array([grams(c, n).count(g) * idf(g) for g in vocab])
            vr = np.array([grams(r, n).count(g) * idf(g) for g in vocab])
            denom = np.linalg.norm(vc) * np.linalg.norm(vr)
            sims.append(float(vc @ vr) / denom if denom > 0 else 0.0)
        score += sum(sims) / max_n
    return score / N


def oracle_chrf(cands, refs, beta=2.0):
    total = 0.0
    for c, r in zip(cands, refs):
        cs, rs = "".join(c), "".join(r)
        fs = []
        for seq_c, seq_r, top in ((cs, rs, 6), (c, r, 2)):
            for n in range(1, top + 1):
                gc, gr = grams(seq_c, n), grams(seq_r, n)
                if not gc or not gr:
                    continue
                left = list(gr)
                m = 0
                for g in gc:
                    if g in left:
                        left.remove(g)
                        m += 1
                if m == 0:
                    fs.append(0.0)
                    continue
                p, rec = m / len(gc), m / len(gr)
                fs.append((1 + beta ** 2) * p * rec / (beta ** 2 * p + rec))
        total += sum(fs) / len(fs) if fs else 0.0
    return total / len(cands)


def oracle_dist(utts, n):
    all_grams = [g for u in utts for g in grams(u, n)]
    return len(set(all_grams)) / len(all_grams)

