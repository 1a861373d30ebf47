"""Automatic evaluation: BLEU, ROUGE-L, CIDEr, chrF++, Dist-n, entity recall, perplexity.

Every scorer takes sentences either as strings (run through
:func:`august.vocab.tokenize`) or as ready token lists.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

from .corpus import DialogueSample
from .graph import SampleGraph
from .vocab import tokenize

ROUGE_BETA = 1.2
CHRF_BETA = 2.0
CHRF_CHAR_ORDER = 6
CHRF_WORD_ORDER = 2
CIDER_MAX_N = 4


def _tokens(x) -> list:
    return tokenize(x) if isinstance(x, str) else list(x)


def _corpus(candidates, references):
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        raise ValueError("empty corpus")
    return [_tokens(c) for c in candidates], [_tokens(r) for r in references]


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


# -- BLEU ----------------------------------------------------------------

def bleu(candidates, references, n: int = 4, smooth: bool = True) -> float:
    """Corpus BLEU-n with uniform weights.

    With ``smooth`` an order with zero clipped matches uses
    ``1 / (total + 1)`` instead of zero; other orders are left raw.
    """
    if not 1 <= n <= 4:
        raise ValueError("n must be in 1..4")
    cands, refs = _corpus(candidates, references)
    matches, totals = [0] * n, [0] * n
    for c, r in zip(cands, refs):
        for k in range(1, n + 1):
            cc, rc = ngrams(c, k), ngrams(r, k)
            matches[k - 1] += sum(min(v, rc[g]) for g, v in cc.items())
            totals[k - 1] += max(0, len(c) - k + 1)
    log_p = 0.0
    for m, t in zip(matches, totals):
        if m == 0:
            if not smooth:
                return 0.0
            m, t = 1, t + 1
        log_p += math.log(m / t) / n
    c_len = sum(len(c) for c in cands)
    r_len = sum(len(r) for r in refs)
    if c_len == 0:
        return 0.0
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


# -- ROUGE-L -------------------------------------------------------------

def lcs_length(a: Sequence, b: Sequence) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(cand, ref, beta: float = ROUGE_BETA) -> float:
    c, r = _tokens(cand), _tokens(ref)
    lcs = lcs_length(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    b2 = beta * beta
    return (1 + b2) * p * rec / (rec + b2 * p)


def rouge_l(candidates, references, beta: float = ROUGE_BETA) -> float:
    cands, refs = _corpus(candidates, references)
    return sum(rouge_l_pair(c, r, beta) for c, r in zip(cands, refs)) / len(cands)


# -- CIDEr ---------------------------------------------------------------

def cider(candidates, references, max_n: int = CIDER_MAX_N) -> float:
    """Mean over pairs of the order-averaged TF-IDF cosine similarity.

    Document frequencies come from the reference side, one document per
    reference; idf is ``log(N / max(1, df))``.
    """
    cands, refs = _corpus(candidates, references)
    N = len(refs)
    if N < 2:
        raise ValueError("CIDEr needs at least two pairs to estimate document frequencies")
    df = [Counter() for _ in range(max_n)]
    for r in refs:
        for k in range(max_n):
            df[k].update(ngrams(r, k + 1).keys())
    log_n = math.log(N)

    def vec(tokens, k):
        return {g: tf * (log_n - math.log(max(1, df[k][g]))) for g, tf in ngrams(tokens, k + 1).items()}

    total = 0.0
    for c, r in zip(cands, refs):
        s = 0.0
        for k in range(max_n):
            vc, vr = vec(c, k), vec(r, k)
            nc = math.sqrt(sum(x * x for x in vc.values()))
            nr = math.sqrt(sum(x * x for x in vr.values()))
            if nc > 0 and nr > 0:
                s += sum(x * vr.get(g, 0.0) for g, x in vc.items()) / (nc * nr)
        total += s / max_n
    return total / N


# -- chrF++ --------------------------------------------------------------

def _f_beta(hyp: Counter, ref: Counter, beta: float) -> float:
    m = sum((hyp & ref).values())
    if m == 0:
        return 0.0
    p, r = m / sum(hyp.values()), m / sum(ref.values())
    b2 = beta * beta
    return (1 + b2) * p * r / (b2 * p + r)


def chrf_pp_pair(cand, ref, char_order: int = CHRF_CHAR_ORDER, word_order: int = CHRF_WORD_ORDER,
                 beta: float = CHRF_BETA) -> float:
    """Average F-beta over the character and word orders both sides can form."""
    c, r = _tokens(cand), _tokens(ref)
    cs, rs = "".join(c), "".join(r)
    scores = []
    for seq_c, seq_r, top in ((cs, rs, char_order), (c, r, word_order)):
        for k in range(1, top + 1):
            hc, hr = ngrams(seq_c, k), ngrams(seq_r, k)
            if hc and hr:
                scores.append(_f_beta(hc, hr, beta))
    return sum(scores) / len(scores) if scores else 0.0


def chrf_pp(candidates, references, beta: float = CHRF_BETA) -> float:
    cands, refs = _corpus(candidates, references)
    return sum(chrf_pp_pair(c, r, beta=beta) for c, r in zip(cands, refs)) / len(cands)


# -- diversity, recall, perplexity --------------------------------------

def dist_n(utterances, n: int) -> float:
    """Distinct n-grams over total n-grams across all utterances."""
    if not utterances:
        raise ValueError("no utterances")
    seen, total = set(), 0
    for u in utterances:
        grams = ngrams(_tokens(u), n)
        seen.update(grams)
        total += sum(grams.values())
    if total == 0:
        raise ValueError(f"every utterance is shorter than {n} tokens")
    return len(seen) / total


def entity_recall(generated: DialogueSample, graph: SampleGraph, items_only: bool = False) -> float:
    """Share of the graph's entity nodes mentioned in ``generated``."""
    wanted = set(graph.item_entities() if items_only else graph.entity_nodes())
    if not wanted:
        raise ValueError("graph has no entity nodes")
    found = {m.entity for m in generated.mentions} & wanted
    return len(found) / len(wanted)


def perplexity(total_nll: float, token_count: int) -> float:
    if token_count < 1:
        raise ValueError("perplexity needs at least one token")
    return math.exp(total_nll / token_count)


# -- report --------------------------------------------------------------

@dataclass
class EvalReport:
    bleu_1: float
    bleu_2: float
    bleu_4: float
    rouge_l: float
    cider: float
    chrf_pp: float
    dist_1: float
    dist_2: float
    dist_3: float
    dist_4: Optional[float]
    entity_recall: Optional[float] = None
    ppl: Optional[float] = None
    counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    def table(self) -> str:
        """One-row table in the usual column order, ratios scaled by 100."""
        def pct(x):
            return "-" if x is None else f"{100 * x:.2f}"
        cols = [("B-2", pct(self.bleu_2)), ("B-4", pct(self.bleu_4)), ("R-L", pct(self.rouge_l)),
                ("CIDEr", f"{self.cider:.4f}"), ("Chrf", pct(self.chrf_pp)),
                ("Dist-2", pct(self.dist_2)), ("Dist-3", pct(self.dist_3)), ("Dist-4", pct(self.dist_4)),
                ("PPL", "-" if self.ppl is None else f"{self.ppl:.3f}"), ("Recall", pct(self.entity_recall))]
        w = [max(len(a), len(b)) for a, b in cols]
        head = " | ".join(a.rjust(n) for (a, _), n in zip(cols, w))
        row = " | ".join(b.rjust(n) for (_, b), n in zip(cols, w))
        return head + "\n" + row + "\n"


def evaluate(candidates, references, generated=None, graphs=None, nll=None, items_only: bool = False,
             smooth: bool = True) -> EvalReport:
    """Score a corpus.

    ``generated``/``graphs`` (aligned lists) enable entity recall and
    ``nll = (total, tokens)`` enables perplexity.
    """
    cands, refs = _corpus(candidates, references)

    def safe_dist(n):
        try:
            return dist_n(cands, n)
        except ValueError:
            return None

    recall = None
    if generated is not None and graphs is not None:
        if len(generated) != len(graphs):
            raise ValueError("generated dialogues and graphs differ in length")
        recall = sum(entity_recall(d, g, items_only) for d, g in zip(generated, graphs)) / len(graphs)
    return EvalReport(
        bleu_1=bleu(cands, refs, 1, smooth), bleu_2=bleu(cands, refs, 2, smooth),
        bleu_4=bleu(cands, refs, 4, smooth), rouge_l=rouge_l(cands, refs),
        cider=cider(cands, refs) if len(cands) > 1 else 0.0, chrf_pp=chrf_pp(cands, refs),
        dist_1=safe_dist(1), dist_2=safe_dist(2), dist_3=safe_dist(3), dist_4=safe_dist(4),
        entity_recall=recall, ppl=perplexity(*nll) if nll is not None else None,
        counts={"pairs": len(cands), "candidate_tokens": sum(map(len, cands)),
                "reference_tokens": sum(map(len, refs))},
    )
