"""Tokenizer and vocabulary shared by the decoder, context encoder and metrics.

Each KG entity is one atomic token whose display form is the entity's
surface label, so the copy pointer maps a graph node onto exactly one
vocabulary entry.
"""

from __future__ import annotations

import re
from typing import Iterable, Optional

PAD, BOS, EOS, U, R, UNK = range(6)
SPECIALS = ("<pad>", "<bos>", "<eos>", "[U]", "[R]", "<unk>")
SPEAKER_TOKEN = {"U": U, "R": R}
TOKEN_SPEAKER = {U: "U", R: "R"}

_TOKEN_RE = re.compile(r"\[U\]|\[R\]|\w+|[^\w\s]")


def tokenize(text: str) -> list[str]:
    """Whitespace-and-punctuation split, lowercased; ``[U]``/``[R]`` stay whole."""
    return [t if t in ("[U]", "[R]") else t.lower() for t in _TOKEN_RE.findall(text)]


class Vocab:
    def __init__(self, words: Iterable[str] = (), entities: Optional[dict] = None):
        """``entities`` maps entity id to surface label."""
        self.tokens: list[str] = list(SPECIALS)
        self.word_index: dict[str, int] = {}
        self.entity_index: dict[str, int] = {}
        self.entity_of: dict[int, str] = {}
        for w in sorted(set(words) - set(SPECIALS)):
            self.word_index[w] = len(self.tokens)
            self.tokens.append(w)
        for name, label in sorted((entities or {}).items()):
            self.entity_index[name] = len(self.tokens)
            self.entity_of[len(self.tokens)] = name
            self.tokens.append(label)

    @classmethod
    def build(cls, dialogues, kg) -> "Vocab":
        words = set()
        for d in dialogues:
            for t in d.turns:
                for piece, ent in split_mentions(t):
                    if ent is None:
                        words.update(tokenize(piece))
        return cls(words, {e: kg.label(e) for e in kg.entities})

    def __len__(self):
        return len(self.tokens)

    def word_id(self, w: str) -> int:
        if w == "[U]":
            return U
        if w == "[R]":
            return R
        return self.word_index.get(w, UNK)

    def entity_id(self, entity: str) -> int:
        return self.entity_index.get(entity, UNK)

    def is_entity(self, tid: int) -> bool:
        return tid in self.entity_of

    def to_json(self) -> dict:
        return {"words": sorted(self.word_index),
                "entities": {e: self.tokens[i] for e, i in sorted(self.entity_index.items())}}

    @classmethod
    def from_json(cls, obj) -> "Vocab":
        return cls(obj["words"], obj["entities"])

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens and self.entity_index == other.entity_index


def split_mentions(turn):
    """Yield ``(text, entity_or_None)`` pieces of a turn in order."""
    pos = 0
    for m in sorted(turn.mentions, key=lambda m: m.span):
        s, e = m.span
        if s > pos:
            yield turn.text[pos:s], None
        yield turn.text[s:e], m.entity
        pos = e
    if pos < len(turn.text):
        yield turn.text[pos:], None
