"""Rating matrices, dialogue corpora and surface-form entity linking."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .errors import ParseError, ResolutionError, ValidationError
from .kg import KnowledgeGraph

SPEAKERS = ("U", "R")
NEUTRAL_SENTIMENT = 3


@dataclass(frozen=True)
class Rating:
    user: str
    item: str
    score: int
    timestamp: int = 0


@dataclass(frozen=True)
class UserItemMatrix:
    ratings: tuple

    def __post_init__(self):
        seen = set()
        for r in self.ratings:
            if r.score not in (1, 2, 3, 4, 5):
                raise ValidationError(f"score {r.score} outside 1..5")
            key = (r.user, r.item)
            if key in seen:
                raise ValidationError(f"duplicate rating for user {r.user!r}, item {r.item!r}")
            seen.add(key)

    @property
    def users(self) -> list[str]:
        return list(dict.fromkeys(r.user for r in self.ratings))

    @property
    def items(self) -> list[str]:
        return list(dict.fromkeys(r.item for r in self.ratings))

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_items(self) -> int:
        return len(self.items)

    def row(self, user: str) -> list[Rating]:
        """A user's ratings in ascending (timestamp, item) order."""
        return sorted((r for r in self.ratings if r.user == user), key=lambda r: (r.timestamp, r.item))

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for r in self.ratings:
            out[r.user] = out.get(r.user, 0) + 1
        return out


def _int_field(value: str, what: str, lineno: int) -> int:
    try:
        f = float(value)
    except ValueError:
        raise ParseError(f"{what} {value!r} is not a number", lineno) from None
    if not f.is_integer():
        raise ValidationError(f"{what} {value!r} is not an integer", lineno)
    return int(f)


def load_ratings(text: str, kg: Optional[KnowledgeGraph] = None) -> UserItemMatrix:
    """Parse ``userId,itemId,rating,timestamp`` rows (header optional)."""
    ratings = []
    seen = set()
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or not any(c.strip() for c in row):
            continue
        if len(row) not in (3, 4):
            raise ParseError(f"expected 4 fields, got {len(row)}", lineno)
        row = [c.strip() for c in row]
        if lineno == 1 and not _looks_numeric(row[2]):
            continue
        user, item = row[0], row[1]
        score = _int_field(row[2], "rating", lineno)
        if not 1 <= score <= 5:
            raise ValidationError(f"rating {score} outside 1..5", lineno)
        ts = _int_field(row[3], "timestamp", lineno) if len(row) == 4 and row[3] else 0
        if (user, item) in seen:
            raise ValidationError(f"duplicate rating for user {user!r}, item {item!r}", lineno)
        if kg is not None and not kg.is_item(item):
            raise ValidationError(f"item {item!r} is not an item of the knowledge graph", lineno)
        seen.add((user, item))
        ratings.append(Rating(user, item, score, ts))
    return UserItemMatrix(tuple(ratings))


def _looks_numeric(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def serialize_ratings(m: UserItemMatrix) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["userId", "itemId", "rating", "timestamp"])
    for r in m.ratings:
        w.writerow([r.user, r.item, r.score, r.timestamp])
    return buf.getvalue()


@dataclass(frozen=True)
class EntityMention:
    surface: str
    span: tuple
    entity: str
    sentiment: Optional[int] = None

    def __post_init__(self):
        if self.sentiment is not None and not 1 <= self.sentiment <= 5:
            raise ValidationError(f"sentiment {self.sentiment} outside 1..5")
        if self.span[0] > self.span[1]:
            raise ValidationError(f"bad span {self.span}")


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str
    mentions: tuple = ()

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValidationError(f"speaker must be U or R, got {self.speaker!r}")
        last = 0
        for m in sorted(self.mentions, key=lambda m: m.span):
            s, e = m.span
            if s < last or e > len(self.text):
                raise ValidationError(f"mention span {m.span} overlaps or leaves the utterance")
            last = e


@dataclass(frozen=True)
class DialogueSample:
    id: str
    turns: tuple
    graph: object = field(default=None, compare=False, repr=False)
    # segmentation diagnostics; see generator.segment
    flags: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.turns:
            raise ValidationError(f"dialogue {self.id!r} has no turns")

    @property
    def mentions(self) -> list[EntityMention]:
        return [m for t in self.turns for m in t.mentions]

    def text(self) -> str:
        return " ".join(f"[{t.speaker}] {t.text}" for t in self.turns)


def dialogue_to_json(d: DialogueSample) -> dict:
    return {
        "id": d.id,
        "turns": [
            {
                "speaker": t.speaker,
                "text": t.text,
                "mentions": [
                    {"surface": m.surface, "start": m.span[0], "end": m.span[1],
                     "entity": m.entity, "sentiment": m.sentiment}
                    for m in t.mentions
                ],
            }
            for t in d.turns
        ],
    }


def dialogue_from_json(obj: dict, kg: Optional[KnowledgeGraph] = None) -> DialogueSample:
    sid = str(obj["id"])
    turns = []
    for t in obj["turns"]:
        mentions = []
        for m in t.get("mentions") or ():
            if kg is not None and m["entity"] not in kg.entity_index:
                raise ResolutionError(f"sample {sid!r}: unknown entity {m['entity']!r}", sid)
            mentions.append(EntityMention(m["surface"], (int(m["start"]), int(m["end"])),
                                          m["entity"], m.get("sentiment")))
        turns.append(Turn(t["speaker"], t["text"], tuple(mentions)))
    return DialogueSample(sid, tuple(turns))


def load_dialogues(text: str, kg: Optional[KnowledgeGraph] = None) -> list[DialogueSample]:
    """Read dialogue JSONL; every mention must resolve against ``kg``."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"malformed JSON: {exc.msg}", lineno) from None
        try:
            out.append(dialogue_from_json(obj, kg))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"missing or malformed field {exc}", lineno) from None
    return out


def dump_dialogues(dialogues: Sequence[DialogueSample]) -> str:
    return "".join(json.dumps(dialogue_to_json(d), ensure_ascii=False) + "\n" for d in dialogues)


# -- entity linking -----------------------------------------------------

class EntityLinker:
    """Case-insensitive, longest-match-first surface matcher.

    Matches must sit on word boundaries. When two entities share a label the
    lexicographically smallest id wins.
    """

    def __init__(self, kg: KnowledgeGraph):
        self.table: dict[str, str] = {}
        for name in sorted(kg.entities):
            key = kg.label(name).lower()
            if key.strip() and key not in self.table:
                self.table[key] = name
        self.lengths = sorted({len(k) for k in self.table}, reverse=True)

    def link(self, text: str) -> list[EntityMention]:
        low = text.lower()
        if len(low) != len(text):  # rare case-mapping that changes length
            low = "".join(c.lower() if len(c.lower()) == 1 else c for c in text)
        out = []
        i, n = 0, len(text)
        while i < n:
            if i > 0 and low[i - 1].isalnum():
                i += 1
                continue
            hit = None
            for L in self.lengths:
                j = i + L
                if j > n or (j < n and low[j].isalnum()):
                    continue
                ent = self.table.get(low[i:j])
                if ent is not None:
                    hit = (j, ent)
                    break
            if hit is None:
                i += 1
                continue
            j, ent = hit
            out.append(EntityMention(text[i:j], (i, j), ent))
            i = j
        return out


def link_entities(turns: Sequence[str], kg: KnowledgeGraph) -> list[list[EntityMention]]:
    linker = EntityLinker(kg)
    return [linker.link(t) for t in turns]


def relink(d: DialogueSample, kg: KnowledgeGraph) -> DialogueSample:
    """Replace a dialogue's mentions with freshly linked ones."""
    linker = EntityLinker(kg)
    turns = tuple(Turn(t.speaker, t.text, tuple(linker.link(t.text))) for t in d.turns)
    return DialogueSample(d.id, turns, d.graph, dict(d.flags))
