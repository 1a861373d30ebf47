"""Deterministic toy corpus: a 40-triple movie KG, a 5x10 rating table and
20 templated graph-dialogue pairs.

Dialogue wording is a pure function of the pair's graph (ratings and the
single linking path), so a model can fit it exactly.
"""

from __future__ import annotations

import os
from itertools import combinations

from .corpus import DialogueSample, EntityMention, Turn, dump_dialogues
from .graph import graph_from_dialogue
from .kg import KnowledgeGraph, find_item_paths, parse_triples, serialize_triples

MOVIES = {
    "Alien": ("Ridley_Scott", "Sigourney_Weaver", "Horror", "Jerry_Goldsmith"),
    "Aliens": ("James_Cameron", "Sigourney_Weaver", "Action", "James_Horner"),
    "Heat": ("Michael_Mann", "Robert_De_Niro", "Crime", "Elliot_Goldenthal"),
    "Ronin": ("John_Frankenheimer", "Robert_De_Niro", "Action", "Carter_Burwell"),
    "Fargo": ("Coen_Brothers", None, "Crime", "Carter_Burwell"),
    "Psycho": ("Alfred_Hitchcock", None, "Horror", "Bernard_Herrmann"),
    "Vertigo": ("Alfred_Hitchcock", "James_Stewart", "Mystery", "Bernard_Herrmann"),
    "Rocky": ("John_G._Avildsen", "Sylvester_Stallone", "Drama", "Bill_Conti"),
    "Creed": ("Ryan_Coogler", "Sylvester_Stallone", "Drama", "Jerry_Goldsmith"),
    "Gravity": ("Alfonso_Cuaron", "Sandra_Bullock", "Mystery", "James_Horner"),
}
RELS = ("directed_by", "starring", "genre", "music_by")
SEQUELS = (("Aliens", "Alien"), ("Creed", "Rocky"))

VERB = {5: "loved", 4: "liked", 3: "did not mind", 2: "disliked", 1: "hated"}
PHRASE = {
    "directed_by": "both are directed by {}",
    "starring": "both star {}",
    "genre": "both are {} films",
    "music_by": "both have music by {}",
}
SENTIMENT_PAIRS = ((5, 4), (5, 2), (4, 1), (5, 3), (3, 1), (4, 2), (2, 1), (5, 1), (4, 3), (3, 2))

RATINGS = {
    "1": ["Alien", "Aliens", "Heat", "Psycho", "Rocky", "Gravity"],
    "2": ["Heat", "Ronin", "Fargo", "Creed", "Vertigo"],
    "3": ["Psycho", "Vertigo", "Alien", "Fargo", "Rocky", "Creed", "Heat"],
    "4": ["Rocky", "Creed", "Gravity", "Aliens"],
    "5": ["Ronin", "Fargo", "Alien", "Vertigo", "Heat", "Psycho", "Creed", "Gravity"],
}


def toy_kg() -> KnowledgeGraph:
    lines = []
    for movie, objs in MOVIES.items():
        for rel, obj in zip(RELS, objs):
            if obj is not None:
                lines.append(f"{movie}\t{rel}\t{obj}")
    lines += [f"{a}\tsequel_of\t{b}" for a, b in SEQUELS]
    lines += [f"item:\t{m}" for m in MOVIES]
    return parse_triples("\n".join(lines))


def toy_ratings_csv() -> str:
    rows = ["userId,itemId,rating,timestamp"]
    for u, movies in RATINGS.items():
        for k, m in enumerate(movies):
            score = 1 + (int(u) * 7 + k * 3) % 5
            rows.append(f"{u},{m},{score},{1000 * int(u) + 10 * k}")
    return "\n".join(rows) + "\n"


def _pairs(kg: KnowledgeGraph):
    """Item pairs joined by at most one path, in a fixed order."""
    out = []
    for a, b in combinations(sorted(MOVIES), 2):
        paths = find_item_paths(kg, a, b)
        if len(paths) <= 1:
            out.append((a, b, paths[0] if paths else None))
    return out


class _Builder:
    def __init__(self, kg):
        self.kg = kg
        self.text, self.mentions = "", []

    def add(self, s):
        self.text += s

    def ent(self, e, sentiment=None):
        lab = self.kg.label(e)
        start = len(self.text)
        self.text += lab
        self.mentions.append(EntityMention(lab, (start, start + len(lab)), e, sentiment))

    def turn(self, speaker):
        t = Turn(speaker, self.text, tuple(self.mentions))
        self.text, self.mentions = "", []
        return t


def toy_dialogue(kg, sid, a, b, path, sa, sb) -> DialogueSample:
    """The higher-rated item is introduced first; ``path`` decides the linking sentence."""
    if sb > sa:
        a, b, sa, sb = b, a, sb, sa
    w = _Builder(kg)
    w.add("hi ! i " + VERB[sa] + " ")
    w.ent(a, sa)
    w.add(" .")
    t1 = w.turn("U")
    w.add("you should try ")
    w.ent(b, sb)
    w.add(" .")
    if path is not None and path.kind == "direct":
        w.add(" they are in the same series .")
    elif path is not None:
        rel = kg.relations[path.triples[0][1]]
        pre, post = PHRASE[rel].split("{}")
        w.add(" " + pre)
        w.ent(kg.entities[path.intermediate])
        w.add(post + " .")
    t2 = w.turn("R")
    w.add("i saw it and i " + VERB[sb] + " it .")
    t3 = w.turn("U")
    return DialogueSample(sid, (t1, t2, t3))


def toy_dialogues(kg=None, n: int = 20) -> list:
    kg = kg or toy_kg()
    pairs = _pairs(kg)
    linked = [p for p in pairs if p[2] is not None]
    unlinked = [p for p in pairs if p[2] is None]
    chosen = (linked + unlinked)[:n]
    out = []
    for i, (a, b, path) in enumerate(chosen):
        sa, sb = SENTIMENT_PAIRS[i % len(SENTIMENT_PAIRS)]
        out.append(toy_dialogue(kg, f"toy-{i:02d}", a, b, path, sa, sb))
    return out


def toy_pairs(n: int = 20):
    kg = toy_kg()
    return kg, [(graph_from_dialogue(d, kg), d) for d in toy_dialogues(kg, n)]


def write_toy_corpus(directory: str) -> dict:
    """Write ``kg.tsv``, ``ratings.csv`` and ``dialogues.jsonl``; return their paths."""
    os.makedirs(directory, exist_ok=True)
    kg = toy_kg()
    files = {
        "kg": os.path.join(directory, "kg.tsv"),
        "ratings": os.path.join(directory, "ratings.csv"),
        "dialogues": os.path.join(directory, "dialogues.jsonl"),
    }
    with open(files["kg"], "w", encoding="utf-8") as f:
        f.write(serialize_triples(kg))
    with open(files["ratings"], "w", encoding="utf-8") as f:
        f.write(toy_ratings_csv())
    with open(files["dialogues"], "w", encoding="utf-8") as f:
        f.write(dump_dialogues(toy_dialogues(kg)))
    return files
