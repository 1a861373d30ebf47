"""UIM -> graph -> dialogue synthesis shared by the estimator and the CLI."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

from .corpus import UserItemMatrix
from .errors import SegmentationError
from .generator import Issue, segment, validate_dialogue
from .graph import SampleGraph, graph_from_ratings
from .kg import KnowledgeGraph
from .model import Data2TextModel
from .rng import substream

log = logging.getLogger(__name__)

DEFAULT_ITEMS_PER_DIALOGUE = 4


@dataclass
class Synthesis:
    id: str
    graph: SampleGraph
    dialogue: Optional[object]  # DialogueSample, None when segmentation failed
    tokens: list
    linearization: object
    issues: list = field(default_factory=list)


def sample_picks(matrix: UserItemMatrix, user: str, k: int, seed: int = 0):
    """``k`` of the user's ratings drawn without replacement, returned in timestamp order.

    Returns None when the user has fewer than ``k`` ratings.
    """
    row = matrix.row(user)
    if len(row) < k:
        return None
    rng = substream(seed, "sampling", user)
    chosen = sorted(rng.choice(len(row), size=k, replace=False))
    return [(row[i].item, row[i].score) for i in chosen]


def decode_graph(model: Data2TextModel, graph: SampleGraph, sample_id: str,
                 strategy: str = "greedy", beam_width: int = 1, max_len: Optional[int] = None) -> Synthesis:
    """Generate, segment and validate one dialogue."""
    tokens, lin = model.generate(graph, strategy, beam_width, max_len)
    try:
        d = segment(tokens, model.vocab, sample_id)
    except SegmentationError as e:
        return Synthesis(sample_id, graph, None, tokens, lin, [Issue("TypeI", str(e))])
    return Synthesis(sample_id, graph, d, tokens, lin, validate_dialogue(d, graph, model.vocab))


def synthesize(model: Data2TextModel, kg: KnowledgeGraph, matrix: UserItemMatrix,
               items_per_dialogue: int = DEFAULT_ITEMS_PER_DIALOGUE, seed: int = 0,
               strategy: str = "greedy", beam_width: int = 1, max_aux_nodes: Optional[int] = None) -> list:
    """One :class:`Synthesis` per user with enough ratings, in user order."""
    if items_per_dialogue < 1:
        raise ValueError("items_per_dialogue must be at least 1")
    cap = model.config.max_aux_nodes if max_aux_nodes is None else max_aux_nodes
    out = []
    for user in matrix.users:
        picks = sample_picks(matrix, user, items_per_dialogue, seed)
        if picks is None:
            log.info("skipping user %s: %d ratings < %d items per dialogue",
                     user, len(matrix.row(user)), items_per_dialogue)
            continue
        graph = graph_from_ratings(user, picks, kg, cap)
        out.append(decode_graph(model, graph, f"synth-{user}", strategy, beam_width))
    return out
