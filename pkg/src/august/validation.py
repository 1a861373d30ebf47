"""Argument checks for the estimator layer."""

from __future__ import annotations

import numbers

from sklearn.utils.validation import check_consistent_length

from .corpus import DialogueSample
from .graph import SampleGraph
from .kg import KnowledgeGraph


def check_kg(kg) -> KnowledgeGraph:
    if not isinstance(kg, KnowledgeGraph):
        raise TypeError(f"kg must be a KnowledgeGraph, got {type(kg).__name__}")
    if not kg.items():
        raise ValueError("knowledge graph declares no items")
    return kg


def check_graphs(X, name: str = "X") -> list:
    X = list(X)
    if not X:
        raise ValueError(f"{name} is empty")
    for i, g in enumerate(X):
        if not isinstance(g, SampleGraph):
            raise TypeError(f"{name}[{i}] is {type(g).__name__}, expected SampleGraph")
    return X


def check_dialogues(y, name: str = "y") -> list:
    y = list(y)
    for i, d in enumerate(y):
        if not isinstance(d, DialogueSample):
            raise TypeError(f"{name}[{i}] is {type(d).__name__}, expected DialogueSample")
    return y


def check_pairs(X, y):
    X, y = check_graphs(X), check_dialogues(y)
    check_consistent_length(X, y)
    return X, y


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return int(value)


def check_positive_float(value, name: str, allow_zero: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, numbers.Real):
        raise ValueError(f"{name} must be a number, got {value!r}")
    if value < 0 or (value == 0 and not allow_zero):
        raise ValueError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {value!r}")
    return float(value)


def check_lambdas(lambdas) -> tuple:
    lam = tuple(lambdas)
    if len(lam) != 3:
        raise ValueError(f"lambdas needs three weights (align, copy, adv), got {len(lam)}")
    return tuple(check_positive_float(x, "lambda", allow_zero=True) for x in lam)
