"""scikit-learn style front end: a graph-building transformer and the generator estimator."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import DialogueSample
from .encoder import RelationSpace
from .graph import DEFAULT_MAX_AUX, graph_from_dialogue, graph_from_ratings
from .model import Data2TextModel, ModelConfig
from .pipeline import decode_graph
from .trainer import PRESETS, TrainConfig, evaluate_nll, load_checkpoint, save_checkpoint, train
from .validation import (
    check_graphs,
    check_kg,
    check_lambdas,
    check_pairs,
    check_positive_float,
    check_positive_int,
)
from .vocab import Vocab


class GraphBuilder(BaseEstimator, TransformerMixin):
    """Turn dialogues, or ``(user, [(item, score), ...])`` rows, into sample graphs."""

    def __init__(self, kg=None, max_aux_nodes: int = DEFAULT_MAX_AUX):
        self.kg = kg
        self.max_aux_nodes = max_aux_nodes

    def fit(self, X=None, y=None):
        check_kg(self.kg)
        check_positive_int(self.max_aux_nodes, "max_aux_nodes", minimum=0)
        self.n_entities_ = len(self.kg.entities)
        return self

    def transform(self, X):
        check_is_fitted(self, "n_entities_")
        out = []
        for x in X:
            if isinstance(x, DialogueSample):
                out.append(graph_from_dialogue(x, self.kg, self.max_aux_nodes))
            else:
                user, picks = x
                out.append(graph_from_ratings(user, picks, self.kg, self.max_aux_nodes))
        return out


class DialogueGenerator(BaseEstimator):
    """Graph-to-dialogue generator.

    ``fit(X, y)`` trains on sample graphs ``X`` paired with dialogues ``y``;
    extra unlabelled graphs passed as ``X_synthetic`` take part in the
    adversarial term only. ``predict`` decodes one dialogue per graph.
    Preset-controlled values (dim, lr, batch_size) left as None come from
    ``preset``.
    """

    def __init__(self, kg=None, preset: str = "desk", dim: Optional[int] = None, num_layers: int = 2,
                 activation: str = "relu", epochs: int = 50, batch_size: Optional[int] = None,
                 lr: Optional[float] = None, weight_decay: float = 0.01, lambdas=(0.8, 0.8, 0.1),
                 adversarial: bool = True, adv_convention: str = "literal", clip_norm: float = 5.0,
                 freeze_context: bool = True, max_len: int = 64, max_nodes: int = 96,
                 strategy: str = "greedy", beam_width: int = 1, seed: int = 0, workers: int = 1):
        self.kg = kg
        self.preset = preset
        self.dim = dim
        self.num_layers = num_layers
        self.activation = activation
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.lambdas = lambdas
        self.adversarial = adversarial
        self.adv_convention = adv_convention
        self.clip_norm = clip_norm
        self.freeze_context = freeze_context
        self.max_len = max_len
        self.max_nodes = max_nodes
        self.strategy = strategy
        self.beam_width = beam_width
        self.seed = seed
        self.workers = workers

    def _resolved(self) -> dict:
        if self.preset not in PRESETS:
            raise ValueError(f"preset must be one of {sorted(PRESETS)}, got {self.preset!r}")
        base = PRESETS[self.preset]
        return {k: base[k] if getattr(self, k) is None else getattr(self, k) for k in base}

    def _configs(self):
        r = self._resolved()
        mc = ModelConfig(dim=check_positive_int(r["dim"], "dim"),
                         num_layers=check_positive_int(self.num_layers, "num_layers", minimum=0),
                         activation=self.activation, max_len=check_positive_int(self.max_len, "max_len", 2),
                         max_nodes=check_positive_int(self.max_nodes, "max_nodes"), seed=self.seed)
        tc = TrainConfig(epochs=check_positive_int(self.epochs, "epochs"),
                         batch_size=check_positive_int(r["batch_size"], "batch_size"),
                         lr=check_positive_float(r["lr"], "lr"),
                         weight_decay=check_positive_float(self.weight_decay, "weight_decay", allow_zero=True),
                         seed=self.seed, lambdas=check_lambdas(self.lambdas), adversarial=bool(self.adversarial),
                         adv_convention=self.adv_convention, clip_norm=self.clip_norm,
                         freeze_context=self.freeze_context, workers=check_positive_int(self.workers, "workers"))
        return mc, tc

    def fit(self, X, y, X_synthetic=None):
        kg = check_kg(self.kg)
        X, y = check_pairs(X, y)
        synth = check_graphs(X_synthetic, "X_synthetic") if X_synthetic is not None else []
        if self.activation not in ("relu", "identity"):
            raise ValueError(f"activation must be 'relu' or 'identity', got {self.activation!r}")
        mc, tc = self._configs()
        vocab = Vocab.build(y, kg)
        model = Data2TextModel(vocab, RelationSpace.from_kg(kg), kg.entities, mc)
        result = train(list(zip(X, y)), synth, tc, model)
        self.model_ = result.model
        self.vocab_ = vocab
        self.history_ = result.log
        self.n_steps_ = result.steps
        self.train_config_ = tc
        return self

    def predict(self, X) -> list:
        """One segmented dialogue per graph; None where segmentation failed."""
        return [s.dialogue for s in self.synthesize(X)]

    def synthesize(self, X) -> list:
        """Like :meth:`predict` but keeps tokens, linearization and validator issues."""
        check_is_fitted(self, "model_")
        X = check_graphs(X)
        return [decode_graph(self.model_, g, f"gen-{i}", self.strategy, self.beam_width)
                for i, g in enumerate(X)]

    def score(self, X, y) -> float:
        """Mean per-token log-likelihood of ``y`` given ``X`` (higher is better)."""
        check_is_fitted(self, "model_")
        X, y = check_pairs(X, y)
        total, tokens = evaluate_nll(self.model_, list(zip(X, y)))
        return -total / max(1, tokens)

    def save(self, path: str):
        check_is_fitted(self, "model_")
        save_checkpoint(path, self.model_, self.train_config_)

    @classmethod
    def from_checkpoint(cls, path: str, kg=None, **params):
        model, header = load_checkpoint(path)
        mc = model.config
        est = cls(kg=kg, dim=mc.dim, num_layers=mc.num_layers, activation=mc.activation, max_len=mc.max_len,
                  max_nodes=mc.max_nodes, seed=mc.seed, **params)
        est.model_ = model
        est.vocab_ = model.vocab
        est.history_ = []
        est.n_steps_ = 0
        tc = header.get("train_config")
        est.train_config_ = TrainConfig(**{**tc, "lambdas": tuple(tc["lambdas"])}) if tc else None
        return est

    @property
    def n_params_(self) -> int:
        check_is_fitted(self, "model_")
        return int(sum(np.size(v) for v in self.model_.params.values()))
