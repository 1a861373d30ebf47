"""Loss assembly, AdamW, the alternating adversarial training loop and checkpoints."""

from __future__ import annotations

import base64
import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .align import REAL, SYNTHETIC, adv_grad, adv_loss, discriminate, indicator
from .encoder import RelationSpace
from .errors import TrainingAborted
from .model import Data2TextModel, ModelConfig
from .rng import substream
from .vocab import Vocab

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (0.8, 0.8, 0.1)
CONVENTIONS = ("literal", "standard")
CHECKPOINT_FORMAT = "august-checkpoint"
CHECKPOINT_VERSION = 1

PRESETS = {
    "desk": {"dim": 16, "lr": 1e-3, "batch_size": 4},
    "paper": {"dim": 1024, "lr": 1e-5, "batch_size": 16},
}


@dataclass(frozen=True)
class LossBundle:
    l_gen: float
    l_align: float
    l_copy: float
    l_adv: Optional[float]
    lambdas: tuple
    l_over: float


def total_loss(components: dict, lambdas=DEFAULT_LAMBDAS, adversarial: bool = True) -> LossBundle:
    """``L_gen + l1 L_align + l2 L_copy (+ l3 L_adv)``."""
    names = ("l_gen", "l_align", "l_copy") + (("l_adv",) if adversarial else ())
    for k in names:
        v = components[k]
        if v is None or not math.isfinite(v):
            raise TrainingAborted(f"loss component {k} is not finite ({v})")
    l1, l2, l3 = lambdas
    over = components["l_gen"] + l1 * components["l_align"] + l2 * components["l_copy"]
    if adversarial:
        over += l3 * components["l_adv"]
    return LossBundle(components["l_gen"], components["l_align"], components["l_copy"],
                      components["l_adv"] if adversarial else None, tuple(lambdas), over)


# -- optimizer -----------------------------------------------------------

@dataclass
class AdamWState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict = field(default_factory=dict, repr=False)
    v: dict = field(default_factory=dict, repr=False)


def adamw_step(params: dict, grads: dict, state: AdamWState):
    """In-place bias-corrected Adam update with decoupled weight decay.

    Parameters without a gradient entry are left untouched.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for k, g in grads.items():
        p = params[k]
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * state.weight_decay * p
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return params, state


def clip_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm and norm > max_norm:
        s = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * s
    return norm


# -- training loop -------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 1
    batch_size: int = 4
    lr: float = 1e-3
    weight_decay: float = 0.01
    seed: int = 0
    lambdas: tuple = DEFAULT_LAMBDAS
    adversarial: bool = True
    adv_convention: str = "literal"
    clip_norm: float = 5.0
    freeze_context: bool = True
    workers: int = 1
    deterministic: bool = True
    max_steps: Optional[int] = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not isinstance(self.seed, (int, np.integer)):
            raise ValueError("seed must be a fixed integer")
        if self.adv_convention not in CONVENTIONS:
            raise ValueError(f"adv_convention must be one of {CONVENTIONS}")
        self.lambdas = tuple(float(x) for x in self.lambdas)

    def to_json(self) -> dict:
        d = asdict(self)
        d["lambdas"] = list(self.lambdas)
        return d


@dataclass
class TrainResult:
    model: Data2TextModel
    log: list  # per-epoch dicts
    steps: int = 0


def _mean(xs):
    return float(sum(xs) / len(xs)) if xs else 0.0


def _accumulate(acc: dict, grads: dict, scale: float = 1.0):
    for k, g in grads.items():
        if k in acc:
            acc[k] += scale * g
        else:
            acc[k] = scale * g


def _map(fn, items, workers):
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


def _disc_targets(domain: str, convention: str):
    """(discriminator target, generator target) for the two conventions."""
    real = indicator(domain)
    if convention == "literal":
        return real, real
    return real, 1.0 - real


def train(real: Sequence, synth: Sequence = (), config: Optional[TrainConfig] = None,
          model: Optional[Data2TextModel] = None, progress=None) -> TrainResult:
    """Fit ``model`` on ``real`` (graph, dialogue) pairs and ``synth`` graphs.

    Real samples carry the supervised terms; synthetic graphs only enter the
    adversarial term through their pooled features. With the adversarial
    game on, every step first updates the discriminator on the batch's pooled
    features, then the generator side with the updated discriminator.
    """
    cfg = config or TrainConfig()
    if not real:
        raise ValueError("training needs at least one real sample")
    if model is None:
        raise ValueError("train() needs an initialised model")
    use_adv = cfg.adversarial
    l1, l2, l3 = cfg.lambdas
    gen_opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    disc_opt = AdamWState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    gen_keys = set(model.generator_keys(cfg.freeze_context))
    shuffle = substream(cfg.seed, "shuffle")
    synth_rng = substream(cfg.seed, "synth-order")
    history = []
    step = 0
    synth = list(synth)
    for epoch in range(1, cfg.epochs + 1):
        perm = shuffle.permutation(len(real))
        synth_order = list(synth_rng.permutation(len(synth))) if synth else []
        synth_tokens = {}
        if use_adv and synth:
            # self-decoded text for synthetic graphs, refreshed once per epoch
            synth_tokens = {i: model.generate(synth[i], max_len=max(2, model.config.max_len // 2))[0]
                            for i in range(len(synth))}
        rows = []
        cursor = 0
        for b0 in range(0, len(perm), cfg.batch_size):
            batch = [real[i] for i in perm[b0:b0 + cfg.batch_size]]
            sbatch = []
            if use_adv and synth:
                for _ in range(len(batch)):
                    sbatch.append(synth_order[cursor % len(synth_order)])
                    cursor += 1
            states = _map(lambda gd: model.forward(gd[0], gd[1], REAL), batch, cfg.workers)
            states += _map(lambda i: model.forward(synth[i], None, SYNTHETIC, synth_tokens[i]), sbatch, cfg.workers)
            n_real, n_all = len(batch), len(states)
            for k, st in enumerate(states):
                for name in ("l_gen", "l_align", "l_copy"):
                    if not math.isfinite(getattr(st, name)):
                        raise TrainingAborted(f"{name} is not finite at epoch {epoch}, batch {b0 // cfg.batch_size}")
            if use_adv:
                disc = model.disc_params()
                dgrads = {}
                for st in states:
                    t_disc, _ = _disc_targets(st.domain, cfg.adv_convention)
                    g, _, _ = adv_grad(st.pooled, disc, t_disc)
                    sign = -1.0 if cfg.adv_convention == "literal" else 1.0
                    _accumulate(dgrads, g, sign / n_all)
                clip_global_norm(dgrads, cfg.clip_norm)
                adamw_step(model.params, dgrads, disc_opt)
                disc = model.disc_params()

            def backward(st):
                d_pooled = None
                if use_adv:
                    _, t_gen = _disc_targets(st.domain, cfg.adv_convention)
                    _, dphi, dpsi = adv_grad(st.pooled, disc, t_gen)
                    d_pooled = (dphi, dpsi)
                return model.backward(st, cfg.lambdas, d_pooled, supervised=st.domain == REAL,
                                      scale=1.0 / n_real, adv_scale=1.0 / n_all)

            grads = {}
            for g in _map(backward, states, cfg.workers):
                _accumulate(grads, {k: v for k, v in g.items() if k in gen_keys})
            clip_global_norm(grads, cfg.clip_norm)
            adamw_step(model.params, grads, gen_opt)
            step += 1
            comps = {
                "l_gen": _mean([s.l_gen for s in states[:n_real]]),
                "l_align": _mean([s.l_align for s in states[:n_real]]),
                "l_copy": _mean([s.l_copy for s in states[:n_real]]),
                "l_adv": _mean([adv_loss(s.pooled, disc, _disc_targets(s.domain, cfg.adv_convention)[1])
                                for s in states]) if use_adv else None,
            }
            bundle = total_loss(comps, cfg.lambdas, use_adv)
            tokens = sum(s.tokens for s in states[:n_real])
            rows.append((bundle, tokens, sum(s.l_gen for s in states[:n_real])))
            if cfg.max_steps is not None and step >= cfg.max_steps:
                break
        entry = {"epoch": epoch, "step": step}
        for name in ("l_gen", "l_align", "l_copy", "l_over") + (("l_adv",) if use_adv else ()):
            entry[name] = _mean([getattr(b, name) for b, _, _ in rows])
        entry["nll_per_token"] = sum(r[2] for r in rows) / max(1, sum(r[1] for r in rows))
        history.append(entry)
        if progress is not None:
            progress(entry)
        log.debug("epoch %d step %d l_over %.6f", epoch, step, entry["l_over"])
        if cfg.max_steps is not None and step >= cfg.max_steps:
            break
    return TrainResult(model, history, step)


def evaluate_nll(model: Data2TextModel, pairs) -> tuple:
    """``(total_nll, token_count)`` of the real pairs under ``model``."""
    total, tokens = 0.0, 0
    for g, d in pairs:
        st = model.forward(g, d, REAL)
        total += st.l_gen
        tokens += st.tokens
    return total, tokens


def write_loss_log(history: list, adversarial: bool) -> str:
    cols = ["epoch", "step", "l_gen", "l_align", "l_copy"] + (["l_adv"] if adversarial else []) + ["l_over"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for e in history:
        w.writerow([e["epoch"], e["step"]] + [repr(float(e[c])) for c in cols[2:]])
    return buf.getvalue()


# -- checkpoints ---------------------------------------------------------

def _encode_tensor(name, arr) -> dict:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    return {"name": name, "shape": list(arr.shape), "dtype": "<f8",
            "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def _decode_tensor(obj) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=obj.get("dtype", "<f8")).reshape(obj["shape"]).astype(np.float64)


def checkpoint_to_json(model: Data2TextModel, train_config: Optional[TrainConfig] = None, extra=None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_json(),
        "train_config": train_config.to_json() if train_config else None,
        "extra": extra or {},
        "vocab": model.vocab.to_json(),
        "relations": list(model.relations.labels),
        "entities": list(model.entities),
        "tensors": [_encode_tensor(k, model.params[k]) for k in sorted(model.params)],
    }


def atomic_write(path: str, text: str):
    """Write via a temp file in the same directory, then rename."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=d)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str, model: Data2TextModel, train_config: Optional[TrainConfig] = None, extra=None):
    atomic_write(path, json.dumps(checkpoint_to_json(model, train_config, extra), sort_keys=True) + "\n")


def load_checkpoint(path: str):
    """Returns ``(model, header)`` where header holds the config snapshots."""
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')}")
    params = {t["name"]: _decode_tensor(t) for t in obj["tensors"]}
    model = Data2TextModel(Vocab.from_json(obj["vocab"]), RelationSpace(obj["relations"]), obj["entities"],
                           ModelConfig(**obj["model_config"]), params=params)
    header = {k: obj[k] for k in ("model_config", "train_config", "extra")}
    return model, header


def discriminator_labels(domain: str, convention: str = "literal") -> int:
    """Class the discriminator is trained to output for ``domain``.

    Ascending the squared error to the indicator (literal convention)
    pushes outputs toward ``1 - I``, so that is its effective label.
    """
    real = int(indicator(domain))
    return 1 - real if convention == "literal" else real


def discriminator_accuracy(model: Data2TextModel, pooled, convention: str = "literal") -> float:
    """Class-balanced accuracy of the model's discriminator on pooled features.

    Both ``phi'`` and ``psi'`` of every sample are scored; the threshold is
    0.5. A constant discriminator scores exactly 0.5.
    """
    p = model.disc_params()
    hits = {0: [], 1: []}
    for f in pooled:
        lab = discriminator_labels(f.domain, convention)
        for x in (f.phi, f.psi):
            hits[lab].append(int(discriminate(x, p) > 0.5) == lab)
    per_class = [np.mean(h) for h in hits.values() if h]
    if not per_class:
        raise ValueError("no pooled features to score")
    return float(np.mean(per_class))
