"""Acceptance suite. Each test carries a ``criterion`` mark; the terminal
summary prints one PASS/FAIL line per criterion (see conftest)."""

import contextlib
import io
import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from august.align import REAL, SYNTHETIC, discriminate
from august.cli import main
from august.corpus import Rating, UserItemMatrix, load_dialogues, load_ratings, serialize_ratings
from august.encoder import RelationSpace
from august.generator import flatten_dialogue, segment
from august.graph import graph_from_ratings, load_graphs
from august.kg import find_item_paths, parse_triples, serialize_triples
from august.metrics import bleu, chrf_pp, cider, dist_n, entity_recall, perplexity, rouge_l
from august.model import Data2TextModel, ModelConfig
from august.pipeline import decode_graph
from august.toy import MOVIES, toy_kg, toy_pairs, toy_ratings_csv
from august.trainer import PRESETS, TrainConfig, evaluate_nll, train
from august.vocab import Vocab, tokenize
from helpers import (
    CANONICAL_WORDS,
    brute_item_paths,
    directional_check,
    oracle_bleu,
    oracle_chrf,
    oracle_cider,
    oracle_dist,
    oracle_rouge_l,
    random_canonical_dialogue,
    random_instance,
    random_kg_text,
)

FIXTURE = json.loads((Path(__file__).parent / "fixtures" / "metric_pairs.json").read_text())
TOY_EPOCHS = 60


def cli(*argv):
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main([str(a) for a in argv])
    return code, out.getvalue()


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    """Toy corpus plus a seeded checkpoint trained through the CLI."""
    root = tmp_path_factory.mktemp("toy")
    code, out = cli("make-toy", "--out", root / "data")
    assert code == 0
    files = json.loads(out)
    ck = root / "model.json"
    code, _ = cli("train", "--kg", files["kg"], "--dialogues", files["dialogues"], "--ratings", files["ratings"],
                  "--checkpoint", ck, "--log", root / "loss.csv", "--epochs", TOY_EPOCHS, "--seed", 0)
    assert code == 0
    return root, files, ck


# -- 1 -------------------------------------------------------------------

GRAD_CASES = {
    "L_gen": dict(gen_weight=1.0, lambdas=(0, 0, 0), adversarial=False),
    "L_align": dict(gen_weight=0.0, lambdas=(1, 0, 0), adversarial=False),
    "L_copy": dict(gen_weight=0.0, lambdas=(0, 1, 0), adversarial=False),
    "L_adv": dict(gen_weight=0.0, lambdas=(0, 0, 1), adversarial=True),
    "L_over": dict(gen_weight=1.0, lambdas=(0.8, 0.8, 0.1), adversarial=True),
}


@pytest.mark.criterion(1, "gradient suite")
def test_gradient_suite(record_property):
    start = time.perf_counter()
    worst = {k: 0.0 for k in GRAD_CASES}
    for seed in range(20):
        kg, g, d, v, m = random_instance(seed)
        assert g.num_nodes <= 10 and m.config.dim <= 8 and len(v) <= 30
        rng = np.random.default_rng(1000 + seed)
        for name, kw in GRAD_CASES.items():
            for domain in ((REAL, SYNTHETIC) if kw["adversarial"] else (REAL,)):
                dia = d if domain == REAL else None
                toks = None if dia else m.generate(g, max_len=8)[0]
                _, _, grads = m.objective_grad(g, dia, domain, synth_tokens=toks, **kw)
                err, where = directional_check(lambda: m.objective(g, dia, domain, synth_tokens=toks, **kw)[0],
                                               m.params, grads, rng)
                assert err < 1e-4, (name, seed, domain, where, err)
                worst[name] = max(worst[name], err)
    elapsed = time.perf_counter() - start
    record_property("detail", "worst rel err %.1e, %.1f s" % (max(worst.values()), elapsed))
    assert elapsed < 30


# -- 2 -------------------------------------------------------------------

@pytest.mark.criterion(2, "path search equals brute force")
def test_path_search_oracle(record_property):
    rng = np.random.default_rng(2024)
    kgs = [parse_triples(random_kg_text(rng, int(rng.integers(2, 51)), n_relations=4)) for _ in range(100)]
    start = time.perf_counter()
    pairs = 0
    for kg in kgs:
        assert len(kg.entities) <= 50 and len(kg.relations) <= 4
        for (a, b), expected in brute_item_paths(kg.triples, kg.item_set).items():
            got = find_item_paths(kg, a, b)
            assert {(p.kind, p.triples, p.intermediate) for p in got} == expected
            assert len(got) == len(expected)
            pairs += 1
    elapsed = time.perf_counter() - start
    record_property("detail", "%d item pairs, %.2f s" % (pairs, elapsed))
    assert elapsed < 5


# -- 3 -------------------------------------------------------------------

@pytest.mark.criterion(3, "metric oracles")
def test_metric_oracles(record_property):
    c = [tokenize(x) for x, _ in FIXTURE["pairs"]]
    r = [tokenize(y) for _, y in FIXTURE["pairs"]]
    got = {"bleu_1": bleu(c, r, 1), "bleu_2": bleu(c, r, 2), "bleu_4": bleu(c, r, 4), "rouge_l": rouge_l(c, r),
           "cider": cider(c, r), "chrf_pp": chrf_pp(c, r),
           "dist_1": dist_n(c, 1), "dist_2": dist_n(c, 2), "dist_3": dist_n(c, 3)}
    oracle = {"bleu_1": oracle_bleu(c, r, 1), "bleu_2": oracle_bleu(c, r, 2), "bleu_4": oracle_bleu(c, r, 4),
              "rouge_l": oracle_rouge_l(c, r), "cider": oracle_cider(c, r), "chrf_pp": oracle_chrf(c, r),
              "dist_1": oracle_dist(c, 1), "dist_2": oracle_dist(c, 2), "dist_3": oracle_dist(c, 3)}
    for k in got:
        assert abs(got[k] - oracle[k]) <= 1e-9, k
        assert abs(got[k] - FIXTURE["expected"][k]) <= 1e-9, k
    for corpus in (c, r):
        assert bleu(corpus, corpus, 4) == pytest.approx(1.0, abs=1e-12)
        assert rouge_l(corpus, corpus) == pytest.approx(1.0, abs=1e-12)
        assert chrf_pp(corpus, corpus) == pytest.approx(1.0, abs=1e-12)
    ppl = perplexity(7 * math.log(10), 7)
    assert abs(ppl - 10.0) <= 1e-9
    record_property("detail", "9 metrics vs oracles, PPL %.12f" % ppl)


# -- 4 -------------------------------------------------------------------

@pytest.mark.criterion(4, "overfit integration")
def test_overfit(record_property):
    kg, pairs = toy_pairs(20)
    desk = PRESETS["desk"]
    model = Data2TextModel(Vocab.build([d for _, d in pairs], kg), RelationSpace.from_kg(kg), kg.entities,
                           ModelConfig(dim=desk["dim"], seed=0))
    cfg = TrainConfig(epochs=200, batch_size=desk["batch_size"], lr=desk["lr"], adversarial=False, workers=1)
    start = time.perf_counter()
    res = train(pairs, [], cfg, model)
    total, tokens = evaluate_nll(model, pairs)
    nll = total / tokens
    first = next((e["step"] for e in res.log if e["nll_per_token"] < 0.1), None)
    recalls, type_one = [], 0
    for i, (g, _) in enumerate(pairs):
        s = decode_graph(model, g, f"overfit-{i}")
        type_one += sum(x.type == "TypeI" for x in s.issues)
        recalls.append(entity_recall(s.dialogue, g) if s.dialogue is not None else 0.0)
    elapsed = time.perf_counter() - start
    record_property("detail", "NLL/token %.4f after %d steps (first < 0.1 at step %s), mean recall %.3f, "
                              "min %.3f, TypeI %d, %.1f s"
                    % (nll, res.steps, first, np.mean(recalls), min(recalls), type_one, elapsed))
    assert res.steps <= 5000 and nll < 0.1
    assert np.mean(recalls) >= 0.9
    assert type_one == 0
    assert elapsed < 300


# -- 5 -------------------------------------------------------------------

def _pooled(model, real, synth):
    X, y = [], []
    for g, d in real:
        st = model.forward(g, d, REAL)
        X += [st.pooled.phi, st.pooled.psi]
        y += [1, 1]
    for g in synth:
        st = model.forward(g, None, SYNTHETIC)
        X += [st.pooled.phi, st.pooled.psi]
        y += [0, 0]
    return X, np.array(y)


def _balanced_accuracy(model, X, y, flip):
    disc = model.disc_params()
    pred = np.array([discriminate(x, disc) > 0.5 for x in X], dtype=int)
    label = 1 - y if flip else y
    return 0.5 * (np.mean(pred[label == 1] == 1) + np.mean(pred[label == 0] == 0)), pred


def _supervised(log):
    return np.array([e["l_gen"] + 0.8 * e["l_align"] + 0.8 * e["l_copy"] for e in log])


@pytest.mark.criterion(5, "adversarial toy")
def test_adversarial_toy(record_property):
    kg, pairs = toy_pairs(40)
    rng = np.random.default_rng(7)
    movies = sorted(MOVIES)
    synth = [graph_from_ratings(f"s{i}", [(m, int(rng.integers(1, 6))) for m in rng.choice(movies, 4, replace=False)],
                                kg) for i in range(40)]
    vocab = Vocab.build([d for _, d in pairs], kg)
    train_real, held_real, train_synth, held_synth = pairs[:20], pairs[20:], synth[:20], synth[20:]

    def run(adversarial, convention="literal"):
        model = Data2TextModel(vocab, RelationSpace.from_kg(kg), kg.entities, ModelConfig(dim=16, seed=0))
        res = train(train_real, train_synth,
                    TrainConfig(epochs=150, adversarial=adversarial, adv_convention=convention, seed=0), model)
        return model, _supervised(res.log)

    _, off = run(False)
    model, lit = run(True, "literal")
    X, y = _pooled(model, held_real, held_synth)
    acc, pred = _balanced_accuracy(model, X, y, flip=True)
    ratio = float(np.exp(np.mean(np.log(lit / off))))

    std_model, std = run(True, "standard")
    std_acc, _ = _balanced_accuracy(std_model, *_pooled(std_model, held_real, held_synth), flip=False)
    std_ratio = float(np.exp(np.mean(np.log(std / off))))
    record_property("detail", "held-out balanced acc %.3f (discriminator predicts %d distinct classes), "
                              "supervised loss ratio %.3f; info: standard convention acc %.3f, ratio %.3f"
                    % (acc, len(set(pred)), ratio, std_acc, std_ratio))
    assert abs(acc - 0.5) <= 0.1
    assert abs(ratio - 1.0) <= 0.1


# -- 6 -------------------------------------------------------------------

def _tree(directory):
    return {p.name: p.read_bytes() for p in sorted(Path(directory).iterdir())}


@pytest.mark.criterion(6, "determinism")
def test_determinism(record_property, toy_run, tmp_path):
    root, files, ck = toy_run
    common = ("--kg", files["kg"], "--dialogues", files["dialogues"], "--ratings", files["ratings"],
              "--epochs", 3, "--seed", 11)
    trained = []
    for run in range(2):
        code, out = cli("train", *common, "--checkpoint", tmp_path / f"ck{run}.json", "--log", tmp_path / f"l{run}.csv")
        assert code == 0
        trained.append((out, (tmp_path / f"ck{run}.json").read_bytes(), (tmp_path / f"l{run}.csv").read_bytes()))
    assert trained[0] == trained[1]

    synthesized = []
    for run in range(2):
        out_dir = tmp_path / f"syn{run}"
        code, out = cli("synth", "--kg", files["kg"], "--ratings", files["ratings"], "--checkpoint", ck,
                        "--out", out_dir, "--dump-linearization", "--seed", 3)
        assert code == 0
        synthesized.append((out, _tree(out_dir)))
    assert synthesized[0] == synthesized[1]

    evaluated = []
    for run in range(2):
        code, out = cli("eval", "--kg", files["kg"], "--candidates", tmp_path / "syn0" / "dialogues.jsonl",
                        "--references", tmp_path / "syn0" / "dialogues.jsonl", "--out", tmp_path / f"e{run}.json")
        assert code == 0
        evaluated.append((out, (tmp_path / f"e{run}.json").read_bytes()))
    assert evaluated[0] == evaluated[1]

    # the same synthesis from shuffled copies of the triple file
    lines = Path(files["kg"]).read_text().splitlines()
    reference = (tmp_path / "syn0" / "linearization.json").read_bytes()
    shuffle = np.random.default_rng(0)
    for k in range(10):
        shuffle.shuffle(lines)
        kg_path = tmp_path / f"kg{k}.tsv"
        kg_path.write_text("\n".join(lines) + "\n")
        code, _ = cli("synth", "--kg", kg_path, "--ratings", files["ratings"], "--checkpoint", ck,
                      "--out", tmp_path / f"shuf{k}", "--dump-linearization", "--seed", 3)
        assert code == 0
        assert (tmp_path / f"shuf{k}" / "linearization.json").read_bytes() == reference
    record_property("detail", "train/synth/eval reruns byte-identical, 10 triple-file shuffles identical")


# -- 7 -------------------------------------------------------------------

@pytest.mark.criterion(7, "round trips")
def test_round_trips(record_property):
    kg = toy_kg()
    v = Vocab(CANONICAL_WORDS, {e: kg.label(e) for e in kg.entities})
    rng = np.random.default_rng(7)
    for i in range(100):
        d = random_canonical_dialogue(rng, kg, v, f"d{i}")
        assert segment(flatten_dialogue(d, v), v, f"d{i}") == d
    for k in range(50):
        g = parse_triples(random_kg_text(rng, int(rng.integers(1, 30))))
        text = serialize_triples(g)
        assert parse_triples(text) == g and serialize_triples(parse_triples(text)) == text
    assert parse_triples(serialize_triples(kg)) == kg
    for k in range(50):
        m = UserItemMatrix(tuple(Rating(f"u{u}", f"i{i}", int(rng.integers(1, 6)), int(rng.integers(0, 10**6)))
                                 for u in range(int(rng.integers(1, 6))) for i in range(int(rng.integers(1, 8)))))
        text = serialize_ratings(m)
        assert load_ratings(text) == m and serialize_ratings(load_ratings(text)) == text
    toy = load_ratings(toy_ratings_csv())
    assert load_ratings(serialize_ratings(toy)) == toy
    record_property("detail", "100 dialogues, 51 KGs, 51 rating matrices")


# -- 8 -------------------------------------------------------------------

@pytest.mark.criterion(8, "end-to-end CLI synth")
def test_cli_synth_structure(record_property, toy_run, tmp_path):
    root, files, ck = toy_run
    code, out = cli("synth", "--kg", files["kg"], "--ratings", files["ratings"], "--checkpoint", ck,
                    "--out", tmp_path / "syn")
    assert code == 0
    summary = json.loads(out)
    dialogues = load_dialogues((tmp_path / "syn" / "dialogues.jsonl").read_text(), toy_kg())
    graphs = load_graphs((tmp_path / "syn" / "graphs.json").read_text())
    assert summary["users"] == 5 and len(dialogues) == 5
    for d in dialogues:
        speakers = [t.speaker for t in d.turns]
        assert len(speakers) >= 2 and speakers[0] == "U"
        assert all(a != b for a, b in zip(speakers, speakers[1:])), speakers
    rating_labels = set()
    for g in graphs.values():
        rating_labels |= {r for s, r, _ in g.edges if s == 0}
    assert rating_labels and rating_labels <= {f"rate_{k}" for k in range(1, 6)}
    record_property("detail", "%d dialogues, %d turns, rating labels %s"
                    % (len(dialogues), sum(len(d.turns) for d in dialogues), sorted(rating_labels)))
