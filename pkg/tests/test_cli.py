import json

import pytest

from august.cli import main
from august.corpus import load_dialogues
from august.graph import dump_graphs, graph_from_dialogue
from august.toy import toy_kg


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture
def toy(tmp_path, capsys):
    code, out, _ = run(capsys, "make-toy", "--out", tmp_path / "toy")
    assert code == 0
    return json.loads(out)


def test_make_toy_and_kg_stats(toy, capsys):
    code, out, _ = run(capsys, "kg-stats", "--kg", toy["kg"], "--ratings", toy["ratings"])
    assert code == 0
    stats = json.loads(out)
    assert stats["kg"]["items"] == 10 and stats["kg"]["triples"] == 40
    assert stats["ratings"]["users"] == 5 and stats["ratings"]["items"] == 10


def test_usage_errors_exit_two(toy, tmp_path, capsys):
    assert run(capsys, "kg-stats", "--kg", tmp_path / "missing.tsv")[0] == 2
    assert run(capsys, "train", "--kg", toy["kg"])[0] == 2
    assert run(capsys, "train", "--bogus")[0] == 2
    assert run(capsys, "nope")[0] == 2
    code, _, err = run(capsys, "synth", "--kg", toy["kg"], "--ratings", toy["ratings"],
                       "--checkpoint", tmp_path / "none.json", "--out", tmp_path / "o")
    assert code == 2 and "checkpoint not found" in err
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json\n")
    assert run(capsys, "validate", "--dialogues", bad, "--graphs", bad)[0] == 2


def test_full_scale_preset_recorded_in_checkpoint(toy, tmp_path, capsys):
    ck = tmp_path / "p.json"
    code, out, _ = run(capsys, "train", "--kg", toy["kg"], "--dialogues", toy["dialogues"], "--checkpoint", ck,
                       "--epochs", 1, "--preset", "paper", "--dim", 8, "--no-adv")
    assert code == 0 and json.loads(out)["epochs"] == 1
    header = json.loads(ck.read_text())
    tc = header["train_config"]
    assert tc["lr"] == 1e-5 and tc["batch_size"] == 16 and tc["lambdas"] == [0.8, 0.8, 0.1]
    assert header["extra"] == {"preset": "paper"}


def test_validate_strict_and_type_two(toy, tmp_path, capsys):
    kg = toy_kg()
    raw = (tmp_path / "toy" / "dialogues.jsonl").read_text()
    dialogues = load_dialogues(raw, kg)
    graphs = tmp_path / "g.json"
    graphs.write_text(dump_graphs({x.id: graph_from_dialogue(x, kg) for x in dialogues}))
    d = json.loads(raw.splitlines()[0])
    one = tmp_path / "one.jsonl"
    one.write_text(json.dumps(d) + "\n")
    args = ("validate", "--kg", toy["kg"], "--dialogues", one, "--graphs", graphs)
    assert run(capsys, *args, "--strict") == (0, "", "")
    # append a mention of an item the graph does not contain
    present = {n.entity for n in graph_from_dialogue(dialogues[0], kg).nodes}
    extra = next(e for e in kg.items() if e not in present)
    turn = d["turns"][0]
    start = len(turn["text"]) + 1
    turn["text"] += " " + kg.label(extra)
    turn["mentions"].append({"surface": kg.label(extra), "start": start, "end": len(turn["text"]),
                             "entity": extra, "sentiment": None})
    one.write_text(json.dumps(d) + "\n")
    code, out, _ = run(capsys, *args, "--strict")
    assert code == 1
    assert [json.loads(x) for x in out.splitlines()] == [{"sample_id": d["id"], "type": "TypeII", "detail": extra}]
    assert run(capsys, *args)[0] == 0


def test_eval_prints_table_and_json(toy, tmp_path, capsys):
    out_json = tmp_path / "r.json"
    code, out, _ = run(capsys, "eval", "--candidates", toy["dialogues"], "--references", toy["dialogues"],
                       "--out", out_json)
    assert code == 0 and out.splitlines()[0].split(" | ")[0].strip() == "B-2"
    rep = json.loads(out_json.read_text())
    assert rep["bleu_1"] == pytest.approx(1.0) and rep["rouge_l"] == pytest.approx(1.0)
    assert rep["chrf_pp"] == pytest.approx(1.0)
