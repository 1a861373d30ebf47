"""Command-line entry point: ``august {make-toy,train,synth,eval,validate,kg-stats}``.

Exit codes: 0 success, 1 validator warnings under ``--strict``, 2 usage or
input errors. ``AUGUST_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .corpus import dump_dialogues, load_dialogues, load_ratings
from .encoder import RelationSpace, parse_embedding_table
from .errors import AugustError
from .generator import validate_dialogue
from .graph import dump_graphs, graph_from_dialogue, graph_from_ratings, load_graphs
from .kg import parse_item_list, parse_triples
from .linearize import dump_linearizations
from .metrics import evaluate
from .model import Data2TextModel, ModelConfig
from .pipeline import DEFAULT_ITEMS_PER_DIALOGUE, sample_picks, synthesize
from .toy import write_toy_corpus
from .trainer import PRESETS, TrainConfig, atomic_write, evaluate_nll, load_checkpoint, save_checkpoint, train, \
    write_loss_log
from .vocab import Vocab

log = logging.getLogger("august")


class UsageError(Exception):
    """Bad flags or unusable inputs; maps to exit code 2."""


def _read(path: str, what: str) -> str:
    if not path:
        raise UsageError(f"--{what} is required")
    if not os.path.exists(path):
        raise UsageError(f"{what} file not found: {path}")
    with open(path, encoding="utf-8") as f:
        return f.read()


def _load_kg(args):
    items = parse_item_list(_read(args.items, "items")) if getattr(args, "items", None) else None
    return parse_triples(_read(args.kg, "kg"), items)


def _write(path: str, text: str):
    atomic_write(path, text)


def _dialogue_text(d) -> str:
    return " ".join(t.text for t in d.turns)


# -- commands ------------------------------------------------------------

def cmd_make_toy(args) -> int:
    files = write_toy_corpus(args.out)
    print(json.dumps(files, sort_keys=True))
    return 0


def cmd_kg_stats(args) -> int:
    kg = _load_kg(args)
    out = {"kg": kg.stats()}
    if args.ratings:
        m = load_ratings(_read(args.ratings, "ratings"), kg)
        out["ratings"] = {"ratings": len(m.ratings), "users": m.num_users, "items": m.num_items}
    print(json.dumps(out, sort_keys=True))
    return 0


def _synthetic_graphs(args, kg, cap):
    if not args.ratings:
        return []
    m = load_ratings(_read(args.ratings, "ratings"), kg)
    graphs = []
    for user in m.users:
        picks = sample_picks(m, user, args.items_per_dialogue, args.seed)
        if picks is None:
            log.info("no synthetic graph for user %s: too few ratings", user)
            continue
        graphs.append(graph_from_ratings(user, picks, kg, cap))
    return graphs


def cmd_train(args) -> int:
    kg = _load_kg(args)
    dialogues = load_dialogues(_read(args.dialogues, "dialogues"), kg)
    if not dialogues:
        raise UsageError("no training dialogues")
    preset = PRESETS[args.preset]
    mc = ModelConfig(dim=args.dim or preset["dim"], num_layers=args.layers, seed=args.seed)
    if args.graphs:
        by_id = load_graphs(_read(args.graphs, "graphs"))
        missing = [d.id for d in dialogues if d.id not in by_id]
        if missing:
            raise UsageError(f"graphs file lacks {len(missing)} dialogue ids, first {missing[0]!r}")
        real = [(by_id[d.id], d) for d in dialogues]
    else:
        real = [(graph_from_dialogue(d, kg, mc.max_aux_nodes), d) for d in dialogues]
    table = parse_embedding_table(_read(args.embeddings, "embeddings")) if args.embeddings else None
    model = Data2TextModel(Vocab.build(dialogues, kg), RelationSpace.from_kg(kg), kg.entities, mc,
                           embedding_table=table)
    tc = TrainConfig(epochs=args.epochs, batch_size=args.batch_size or preset["batch_size"],
                     lr=args.lr or preset["lr"], seed=args.seed,
                     lambdas=(args.lambda_align, args.lambda_copy, args.lambda_adv),
                     adversarial=not args.no_adv, adv_convention=args.adv_convention, workers=args.workers)
    synth = _synthetic_graphs(args, kg, mc.max_aux_nodes) if tc.adversarial else []
    result = train(real, synth, tc, model,
                   progress=lambda e: log.info("epoch %d l_over %.6f", e["epoch"], e["l_over"]))
    save_checkpoint(args.checkpoint, result.model, tc, {"preset": args.preset})
    if args.log:
        _write(args.log, write_loss_log(result.log, tc.adversarial))
    last = result.log[-1]
    print(json.dumps({"epochs": last["epoch"], "steps": result.steps, "l_over": last["l_over"],
                      "nll_per_token": last["nll_per_token"]}, sort_keys=True))
    return 0


def cmd_synth(args) -> int:
    if not args.checkpoint or not os.path.exists(args.checkpoint):
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    kg = _load_kg(args)
    matrix = load_ratings(_read(args.ratings, "ratings"), kg)
    model, _ = load_checkpoint(args.checkpoint)
    results = synthesize(model, kg, matrix, args.items_per_dialogue, args.seed, args.strategy, args.beam_width)
    os.makedirs(args.out, exist_ok=True)
    dialogues = [r.dialogue for r in results if r.dialogue is not None]
    issues = [i.to_json(r.id) for r in results for i in r.issues]
    _write(os.path.join(args.out, "dialogues.jsonl"), dump_dialogues(dialogues))
    _write(os.path.join(args.out, "graphs.json"), dump_graphs({r.id: r.graph for r in results}))
    _write(os.path.join(args.out, "validation.jsonl"), "".join(json.dumps(i, sort_keys=True) + "\n" for i in issues))
    if args.dump_linearization:
        _write(os.path.join(args.out, "linearization.json"),
               dump_linearizations({r.id: r.linearization for r in results}))
    print(json.dumps({"users": matrix.num_users, "dialogues": len(dialogues), "issues": len(issues)},
                     sort_keys=True))
    return 1 if args.strict and issues else 0


def cmd_eval(args) -> int:
    kg = _load_kg(args) if args.kg else None
    cands = load_dialogues(_read(args.candidates, "candidates"), kg)
    refs = load_dialogues(_read(args.references, "references"), kg)
    if len(cands) != len(refs):
        raise UsageError(f"{len(cands)} candidates but {len(refs)} references")
    if not cands:
        raise UsageError("empty evaluation corpus")
    graphs = None
    if args.recall or args.items_only:
        if not args.graphs:
            raise UsageError("--recall needs --graphs")
        by_id = load_graphs(_read(args.graphs, "graphs"))
        missing = [d.id for d in cands if d.id not in by_id]
        if missing:
            raise UsageError(f"no graph for candidate {missing[0]!r}")
        graphs = [by_id[d.id] for d in cands]
    nll = None
    if args.checkpoint:
        if not args.graphs or kg is None:
            raise UsageError("perplexity needs --checkpoint, --graphs and --kg")
        model, _ = load_checkpoint(args.checkpoint)
        by_id = load_graphs(_read(args.graphs, "graphs"))
        nll = evaluate_nll(model, [(by_id[d.id], d) for d in refs if d.id in by_id])
    report = evaluate([_dialogue_text(d) for d in cands], [_dialogue_text(d) for d in refs],
                      generated=cands if graphs else None, graphs=graphs, nll=nll, items_only=args.items_only,
                      smooth=not args.raw_bleu)
    if args.out:
        _write(args.out, json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
    sys.stdout.write(report.table())
    return 0


def cmd_validate(args) -> int:
    kg = _load_kg(args) if args.kg else None
    dialogues = load_dialogues(_read(args.dialogues, "dialogues"), kg)
    graphs = load_graphs(_read(args.graphs, "graphs"))
    lines = []
    for d in dialogues:
        if d.id not in graphs:
            raise UsageError(f"no graph for dialogue {d.id!r}")
        lines += [json.dumps(i.to_json(d.id), sort_keys=True) for i in validate_dialogue(d, graphs[d.id])]
    text = "".join(line + "\n" for line in lines)
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    return 1 if args.strict and lines else 0


# -- parser --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="august", description="Knowledge-graph grounded dialogue synthesis.")
    sub = p.add_subparsers(dest="command", required=True)

    def kg_flags(sp, required=True):
        sp.add_argument("--kg", required=required, help="triple file (TSV)")
        sp.add_argument("--items", help="optional item list, one entity per line")

    toy = sub.add_parser("make-toy", help="write the toy KG, ratings and dialogues")
    toy.add_argument("--out", required=True)
    toy.set_defaults(func=cmd_make_toy)

    st = sub.add_parser("kg-stats", help="counts for a KG (and ratings)")
    kg_flags(st)
    st.add_argument("--ratings")
    st.set_defaults(func=cmd_kg_stats)

    tr = sub.add_parser("train", help="train a checkpoint")
    kg_flags(tr)
    tr.add_argument("--dialogues", required=True)
    tr.add_argument("--graphs", help="graphs JSON keyed by dialogue id (default: built from mentions)")
    tr.add_argument("--ratings", help="rating file for synthetic-domain graphs")
    tr.add_argument("--embeddings", help="optional entity embedding table")
    tr.add_argument("--checkpoint", required=True, help="output checkpoint path")
    tr.add_argument("--log", help="CSV loss log path")
    tr.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    tr.add_argument("--epochs", type=int, required=True)
    tr.add_argument("--dim", type=int)
    tr.add_argument("--layers", type=int, default=2)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--lambda-align", type=float, default=0.8)
    tr.add_argument("--lambda-copy", type=float, default=0.8)
    tr.add_argument("--lambda-adv", type=float, default=0.1)
    tr.add_argument("--no-adv", action="store_true")
    tr.add_argument("--adv-convention", choices=("literal", "standard"), default="literal")
    tr.add_argument("--items-per-dialogue", type=int, default=DEFAULT_ITEMS_PER_DIALOGUE)
    tr.add_argument("--workers", type=int, default=1)
    tr.add_argument("--seed", type=int, default=0)
    tr.set_defaults(func=cmd_train)

    sy = sub.add_parser("synth", help="synthesize dialogues from a rating file")
    kg_flags(sy)
    sy.add_argument("--ratings", required=True)
    sy.add_argument("--checkpoint", required=True)
    sy.add_argument("--out", required=True, help="output directory")
    sy.add_argument("--items-per-dialogue", type=int, default=DEFAULT_ITEMS_PER_DIALOGUE)
    sy.add_argument("--strategy", choices=("greedy", "beam"), default="greedy")
    sy.add_argument("--beam-width", type=int, default=1)
    sy.add_argument("--dump-linearization", action="store_true")
    sy.add_argument("--strict", action="store_true")
    sy.add_argument("--seed", type=int, default=0)
    sy.set_defaults(func=cmd_synth)

    ev = sub.add_parser("eval", help="score candidate dialogues against references")
    kg_flags(ev, required=False)
    ev.add_argument("--candidates", required=True)
    ev.add_argument("--references", required=True)
    ev.add_argument("--graphs")
    ev.add_argument("--recall", action="store_true")
    ev.add_argument("--items-only", action="store_true")
    ev.add_argument("--checkpoint", help="score reference perplexity under this model")
    ev.add_argument("--raw-bleu", action="store_true", help="disable BLEU smoothing")
    ev.add_argument("--out", help="write the report as JSON")
    ev.set_defaults(func=cmd_eval)

    va = sub.add_parser("validate", help="type I / type II checks of dialogues against graphs")
    kg_flags(va, required=False)
    va.add_argument("--dialogues", required=True)
    va.add_argument("--graphs", required=True)
    va.add_argument("--out")
    va.add_argument("--strict", action="store_true")
    va.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    level = os.environ.get("AUGUST_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0) and 2
    try:
        return args.func(args)
    except (UsageError, AugustError, ValueError, KeyError) as e:
        print(f"august {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
