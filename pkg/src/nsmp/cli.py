"""Command-line interface.

Subcommands: answer (evaluate one formula), train-toy (fit desk-scale
embeddings), gen-queries (sample benchmark queries with oracle answer
splits), eval (batch MRR/latency report), bench (scaling measurements),
dump-ids (label<TAB>id sidecar maps). All outputs are stable JSON: repeated
runs with identical inputs produce byte-identical output.
"""

from __future__ import annotations

import argparse
import json
import sys

from nsmp import evaluation, oracle
from nsmp.engine import EngineConfig, QueryEngine, explain
from nsmp.formulas import TEMPLATES, parse
from nsmp.kg import TripleStore, load_triple_subset, load_triples_multi, write_id_map
from nsmp.predictor import load_embeddings, save_embeddings, train_toy


def _add_kg_args(p: argparse.ArgumentParser, observed: bool = True) -> None:
    p.add_argument("--kg", nargs="+", required=True, metavar="TSV",
                   help="triple TSV file(s); the union defines the full graph and the id space")
    if observed:
        p.add_argument("--observed", nargs="*", default=None, metavar="TSV",
                       help="triple subset used for inference (default: the full graph)")


def _add_engine_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--emb", help="embedding file (NSMPEMB1); required unless --no-neural")
    p.add_argument("--epsilon", type=float, default=1e-14)
    p.add_argument("--alpha", type=float, default=100.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.3,
                   help="blend weight of the symbolic score (1 = purely symbolic)")
    p.add_argument("--layers", default="auto",
                   help="'auto' (query depth + 1) or a fixed layer count")
    p.add_argument("--no-neural", action="store_true",
                   help="symbolic-only inference; no embeddings needed")
    p.add_argument("--no-pruning", action="store_true",
                   help="disable the dynamic message-passing schedule (diagnostics)")
    p.add_argument("--dnf-combiner", choices=("max", "prob-sum"), default="max")


def _load_stores(args) -> tuple[TripleStore, TripleStore]:
    full = load_triples_multi(args.kg)
    observed = full
    if getattr(args, "observed", None):
        observed = load_triple_subset(full, args.observed)
    return full, observed


def _build_engine(args, store: TripleStore) -> QueryEngine:
    layers = None if args.layers == "auto" else int(args.layers)
    config = EngineConfig(
        epsilon=args.epsilon,
        alpha=args.alpha,
        lam=1.0 if args.no_neural else args.lam,
        layers=layers,
        neural_enabled=not args.no_neural,
        dynamic_pruning=not args.no_pruning,
        dnf_combiner=args.dnf_combiner,
    )
    table = None
    if not args.no_neural:
        if not args.emb:
            raise SystemExit("--emb is required unless --no-neural is given")
        table = load_embeddings(args.emb)
    return QueryEngine(store, table, config)


def _print_json(obj) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _cmd_answer(args) -> int:
    full, observed = _load_stores(args)
    engine = _build_engine(args, observed)
    formula = parse(args.query, observed)
    result = engine.answer(formula)
    payload = {
        "query": args.query,
        "entities": observed.n_entities,
        "topk": [
            {"id": i, "entity": observed.entity_names[i], "score": score}
            for i, score in result.top_k(args.topk)
        ],
    }
    if args.explain:
        payload["explanations"] = [
            {
                variable: [
                    {"id": i, "entity": observed.entity_names[i], "weight": w}
                    for i, w in entries
                ]
                for variable, entries in branch.items()
            }
            for branch in explain(result, args.topk)
        ]
    _print_json(payload)
    return 0


def _cmd_train_toy(args) -> int:
    store = load_triples_multi(args.kg)
    table = train_toy(store, args.rank, args.epochs, args.step, args.reg, args.seed)
    save_embeddings(table, args.out)
    _print_json(
        {
            "out": args.out,
            "entities": table.n_entities,
            "relations": table.n_relations,
            "rank": table.rank,
            "epochs": args.epochs,
            "seed": args.seed,
        }
    )
    return 0


def _cmd_gen_queries(args) -> int:
    full, observed = _load_stores(args)
    generated = oracle.generate_queries(
        full,
        args.template,
        args.count,
        args.seed,
        observed=observed if observed is not full else None,
        require=args.require,
    )
    records = [
        evaluation.QueryRecord(g.formula, g.template, sorted(g.easy), sorted(g.hard))
        for g in generated
    ]
    evaluation.write_queries(records, args.out)
    _print_json({"out": args.out, "template": args.template, "count": len(records)})
    return 0


def _cmd_eval(args) -> int:
    full, observed = _load_stores(args)
    engine = _build_engine(args, observed)
    report = evaluation.run_eval(args.queries, engine, check_only=args.check_only)
    payload = report.to_dict()
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    _print_json(payload)
    return 0


def _cmd_bench(args) -> int:
    sizes = []
    for part in args.sizes.split(","):
        v, e = part.split(":")
        sizes.append((int(v), int(e)))
    templates = args.templates.split(",")
    for t in templates:
        if t not in TEMPLATES:
            raise SystemExit(f"unknown template {t!r}")
    report = evaluation.bench_scaling(
        sizes,
        templates,
        seed=args.seed,
        neural=args.neural,
        count=args.count,
        n_relations=args.relations,
        rank=args.rank,
    )
    _print_json(report.to_dict())
    return 0


def _cmd_dump_ids(args) -> int:
    store = load_triples_multi(args.kg)
    write_id_map(store.entity_names, args.entities_out)
    if args.relations_out:
        write_id_map(store.relation_names, args.relations_out)
    _print_json({"entities": store.n_entities, "relations": store.n_relations})
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nsmp",
        description="Training-free neural-symbolic query answering over knowledge graphs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("answer", help="answer a single formula")
    _add_kg_args(p)
    _add_engine_args(p)
    p.add_argument("--query", required=True, help="formula text, e.g. 'r0(e0,x1)&r1(x1,y)'")
    p.add_argument("--topk", type=int, default=10)
    p.add_argument("--explain", action="store_true",
                   help="include per-variable top-k fuzzy states per branch")
    p.set_defaults(func=_cmd_answer)

    p = sub.add_parser("train-toy", help="train desk-scale embeddings on a triple file")
    _add_kg_args(p, observed=False)
    p.add_argument("--rank", type=int, required=True)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--reg", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train_toy)

    p = sub.add_parser("gen-queries", help="sample queries with oracle answer splits")
    _add_kg_args(p)
    p.add_argument("--template", required=True, choices=sorted(TEMPLATES))
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--require", choices=("hard", "any", "none"), default="hard",
                   help="per-query requirement: a hard answer, any answer, or none")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_queries)

    p = sub.add_parser("eval", help="batch evaluation over a query JSONL file")
    _add_kg_args(p)
    _add_engine_args(p)
    p.add_argument("--queries", required=True)
    p.add_argument("--report", help="also write the JSON report to this path")
    p.add_argument("--check-only", action="store_true",
                   help="only parse and validate records; skip inference")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("bench", help="latency scaling on synthetic graphs")
    p.add_argument("--sizes", required=True, help="comma list of entities:edges, e.g. 1000:8000,2000:16000")
    p.add_argument("--templates", required=True, help="comma list of template names")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--neural", action="store_true",
                   help="bench with random embeddings instead of symbolic-only")
    p.add_argument("--rank", type=int, default=32)
    p.add_argument("--relations", type=int, default=4)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("dump-ids", help="write label<TAB>id sidecar maps for a triple file")
    _add_kg_args(p, observed=False)
    p.add_argument("--entities-out", required=True)
    p.add_argument("--relations-out")
    p.set_defaults(func=_cmd_dump_ids)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
