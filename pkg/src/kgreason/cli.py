"""Command-line entry point.

Subcommands: stats, train, infer, eval, explain. The effective configuration
is echoed to stderr before every run; stdout carries only the payload
(answer lines, metrics, statistics, per-epoch losses) so runs are
byte-reproducible under a fixed seed. Exit codes: 0 ok, 1 usage, 2 data
error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

import numpy as np

from .config import ReasonerConfig, build_config, render_config
from .embeddings import EmbeddingTable, build_knn_index, load_embeddings
from .errors import EngineError, UsageError
from .evaluation import carve_unseen_split, compute_stats, evaluate, render_report
from .kg import Ckg, NodeTable, RelationTable, add_inverse_relations, load_triples
from .predictor import init_params, load_checkpoint, save_checkpoint
from .reasoner import Engine, Query, answer_line, explain
from .training import bidirectional_queries, train_reasoner

PROOFS_MAGIC = "proofs-v1"


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # exit code 1 instead of argparse's 2
        raise UsageError(message)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--max-depth", dest="max_depth", type=int)
    p.add_argument("--k-nodes", dest="k_nodes", type=int)
    p.add_argument("--k-triples", dest="k_triples", type=int)
    p.add_argument("--k-answers", dest="k_answers", type=int)
    p.add_argument("--beam-width", dest="beam_width", type=int)
    p.add_argument("--top-m-relations", dest="top_m_relations", type=int)
    p.add_argument(
        "--relation-filter",
        dest="relation_filter",
        action=argparse.BooleanOptionalAction,
        default=None,
    )
    p.add_argument(
        "--allow-revisit",
        dest="allow_revisit",
        action=argparse.BooleanOptionalAction,
        default=None,
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--lr-decay", dest="lr_decay", type=float)
    p.add_argument("--embedding-dim", dest="embedding_dim", type=int)
    p.add_argument(
        "--adapter",
        dest="adapter_enabled",
        action=argparse.BooleanOptionalAction,
        default=None,
    )
    p.add_argument("--predictor-hidden", dest="predictor_hidden", type=int)
    p.add_argument("--predictor-rel-dim", dest="predictor_rel_dim", type=int)
    p.add_argument("--predictor-step-dim", dest="predictor_step_dim", type=int)
    p.add_argument("--threads", type=int)


_CONFIG_KEYS = [f for f in ReasonerConfig.__dataclass_fields__]


def _resolve_config(args: argparse.Namespace) -> ReasonerConfig:
    overrides = {k: getattr(args, k, None) for k in _CONFIG_KEYS}
    cfg = build_config(file_path=getattr(args, "config", None), overrides=overrides)
    print("effective config:", file=sys.stderr)
    for line in render_config(cfg).split("\n"):
        print(f"  {line}", file=sys.stderr)
    return cfg


def _load_graph_bundle(
    train_path: str,
    embeddings_path: str,
    extra_paths: list[Optional[str]],
) -> tuple[Ckg, list[Optional[Ckg]], EmbeddingTable]:
    """Load the reasoning graph plus sibling splits into one id space, then
    the embeddings (which may register edge-less nodes), then augment."""
    nodes = NodeTable()
    relations = RelationTable()
    train = load_triples(train_path, nodes, relations)
    if train.duplicate_count:
        print(f"note: dropped {train.duplicate_count} duplicate triple(s) from {train_path}", file=sys.stderr)
    extras = []
    for p in extra_paths:
        if p is None:
            extras.append(None)
            continue
        extra = load_triples(p, nodes, relations)
        if extra.duplicate_count:
            print(f"note: dropped {extra.duplicate_count} duplicate triple(s) from {p}", file=sys.stderr)
        extras.append(extra)
    graph = add_inverse_relations(train)
    table = load_embeddings(embeddings_path, nodes, allow_new=True)
    return graph, extras, table


def _make_engine(graph: Ckg, table, checkpoint_path: str, cfg: ReasonerConfig) -> Engine:
    params = load_checkpoint(checkpoint_path)
    if params.n_relations != len(graph.relations):
        raise EngineError(
            f"checkpoint covers {params.n_relations} relations, graph has {len(graph.relations)}"
        )
    index = build_knn_index(table)
    return Engine(g=graph, table=table, index=index, params=params, cfg=cfg)


def _cmd_stats(args: argparse.Namespace) -> int:
    nodes = NodeTable()
    relations = RelationTable()
    train = load_triples(args.train, nodes, relations)
    test = load_triples(args.test, nodes, relations)
    stats = compute_stats(train, test)
    print(f"node_count = {stats.node_count}")
    print(f"edge_count = {stats.edge_count}")
    print(f"avg_in_degree = {stats.avg_in_degree:.6f}")
    print(f"density = {stats.density:.6g}")
    print("density_formula = edges / (nodes * (nodes - 1))")
    print(f"unseen_node_ratio = {stats.unseen_node_ratio:.6f}")
    print(f"unseen_edge_ratio = {stats.unseen_edge_ratio:.6f}")
    print(f"relation_count = {stats.relation_count}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    graph, (dev,), table = _load_graph_bundle(args.train, args.embeddings, [args.dev])
    params = init_params(
        n_relations=len(graph.relations),
        d_r=cfg.predictor_rel_dim,
        d_s=cfg.predictor_step_dim,
        hidden=cfg.predictor_hidden,
        d_max=cfg.max_depth,
        seed=cfg.seed,
    )
    if cfg.epochs == 0:
        save_checkpoint(args.checkpoint_out, params)
        print(f"wrote untrained checkpoint to {args.checkpoint_out}", file=sys.stderr)
        return 0
    dev_queries = bidirectional_queries(dev)

    def emit(stats) -> None:
        print(
            f"epoch {stats.epoch} train_loss {stats.train_loss:.6f}"
            f" ce_loss {stats.ce_loss:.6f} dev_loss {stats.dev_loss:.6f}"
            f" lr {stats.lr:.6g}"
        )

    params, diag = train_reasoner(graph, dev_queries, table, params, cfg, on_epoch=emit)
    save_checkpoint(args.checkpoint_out, params)
    if diag.adapter is not None:
        adapter_path = args.checkpoint_out + ".adapter"
        np.savetxt(adapter_path, diag.adapter, fmt="%.9g")
        print(f"wrote adapter to {adapter_path}", file=sys.stderr)
    if args.report_dir:
        from .report import write_training_report

        for path in write_training_report(diag, args.report_dir):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def _parse_query_arg(raw: str, graph: Ckg) -> Query:
    if "\t" not in raw:
        raise UsageError("query must be 'relation<TAB>head text'")
    rel_name, head_text = raw.split("\t", 1)
    relation = graph.relations.resolve(rel_name)
    head = graph.nodes.id_of(head_text)
    return Query(relation=relation, head=head)


def _cmd_infer(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    graph, _, table = _load_graph_bundle(args.graph, args.embeddings, [])
    engine = _make_engine(graph, table, args.checkpoint, cfg)
    query = _parse_query_arg(args.query, graph)
    answers = engine.answers(query)
    for rank, answer in enumerate(answers, start=1):
        print(answer_line(rank, answer, graph))
        if args.explain:
            for line in explain(answer, graph).split("\n"):
                print(f"  {line}")
    if args.save_proofs:
        payload = {
            "version": PROOFS_MAGIC,
            "query": {
                "relation": graph.relations.display_name(query.relation),
                "head": graph.nodes.text_of(query.head),
            },
            "answers": [
                {
                    "rank": rank,
                    "score": answer.score,
                    "tail": graph.nodes.text_of(answer.tail),
                    "rule": answer.rendered_rule,
                    "path_nodes": [graph.nodes.text_of(answer.proof.start)]
                    + [graph.nodes.text_of(s.triple.tail) for s in answer.proof.steps],
                    "path_relations": [
                        graph.relations.display_name(s.triple.relation)
                        for s in answer.proof.steps
                    ],
                }
                for rank, answer in enumerate(answers, start=1)
            ],
        }
        with open(args.save_proofs, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
        print(f"wrote proofs to {args.save_proofs}", file=sys.stderr)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve_config(args)
    graph, (test, dev), table = _load_graph_bundle(
        args.train, args.embeddings, [args.test, args.dev]
    )
    engine = _make_engine(graph, table, args.checkpoint, cfg)
    test_triples = list(test.triples)
    if args.unseen_only:
        test_triples = carve_unseen_split(graph, test)
        if not test_triples:
            print("0 triples evaluated")
            return 0
    filter_triples = [
        t for t in graph.triples if not graph.relations.is_inverse(t.relation)
    ] + list(test.triples) + (list(dev.triples) if dev is not None else [])

    score_fn = engine.score_map
    if cfg.threads > 1:
        queries = []
        for t in test_triples:
            queries.append(Query(relation=t.relation, head=t.head))
            queries.append(Query(relation=graph.relations.inverse_of(t.relation), head=t.tail))
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            maps = list(pool.map(engine.score_map, queries))
        cache = dict(zip(queries, maps))
        score_fn = cache.__getitem__

    report = evaluate(score_fn, test_triples, graph, filter_triples)
    print(render_report(report, tsv=args.tsv))
    if args.report_dir:
        from .report import write_eval_report

        for path in write_eval_report(report, args.report_dir):
            print(f"wrote {path}", file=sys.stderr)
    return 0


def _cmd_explain(args: argparse.Namespace) -> int:
    try:
        with open(args.proofs, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise EngineError(f"cannot open proof file {args.proofs}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise EngineError(f"malformed proof file {args.proofs}: {exc}") from None
    if payload.get("version") != PROOFS_MAGIC:
        raise EngineError(f"unsupported proof file version in {args.proofs}")
    query = payload["query"]
    for i, answer in enumerate(payload["answers"]):
        if i:
            print()
        path = answer["path_nodes"][0]
        for rel, node in zip(answer["path_relations"], answer["path_nodes"][1:]):
            path += f" —{rel}→ {node}"
        print(answer["rule"])
        print(path)
        print(f"{query['head']} ⇢{query['relation']}⇢ {answer['tail']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgreason", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_stats = sub.add_parser("stats", help="dataset statistics for a train/test pair")
    p_stats.add_argument("train")
    p_stats.add_argument("test")
    p_stats.set_defaults(func=_cmd_stats)

    p_train = sub.add_parser("train", help="train the relation predictor")
    p_train.add_argument("train")
    p_train.add_argument("dev")
    p_train.add_argument("embeddings")
    p_train.add_argument("checkpoint_out")
    p_train.add_argument("--report-dir", dest="report_dir")
    _add_config_flags(p_train)
    p_train.set_defaults(func=_cmd_train)

    p_infer = sub.add_parser("infer", help="answer one query")
    p_infer.add_argument("checkpoint")
    p_infer.add_argument("graph")
    p_infer.add_argument("embeddings")
    p_infer.add_argument("query", help="relation<TAB>head text")
    p_infer.add_argument("--explain", action="store_true")
    p_infer.add_argument("--save-proofs", dest="save_proofs")
    _add_config_flags(p_infer)
    p_infer.set_defaults(func=_cmd_infer)

    p_eval = sub.add_parser("eval", help="filtered bidirectional link-prediction metrics")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("train")
    p_eval.add_argument("test")
    p_eval.add_argument("embeddings")
    p_eval.add_argument("--dev", help="extra split included in gold filtering")
    p_eval.add_argument("--unseen-only", dest="unseen_only", action="store_true")
    p_eval.add_argument("--tsv", action="store_true")
    p_eval.add_argument("--report-dir", dest="report_dir")
    _add_config_flags(p_eval)
    p_eval.set_defaults(func=_cmd_eval)

    p_explain = sub.add_parser("explain", help="re-render a saved proof file")
    p_explain.add_argument("proofs")
    p_explain.set_defaults(func=_cmd_explain)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
