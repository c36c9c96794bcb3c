"""Filtered ranking metrics, bidirectional query averaging, unseen-split
carving, and dataset statistics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .errors import DataError
from .kg import Ckg, Triple, forward_triples
from .reasoner import Query

ScoreMapFn = Callable[[Query], dict[int, float]]


@dataclass
class EvalRecord:
    query: Query
    gold: int
    direction: str  # "forward" | "inverse"
    rank: int

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise DataError("rank must be >= 1")


@dataclass
class DatasetStats:
    node_count: int
    edge_count: int
    avg_in_degree: float
    density: float
    unseen_node_ratio: float
    unseen_edge_ratio: float
    relation_count: int


@dataclass
class EvalReport:
    mrr: float
    hits: dict[int, float]
    forward_mrr: float
    inverse_mrr: float
    evaluated: int
    hard_failures: int
    records: list[EvalRecord] = field(default_factory=list)


def filtered_rank(scores: dict[int, float], gold: int, valid_others: set[int]) -> int:
    """Rank of the gold entity after filtering other known-valid entities.

    Ties are pessimistic: a non-filtered entity scoring equal to gold counts
    as ranked above it. A gold absent from `scores` is assigned the floor
    score first.
    """
    gold_score = scores.get(gold, 1e-6)
    rank = 1
    for entity, score in scores.items():
        if entity == gold or entity in valid_others:
            continue
        if score >= gold_score:
            rank += 1
    return rank


def mrr(ranks: Sequence[float]) -> float:
    if len(ranks) == 0:
        raise DataError("mrr over an empty rank list")
    return sum(1.0 / r for r in ranks) / len(ranks)


def hits_at(ranks: Sequence[float], k: int) -> float:
    if k < 1:
        raise DataError("hits_at requires k >= 1")
    if len(ranks) == 0:
        return 0.0
    return sum(1 for r in ranks if r <= k) / len(ranks)


def _completion_index(triples: Iterable[Triple]) -> dict[tuple[int, int], set[int]]:
    index: dict[tuple[int, int], set[int]] = {}
    for t in triples:
        index.setdefault((t.head, t.relation), set()).add(t.tail)
    return index


def evaluate(
    score_fn: ScoreMapFn,
    test_triples: Sequence[Triple],
    graph: Ckg,
    filter_triples: Sequence[Triple],
    hits_ks: Sequence[int] = (1, 3, 10),
    keep_records: bool = False,
) -> EvalReport:
    """Bidirectional filtered evaluation over forward test triples.

    Every (h, r, t) is scored as the query (h, r, ?) targeting t and as
    (t, r^-1, ?) targeting h; the per-triple metric contribution is the mean
    of the two directions' reciprocal ranks / hit indicators. Filtering uses
    every valid completion in `filter_triples` (train+dev+test combined).
    A direction whose query cannot be scored (unembedded node, relation
    unknown to the graph) contributes rank infinity and is counted as a hard
    failure.
    """
    known = _completion_index(filter_triples)
    # tail -> heads view for the inverse direction over forward triples
    inverse_known: dict[tuple[int, int], set[int]] = {}
    for t in filter_triples:
        inverse_known.setdefault((t.tail, t.relation), set()).add(t.head)

    forward_rr: list[float] = []
    inverse_rr: list[float] = []
    per_triple_rr: list[float] = []
    per_triple_hits: dict[int, list[float]] = {k: [] for k in hits_ks}
    hard_failures = 0
    records: list[EvalRecord] = []

    def direction_rank(query: Query, gold: int, valid: set[int]) -> Optional[int]:
        nonlocal hard_failures
        try:
            scores = score_fn(query)
        except DataError:
            hard_failures += 1
            return None
        return filtered_rank(scores, gold, valid - {gold})

    for t in test_triples:
        try:
            inv_rel = graph.relations.inverse_of(t.relation)
        except DataError:
            hard_failures += 2
            per_triple_rr.append(0.0)
            for k in hits_ks:
                per_triple_hits[k].append(0.0)
            continue
        fwd_q = Query(relation=t.relation, head=t.head)
        inv_q = Query(relation=inv_rel, head=t.tail)
        fwd_rank = direction_rank(fwd_q, t.tail, known.get((t.head, t.relation), set()))
        inv_rank = direction_rank(inv_q, t.head, inverse_known.get((t.tail, t.relation), set()))
        fr = 0.0 if fwd_rank is None else 1.0 / fwd_rank
        ir = 0.0 if inv_rank is None else 1.0 / inv_rank
        forward_rr.append(fr)
        inverse_rr.append(ir)
        per_triple_rr.append((fr + ir) / 2.0)
        for k in hits_ks:
            fh = 0.0 if fwd_rank is None else float(fwd_rank <= k)
            ih = 0.0 if inv_rank is None else float(inv_rank <= k)
            per_triple_hits[k].append((fh + ih) / 2.0)
        if keep_records:
            if fwd_rank is not None:
                records.append(EvalRecord(fwd_q, t.tail, "forward", fwd_rank))
            if inv_rank is not None:
                records.append(EvalRecord(inv_q, t.head, "inverse", inv_rank))

    n = len(per_triple_rr)
    if n == 0:
        return EvalReport(0.0, {k: 0.0 for k in hits_ks}, 0.0, 0.0, 0, hard_failures)
    return EvalReport(
        mrr=sum(per_triple_rr) / n,
        hits={k: sum(v) / n for k, v in per_triple_hits.items()},
        forward_mrr=sum(forward_rr) / len(forward_rr) if forward_rr else 0.0,
        inverse_mrr=sum(inverse_rr) / len(inverse_rr) if inverse_rr else 0.0,
        evaluated=n,
        hard_failures=hard_failures,
        records=records,
    )


def render_report(report: EvalReport, tsv: bool = False) -> str:
    """Metrics block; percentages with two decimals. `tsv` emits key<TAB>value."""
    rows = [("MRR", f"{report.mrr * 100:.2f}")]
    for k in sorted(report.hits):
        rows.append((f"HITS@{k}", f"{report.hits[k] * 100:.2f}"))
    rows.append(("forward_MRR", f"{report.forward_mrr * 100:.2f}"))
    rows.append(("inverse_MRR", f"{report.inverse_mrr * 100:.2f}"))
    rows.append(("evaluated", str(report.evaluated)))
    rows.append(("hard_failures", str(report.hard_failures)))
    sep = "\t" if tsv else " = "
    return "\n".join(f"{k}{sep}{v}" for k, v in rows)


def _node_set(triples: Iterable[Triple]) -> set[int]:
    nodes: set[int] = set()
    for t in triples:
        nodes.add(t.head)
        nodes.add(t.tail)
    return nodes


def compute_stats(train: Ckg, test: Ckg) -> DatasetStats:
    """Dataset statistics over the union of forward triples of both splits.

    Density uses |E| / (|N| * (|N| - 1)), the directed simple-graph formula.
    Unseen ratios follow the test-vs-train definitions: nodes of the test set
    absent from the train set, and test edges with at least one such endpoint.
    """
    train_fwd = forward_triples(train)
    test_fwd = forward_triples(test)
    union = set(train_fwd) | set(test_fwd)
    nodes = _node_set(union)
    node_count = len(nodes)
    edge_count = len(union)
    train_nodes = _node_set(train_fwd)
    test_nodes = _node_set(test_fwd)
    unseen_nodes = test_nodes - train_nodes
    unseen_edges = [
        t for t in test_fwd if t.head not in train_nodes or t.tail not in train_nodes
    ]
    relations = {t.relation for t in union}
    return DatasetStats(
        node_count=node_count,
        edge_count=edge_count,
        avg_in_degree=edge_count / node_count if node_count else 0.0,
        density=edge_count / (node_count * (node_count - 1)) if node_count > 1 else 0.0,
        unseen_node_ratio=len(unseen_nodes) / len(test_nodes) if test_nodes else 0.0,
        unseen_edge_ratio=len(unseen_edges) / len(test_fwd) if test_fwd else 0.0,
        relation_count=len(relations),
    )


def carve_unseen_split(train: Ckg, full_test: Ckg) -> list[Triple]:
    """Test triples with at least one endpoint absent from the train nodes."""
    train_nodes = _node_set(forward_triples(train))
    return [
        t
        for t in forward_triples(full_test)
        if t.head not in train_nodes or t.tail not in train_nodes
    ]
