"""One weak-unification step.

From the frontier node of a partial proof: gather candidate triples from the
k nearest neighbours, form the hypothesis set from the candidate tails, score
the bipartite similarity matrix, and keep the best candidates. A hypothesis
atom r(frontier, h) unifies with a candidate triple r(head, tail) with score
min(cos(frontier, head), cos(tail, h)): per-argument similarities combined
under the min t-norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .embeddings import EmbeddingTable, KnnIndex, knn
from .errors import DataError
from .kg import Ckg, Triple, triple_indices_with_head


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Const:
    node: int


Term = Union[Var, Const]


@dataclass(frozen=True)
class Atom:
    """A relation applied to two terms; ground when both terms are constants."""

    relation: int
    arg1: Term
    arg2: Term

    @property
    def is_ground(self) -> bool:
        return isinstance(self.arg1, Const) and isinstance(self.arg2, Const)

    def render(self, g: Ckg) -> str:
        def term(t: Term) -> str:
            return t.name if isinstance(t, Var) else g.nodes.text_of(t.node)

        return f"{g.relations.display_name(self.relation)}({term(self.arg1)},{term(self.arg2)})"


@dataclass
class CandidateSet:
    """The candidate triples for one expansion, in ascending triple index."""

    indices: list[int]
    triples: list[Triple]
    source_nodes: list[int]

    def __len__(self) -> int:
        return len(self.indices)


@dataclass
class UnificationMatrix:
    scores: np.ndarray  # (|candidates|, |hypotheses|) float64
    hypotheses: list[int]


@dataclass
class ScoredCandidate:
    triple: Triple
    triple_index: int
    score: float
    best_hypothesis: int


def gather_candidates(g: Ckg, index: KnnIndex, frontier: int, k_nodes: int) -> CandidateSet:
    """Union of triples headed at the k_nodes nearest neighbours of `frontier`."""
    table = index.table
    if not 0 <= frontier < len(table):
        raise DataError(f"frontier node {frontier} has no embedding")
    neighbours = knn(index, table.vector(frontier), k_nodes)
    source_nodes = [node_id for node_id, _ in neighbours]
    seen: set[int] = set()
    for node_id in source_nodes:
        if node_id < len(g.nodes):
            seen.update(triple_indices_with_head(g, node_id))
    indices = sorted(seen)
    return CandidateSet(
        indices=indices,
        triples=[g.triples[i] for i in indices],
        source_nodes=source_nodes,
    )


def filter_by_relation(c: CandidateSet, relation: int) -> CandidateSet:
    """Restrict a candidate set to triples carrying `relation`."""
    kept = [(i, t) for i, t in zip(c.indices, c.triples) if t.relation == relation]
    return CandidateSet(
        indices=[i for i, _ in kept],
        triples=[t for _, t in kept],
        source_nodes=c.source_nodes,
    )


def build_hypotheses(c: CandidateSet) -> list[int]:
    """Deduplicated candidate tails, ascending node id."""
    return sorted({t.tail for t in c.triples})


def score_matrix(
    table: EmbeddingTable, c: CandidateSet, hypotheses: list[int], frontier: int
) -> UnificationMatrix:
    """U[i][j] = min(cos(frontier, head_i), cos(tail_i, h_j))."""
    if len(c) < 1 or len(hypotheses) < 1:
        raise DataError("score_matrix requires at least one candidate and one hypothesis")
    n, m = len(c), len(hypotheses)
    scores = np.empty((n, m), dtype=np.float64)
    head_sims = {}
    for i, triple in enumerate(c.triples):
        if triple.head not in head_sims:
            head_sims[triple.head] = table.cosine_ids(frontier, triple.head)
        s_head = head_sims[triple.head]
        for j, h in enumerate(hypotheses):
            scores[i, j] = min(s_head, table.cosine_ids(triple.tail, h))
    return UnificationMatrix(scores=scores, hypotheses=hypotheses)


def select_candidates(
    u: UnificationMatrix, c: CandidateSet, k_triples: int
) -> list[ScoredCandidate]:
    """Row-max scoring, descending, ties by ascending triple index, top k_triples."""
    if u.scores.shape[0] != len(c):
        raise DataError("matrix rows do not match the candidate set")
    scored = []
    for i in range(len(c)):
        row = u.scores[i]
        best_j = int(np.argmax(row))  # first index attaining the max
        scored.append(
            ScoredCandidate(
                triple=c.triples[i],
                triple_index=c.indices[i],
                score=float(row[best_j]),
                best_hypothesis=u.hypotheses[best_j],
            )
        )
    scored.sort(key=lambda sc: (-sc.score, sc.triple_index))
    return scored[: min(k_triples, len(scored))]
