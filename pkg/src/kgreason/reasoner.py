"""Backward-chaining beam search over the graph.

A query r_q(h_q, ?) seeds a single proof state at the query head. At each
depth the relation predictor proposes next body relations, candidates are
gathered around the frontier and weakly unified, and surviving extensions
both deposit an answer (their tail) and stay in the beam. A proof's score is
the minimum of its step unification scores; answers are deduplicated by tail,
keeping the best-scoring proof.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from .config import ReasonerConfig
from .embeddings import EmbeddingTable, KnnIndex
from .errors import DataError
from .kg import Ckg, Triple
from .predictor import RelationPredictorParams, predictor_topm
from .unify import (
    Atom,
    ScoredCandidate,
    Var,
    build_hypotheses,
    filter_by_relation,
    gather_candidates,
    score_matrix,
    select_candidates,
)

SCORE_FLOOR = 1e-6


@dataclass(frozen=True)
class Query:
    relation: int
    head: int


@dataclass(frozen=True)
class Step:
    relation: int  # predicted body relation
    triple_index: int
    triple: Triple
    score: float


@dataclass(frozen=True)
class ProofState:
    """A partially instantiated derivation; score = min over step scores.

    path_nodes holds the start node followed by every step tail, in order;
    it doubles as the visited set for cycle blocking."""

    query_relation: int
    start: int
    frontier: int
    steps: tuple[Step, ...]
    score: float
    path_nodes: tuple[int, ...]

    @property
    def depth(self) -> int:
        return len(self.steps)

    def relation_sequence(self) -> tuple[int, ...]:
        return (self.query_relation,) + tuple(s.relation for s in self.steps)

    def signature(self) -> tuple[tuple[int, int], ...]:
        return tuple((s.relation, s.triple_index) for s in self.steps)

    def attaining_pair(self) -> tuple[int, int]:
        """(frontier, matched head) node ids of the step attaining the min
        score; ties go to the earliest step. This is where a subgradient of
        the proof score lands."""
        k = min(range(len(self.steps)), key=lambda i: (self.steps[i].score, i))
        frontier = self.start if k == 0 else self.steps[k - 1].triple.tail
        return frontier, self.steps[k].triple.head


@dataclass
class RankedAnswer:
    tail: int
    score: float
    proof: ProofState
    rendered_rule: str


def squash(score: float) -> float:
    """Affine map of a min-cosine score into (0, 1); rank preserving."""
    return min(max((score + 1.0) / 2.0, SCORE_FLOOR), 1.0 - SCORE_FLOOR)


def render_rule(g: Ckg, query_relation: int, body_relations: list[int]) -> str:
    """Abstract rule text, e.g. "r(X,Y) :- a(X,Z), b(Z,Y)"."""
    n = len(body_relations)
    if n == 0:
        raise DataError("cannot render a rule with an empty body")
    if n == 1:
        names = ["X", "Y"]
    elif n == 2:
        names = ["X", "Z", "Y"]
    else:
        names = ["X"] + [f"Z{i}" for i in range(1, n)] + ["Y"]
    head = Atom(query_relation, Var("X"), Var("Y")).render(g)
    body = ", ".join(
        Atom(r, Var(names[i]), Var(names[i + 1])).render(g)
        for i, r in enumerate(body_relations)
    )
    return f"{head} :- {body}"


def _expansion(
    g: Ckg,
    index: KnnIndex,
    table: EmbeddingTable,
    cfg: ReasonerConfig,
    frontier: int,
    relation: int,
) -> list[ScoredCandidate]:
    candidates = gather_candidates(g, index, frontier, cfg.k_nodes)
    if cfg.relation_filter:
        candidates = filter_by_relation(candidates, relation)
    if len(candidates) == 0:
        return []
    hypotheses = build_hypotheses(candidates)
    matrix = score_matrix(table, candidates, hypotheses, frontier)
    return select_candidates(matrix, candidates, cfg.k_triples)


def _beam_search(
    g: Ckg,
    index: KnnIndex,
    table: EmbeddingTable,
    params: RelationPredictorParams,
    q: Query,
    cfg: ReasonerConfig,
    collect: Optional[list[ProofState]] = None,
) -> dict[int, ProofState]:
    """Run the beam search; returns the best proof per tail. When `collect`
    is given, every surviving extension at every depth is appended to it."""
    if not 0 <= q.relation < len(g.relations):
        raise DataError(f"unknown relation id: {q.relation}")
    if not 0 <= q.head < len(g.nodes):
        raise DataError(f"unknown node id: {q.head}")
    if cfg.max_depth > params.d_max:
        raise DataError(
            f"max_depth {cfg.max_depth} exceeds the checkpoint's depth limit {params.d_max}"
        )
    start = ProofState(
        query_relation=q.relation,
        start=q.head,
        frontier=q.head,
        steps=(),
        score=math.inf,
        path_nodes=(q.head,),
    )
    beam = [start]
    best: dict[int, ProofState] = {}
    expansion_cache: dict[tuple[int, int], list[ScoredCandidate]] = {}
    topm_cache: dict[tuple[int, int], list[tuple[int, float]]] = {}
    for depth in range(1, cfg.max_depth + 1):
        extensions: list[ProofState] = []
        for state in beam:
            prev_rel = q.relation if not state.steps else state.steps[-1].relation
            if (prev_rel, depth) not in topm_cache:
                topm_cache[(prev_rel, depth)] = predictor_topm(
                    params, prev_rel, depth, cfg.top_m_relations
                )
            for rel, _prob in topm_cache[(prev_rel, depth)]:
                key = (state.frontier, rel if cfg.relation_filter else -1)
                if key not in expansion_cache:
                    expansion_cache[key] = _expansion(g, index, table, cfg, state.frontier, rel)
                for cand in expansion_cache[key]:
                    tail = cand.triple.tail
                    if not cfg.allow_revisit and tail in state.path_nodes:
                        continue
                    step = Step(
                        relation=rel,
                        triple_index=cand.triple_index,
                        triple=cand.triple,
                        score=cand.score,
                    )
                    extended = ProofState(
                        query_relation=q.relation,
                        start=q.head,
                        frontier=tail,
                        steps=state.steps + (step,),
                        score=min(state.score, cand.score),
                        path_nodes=state.path_nodes + (tail,),
                    )
                    extensions.append(extended)
                    if collect is not None:
                        collect.append(extended)
                    incumbent = best.get(tail)
                    if incumbent is None or extended.score > incumbent.score:
                        best[tail] = extended
        if not extensions:
            break
        if len(extensions) > cfg.beam_width:
            extensions.sort(key=lambda s: (-s.score, s.signature()))
            beam = extensions[: cfg.beam_width]
        else:
            beam = extensions
    return best


def answer_query(
    g: Ckg,
    index: KnnIndex,
    table: EmbeddingTable,
    params: RelationPredictorParams,
    q: Query,
    cfg: ReasonerConfig,
) -> list[RankedAnswer]:
    """Ranked answers for r_q(h_q, ?): descending score, ties by node id."""
    best = _beam_search(g, index, table, params, q, cfg)
    ordered_tails = sorted(best, key=lambda t: (-best[t].score, t))
    answers = []
    for tail in ordered_tails[: cfg.k_answers]:
        proof = best[tail]
        answers.append(
            RankedAnswer(
                tail=tail,
                score=proof.score,
                proof=proof,
                rendered_rule=render_rule(
                    g, q.relation, [s.relation for s in proof.steps]
                ),
            )
        )
    return answers


def enumerate_proofs(
    g: Ckg,
    index: KnnIndex,
    table: EmbeddingTable,
    params: RelationPredictorParams,
    q: Query,
    cfg: ReasonerConfig,
) -> list[ProofState]:
    """Every proof the beam search visits, not just the best per tail. This
    is the harvesting surface for teacher forcing: multi-hop derivations of
    directly linked facts are kept even though ranking would collapse them."""
    collected: list[ProofState] = []
    _beam_search(g, index, table, params, q, cfg, collect=collected)
    return collected


def score_query_answer(
    g: Ckg,
    index: KnnIndex,
    table: EmbeddingTable,
    params: RelationPredictorParams,
    q: Query,
    target: int,
    cfg: ReasonerConfig,
) -> float:
    """Squashed score of `target` under the query; 1e-6 floor when unproven."""
    if not 0 <= target < len(g.nodes):
        raise DataError(f"unknown node id: {target}")
    for answer in answer_query(g, index, table, params, q, cfg):
        if answer.tail == target:
            return squash(answer.score)
    return SCORE_FLOOR


def explain(answer: RankedAnswer, g: Ckg) -> str:
    """Three lines: the abstract rule, the instantiated path, and the
    concluded dashed edge."""
    proof = answer.proof
    path = g.nodes.text_of(proof.start)
    for step in proof.steps:
        rel = g.relations.display_name(step.triple.relation)
        path += f" —{rel}→ {g.nodes.text_of(step.triple.tail)}"
    conclusion = (
        f"{g.nodes.text_of(proof.start)}"
        f" ⇢{g.relations.display_name(proof.query_relation)}⇢"
        f" {g.nodes.text_of(answer.tail)}"
    )
    return "\n".join([answer.rendered_rule, path, conclusion])


def answer_line(rank: int, answer: RankedAnswer, g: Ckg) -> str:
    """One output line: rank, score to 6 decimals, tail text, one-line proof."""
    one_line = " | ".join(explain(answer, g).split("\n"))
    return f"{rank}\t{answer.score:.6f}\t{g.nodes.text_of(answer.tail)}\t{one_line}"


@dataclass
class Engine:
    """A loaded engine: graph, embeddings, index, predictor, and config."""

    g: Ckg
    table: EmbeddingTable
    index: KnnIndex
    params: RelationPredictorParams
    cfg: ReasonerConfig

    def answers(self, q: Query) -> list[RankedAnswer]:
        return answer_query(self.g, self.index, self.table, self.params, q, self.cfg)

    def score_map(self, q: Query) -> dict[int, float]:
        return {a.tail: squash(a.score) for a in self.answers(q)}

    def score(self, q: Query, target: int) -> float:
        return score_query_answer(
            self.g, self.index, self.table, self.params, q, target, self.cfg
        )


def build_queries(g: Ckg) -> list[tuple[Query, frozenset[int]]]:
    """Convert a graph's triples into (query, gold tails) pairs, one per
    distinct (head, relation), in ascending (head, relation) order."""
    golds: dict[tuple[int, int], set[int]] = {}
    for t in g.triples:
        golds.setdefault((t.head, t.relation), set()).add(t.tail)
    return [
        (Query(relation=rel, head=head), frozenset(tails))
        for (head, rel), tails in sorted(golds.items())
    ]
