"""Training driver: teacher forcing for the relation predictor from harvested
gold proofs, the ranking loss over positive/negative answers, learning-rate
decay on development-set plateaus, and the optional embedding adapter.

The ranking loss is flat in the predictor parameters (answer scores are
minima of cosines over frozen embeddings), so the predictor learns from
cross-entropy over relation sequences extracted from successful gold proofs;
harvesting runs with the relation branching widened to every relation so an
untrained predictor cannot prune the gold proofs away. The configured search
is still what both reported losses measure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .config import ReasonerConfig
from .embeddings import EmbeddingTable, build_knn_index
from .errors import NumericalAbort
from .kg import Ckg
from .predictor import (
    RelationPredictorParams,
    extract_training_sequences,
    predictor_loss_and_grad,
    sgd_step,
)
from .reasoner import (
    SCORE_FLOOR,
    Query,
    RankedAnswer,
    answer_query,
    build_queries,
    enumerate_proofs,
    squash,
)

QuerySet = list[tuple[Query, frozenset[int]]]


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    ce_loss: float
    dev_loss: float
    lr: float


@dataclass
class TrainDiagnostics:
    epochs: list[EpochStats] = field(default_factory=list)
    harvested_sequences: int = 0
    adapter: Optional[np.ndarray] = None
    final_lr: float = 0.0


# An adapter gradient term: (u, v, positive) marks the attaining cosine pair
# of one answer's proof and whether it entered the loss as a gold or a
# surfaced negative.
AdapterTerm = tuple[int, int, bool]


def bidirectional_queries(forward_graph: Ckg) -> QuerySet:
    """Queries for a forward-only split against an already augmented relation
    table: one (h, r, ?) and one (t, r^-1, ?) group per triple."""
    golds: dict[tuple[int, int], set[int]] = {}
    for t in forward_graph.triples:
        inv = forward_graph.relations.inverse_of(t.relation)
        golds.setdefault((t.head, t.relation), set()).add(t.tail)
        golds.setdefault((t.tail, inv), set()).add(t.head)
    return [
        (Query(relation=rel, head=head), frozenset(tails))
        for (head, rel), tails in sorted(golds.items())
    ]


def query_loss(
    answers: list[RankedAnswer], golds: frozenset[int]
) -> tuple[float, list[AdapterTerm]]:
    """Ranking loss of one query: -log Pr for every gold tail (floor when
    unproven) and -log(1 - Pr) for every surfaced non-gold tail."""
    by_tail = {a.tail: a for a in answers}
    loss = 0.0
    terms: list[AdapterTerm] = []
    for gold in sorted(golds):
        answer = by_tail.get(gold)
        if answer is None:
            loss += -math.log(SCORE_FLOOR)
        else:
            loss += -math.log(squash(answer.score))
            u, v = answer.proof.attaining_pair()
            if u != v:
                terms.append((u, v, True))
    for answer in answers:
        if answer.tail in golds:
            continue
        loss += -math.log(1.0 - squash(answer.score))
        u, v = answer.proof.attaining_pair()
        if u != v:
            terms.append((u, v, False))
    return loss, terms


def identity_adapter(dim: int) -> np.ndarray:
    return np.eye(dim, dtype=np.float64)


def adapt_table(base: EmbeddingTable, adapter: np.ndarray) -> EmbeddingTable:
    adapted = base.vectors.astype(np.float64) @ adapter.T
    return EmbeddingTable(vectors=adapted.astype(np.float32))


def _cos_and_grad(
    adapter: np.ndarray, u: np.ndarray, v: np.ndarray
) -> tuple[float, np.ndarray]:
    """cos(Au, Av) and its gradient in A, all float64."""
    x = adapter @ u
    y = adapter @ v
    nx = float(np.linalg.norm(x))
    ny = float(np.linalg.norm(y))
    if nx == 0.0 or ny == 0.0:
        raise NumericalAbort("adapter collapsed an embedding to zero norm")
    c = float(np.dot(x, y)) / (nx * ny)
    dc_dx = y / (nx * ny) - c * x / (nx * nx)
    dc_dy = x / (nx * ny) - c * y / (ny * ny)
    grad = np.outer(dc_dx, u) + np.outer(dc_dy, v)
    return c, grad


def adapter_loss_and_grad(
    adapter: np.ndarray, base: EmbeddingTable, terms: list[AdapterTerm]
) -> tuple[float, np.ndarray]:
    """Differentiable part of the ranking loss as a function of the adapter.

    Each term contributes -log Pr (positive) or -log(1 - Pr) (negative) with
    Pr = squash(cos(Au, Av)); the clamp regions of squash contribute zero
    gradient.
    """
    total = 0.0
    grad = np.zeros_like(adapter)
    for u_id, v_id, positive in terms:
        u = base.vectors[u_id].astype(np.float64)
        v = base.vectors[v_id].astype(np.float64)
        c, dc = _cos_and_grad(adapter, u, v)
        pr = squash(c)
        clamped = not (SCORE_FLOOR < (c + 1.0) / 2.0 < 1.0 - SCORE_FLOOR)
        if positive:
            total += -math.log(pr)
            if not clamped:
                grad += (-1.0 / pr) * 0.5 * dc
        else:
            total += -math.log(1.0 - pr)
            if not clamped:
                grad += (1.0 / (1.0 - pr)) * 0.5 * dc
    return total, grad


# a proof counts as a ground, fully unified derivation only when every step
# is an exact unification; exact node matches score exactly 1.0
_FULLY_UNIFIED = 1.0 - 1e-9


def harvest_gold_proofs(
    g: Ckg,
    index,
    table: EmbeddingTable,
    params: RelationPredictorParams,
    queries: QuerySet,
    cfg: ReasonerConfig,
) -> list:
    """Ground, fully unified derivations of gold tails.

    The search runs with the relation branching widened to all relations so an
    untrained predictor cannot prune the gold derivations away, and keeps
    every qualifying derivation, not just the best per tail: the multi-hop
    proofs of directly linked facts are exactly what teaches the predictor
    the deeper steps of a rule. Weak (non-exact) matches that merely end on a
    gold tail are speculation, not derivations, and would drown the signal."""
    explore_cfg = replace(cfg, top_m_relations=len(g.relations))
    proofs = []
    for query, golds in queries:
        for proof in enumerate_proofs(g, index, table, params, query, explore_cfg):
            if proof.frontier in golds and proof.score >= _FULLY_UNIFIED:
                proofs.append(proof)
    return proofs


def _epoch_loss(
    g: Ckg,
    index,
    table: EmbeddingTable,
    params: RelationPredictorParams,
    queries: QuerySet,
    cfg: ReasonerConfig,
) -> tuple[float, list[AdapterTerm]]:
    if not queries:
        return 0.0, []
    total = 0.0
    terms: list[AdapterTerm] = []
    for query, golds in queries:
        answers = answer_query(g, index, table, params, query, cfg)
        loss, query_terms = query_loss(answers, golds)
        total += loss
        terms.extend(query_terms)
    return total / len(queries), terms


def train_reasoner(
    g_train: Ckg,
    dev_queries: QuerySet,
    table: EmbeddingTable,
    params: RelationPredictorParams,
    cfg: ReasonerConfig,
    on_epoch=None,
) -> tuple[RelationPredictorParams, TrainDiagnostics]:
    """Train the predictor (and optionally the adapter) on g_train's queries.

    Per epoch: measure the ranking loss over the training queries, update the
    predictor by cross-entropy over harvested gold-proof sequences, update the
    adapter if enabled, then measure the development loss and decay the
    learning rate whenever it fails to decrease. `on_epoch` receives each
    EpochStats as it is produced.
    """
    diag = TrainDiagnostics()
    train_queries = build_queries(g_train)
    adapter = identity_adapter(table.dim) if cfg.adapter_enabled else None
    effective = table if adapter is None else adapt_table(table, adapter)
    index = build_knn_index(effective)

    ce_batch: list[tuple[int, int, int]] = []
    if not cfg.adapter_enabled:
        proofs = harvest_gold_proofs(g_train, index, effective, params, train_queries, cfg)
        ce_batch = extract_training_sequences(g_train, proofs)
        diag.harvested_sequences = len(ce_batch)

    lr = cfg.learning_rate
    prev_dev: Optional[float] = None
    for epoch in range(1, cfg.epochs + 1):
        if cfg.adapter_enabled:
            effective = adapt_table(table, adapter)
            index = build_knn_index(effective)
            proofs = harvest_gold_proofs(
                g_train, index, effective, params, train_queries, cfg
            )
            ce_batch = extract_training_sequences(g_train, proofs)
            diag.harvested_sequences = len(ce_batch)

        train_loss, adapter_terms = _epoch_loss(
            g_train, index, effective, params, train_queries, cfg
        )
        if not math.isfinite(train_loss):
            raise NumericalAbort(f"non-finite training loss at epoch {epoch}")

        ce_loss = 0.0
        if ce_batch:
            ce_loss, grads = predictor_loss_and_grad(params, ce_batch)
            if not math.isfinite(ce_loss):
                raise NumericalAbort(f"non-finite cross-entropy at epoch {epoch}")
            params = sgd_step(params, grads, lr)

        if adapter is not None and adapter_terms:
            _, adapter_grad = adapter_loss_and_grad(adapter, table, adapter_terms)
            if not np.all(np.isfinite(adapter_grad)):
                raise NumericalAbort(f"non-finite adapter gradient at epoch {epoch}")
            adapter = adapter - (lr / max(1, len(train_queries))) * adapter_grad

        dev_loss, _ = _epoch_loss(g_train, index, effective, params, dev_queries, cfg)
        if not math.isfinite(dev_loss):
            raise NumericalAbort(f"non-finite development loss at epoch {epoch}")

        stats = EpochStats(
            epoch=epoch, train_loss=train_loss, ce_loss=ce_loss, dev_loss=dev_loss, lr=lr
        )
        diag.epochs.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
        if prev_dev is not None and dev_loss >= prev_dev:
            lr *= cfg.lr_decay
        prev_dev = dev_loss

    params.check_finite()
    diag.adapter = adapter
    diag.final_lr = lr
    return params, diag
