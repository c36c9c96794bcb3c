"""Shared test utilities: graph builders and the independent enumeration
oracle that answer_query is checked against."""

from __future__ import annotations

import math

import numpy as np

from kgreason.config import ReasonerConfig
from kgreason.kg import Ckg, NodeTable, RelationTable, Triple
from kgreason.predictor import (
    init_params,
    predictor_loss_and_grad,
    predictor_topm,
    zeros_like_params,
)
from kgreason.reasoner import Query


def make_graph(rows: list[tuple[str, str, str]]) -> Ckg:
    """Build a Ckg in memory from (head, relation, tail) text rows."""
    nodes = NodeTable()
    relations = RelationTable()
    triples: list[Triple] = []
    seen: set[Triple] = set()
    for head, rel, tail in rows:
        t = Triple(nodes.add(head), relations.add(rel), nodes.add(tail))
        if t not in seen:
            seen.add(t)
            triples.append(t)
    return Ckg(nodes=nodes, relations=relations, triples=triples)


def write_triples(path, rows: list[tuple[str, str, str]]) -> str:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for head, rel, tail in rows:
            fh.write(f"{head}\t{rel}\t{tail}\n")
    return str(path)


def make_cfg(**overrides) -> ReasonerConfig:
    """A config sized for unit tests; override any knob."""
    base = dict(
        max_depth=3,
        k_nodes=100,
        k_triples=10_000,
        k_answers=10_000,
        beam_width=1_000_000,
        top_m_relations=1,
        epochs=5,
        learning_rate=0.1,
        seed=0,
    )
    base.update(overrides)
    return ReasonerConfig(**base)


def random_graph(rng: np.random.Generator, n_nodes: int, n_relations: int, n_triples: int) -> Ckg:
    rows = []
    seen = set()
    attempts = 0
    while len(rows) < n_triples and attempts < 20 * n_triples:
        attempts += 1
        h = int(rng.integers(n_nodes))
        r = int(rng.integers(n_relations))
        t = int(rng.integers(n_nodes))
        if (h, r, t) in seen:
            continue
        seen.add((h, r, t))
        rows.append((f"node {h}", f"rel{r}", f"node {t}"))
    # make sure every node id exists so queries can start anywhere
    for i in range(n_nodes):
        if not any(f"node {i}" in (a, c) for a, _, c in rows):
            rows.append((f"node {i}", "rel0", f"node {(i + 1) % n_nodes}"))
    return make_graph(rows)


def numeric_gradient(params, batch, eps=1e-4):
    """Central finite differences of the batch loss, coordinate by coordinate."""
    grads = zeros_like_params(params)
    for name, arr in params.arrays().items():
        garr = getattr(grads, name)
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + eps
            lp, _ = predictor_loss_and_grad(params, batch)
            arr[idx] = orig - eps
            lm, _ = predictor_loss_and_grad(params, batch)
            arr[idx] = orig
            garr[idx] = (lp - lm) / (2 * eps)
            it.iternext()
    return grads


def max_rel_error(analytic, numeric):
    worst = 0.0
    for name, a in analytic.arrays().items():
        n = getattr(numeric, name)
        scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float((np.abs(a - n) / scale).max()))
    return worst


def relu_margin(params, batch):
    """Smallest |preactivation| over the batch; central differences are only
    a valid oracle when no perturbation can cross a ReLU kink."""
    x = np.concatenate(
        [
            params.relation_embeddings[[b[0] for b in batch]],
            params.step_embeddings[[b[1] for b in batch]],
        ],
        axis=1,
    )
    z1 = x @ params.W1 + params.b1
    z2 = np.maximum(0.0, z1) @ params.W2 + params.b2
    return min(float(np.abs(z1).min()), float(np.abs(z2).min()))


def draw_fd_case(seed, n_relations=6, d_max=3):
    """Deterministic random draw, rejecting kink-adjacent cases where the
    finite-difference oracle itself is invalid."""
    for attempt in range(50):
        rng = np.random.default_rng(seed * 1000 + attempt)
        params = init_params(
            n_relations=n_relations,
            d_r=4,
            d_s=4,
            hidden=4,
            d_max=d_max,
            seed=seed * 1000 + attempt,
        )
        batch = [
            (
                int(rng.integers(n_relations)),
                int(rng.integers(1, d_max + 1)),
                int(rng.integers(n_relations)),
            )
            for _ in range(4)
        ]
        if relu_margin(params, batch) > 1e-3:
            return params, batch
    raise AssertionError("could not draw a kink-free finite-difference case")


def transitive_corpus(
    n_chains: int = 8, chain_len: int = 4
) -> tuple[list, list, list]:
    """A corpus generated by the rule r(X,Y) :- r(X,Z), r(Z,Y).

    Chains of base edges plus their transitive closure; a slice of the 2-hop
    closure facts is held out as test (gold reachable in exactly two hops from
    edges kept in train) and another slice as dev. Returns (train, dev, test)
    rows of (head, relation, tail) texts.
    """
    base, two_hop, three_hop = [], [], []
    for c in range(n_chains):
        names = [f"chain{c} item{j}" for j in range(chain_len)]
        for j in range(chain_len - 1):
            base.append((names[j], "r", names[j + 1]))
        for j in range(chain_len - 2):
            two_hop.append((names[j], "r", names[j + 2]))
        for j in range(chain_len - 3):
            three_hop.append((names[j], "r", names[j + 3]))
    test = [row for i, row in enumerate(two_hop) if i % 3 == 0]
    dev = [row for i, row in enumerate(two_hop) if i % 3 == 1]
    train = (
        base
        + [row for i, row in enumerate(two_hop) if i % 3 == 2]
        + three_hop
    )
    assert dev and test
    return train, dev, test


def write_corpus(tmp_path, train, dev, test, dim=16, seed=0):
    """Write triple files plus a hash-embedding file covering every node."""
    from kgreason.embeddings import hash_embed, save_embeddings

    paths = {
        "train": write_triples(tmp_path / "train.tsv", train),
        "dev": write_triples(tmp_path / "dev.tsv", dev),
        "test": write_triples(tmp_path / "test.tsv", test),
    }
    nodes = NodeTable()
    for h, _, t in train + dev + test:
        nodes.add(h)
        nodes.add(t)
    emb_path = str(tmp_path / "emb.txt")
    save_embeddings(emb_path, nodes, hash_embed(nodes, dim=dim, seed=seed))
    paths["embeddings"] = emb_path
    return paths


def oracle_cosine(table, a: int, b: int, cache: dict) -> float:
    """Independent cosine: float64 dot over recomputed norms, clamped."""
    if a == b:
        return 1.0
    key = (a, b) if a <= b else (b, a)
    if key not in cache:
        u = table.vectors[a].astype(np.float64)
        v = table.vectors[b].astype(np.float64)
        value = float(np.dot(u, v)) / (
            float(np.linalg.norm(u)) * float(np.linalg.norm(v))
        )
        cache[key] = min(1.0, max(-1.0, value))
    return cache[key]


def oracle_answers(
    g: Ckg, table, params, query: Query, cfg: ReasonerConfig
) -> list[tuple[int, float]]:
    """Exhaustive enumeration of every relation-filtered path of length up to
    cfg.max_depth from the query head, scored by the min of its step scores.

    Valid as a reference for answer_query only when the search knobs do not
    truncate: k_nodes >= |nodes|, k_triples >= |triples|, beam_width >= the
    number of surviving paths, k_answers >= the number of distinct tails.
    """
    by_relation: dict[int, list[Triple]] = {}
    for t in g.triples:
        by_relation.setdefault(t.relation, []).append(t)
    all_triples = list(g.triples)
    hyp_by_rel = {
        rel: sorted({t.tail for t in cands}) for rel, cands in by_relation.items()
    }
    all_hyp = sorted({t.tail for t in all_triples})
    cos_cache: dict = {}
    scored_memo: dict[tuple[int, int], list[tuple[Triple, float]]] = {}
    best: dict[int, float] = {}

    def scored_candidates(frontier: int, rel: int) -> list[tuple[Triple, float]]:
        key = (frontier, rel if cfg.relation_filter else -1)
        if key not in scored_memo:
            if cfg.relation_filter:
                candidates = by_relation.get(rel, [])
                hypotheses = hyp_by_rel.get(rel, [])
            else:
                candidates, hypotheses = all_triples, all_hyp
            out = []
            for triple in candidates:
                s_head = oracle_cosine(table, frontier, triple.head, cos_cache)
                s = max(
                    min(s_head, oracle_cosine(table, triple.tail, h, cos_cache))
                    for h in hypotheses
                )
                out.append((triple, s))
            scored_memo[key] = out
        return scored_memo[key]

    def walk(frontier: int, prev_rel: int, depth: int, score: float, visited: tuple):
        if depth == cfg.max_depth:
            return
        for rel, _prob in predictor_topm(params, prev_rel, depth + 1, cfg.top_m_relations):
            for triple, s in scored_candidates(frontier, rel):
                if not cfg.allow_revisit and triple.tail in visited:
                    continue
                new_score = min(score, s)
                if triple.tail not in best or new_score > best[triple.tail]:
                    best[triple.tail] = new_score
                walk(triple.tail, rel, depth + 1, new_score, visited + (triple.tail,))

    walk(query.head, query.relation, 0, math.inf, (query.head,))
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[: cfg.k_answers]
